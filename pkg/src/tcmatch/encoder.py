"""Small transformer text encoder with [CLS] pooling and an MLP projection."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from ._random import substream
from .autodiff import Tensor
from .exceptions import ConfigurationError, ShapeError
from .text import Vocab, encode_batch

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int = 64
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    repr_dim: int = 64
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "max_len", "embed_dim", "num_layers", "num_heads", "ffn_dim", "repr_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim ({self.embed_dim}) must be divisible by num_heads ({self.num_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**data)


def _parameter_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    e, f = cfg.embed_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.tokens": (cfg.vocab_size, e),
        "embed.positions": (cfg.max_len, e),
    }
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gain"] = (e,)
        shapes[p + "ln1.bias"] = (e,)
        for proj in ("query", "key", "value", "out"):
            shapes[p + f"attn.{proj}.weight"] = (e, e)
            shapes[p + f"attn.{proj}.bias"] = (e,)
        shapes[p + "ln2.gain"] = (e,)
        shapes[p + "ln2.bias"] = (e,)
        shapes[p + "ffn.in.weight"] = (e, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, e)
        shapes[p + "ffn.out.bias"] = (e,)
    shapes["final_ln.gain"] = (e,)
    shapes["final_ln.bias"] = (e,)
    shapes["pool.hidden.weight"] = (e, e)
    shapes["pool.hidden.bias"] = (e,)
    shapes["pool.out.weight"] = (e, cfg.repr_dim)
    shapes["pool.out.bias"] = (cfg.repr_dim,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) resampled until every entry lies within two std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Encoder:
    """The shared encoder. ``params`` maps a stable name to each trainable tensor."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor], vocab: Vocab | None = None):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab

    def __call__(self, ids, mask, training: bool = False, rng=None) -> Tensor:
        return encode(self, ids, mask, training=training, rng=rng)

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = _parameter_shapes(self.cfg)
        if set(state) != set(expected):
            raise ConfigurationError(f"state dict keys do not match the encoder config: {sorted(set(state) ^ set(expected))}")
        for name, shape in expected.items():
            if tuple(state[name].shape) != shape:
                raise ShapeError(f"parameter {name!r}: checkpoint shape {state[name].shape}, config expects {shape}")
            self.params[name].data[...] = state[name]

    def copy(self) -> "Encoder":
        params = {name: Tensor(p.data.copy(), requires_grad=p.requires_grad, name=name) for name, p in self.params.items()}
        return Encoder(self.cfg, params, self.vocab)

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def init_encoder(cfg: EncoderConfig, vocab: Vocab | None = None, dtype=None) -> Encoder:
    """Truncated-normal matrices, zero biases, unit layer-norm gains; one stream per parameter."""
    cfg.validate()
    dtype = dtype or ad.get_default_dtype()
    params = {}
    for name, shape in _parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = truncated_normal(substream(cfg.seed, "init", name), shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if vocab is not None and len(vocab) != cfg.vocab_size:
        raise ConfigurationError(f"vocab has {len(vocab)} tokens but vocab_size is {cfg.vocab_size}")
    return Encoder(cfg, params, vocab)


def parameter_count(cfg: EncoderConfig) -> int:
    return sum(int(np.prod(s)) for s in _parameter_shapes(cfg).values())


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return x @ params[prefix + ".weight"] + params[prefix + ".bias"]


def _attention(x: Tensor, key_mask: np.ndarray, params, prefix: str, heads: int, cls_only: bool) -> Tensor:
    b, length, e = x.shape
    dh = e // heads

    def split(t: Tensor, n: int) -> Tensor:
        return t.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)

    src = x[:, :1, :] if cls_only else x
    n_q = src.shape[1]
    q = split(_linear(src, params, prefix + ".query"), n_q)
    k = split(_linear(x, params, prefix + ".key"), length)
    v = split(_linear(x, params, prefix + ".value"), length)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    weights = ad.masked_softmax(scores, key_mask[:, None, None, :])
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n_q, e)
    return _linear(ctx, params, prefix + ".out")


def encode_cls(enc: Encoder, ids, mask, training: bool = False, rng=None) -> Tensor:
    """Final-layer hidden state of the [CLS] position, shape [batch x embed_dim]."""
    cfg, params = enc.cfg, enc.params
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ShapeError(f"ids {ids.shape} and mask {mask.shape} must be equal 2-D shapes")
    if ids.shape[1] > cfg.max_len:
        raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise IndexError(f"token id out of range [0, {cfg.vocab_size})")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training-mode encoding with dropout needs a random generator")
    length = ids.shape[1]
    x = ad.embedding(params["embed.tokens"], ids) + params["embed.positions"][:length]
    x = ad.dropout(x, cfg.dropout, rng, training)
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        last = i == cfg.num_layers - 1
        h = ad.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
        attn = _attention(h, mask, params, p + "attn", cfg.num_heads, cls_only=last)
        # only the [CLS] row survives the last layer
        x = (x[:, :1, :] if last else x) + ad.dropout(attn, cfg.dropout, rng, training)
        h = ad.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        ff = _linear(ad.gelu(_linear(h, params, p + "ffn.in")), params, p + "ffn.out")
        x = x + ad.dropout(ff, cfg.dropout, rng, training)
    x = ad.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    return x[:, 0, :]


def encode(enc: Encoder, ids, mask, training: bool = False, rng=None) -> Tensor:
    """Sentence representations, shape [batch x repr_dim]."""
    cls = encode_cls(enc, ids, mask, training=training, rng=rng)
    hidden = ad.tanh(_linear(cls, enc.params, "pool.hidden"))
    return _linear(hidden, enc.params, "pool.out")


def tokenize_batch(enc: Encoder, texts) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and mask for ``texts``, padded only to the longest row.

    Trimming trailing padding is invisible to the output (masked keys never
    contribute), and it keeps short batches cheap.
    """
    if enc.vocab is None:
        raise ConfigurationError("encoder has no vocabulary attached")
    ids, mask = encode_batch(enc.vocab, list(texts), enc.cfg.max_len)
    width = max(int(mask.sum(axis=1).max()), 2) if len(texts) else 2
    return ids[:, :width], mask[:, :width]


def encode_texts(enc: Encoder, texts, training: bool = False, rng=None) -> Tensor:
    ids, mask = tokenize_batch(enc, texts)
    return encode(enc, ids, mask, training=training, rng=rng)


def save_encoder(path, enc: Encoder, metadata: dict | None = None, extra: dict | None = None) -> None:
    """Write parameters with the config and vocabulary in the header."""
    meta = {"encoder_config": enc.cfg.to_dict(), "vocab": enc.vocab.to_list() if enc.vocab else None}
    meta.update(metadata or {})
    params = dict(enc.params)
    params.update(extra or {})
    ad.save_parameters(path, params, meta)


def load_encoder(path) -> tuple[Encoder, dict, dict[str, np.ndarray]]:
    """Return ``(encoder, metadata, extra arrays not belonging to the encoder)``."""
    arrays, meta = ad.load_parameters(path)
    cfg = EncoderConfig.from_dict(meta["encoder_config"])
    vocab = Vocab(meta["vocab"]) if meta.get("vocab") is not None else None
    shapes = _parameter_shapes(cfg)
    missing = [name for name in shapes if name not in arrays]
    if missing:
        raise ConfigurationError(f"{path}: checkpoint lacks parameter {missing[0]!r}")
    state = {name: arrays.pop(name) for name in shapes}
    enc = init_encoder(cfg, vocab=vocab, dtype=state["embed.tokens"].dtype)
    enc.load_state_dict(state)
    return enc, meta, arrays
