"""Matching objective: similarity, matching loss, label-separation regularizer, inference."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import Encoder, encode_texts
from .exceptions import ConfigurationError, ShapeError, StaleCacheError
from .labels import LabelSet


@dataclass(frozen=True)
class TcmHyper:
    """Temperature, regularizer threshold (raw dot-product units) and regularizer weight."""

    tau: float = 0.07
    delta: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not self.alpha >= 0:
            raise ConfigurationError(f"alpha must be non-negative, got {self.alpha}")


def similarity(u, v) -> Tensor:
    """Unnormalized inner product of two representation vectors."""
    return ad.dot(u, v)


def similarity_matrix(inputs, labels) -> Tensor:
    """All pairwise inner products, [N x |Y|]."""
    inputs, labels = ad.as_tensor(inputs), ad.as_tensor(labels)
    if inputs.ndim != 2 or labels.ndim != 2 or inputs.shape[1] != labels.shape[1]:
        raise ShapeError(f"similarity_matrix: representation shapes {inputs.shape} and {labels.shape} disagree")
    return inputs @ labels.T


def matching_loss(inputs, labels, targets, tau: float) -> Tensor:
    """Cross-entropy of temperature-scaled similarities against every label."""
    if not tau > 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    return ad.softmax_cross_entropy(similarity_matrix(inputs, labels) * (1.0 / tau), targets)


def regularization_loss(labels, delta: float) -> Tensor:
    """Mean over labels of ``max(delta, similarity to the closest other label)``.

    The inner max breaks ties toward the smaller label index; entries clipped
    at ``delta`` pass no gradient.
    """
    labels = ad.as_tensor(labels)
    n = labels.shape[0]
    if n < 2:
        raise ConfigurationError(f"the regularizer needs at least two labels, got {n}")
    sims = labels @ labels.T
    off_diag = sims + np.where(np.eye(n, dtype=bool), -np.inf, 0.0)
    closest = off_diag.max(axis=1)
    return ad.maximum(closest, np.full(n, delta)).mean()


def total_loss(matching, regularization, alpha: float) -> Tensor:
    if not alpha >= 0:
        raise ConfigurationError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0:
        return ad.as_tensor(matching)
    return matching + regularization * alpha


# ------------------------------------------------------------------ inference
def _label_fingerprint(enc_fingerprint: str, labels, texts) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(enc_fingerprint.encode())
    for label, text in zip(labels, texts):
        h.update(label.encode() + b"\0" + text.encode() + b"\0")
    return h.hexdigest()


@dataclass
class LabelEmbeddingCache:
    """Precomputed label representations, valid only for the encoder state that made them."""

    labels: tuple[str, ...]
    texts: tuple[str, ...]
    matrix: np.ndarray
    fingerprint: str

    def is_valid(self, enc: Encoder) -> bool:
        return _label_fingerprint(enc.fingerprint(), self.labels, self.texts) == self.fingerprint

    def check(self, enc: Encoder) -> None:
        if not self.is_valid(enc):
            raise StaleCacheError("label embedding cache is stale: encoder parameters changed since it was built")


def build_label_cache(enc: Encoder, label_set: LabelSet) -> LabelEmbeddingCache:
    """Encode every label text once (eval mode) and stamp the result."""
    with ad.no_grad():
        matrix = encode_texts(enc, label_set.texts).data.copy()
    fingerprint = _label_fingerprint(enc.fingerprint(), label_set.labels, label_set.texts)
    return LabelEmbeddingCache(label_set.labels, label_set.texts, matrix, fingerprint)


def argmax_first(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; exact ties resolve to the smallest index."""
    return np.argmax(scores, axis=-1)


def score_texts(enc: Encoder, label_matrix: np.ndarray, texts, batch_size: int = 256) -> np.ndarray:
    """[len(texts) x |Y|] similarity scores in eval mode."""
    texts = list(texts)
    out = np.empty((len(texts), label_matrix.shape[0]), dtype=label_matrix.dtype)
    with ad.no_grad():
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            out[start : start + len(chunk)] = encode_texts(enc, chunk).data @ label_matrix.T
    return out


def predict(enc: Encoder, cache: LabelEmbeddingCache, text: str) -> tuple[str, np.ndarray]:
    """``(label, scores)`` for one text; scores follow the cache's label order."""
    cache.check(enc)
    scores = score_texts(enc, cache.matrix, [text])[0]
    return cache.labels[int(argmax_first(scores))], scores


def predict_batch(enc: Encoder, cache: LabelEmbeddingCache, texts) -> tuple[list[str], np.ndarray]:
    cache.check(enc)
    scores = score_texts(enc, cache.matrix, texts)
    return [cache.labels[i] for i in argmax_first(scores)], scores
