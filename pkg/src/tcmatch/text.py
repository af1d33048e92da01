"""Tokenization, vocabulary, JSONL loading, few-shot episodes and synthetic tasks."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._random import substream
from .exceptions import ConfigurationError, SchemaError
from .labels import LabelDescription, LabelSet

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, keep each punctuation mark as its own token."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Example:
    text: str
    label: str


class Vocab:
    """Token <-> id map with the four reserved ids fixed at 0..3."""

    def __init__(self, tokens: Sequence[str]):
        self.itos: list[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def token_to_id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        return self.itos[idx]

    def to_list(self) -> list[str]:
        return list(self.itos[len(RESERVED):])


def build_vocab(corpus: Iterable[Example | str], min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-ordered vocabulary; ties broken alphabetically.

    ``max_size`` caps the number of non-reserved tokens.
    """
    counts: Counter[str] = Counter()
    n_docs = 0
    for item in corpus:
        text = item.text if isinstance(item, Example) else item
        counts.update(tokenize(text))
        n_docs += 1
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocab(ranked)


def encode_text(vocab: Vocab, text: str, max_len: int) -> tuple[list[int], list[int]]:
    """``[CLS] tokens [SEP]`` truncated/padded to ``max_len``; returns ``(ids, mask)``."""
    if max_len < 2:
        raise ValueError(f"max_len must be at least 2, got {max_len}")
    content = [vocab.token_to_id(t) for t in tokenize(text)][: max_len - 2]
    ids = [CLS_ID, *content, SEP_ID]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return ids + [PAD_ID] * pad, mask + [0] * pad


def encode_batch(vocab: Vocab, texts: Sequence[str], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(texts), max_len), dtype=np.int64)
    mask = np.zeros((len(texts), max_len), dtype=bool)
    for row, text in enumerate(texts):
        i, m = encode_text(vocab, text, max_len)
        ids[row] = i
        mask[row] = m
    return ids, mask


# ----------------------------------------------------------------- datasets
def load_jsonl(path) -> list[Example]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise SchemaError(f"{path}:{lineno}: expected a JSON object")
            for key in ("text", "label"):
                if not isinstance(record.get(key), str):
                    raise SchemaError(f"{path}:{lineno}: missing or non-string field {key!r}")
            examples.append(Example(record["text"], record["label"]))
    return examples


def save_jsonl(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False) + "\n")


def group_by_label(examples: Iterable[Example]) -> dict[str, list[Example]]:
    groups: dict[str, list[Example]] = {}
    for ex in examples:
        groups.setdefault(ex.label, []).append(ex)
    return groups


@dataclass(frozen=True)
class Episode:
    K: int
    seed: int
    train: tuple[Example, ...]
    valid: tuple[Example, ...]

    @property
    def labels(self) -> list[str]:
        return sorted({ex.label for ex in self.train})


def sample_episode(pool: Sequence[Example], K: int, seed: int) -> Episode:
    """K train and K valid examples per class, shuffled per class from ``(seed, class)``."""
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    groups = group_by_label(pool)
    short = sorted(label for label, exs in groups.items() if len(exs) < 2 * K)
    if short:
        label = short[0]
        raise ValueError(f"class {label!r} has {len(groups[label])} examples, needs at least {2 * K} for K={K}")
    train: list[Example] = []
    valid: list[Example] = []
    for label in sorted(groups):
        exs = groups[label]
        order = substream(seed, "episode", label).permutation(len(exs))
        train.extend(exs[i] for i in order[:K])
        valid.extend(exs[i] for i in order[K : 2 * K])
    return Episode(K=K, seed=seed, train=tuple(train), valid=tuple(valid))


# ---------------------------------------------------------------- synthetic
_DEFINITION_FRAME = ("a text that mentions", "or")


@dataclass(frozen=True)
class SyntheticTask:
    """Generated corpus plus ground truth used by oracles."""

    examples: list[Example]
    label_set: LabelSet
    signal_tokens: dict[str, tuple[str, ...]]
    noise_tokens: tuple[str, ...]

    def __iter__(self):
        return iter((self.examples, self.label_set))


def generate_synthetic(
    classes: int,
    per_class: int,
    vocab_size: int,
    signal_tokens_per_class: int,
    noise_len: int,
    seed: int,
    *,
    signal_per_example: int = 1,
    definition_overlap: int = 0,
) -> SyntheticTask:
    """Build a separable toy task with all three label mappings.

    Each class owns ``signal_tokens_per_class`` private tokens. An example
    holds ``signal_per_example`` of them plus ``noise_len`` tokens drawn from
    a shared noise pool. The definition lists every signal token of the class
    (and, with ``definition_overlap > 0``, that many tokens of its paired
    neighbour, making the definitions near-synonymous). The name is one fresh
    token, and the sample mapping is one generated example of the class.
    """
    for field_name, value in (("classes", classes), ("per_class", per_class), ("vocab_size", vocab_size),
                              ("signal_tokens_per_class", signal_tokens_per_class),
                              ("signal_per_example", signal_per_example)):
        if value < 1:
            raise ConfigurationError(f"{field_name} must be positive, got {value}")
    if noise_len < 0 or definition_overlap < 0:
        raise ConfigurationError("noise_len and definition_overlap must be non-negative")
    if signal_per_example > signal_tokens_per_class:
        raise ConfigurationError("signal_per_example cannot exceed signal_tokens_per_class")
    if definition_overlap > signal_tokens_per_class:
        raise ConfigurationError("definition_overlap cannot exceed signal_tokens_per_class")
    n_signal = classes * signal_tokens_per_class
    n_noise = vocab_size - n_signal
    if n_noise < (1 if noise_len > 0 else 0):
        raise ConfigurationError(
            f"vocab_size {vocab_size} too small for {classes} classes x {signal_tokens_per_class} signal tokens"
            + (" plus a noise pool" if noise_len > 0 else "")
        )

    width = len(str(vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(vocab_size)]
    rng = substream(seed, "synthetic", "vocab")
    words = [words[i] for i in rng.permutation(vocab_size)]
    signal = {c: tuple(words[c * signal_tokens_per_class : (c + 1) * signal_tokens_per_class]) for c in range(classes)}
    noise = tuple(words[n_signal:])

    cwidth = len(str(classes - 1))
    labels = [f"class_{c:0{cwidth}d}" for c in range(classes)]
    examples: list[Example] = []
    for c, label in enumerate(labels):
        crng = substream(seed, "synthetic", "examples", label)
        for _ in range(per_class):
            picks = [signal[c][i] for i in crng.choice(signal_tokens_per_class, size=signal_per_example, replace=False)]
            if noise_len:
                picks += [noise[i] for i in crng.integers(0, len(noise), size=noise_len)]
            order = crng.permutation(len(picks))
            examples.append(Example(" ".join(picks[i] for i in order), label))

    mapping = {}
    for c, label in enumerate(labels):
        described = list(signal[c])
        if definition_overlap and classes > 1:
            partner = c ^ 1 if (c ^ 1) < classes else c - 1
            described += list(signal[partner][:definition_overlap])
        lead, joiner = _DEFINITION_FRAME
        definition = f"{lead} {' '.join(described[:-1])} {joiner} {described[-1]}" if len(described) > 1 else f"{lead} {described[0]}"
        sample_rng = substream(seed, "synthetic", "sample", label)
        own = [ex for ex in examples if ex.label == label]
        mapping[label] = LabelDescription(
            name=f"name{c:0{cwidth}d}", definition=definition, sample=own[int(sample_rng.integers(len(own)))].text
        )
    label_set = LabelSet.from_mapping(mapping, mode="definition")
    return SyntheticTask(examples=examples, label_set=label_set, signal_tokens={labels[c]: signal[c] for c in signal},
                         noise_tokens=noise)
