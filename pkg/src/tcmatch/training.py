"""Training loops for the matching model and its label-embedding variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import autodiff as ad
from ._random import substream
from .autodiff import Tensor
from .encoder import Encoder, encode_texts, truncated_normal
from .exceptions import ConfigurationError
from .labels import LabelSet
from .metrics import confusion_matrix, macro_f1
from .objective import (
    LabelEmbeddingCache,
    TcmHyper,
    build_label_cache,
    matching_loss,
    regularization_loss,
    score_texts,
    total_loss,
)
from .text import Episode, Example

logger = logging.getLogger(__name__)

LABEL_SOURCES = ("tcm", "tcm_init", "free", "two_encoder")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")


@dataclass
class TrainResult:
    model: "Model"
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_f1: float = float("nan")
    step_losses: list[float] = field(default_factory=list)


class Model(Protocol):
    label_set: LabelSet

    def trainable(self) -> dict[str, Tensor]: ...

    def loss(self, texts: Sequence[str], targets: np.ndarray, rng) -> Tensor: ...

    def scores(self, texts: Sequence[str]) -> np.ndarray: ...


class MatchingModel:
    """Scores an input against every label by inner product of representations.

    ``label_source`` picks where label representations come from:

    * ``tcm`` -- the shared encoder re-encodes every label text at each step;
    * ``tcm_init`` -- a free matrix initialized once from the encoded texts;
    * ``free`` -- a free matrix with random initialization;
    * ``two_encoder`` -- a second, independently initialized encoder.
    """

    def __init__(self, encoder: Encoder, label_set: LabelSet, hyper: TcmHyper | None = None,
                 label_source: str = "tcm", label_encoder: Encoder | None = None, free_labels: Tensor | None = None):
        if label_source not in LABEL_SOURCES:
            raise ConfigurationError(f"unknown label source {label_source!r}; expected one of {LABEL_SOURCES}")
        self.encoder = encoder
        self.label_set = label_set
        self.hyper = hyper or TcmHyper()
        self.label_source = label_source
        self.label_encoder = label_encoder
        self.free_labels = free_labels
        self.mirror_towers = False
        if label_source == "two_encoder" and label_encoder is None:
            raise ConfigurationError("two_encoder needs a label_encoder")
        if label_source in ("tcm_init", "free") and free_labels is None:
            raise ConfigurationError(f"{label_source} needs a free label matrix")

    def trainable(self) -> dict[str, Tensor]:
        params = dict(self.encoder.params)
        if self.label_source == "two_encoder":
            params.update({f"label_encoder.{k}": v for k, v in self.label_encoder.params.items()})
        elif self.free_labels is not None:
            params["labels.free"] = self.free_labels
        return params

    def label_matrix(self, training: bool = False, rng=None) -> Tensor:
        if self.label_source == "tcm":
            return encode_texts(self.encoder, self.label_set.texts, training=training, rng=rng)
        if self.label_source == "two_encoder":
            return encode_texts(self.label_encoder, self.label_set.texts, training=training, rng=rng)
        return self.free_labels

    def loss(self, texts, targets, rng) -> Tensor:
        inputs = encode_texts(self.encoder, texts, training=True, rng=rng)
        labels = self.label_matrix(training=True, rng=rng)
        lm = matching_loss(inputs, labels, targets, self.hyper.tau)
        if self.hyper.alpha == 0:
            return lm
        return total_loss(lm, regularization_loss(labels, self.hyper.delta), self.hyper.alpha)

    def after_backward(self) -> None:
        if not self.mirror_towers:
            return
        # summed, shared gradients keep identically initialized towers identical
        for name, pa in self.encoder.params.items():
            pb = self.label_encoder.params[name]
            total = pa.grad + pb.grad
            pa.grad[...] = total
            pb.grad[...] = total

    def label_cache(self) -> LabelEmbeddingCache:
        if self.label_source == "tcm":
            return build_label_cache(self.encoder, self.label_set)
        with ad.no_grad():
            matrix = self.label_matrix().data.copy()
        return LabelEmbeddingCache(self.label_set.labels, self.label_set.texts, matrix, fingerprint="")

    def scores(self, texts) -> np.ndarray:
        with ad.no_grad():
            matrix = self.label_matrix().data
        return score_texts(self.encoder, matrix, list(texts))

    def predict(self, texts) -> list[str]:
        return [self.label_set.labels[i] for i in np.argmax(self.scores(texts), axis=1)]


def evaluate(model: Model, examples: Sequence[Example]) -> np.ndarray:
    """Confusion matrix over ``model.label_set`` order."""
    ls = model.label_set
    if not examples:
        return np.zeros((len(ls), len(ls)), dtype=np.int64)
    scores = model.scores([ex.text for ex in examples])
    return confusion_matrix(ls.indices([ex.label for ex in examples]), np.argmax(scores, axis=1), len(ls))


def _check_episode(episode: Episode, label_set: LabelSet) -> None:
    known = set(label_set.labels)
    missing = sorted({ex.label for ex in (*episode.train, *episode.valid)} - known)
    if missing:
        raise ConfigurationError(f"episode label {missing[0]!r} is not in the label set")


def fit(model: Model, episode: Episode, optim: OptimConfig, epochs: int, seed: int | None = None,
        patience: int | None = None) -> TrainResult:
    """Mini-batch AdamW with a constant learning rate; keeps the best-validation parameters.

    Validation macro-F1 is measured after every epoch; the earliest epoch with
    the highest score wins. ``patience`` stops after that many epochs without
    improvement.
    """
    if epochs < 1:
        raise ConfigurationError(f"epochs must be positive, got {epochs}")
    _check_episode(episode, model.label_set)
    seed = episode.seed if seed is None else seed
    params = model.trainable()
    opt = ad.AdamW(params, lr=optim.lr, betas=optim.betas, eps=optim.eps, weight_decay=optim.weight_decay)
    dropout_rng = substream(seed, "dropout")
    train = list(episode.train)
    targets_all = np.asarray(model.label_set.indices([ex.label for ex in train]), dtype=np.int64)
    result = TrainResult(model=model)
    best_state = {name: p.data.copy() for name, p in params.items()}
    best_f1 = -1.0
    stale = 0
    for epoch in range(1, epochs + 1):
        order = substream(seed, "batches", epoch).permutation(len(train))
        losses = []
        for start in range(0, len(order), optim.batch_size):
            idx = order[start : start + optim.batch_size]
            opt.zero_grad()
            loss = model.loss([train[i].text for i in idx], targets_all[idx], dropout_rng)
            loss.backward()
            hook = getattr(model, "after_backward", None)
            if hook is not None:
                hook()
            opt.step()
            losses.append(loss.item())
        result.step_losses.extend(losses)
        valid_f1 = macro_f1(evaluate(model, episode.valid)) if episode.valid else float("nan")
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_f1": valid_f1}
        result.history.append(record)
        logger.debug("epoch %d loss %.4f valid_f1 %.4f", epoch, record["train_loss"], valid_f1)
        if not episode.valid or valid_f1 > best_f1:
            best_f1, stale = valid_f1, 0
            result.best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params.items()}
        else:
            stale += 1
        if patience is not None and stale >= patience:
            break
    for name, p in params.items():
        p.data[...] = best_state[name]
    result.best_valid_f1 = best_f1 if episode.valid else float("nan")
    return result


# ------------------------------------------------------------- entry points
def train_tcm(enc: Encoder, label_set: LabelSet, episode: Episode, hyper: TcmHyper | None = None,
              optim: OptimConfig | None = None, epochs: int = 30, seed: int | None = None,
              patience: int | None = None) -> TrainResult:
    """Siamese matching: inputs and label texts share ``enc``; labels re-encoded every step."""
    model = MatchingModel(enc, label_set, hyper, "tcm")
    return fit(model, episode, optim or OptimConfig(), epochs, seed, patience)


def train_tcm_init(enc: Encoder, label_set: LabelSet, episode: Episode, hyper: TcmHyper | None = None,
                   optim: OptimConfig | None = None, epochs: int = 30, seed: int | None = None,
                   patience: int | None = None) -> TrainResult:
    """Label texts only seed a free label matrix; they are never encoded again."""
    with ad.no_grad():
        init = encode_texts(enc, label_set.texts).data.copy()
    free = Tensor(init, requires_grad=True, name="labels.free")
    model = MatchingModel(enc, label_set, hyper, "tcm_init", free_labels=free)
    return fit(model, episode, optim or OptimConfig(), epochs, seed, patience)


def train_free_labels(enc: Encoder, label_set: LabelSet, episode: Episode, hyper: TcmHyper | None = None,
                      optim: OptimConfig | None = None, epochs: int = 30, seed: int | None = None,
                      patience: int | None = None) -> TrainResult:
    """Free label matrix with random initialization: label texts are never used."""
    rng = substream(enc.cfg.seed, "init", "labels.free")
    free = Tensor(truncated_normal(rng, (len(label_set), enc.cfg.repr_dim), dtype=enc.params["embed.tokens"].dtype),
                  requires_grad=True, name="labels.free")
    model = MatchingModel(enc, label_set, hyper, "free", free_labels=free)
    return fit(model, episode, optim or OptimConfig(), epochs, seed, patience)
