"""Baselines: a linear task head and a two-tower (non-shared) matcher."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import Encoder, encode_cls, init_encoder, tokenize_batch
from .exceptions import ConfigurationError
from .labels import LabelSet
from .objective import TcmHyper
from .text import Episode
from .training import MatchingModel, OptimConfig, TrainResult, fit


class TaskHeadModel:
    """Raw [CLS] state -> linear layer with one column per label (LabelSet order).

    The head starts at zero so every class is equally likely at step 0. The
    encoder's pooling MLP is not used.
    """

    def __init__(self, encoder: Encoder, label_set: LabelSet):
        self.encoder = encoder
        self.label_set = label_set
        dtype = encoder.params["embed.tokens"].dtype
        n = len(label_set)
        self.weight = Tensor(np.zeros((encoder.cfg.embed_dim, n), dtype=dtype), requires_grad=True, name="head.weight")
        self.bias = Tensor(np.zeros(n, dtype=dtype), requires_grad=True, name="head.bias")

    def trainable(self) -> dict[str, Tensor]:
        params = {k: v for k, v in self.encoder.params.items() if not k.startswith("pool.")}
        params["head.weight"] = self.weight
        params["head.bias"] = self.bias
        return params

    def logits(self, texts, training: bool = False, rng=None) -> Tensor:
        ids, mask = tokenize_batch(self.encoder, list(texts))
        return encode_cls(self.encoder, ids, mask, training=training, rng=rng) @ self.weight + self.bias

    def loss(self, texts, targets, rng) -> Tensor:
        return ad.softmax_cross_entropy(self.logits(texts, training=True, rng=rng), targets)

    def scores(self, texts, batch_size: int = 256) -> np.ndarray:
        texts = list(texts)
        out = np.empty((len(texts), len(self.label_set)), dtype=self.weight.dtype)
        with ad.no_grad():
            for start in range(0, len(texts), batch_size):
                chunk = texts[start : start + batch_size]
                out[start : start + len(chunk)] = self.logits(chunk).data
        return out

    def predict(self, texts) -> list[str]:
        return [self.label_set.labels[i] for i in np.argmax(self.scores(texts), axis=1)]


def make_two_encoder(enc: Encoder, label_set: LabelSet, hyper: TcmHyper | None = None,
                     label_encoder: Encoder | None = None) -> MatchingModel:
    """Pair ``enc`` with an independently initialized label-side encoder of the same config."""
    if label_encoder is None:
        label_encoder = init_encoder(replace(enc.cfg, seed=enc.cfg.seed + 1_000_003), vocab=enc.vocab,
                                     dtype=enc.params["embed.tokens"].dtype)
    if replace(label_encoder.cfg, seed=0) != replace(enc.cfg, seed=0):
        raise ConfigurationError("both towers must share one encoder configuration")
    return MatchingModel(enc, label_set, hyper, "two_encoder", label_encoder=label_encoder)


def train_task_head(model: TaskHeadModel, episode: Episode, optim: OptimConfig | None = None, epochs: int = 30,
                    seed: int | None = None, patience: int | None = None) -> TrainResult:
    return fit(model, episode, optim or OptimConfig(), epochs, seed, patience)


def train_two_encoder(model: MatchingModel, episode: Episode, optim: OptimConfig | None = None, epochs: int = 30,
                      seed: int | None = None, patience: int | None = None,
                      mirror_gradients: bool = False) -> TrainResult:
    """Matching with separate input and label towers.

    ``mirror_gradients`` sums the two towers' gradients before each update;
    with identical initial towers this reproduces Siamese training exactly.
    """
    if model.label_source != "two_encoder":
        raise ConfigurationError("train_two_encoder expects a two_encoder MatchingModel")
    model.mirror_towers = mirror_gradients
    try:
        return fit(model, episode, optim or OptimConfig(), epochs, seed, patience)
    finally:
        model.mirror_towers = False
