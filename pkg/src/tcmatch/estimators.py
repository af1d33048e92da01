"""scikit-learn estimators wrapping the matching model and the task-head baseline."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .baselines import TaskHeadModel, make_two_encoder, train_task_head, train_two_encoder
from .encoder import EncoderConfig, init_encoder
from .exceptions import ConfigurationError, SchemaError
from .labels import LabelDescription, LabelSet
from .objective import TcmHyper
from .text import Episode, Example, build_vocab
from .training import OptimConfig, train_free_labels, train_tcm, train_tcm_init

VARIANTS = ("tcm", "tcm_init", "free_labels", "two_encoder")


def check_texts(X, name: str = "X") -> list[str]:
    """Coerce a 1-D collection of strings to a list; reject anything else."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a collection of strings, not a single string")
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    bad = [i for i, value in enumerate(arr) if not isinstance(value, str)]
    if bad:
        raise TypeError(f"{name}[{bad[0]}] is {type(arr[bad[0]]).__name__}, expected str")
    return [str(v) for v in arr]


def check_targets(y, n: int) -> list[str]:
    arr = np.asarray(y, dtype=object)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ValueError(f"y must be one-dimensional with {n} entries, got shape {arr.shape}")
    return [str(v) for v in arr]


def _examples(texts, labels) -> tuple[Example, ...]:
    return tuple(Example(t, lab) for t, lab in zip(texts, labels))


def _label_set(descriptions, classes, mode: str, pool, seed: int) -> LabelSet:
    if not isinstance(descriptions, Mapping) or not descriptions:
        raise ConfigurationError("label_descriptions must be a non-empty mapping of label to text or description")
    values = [descriptions[c] for c in classes]
    if all(isinstance(v, str) for v in values):
        return LabelSet.from_texts({c: descriptions[c] for c in classes}, mode=mode)
    mapping = {}
    for c, v in zip(classes, values):
        if isinstance(v, LabelDescription):
            mapping[c] = v
        elif isinstance(v, Mapping):
            mapping[c] = LabelDescription(**v)
        else:
            raise SchemaError(f"description for {c!r} must be a string, a mapping or a LabelDescription")
    return LabelSet.from_mapping(mapping, mode=mode, labels=classes, pool=pool, seed=seed)


class _TextClassifier(ClassifierMixin, BaseEstimator):
    """Shared fitting plumbing; subclasses build and train the model."""

    def _encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, max_len=self.max_len, embed_dim=self.embed_dim,
                             num_layers=self.num_layers, num_heads=self.num_heads, ffn_dim=self.ffn_dim,
                             repr_dim=self.repr_dim, dropout=self.dropout, seed=self.random_state)

    def _optim(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size)

    def _episode(self, X, y, X_valid, y_valid) -> Episode:
        texts = check_texts(X)
        labels = check_targets(y, len(texts))
        valid: tuple[Example, ...] = ()
        if X_valid is not None:
            vt = check_texts(X_valid, "X_valid")
            valid = _examples(vt, check_targets(y_valid, len(vt)))
        return Episode(K=0, seed=self.random_state, train=_examples(texts, labels), valid=valid)

    def _dtype(self):
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be 'float64' or 'float32', got {self.dtype!r}")
        return np.float32 if self.dtype == "float32" else np.float64

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.asarray(self.model_.scores(check_texts(X)), dtype=np.float64)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def _softmax(self, scores: np.ndarray, scale: float) -> np.ndarray:
        z = scores * scale
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)


class TCMClassifier(_TextClassifier):
    """Classify a text by the label description it matches best.

    ``label_descriptions`` maps each class to a text, a ``LabelDescription``
    or a ``{"name", "definition", "sample"}`` dict; with the latter two,
    ``mode`` picks the field. Classes present in the descriptions but absent
    from ``y`` can still be predicted.

    ``variant`` selects how label representations are produced: ``tcm``
    (shared encoder, re-encoded every step), ``tcm_init`` (free matrix seeded
    from the encoded texts), ``free_labels`` (random free matrix) or
    ``two_encoder`` (separate label tower).
    """

    def __init__(self, label_descriptions=None, mode: str = "definition", variant: str = "tcm",
                 tau: float = 0.07, delta: float = 0.0, alpha: float = 1.0, lr: float = 1e-3, batch_size: int = 8,
                 weight_decay: float = 0.0, epochs: int = 30, patience: int | None = None, max_len: int = 64,
                 embed_dim: int = 64, num_layers: int = 2, num_heads: int = 4, ffn_dim: int = 128,
                 repr_dim: int = 64, dropout: float = 0.0, dtype: str = "float64", random_state: int = 0):
        self.label_descriptions = label_descriptions
        self.mode = mode
        self.variant = variant
        self.tau = tau
        self.delta = delta
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.max_len = max_len
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.repr_dim = repr_dim
        self.dropout = dropout
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y, X_valid=None, y_valid=None) -> "TCMClassifier":
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        episode = self._episode(X, y, X_valid, y_valid)
        if self.label_descriptions is None:
            raise ConfigurationError("TCMClassifier needs label_descriptions")
        classes = sorted(str(k) for k in self.label_descriptions)
        unknown = sorted({ex.label for ex in (*episode.train, *episode.valid)} - set(classes))
        if unknown:
            raise SchemaError(f"label {unknown[0]!r} has no description")
        descriptions = {str(k): v for k, v in self.label_descriptions.items()}
        label_set = _label_set(descriptions, classes, self.mode, episode.train, self.random_state)
        vocab = build_vocab([ex.text for ex in episode.train] + list(label_set.texts))
        enc = init_encoder(self._encoder_config(len(vocab)), vocab=vocab, dtype=self._dtype())
        hyper = TcmHyper(tau=self.tau, delta=self.delta, alpha=self.alpha)
        args = dict(optim=self._optim(), epochs=self.epochs, seed=self.random_state, patience=self.patience)
        if self.variant == "tcm":
            result = train_tcm(enc, label_set, episode, hyper, **args)
        elif self.variant == "tcm_init":
            result = train_tcm_init(enc, label_set, episode, hyper, **args)
        elif self.variant == "free_labels":
            result = train_free_labels(enc, label_set, episode, hyper, **args)
        else:
            result = train_two_encoder(make_two_encoder(enc, label_set, hyper), episode, **args)
        self.model_ = result.model
        self.label_set_ = label_set
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.array(label_set.labels, dtype=object)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Softmax of the temperature-scaled similarities."""
        return self._softmax(self.decision_function(X), 1.0 / self.tau)

    def label_embeddings(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        with ad.no_grad():
            return np.array(self.model_.label_matrix().data, dtype=np.float64)


class TaskHeadClassifier(_TextClassifier):
    """Baseline: the [CLS] state feeds a zero-initialized linear layer with one output per class."""

    def __init__(self, lr: float = 1e-3, batch_size: int = 8, weight_decay: float = 0.0, epochs: int = 30,
                 patience: int | None = None, max_len: int = 64, embed_dim: int = 64, num_layers: int = 2,
                 num_heads: int = 4, ffn_dim: int = 128, repr_dim: int = 64, dropout: float = 0.0,
                 dtype: str = "float64", random_state: int = 0):
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.max_len = max_len
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.repr_dim = repr_dim
        self.dropout = dropout
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y, X_valid=None, y_valid=None) -> "TaskHeadClassifier":
        episode = self._episode(X, y, X_valid, y_valid)
        classes = sorted({ex.label for ex in episode.train})
        unknown = sorted({ex.label for ex in episode.valid} - set(classes))
        if unknown:
            raise SchemaError(f"validation label {unknown[0]!r} does not occur in y")
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        # the head never reads label text; names only fix the column order
        label_set = LabelSet.from_texts({c: c for c in classes}, mode="name")
        vocab = build_vocab([ex.text for ex in episode.train])
        enc = init_encoder(self._encoder_config(len(vocab)), vocab=vocab, dtype=self._dtype())
        result = train_task_head(TaskHeadModel(enc, label_set), episode, self._optim(), self.epochs,
                                 self.random_state, self.patience)
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.array(classes, dtype=object)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self._softmax(self.decision_function(X), 1.0)
