"""Multi-seed few-shot protocol, ablation sweeps and result reporting."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from ._random import substream
from .baselines import TaskHeadModel, make_two_encoder, train_task_head, train_two_encoder
from .encoder import EncoderConfig, init_encoder
from .exceptions import ConfigurationError, SchemaError
from .labels import LabelDescription, LabelSet
from .metrics import accuracy, macro_f1, micro_f1
from .objective import TcmHyper
from .text import Episode, Example, build_vocab, generate_synthetic, group_by_label, sample_episode
from .training import MatchingModel, OptimConfig, TrainResult, evaluate, train_free_labels, train_tcm, train_tcm_init

logger = logging.getLogger(__name__)

METHODS = ("tcm", "tcm_init", "tcm_noreg", "free_labels", "task_head", "two_encoder")


@dataclass(frozen=True)
class Dataset:
    """A labeled pool to draw episodes from, a held-out test split and the label mapping."""

    pool: tuple[Example, ...]
    test: tuple[Example, ...]
    mapping: Mapping[str, LabelDescription] = field(compare=False)
    labels: tuple[str, ...]
    valid: tuple[Example, ...] = ()
    name: str = "dataset"

    def subset(self, labels: Sequence[str]) -> "Dataset":
        keep = set(labels)
        unknown = keep - set(self.labels)
        if unknown:
            raise ConfigurationError(f"unknown labels {sorted(unknown)[:3]}")
        return Dataset(
            pool=tuple(ex for ex in self.pool if ex.label in keep),
            test=tuple(ex for ex in self.test if ex.label in keep),
            mapping={k: v for k, v in self.mapping.items() if k in keep},
            labels=tuple(label for label in self.labels if label in keep),
            valid=tuple(ex for ex in self.valid if ex.label in keep),
            name=self.name,
        )

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for part in (self.pool, self.valid, self.test):
            for ex in part:
                h.update(ex.text.encode() + b"\0" + ex.label.encode() + b"\1")
            h.update(b"|")
        for label in self.labels:
            desc = self.mapping[label]
            h.update(json.dumps([label, desc.name, desc.definition, desc.sample]).encode())
        return h.hexdigest()


def synthetic_dataset(classes: int, pool_per_class: int, test_per_class: int, vocab_size: int,
                      signal_tokens_per_class: int, noise_len: int, seed: int, **kwargs) -> Dataset:
    """Generate a synthetic task and split each class into pool and test parts."""
    task = generate_synthetic(classes, pool_per_class + test_per_class, vocab_size, signal_tokens_per_class,
                              noise_len, seed, **kwargs)
    groups = group_by_label(task.examples)
    pool, test = [], []
    for label in task.label_set.labels:
        pool.extend(groups[label][:pool_per_class])
        test.extend(groups[label][pool_per_class:])
    return Dataset(pool=tuple(pool), test=tuple(test), mapping=task.label_set.mapping,
                   labels=task.label_set.labels, name=f"synthetic-{classes}")


def dataset_from_examples(train: Sequence[Example], test: Sequence[Example], mapping: Mapping[str, LabelDescription],
                          valid: Sequence[Example] = (), name: str = "dataset") -> Dataset:
    labels = tuple(sorted({ex.label for ex in train}))
    missing = [label for label in labels if label not in mapping]
    if missing:
        raise SchemaError(f"label mapping has no entry for {missing[0]!r}")
    for part, examples in (("test", test), ("valid", valid)):
        extra = sorted({ex.label for ex in examples} - set(labels))
        if extra:
            raise SchemaError(f"{part} split has label {extra[0]!r} absent from the training data")
    return Dataset(tuple(train), tuple(test), dict(mapping), labels, tuple(valid), name)


# ------------------------------------------------------------------ config
@dataclass(frozen=True)
class ExperimentConfig:
    """Everything except the method, the seed and the data that shapes one training run."""

    max_len: int = 64
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    repr_dim: int = 64
    dropout: float = 0.0
    hyper: TcmHyper = TcmHyper()
    optim: OptimConfig = OptimConfig()
    epochs: int = 30
    patience: int | None = None
    mode: str = "definition"
    dtype: str = "float64"

    def encoder_config(self, vocab_size: int, seed: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, max_len=self.max_len, embed_dim=self.embed_dim,
                             num_layers=self.num_layers, num_heads=self.num_heads, ffn_dim=self.ffn_dim,
                             repr_dim=self.repr_dim, dropout=self.dropout, seed=seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["optim"]["betas"] = list(self.optim.betas)
        return out

    def fingerprint(self) -> str:
        return hashlib.blake2b(json.dumps(self.to_dict(), sort_keys=True).encode(), digest_size=16).hexdigest()


# ------------------------------------------------------------------ results
@dataclass
class SeedResult:
    seed: int
    macro_f1: float
    micro_f1: float
    accuracy: float
    best_epoch: int
    confusion: np.ndarray
    history: list[dict]
    model: object = field(default=None, repr=False, compare=False)
    label_set: LabelSet | None = field(default=None, repr=False, compare=False)

    def metrics(self) -> dict:
        return {"seed": self.seed, "macro_f1": self.macro_f1, "micro_f1": self.micro_f1,
                "accuracy": self.accuracy, "best_epoch": self.best_epoch}


def _summary(values: Sequence[float]) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size >= 2 else None)


@dataclass
class RunResult:
    method: str
    K: int | str
    per_seed: list[SeedResult]
    labels: tuple[str, ...]
    config_fingerprint: str
    config: dict = field(default_factory=dict)

    def _metric(self, name: str) -> list[float]:
        return [getattr(r, name) for r in sorted(self.per_seed, key=lambda r: r.seed)]

    @property
    def seeds(self) -> list[int]:
        return sorted(r.seed for r in self.per_seed)

    @property
    def mean_macro_f1(self) -> float:
        return _summary(self._metric("macro_f1"))[0]

    @property
    def std_macro_f1(self) -> float | None:
        return _summary(self._metric("macro_f1"))[1]

    def aggregate(self) -> dict:
        out = {}
        for name in ("macro_f1", "micro_f1", "accuracy"):
            mean, std = _summary(self._metric(name))
            out[name] = {"mean": mean, "std": std}
        return out

    @property
    def confusion(self) -> np.ndarray:
        """Confusion counts summed over seeds."""
        return sum(r.confusion for r in self.per_seed)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "K": self.K,
            "labels": list(self.labels),
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "per_seed": [r.metrics() for r in sorted(self.per_seed, key=lambda r: r.seed)],
            "aggregate": self.aggregate(),
        }


# ------------------------------------------------------------------ running
def _episode_for(dataset: Dataset, K: int | str, seed: int) -> Episode:
    if K == "full":
        if dataset.valid:
            return Episode(K=0, seed=seed, train=dataset.pool, valid=dataset.valid)
        # no fixed validation split: hold out 10% of each class, drawn with seed 0
        train, valid = [], []
        for label, exs in sorted(group_by_label(dataset.pool).items()):
            order = substream(0, "full-split", label).permutation(len(exs))
            n_valid = max(1, len(exs) // 10) if len(exs) > 1 else 0
            valid.extend(exs[i] for i in order[:n_valid])
            train.extend(exs[i] for i in order[n_valid:])
        return Episode(K=0, seed=seed, train=tuple(train), valid=tuple(valid))
    return sample_episode(dataset.pool, int(K), seed)


def train_method(method: str, dataset: Dataset, episode: Episode, seed: int, cfg: ExperimentConfig) -> tuple[TrainResult, LabelSet]:
    """Build the label set, vocabulary and fresh model for ``method``, then train it."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    label_set = LabelSet.from_mapping(dataset.mapping, mode=cfg.mode, labels=dataset.labels, pool=episode.train,
                                      seed=seed)
    # same vocabulary for every method, so encoders start from identical weights
    vocab = build_vocab([ex.text for ex in episode.train] + list(label_set.texts))
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    enc = init_encoder(cfg.encoder_config(len(vocab), seed), vocab=vocab, dtype=dtype)
    hyper = replace(cfg.hyper, alpha=0.0) if method == "tcm_noreg" else cfg.hyper
    args = dict(optim=cfg.optim, epochs=cfg.epochs, seed=seed, patience=cfg.patience)
    if method in ("tcm", "tcm_noreg"):
        result = train_tcm(enc, label_set, episode, hyper, **args)
    elif method == "tcm_init":
        result = train_tcm_init(enc, label_set, episode, hyper, **args)
    elif method == "free_labels":
        result = train_free_labels(enc, label_set, episode, hyper, **args)
    elif method == "two_encoder":
        result = train_two_encoder(make_two_encoder(enc, label_set, hyper), episode, **args)
    else:
        result = train_task_head(TaskHeadModel(enc, label_set), episode, **args)
    return result, label_set


def run_seed(method: str, dataset: Dataset, K: int | str, seed: int, cfg: ExperimentConfig) -> SeedResult:
    episode = _episode_for(dataset, K, seed)
    result, label_set = train_method(method, dataset, episode, seed, cfg)
    cm = evaluate(result.model, list(dataset.test))
    logger.info("%s K=%s seed=%d macro_f1=%.4f", method, K, seed, macro_f1(cm))
    return SeedResult(seed=seed, macro_f1=macro_f1(cm), micro_f1=micro_f1(cm), accuracy=accuracy(cm),
                      best_epoch=result.best_epoch, confusion=cm, history=result.history, model=result.model,
                      label_set=label_set)


def run_protocol(method: str, dataset: Dataset, K: int | str, seeds: Sequence[int],
                 cfg: ExperimentConfig | None = None) -> RunResult:
    """Train and test ``method`` once per seed on freshly sampled episodes."""
    cfg = cfg or ExperimentConfig()
    if not seeds:
        raise ConfigurationError("run_protocol needs at least one seed")
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    per_seed = []
    for seed in sorted(seeds):
        try:
            per_seed.append(run_seed(method, dataset, K, seed, cfg))
        except Exception as exc:
            raise RuntimeError(f"{method} failed on seed {seed}: {exc}") from exc
    return RunResult(method=method, K=K, per_seed=per_seed, labels=dataset.labels,
                     config_fingerprint=_run_fingerprint(method, K, dataset, cfg), config=cfg.to_dict())


def _run_fingerprint(method: str, K, dataset: Dataset, cfg: ExperimentConfig) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(json.dumps([method, K, dataset.fingerprint(), cfg.fingerprint()]).encode())
    return h.hexdigest()


def class_subset(labels: Sequence[str], count: int, seed: int) -> tuple[str, ...]:
    """Seeded uniform choice of ``count`` labels, kept in their original order."""
    if count > len(labels):
        raise ConfigurationError(f"class count {count} exceeds the {len(labels)} available classes")
    if count < 2:
        raise ConfigurationError("class count must be at least 2")
    picked = set(substream(seed, "class-subset", count).choice(len(labels), size=count, replace=False).tolist())
    return tuple(label for i, label in enumerate(labels) if i in picked)


def class_number_sweep(dataset: Dataset, class_counts: Sequence[int], K: int | str, seeds: Sequence[int],
                       cfg: ExperimentConfig | None = None,
                       methods: Sequence[str] = ("tcm", "task_head")) -> dict[int, dict[str, RunResult]]:
    """For each count, every method trains on the same per-seed class subset."""
    cfg = cfg or ExperimentConfig()
    for count in class_counts:
        class_subset(dataset.labels, count, 0)  # validate all counts before any training
    out: dict[int, dict[str, RunResult]] = {}
    for count in class_counts:
        out[count] = {}
        for method in methods:
            per_seed = []
            for seed in sorted(seeds):
                sub = dataset if count == len(dataset.labels) else dataset.subset(class_subset(dataset.labels, count, seed))
                per_seed.append(run_seed(method, sub, K, seed, cfg))
            out[count][method] = RunResult(method=method, K=K, per_seed=per_seed, labels=dataset.labels,
                                           config_fingerprint=_run_fingerprint(f"{method}@{count}", K, dataset, cfg),
                                           config=cfg.to_dict())
    return out


def description_sweep(dataset: Dataset, modes: Sequence[str], Ks: Sequence[int], seeds: Sequence[int],
                      cfg: ExperimentConfig | None = None, method: str = "tcm") -> dict[tuple[str, int], RunResult]:
    """Re-run ``method`` under each label mapping mode, all else fixed."""
    cfg = cfg or ExperimentConfig()
    for mode in modes:
        # fail fast on missing fields (sample mode draws from the episode, so needs nothing stored)
        if mode != "sample":
            LabelSet.from_mapping(dataset.mapping, mode=mode, labels=dataset.labels)
    return {(mode, K): run_protocol(method, dataset, K, seeds, replace(cfg, mode=mode)) for K in Ks for mode in modes}


# ------------------------------------------------------------------ similarity
@dataclass
class SimilarityReport:
    labels: tuple[str, ...]
    matrix: np.ndarray

    def max_off_diagonal(self) -> float:
        off = self.matrix + np.where(np.eye(len(self.labels), dtype=bool), -np.inf, 0.0)
        return float(off.max())

    def to_csv(self, path) -> None:
        write_matrix_csv(path, self.labels, self.matrix)


def similarity_report(model) -> SimilarityReport:
    """Pairwise inner products of the model's label representations."""
    if isinstance(model, TaskHeadModel):
        matrix = model.weight.data.T
    else:
        with ad.no_grad():
            matrix = model.label_matrix().data
    return SimilarityReport(model.label_set.labels, np.asarray(matrix @ matrix.T, dtype=np.float64))


# ------------------------------------------------------------------ writers
def write_matrix_csv(path, labels: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", *labels])
        for label, row in zip(labels, np.asarray(matrix)):
            writer.writerow([label, *(repr(float(v)) if np.issubdtype(np.asarray(row).dtype, np.floating) else int(v)
                                      for v in row)])


def write_history_jsonl(path, history: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            valid = record["valid_f1"]
            fh.write(json.dumps({"epoch": record["epoch"], "train_loss": record["train_loss"],
                                 "valid_f1": None if np.isnan(valid) else valid}) + "\n")


def write_run_result(directory, result: RunResult, prefix: str | None = None) -> Path:
    """``<prefix>.json`` plus per-seed confusion and similarity CSVs and history JSONL files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"{result.method}_K{result.K}"
    path = directory / f"{prefix}.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for r in result.per_seed:
        labels = r.label_set.labels if r.label_set is not None else result.labels
        write_matrix_csv(directory / f"{prefix}_seed{r.seed}_confusion.csv", labels, r.confusion)
        write_history_jsonl(directory / f"{prefix}_seed{r.seed}_history.jsonl", r.history)
        if r.model is not None:
            similarity_report(r.model).to_csv(directory / f"{prefix}_seed{r.seed}_similarity.csv")
    return path
