"""Run configuration: a YAML document validated field by field before any compute."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .encoder import EncoderConfig
from .exceptions import ConfigurationError
from .experiments import METHODS, ExperimentConfig
from .labels import MODES
from .objective import TcmHyper
from .training import OptimConfig

OUTPUT_ROOT_ENV = "TCMATCH_OUTPUT_ROOT"
PROTOCOLS = ("single", "compare", "tcm_vs_taskhead", "class_number_sweep", "description_sweep")


class ConfigError(ConfigurationError):
    """A config value failed validation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 40
    pool_per_class: int = 10
    test_per_class: int = 20
    vocab_size: int = 300
    signal_tokens_per_class: int = 6
    noise_len: int = 0
    seed: int = 0
    signal_per_example: int = 1
    definition_overlap: int = 0


@dataclass(frozen=True)
class DatasetSpec:
    path: Path | None = None
    test_path: Path | None = None
    valid_path: Path | None = None
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class SweepSpec:
    class_counts: tuple[int, ...] = ()
    modes: tuple[str, ...] = ()
    Ks: tuple[int, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    method: str = "tcm"
    protocol: str = "single"
    methods: tuple[str, ...] = ()
    mapping: Path | None = None
    mode: str = "definition"
    K: int | str = 5
    seeds: tuple[int, ...] = (1,)
    encoder: dict = field(default_factory=dict)
    hyper: TcmHyper = TcmHyper()
    optim: OptimConfig = OptimConfig()
    epochs: int = 30
    patience: int | None = None
    max_len: int = 64
    dtype: str = "float64"
    sweep: SweepSpec = SweepSpec()
    output_dir: Path = Path("runs/default")

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(max_len=self.max_len, hyper=self.hyper, optim=self.optim, epochs=self.epochs,
                                patience=self.patience, mode=self.mode, dtype=self.dtype, **self.encoder)

    def to_dict(self) -> dict:
        """A JSON-ready echo; loading it back yields an equal config."""
        out = asdict(self)
        out["optim"]["betas"] = list(self.optim.betas)

        def clean(value):
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items() if v is not None and v != () and v != []}
            if isinstance(value, (list, tuple)):
                return [clean(v) for v in value]
            return value

        return clean(out)


# ------------------------------------------------------------------ checking helpers
def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(data: dict, allowed, path: str) -> None:
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, "unknown key")


def _int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _choice(value, options, path: str) -> str:
    if value not in options:
        raise ConfigError(path, f"expected one of {list(options)}, got {value!r}")
    return value


def _file(value, path: str, base: Path) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"expected a file path, got {value!r}")
    resolved = Path(value) if Path(value).is_absolute() else base / value
    if not resolved.is_file():
        raise ConfigError(path, "file not found")
    return resolved


def _int_list(value, path: str, minimum: int | None = None) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list")
    return tuple(_int(v, f"{path}[{i}]", minimum) for i, v in enumerate(value))


def _k(value, path: str) -> int | str:
    if value == "full":
        return value
    return _int(value, path, 1)


# ------------------------------------------------------------------ sections
def _parse_dataset(raw, base: Path) -> DatasetSpec:
    raw = _mapping(raw, "dataset")
    _reject_unknown(raw, ("path", "test_path", "valid_path", "synthetic"), "dataset")
    has_path, has_synth = raw.get("path") is not None, raw.get("synthetic") is not None
    if has_path == has_synth:
        raise ConfigError("dataset", "give exactly one of 'path' or 'synthetic'")
    if has_synth:
        for key in ("test_path", "valid_path"):
            if raw.get(key) is not None:
                raise ConfigError(f"dataset.{key}", "not allowed with a synthetic dataset")
        synth = _mapping(raw["synthetic"], "dataset.synthetic")
        allowed = SyntheticSpec.__dataclass_fields__
        _reject_unknown(synth, allowed, "dataset.synthetic")
        values = {}
        for key, value in synth.items():
            minimum = 0 if key in ("noise_len", "definition_overlap", "seed") else 1
            values[key] = _int(value, f"dataset.synthetic.{key}", minimum)
        return DatasetSpec(synthetic=SyntheticSpec(**values))
    return DatasetSpec(
        path=_file(raw["path"], "dataset.path", base),
        test_path=_file(raw["test_path"], "dataset.test_path", base) if raw.get("test_path") is not None else None,
        valid_path=_file(raw["valid_path"], "dataset.valid_path", base) if raw.get("valid_path") is not None else None,
    )


def _parse_encoder(raw) -> dict:
    raw = _mapping(raw, "encoder")
    allowed = ("embed_dim", "num_layers", "num_heads", "ffn_dim", "repr_dim", "dropout")
    _reject_unknown(raw, allowed, "encoder")
    out = {}
    for key, value in raw.items():
        if key == "dropout":
            rate = _float(value, "encoder.dropout")
            if not 0.0 <= rate < 1.0:
                raise ConfigError("encoder.dropout", f"must lie in [0, 1), got {rate}")
            out[key] = rate
        else:
            out[key] = _int(value, f"encoder.{key}", 1)
    dims = {**{k: getattr(EncoderConfig, k) for k in ("embed_dim", "num_heads")}, **out}
    if dims["embed_dim"] % dims["num_heads"]:
        raise ConfigError("encoder.num_heads", f"embed_dim ({dims['embed_dim']}) is not divisible by {dims['num_heads']}")
    return out


def _parse_hyper(raw) -> TcmHyper:
    raw = _mapping(raw, "hyper")
    _reject_unknown(raw, ("tau", "delta", "alpha"), "hyper")
    values = {k: _float(v, f"hyper.{k}") for k, v in raw.items()}
    if "tau" in values and not values["tau"] > 0:
        raise ConfigError("hyper.tau", f"must be positive, got {values['tau']}")
    if "alpha" in values and not values["alpha"] >= 0:
        raise ConfigError("hyper.alpha", f"must be non-negative, got {values['alpha']}")
    return TcmHyper(**values)


def _parse_optim(raw) -> OptimConfig:
    raw = _mapping(raw, "optim")
    _reject_unknown(raw, ("lr", "betas", "eps", "weight_decay", "batch_size"), "optim")
    values: dict[str, Any] = {}
    for key in ("lr", "eps", "weight_decay"):
        if key in raw:
            values[key] = _float(raw[key], f"optim.{key}")
            if values[key] < 0:
                raise ConfigError(f"optim.{key}", f"must be non-negative, got {values[key]}")
    if "betas" in raw:
        betas = raw["betas"]
        if not isinstance(betas, list) or len(betas) != 2:
            raise ConfigError("optim.betas", "expected a list of two numbers")
        values["betas"] = tuple(_float(b, f"optim.betas[{i}]") for i, b in enumerate(betas))
        for i, b in enumerate(values["betas"]):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"optim.betas[{i}]", f"must lie in [0, 1), got {b}")
    if "batch_size" in raw:
        values["batch_size"] = _int(raw["batch_size"], "optim.batch_size", 1)
    return OptimConfig(**values)


def _parse_sweep(raw) -> SweepSpec:
    raw = _mapping(raw, "sweep")
    _reject_unknown(raw, ("class_counts", "modes", "Ks"), "sweep")
    counts = _int_list(raw["class_counts"], "sweep.class_counts", 2) if "class_counts" in raw else ()
    Ks = _int_list(raw["Ks"], "sweep.Ks", 1) if "Ks" in raw else ()
    modes: tuple[str, ...] = ()
    if "modes" in raw:
        if not isinstance(raw["modes"], list) or not raw["modes"]:
            raise ConfigError("sweep.modes", "expected a non-empty list")
        modes = tuple(_choice(m, MODES, f"sweep.modes[{i}]") for i, m in enumerate(raw["modes"]))
    return SweepSpec(class_counts=counts, modes=modes, Ks=Ks)


_TOP_KEYS = ("method", "protocol", "methods", "dataset", "mapping", "mode", "K", "seeds", "encoder", "hyper", "optim",
             "epochs", "patience", "max_len", "dtype", "sweep", "output_dir")


def parse_config(data, base: Path | str = ".") -> RunConfig:
    """Validate a decoded config document; relative paths resolve against ``base``."""
    base = Path(base)
    data = _mapping(data, "<root>")
    _reject_unknown(data, _TOP_KEYS, "")
    if "dataset" not in data:
        raise ConfigError("dataset", "missing required section")
    dataset = _parse_dataset(data["dataset"], base)
    method = _choice(data.get("method", "tcm"), METHODS, "method")
    protocol = _choice(data.get("protocol", "single"), PROTOCOLS, "protocol")
    methods: tuple[str, ...] = ()
    if "methods" in data:
        if not isinstance(data["methods"], list) or not data["methods"]:
            raise ConfigError("methods", "expected a non-empty list")
        methods = tuple(_choice(m, METHODS, f"methods[{i}]") for i, m in enumerate(data["methods"]))
    if protocol == "compare" and not methods:
        raise ConfigError("methods", "the compare protocol needs a list of methods")
    mapping = None
    if data.get("mapping") is not None:
        mapping = _file(data["mapping"], "mapping", base)
    elif dataset.synthetic is None:
        raise ConfigError("mapping", "a label-mapping file is required with a dataset path")
    mode = _choice(data.get("mode", "definition"), MODES, "mode")
    K = _k(data.get("K", 5), "K")
    seeds = _int_list(data.get("seeds", [1]), "seeds", 0)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seed")
    patience = data.get("patience")
    sweep = _parse_sweep(data.get("sweep"))
    if protocol == "class_number_sweep" and not sweep.class_counts:
        raise ConfigError("sweep.class_counts", "required by the class_number_sweep protocol")
    if protocol == "description_sweep" and not sweep.modes:
        raise ConfigError("sweep.modes", "required by the description_sweep protocol")
    output_dir = data.get("output_dir", "runs/default")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", f"expected a directory path, got {output_dir!r}")
    return RunConfig(
        dataset=dataset, method=method, protocol=protocol, methods=methods, mapping=mapping, mode=mode, K=K,
        seeds=seeds, encoder=_parse_encoder(data.get("encoder")), hyper=_parse_hyper(data.get("hyper")),
        optim=_parse_optim(data.get("optim")), epochs=_int(data.get("epochs", 30), "epochs", 1),
        patience=None if patience is None else _int(patience, "patience", 1),
        max_len=_int(data.get("max_len", 64), "max_len", 2),
        dtype=_choice(data.get("dtype", "float64"), ("float64", "float32"), "dtype"),
        sweep=sweep, output_dir=Path(output_dir),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from exc
    return parse_config(data, base=path.parent)


def resolve_output_dir(output_dir: Path, override: str | None = None) -> Path:
    """``--out`` wins; otherwise relative directories land under the output-root variable, if set."""
    if override:
        return Path(override)
    target = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not target.is_absolute():
        target = Path(root) / target
    return target


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
