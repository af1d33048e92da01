"""Label mappings: each class is represented by a piece of text."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from ._random import substream
from .exceptions import ConfigurationError, SchemaError

MODES = ("name", "definition", "sample")


@dataclass(frozen=True)
class LabelDescription:
    name: str
    definition: str | None = None
    sample: str | None = None


@dataclass(frozen=True)
class LabelSet:
    """Ordered labels and the text each one maps to under ``mode``.

    The order of ``labels`` fixes the column order of every score matrix.
    """

    labels: tuple[str, ...]
    mode: str
    texts: tuple[str, ...]
    mapping: Mapping[str, LabelDescription] = field(default_factory=dict, compare=False)
    sample_seed: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown label mapping mode {self.mode!r}; expected one of {MODES}")
        if len(self.labels) != len(self.texts):
            raise ConfigurationError(f"{len(self.labels)} labels but {len(self.texts)} texts")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigurationError("duplicate label names")
        for label, text in zip(self.labels, self.texts):
            if not text or not text.strip():
                raise SchemaError(f"label {label!r} maps to an empty text")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._positions[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    @property
    def _positions(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}

    def indices(self, labels: Sequence[str]) -> list[int]:
        pos = self._positions
        try:
            return [pos[label] for label in labels]
        except KeyError as exc:
            raise KeyError(f"unknown label {exc.args[0]!r}") from None

    @classmethod
    def from_texts(cls, texts: Mapping[str, str], mode: str = "definition") -> "LabelSet":
        labels = tuple(texts)
        return cls(labels=labels, mode=mode, texts=tuple(texts[label] for label in labels))

    @classmethod
    def from_mapping(
        cls,
        mapping: Mapping[str, LabelDescription],
        mode: str = "definition",
        labels: Sequence[str] | None = None,
        pool=None,
        seed: int | None = None,
    ) -> "LabelSet":
        """Select each label's text under ``mode``.

        In ``sample`` mode with a ``pool`` of examples, one example per class is
        drawn with ``seed``; without a pool the mapping's stored sample is used.
        """
        labels = tuple(labels) if labels is not None else tuple(mapping)
        missing = [label for label in labels if label not in mapping]
        if missing:
            raise SchemaError(f"label mapping has no entry for {missing[0]!r}")
        texts = []
        for label in labels:
            desc = mapping[label]
            if mode == "name":
                text = desc.name
            elif mode == "definition":
                text = desc.definition
                if not text:
                    raise SchemaError(f"label {label!r} has no definition")
            elif mode == "sample":
                if pool is not None:
                    own = [ex.text for ex in pool if ex.label == label]
                    if not own:
                        raise SchemaError(f"no example of label {label!r} to use as its sample")
                    text = own[int(substream(seed or 0, "label-sample", label).integers(len(own)))]
                else:
                    text = desc.sample
                    if not text:
                        raise SchemaError(f"label {label!r} has no sample")
            else:
                raise ConfigurationError(f"unknown label mapping mode {mode!r}; expected one of {MODES}")
            texts.append(text)
        return cls(labels=labels, mode=mode, texts=tuple(texts), mapping=dict(mapping),
                   sample_seed=seed if mode == "sample" and pool is not None else None)

    def with_mode(self, mode: str, pool=None, seed: int | None = None) -> "LabelSet":
        return LabelSet.from_mapping(self.mapping, mode=mode, labels=self.labels, pool=pool, seed=seed)

    def subset(self, labels: Sequence[str]) -> "LabelSet":
        keep = set(labels)
        idx = [i for i, label in enumerate(self.labels) if label in keep]
        if len(idx) != len(keep):
            raise KeyError("subset names labels outside this label set")
        return replace(self, labels=tuple(self.labels[i] for i in idx), texts=tuple(self.texts[i] for i in idx))


def load_label_mapping(path) -> dict[str, LabelDescription]:
    """Read ``{label: {"name": str, "definition": str, "sample": str?}}``."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: malformed JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: expected a JSON object keyed by label")
    mapping = {}
    for label, entry in raw.items():
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise SchemaError(f"{path}: label {label!r} needs a string 'name'")
        for key in ("definition", "sample"):
            if key in entry and entry[key] is not None and not isinstance(entry[key], str):
                raise SchemaError(f"{path}: label {label!r} field {key!r} must be a string")
        mapping[label] = LabelDescription(entry["name"], entry.get("definition"), entry.get("sample"))
    return mapping


def save_label_mapping(path, mapping: Mapping[str, LabelDescription]) -> None:
    out = {}
    for label, desc in mapping.items():
        entry = {"name": desc.name}
        if desc.definition is not None:
            entry["definition"] = desc.definition
        if desc.sample is not None:
            entry["sample"] = desc.sample
        out[label] = entry
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, ensure_ascii=False)
