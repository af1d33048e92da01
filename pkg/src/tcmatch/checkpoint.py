"""Save and restore trained models of every method in one binary file."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .autodiff import Tensor
from .baselines import TaskHeadModel
from .encoder import init_encoder, load_encoder, save_encoder
from .exceptions import SchemaError, StaleCacheError
from .labels import LabelDescription, LabelSet
from .objective import TcmHyper
from .training import MatchingModel


def label_set_fingerprint(label_set: LabelSet) -> str:
    payload = json.dumps([label_set.mode, list(label_set.labels), list(label_set.texts)]).encode()
    return hashlib.blake2b(payload, digest_size=16).hexdigest()


def save_model(path, model, method: str, metadata: dict | None = None) -> None:
    ls = model.label_set
    meta = {
        "method": method,
        "mode": ls.mode,
        "labels": list(ls.labels),
        "label_texts": list(ls.texts),
        "label_fingerprint": label_set_fingerprint(ls),
    }
    extra: dict[str, Tensor] = {}
    if isinstance(model, TaskHeadModel):
        meta["kind"] = "task_head"
        extra = {"head.weight": model.weight, "head.bias": model.bias}
    else:
        meta["kind"] = "matching"
        meta["label_source"] = model.label_source
        meta["hyper"] = {"tau": model.hyper.tau, "delta": model.hyper.delta, "alpha": model.hyper.alpha}
        if model.label_source == "two_encoder":
            extra = {f"label_encoder.{k}": v for k, v in model.label_encoder.params.items()}
        elif model.free_labels is not None:
            extra = {"labels.free": model.free_labels}
    meta.update(metadata or {})
    save_encoder(path, model.encoder, meta, extra)


def load_model(path):
    """Rebuild the model with the label set it was trained with. Returns ``(model, metadata)``."""
    enc, meta, extra = load_encoder(path)
    for key in ("kind", "labels", "label_texts", "mode"):
        if key not in meta:
            raise SchemaError(f"{path}: checkpoint metadata lacks {key!r}")
    label_set = LabelSet.from_texts(dict(zip(meta["labels"], meta["label_texts"])), mode=meta["mode"])
    if meta["kind"] == "task_head":
        model = TaskHeadModel(enc, label_set)
        model.weight.data[...] = extra["head.weight"]
        model.bias.data[...] = extra["head.bias"]
        return model, meta
    hyper = TcmHyper(**meta.get("hyper", {}))
    source = meta.get("label_source", "tcm")
    if source == "two_encoder":
        label_enc = init_encoder(enc.cfg, vocab=enc.vocab, dtype=enc.params["embed.tokens"].dtype)
        prefix = "label_encoder."
        label_enc.load_state_dict({k[len(prefix):]: v for k, v in extra.items() if k.startswith(prefix)})
        return MatchingModel(enc, label_set, hyper, source, label_encoder=label_enc), meta
    if source in ("tcm_init", "free"):
        free = Tensor(np.array(extra["labels.free"]), requires_grad=True, name="labels.free")
        return MatchingModel(enc, label_set, hyper, source, free_labels=free), meta
    return MatchingModel(enc, label_set, hyper, source), meta


def check_mapping(meta: dict, mapping: dict[str, LabelDescription]) -> None:
    """Raise :class:`StaleCacheError` unless ``mapping`` yields the label texts the checkpoint was trained on.

    Sample-mode texts are drawn from the training episode, so only the label
    names are compared in that mode.
    """
    labels = meta["labels"]
    missing = [label for label in labels if label not in mapping]
    if missing or len(mapping) != len(labels):
        raise StaleCacheError("label mapping does not cover exactly the checkpoint's labels")
    if meta["mode"] == "sample":
        return
    try:
        current = LabelSet.from_mapping(mapping, mode=meta["mode"], labels=labels)
    except SchemaError as exc:
        raise StaleCacheError(f"label mapping is incompatible with the checkpoint: {exc}") from exc
    if label_set_fingerprint(current) != meta.get("label_fingerprint"):
        raise StaleCacheError("label mapping texts differ from the ones the checkpoint was trained with")

