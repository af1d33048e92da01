"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic   8 bytes   b"TCMCKPT\\0"
    version uint32
    hlen    uint64    length of the JSON header in bytes
    header  hlen bytes UTF-8 JSON: {"metadata": {...},
                                    "params": [{"name", "shape", "dtype", "offset", "nbytes"}, ...]}
    payload           concatenated little-endian float buffers, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..exceptions import SchemaError
from .tensor import Tensor

MAGIC = b"TCMCKPT\0"
FORMAT_VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "f4": np.dtype("<f4")}


def save_parameters(path, params: Mapping[str, Tensor | np.ndarray], metadata: Mapping[str, Any] | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        code = "f4" if arr.dtype == np.float32 else "f8"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": dict(metadata or {}), "params": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(name -> array, metadata)``."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise SchemaError(f"{path}: not a parameter checkpoint (bad magic)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, pos)
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    base = pos + hlen
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        dtype = _DTYPES[entry["dtype"]]
        start = base + entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise SchemaError(f"{path}: truncated payload for {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return params, header["metadata"]
