"""Named-tensor checkpoint files.

Layout: one line of JSON (the header) followed by the raw little-endian
bytes of every tensor, concatenated in header order. The header maps each
name to ``{"shape", "dtype", "offset"}`` (offset counted from the first
byte after the header line) and may carry a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = "named-tensors/1"


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                         "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = {"format": MAGIC, "tensors": entries, "meta": meta or {}}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        body = fh.read()
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a named-tensor checkpoint")
    out = {}
    for name, e in header["tensors"].items():
        dt = np.dtype(e["dtype"])
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=dt).reshape(e["shape"])
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    return out, header["meta"]
