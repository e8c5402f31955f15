"""Flat binary checkpoint container.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then the raw little-endian float64 parameter values concatenated in header
order.  The header carries the format version, the model kind and
hyperparameters, optional training metadata, and one entry per array
(name, shape, offset).  Keys are sorted everywhere so identical state
produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CASNETCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str  # "tasnet" | "casnet"
    config: dict  # model hyperparameters by section
    arrays: dict  # name -> float64 ndarray
    train_meta: dict


def save_checkpoint(path, kind, config, arrays, train_meta=None):
    names = sorted(arrays)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "train_meta": train_meta or {},
        "params": entries,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic): {path}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format_version {header.get('format_version')}"
            )
        body = fh.read()
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            body, dtype="<f8", count=count, offset=start
        ).reshape(shape).astype(np.float64)
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        arrays=arrays,
        train_meta=header.get("train_meta", {}),
    )
