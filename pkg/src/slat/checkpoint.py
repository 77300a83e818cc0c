"""Byte-stable model checkpoints.

Layout: 8-byte magic, little-endian uint64 header length, a sorted-keys JSON
header (model config, pipeline settings, tensor index), then each tensor's
raw float64 bytes in index order. Writing the same state twice yields the
same bytes, which archive formats with embedded timestamps do not guarantee.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import SlatConfig

MAGIC = b"SLATCK01"


def save_checkpoint(path, params: dict, cfg: SlatConfig,
                    pipeline: dict | None = None) -> None:
    names = sorted(params)
    index = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(params[name], dtype=np.float64))
        index.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "config": cfg.to_dict(),
        "pipeline": pipeline or {},
        "tensors": index,
        "dtype": "<f8",
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (params, config, pipeline)."""
    with open(Path(path), "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        params = {}
        for rec in header["tensors"]:
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise ValueError(f"{path}: truncated tensor {rec['name']}")
            params[rec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after last tensor")
    cfg = SlatConfig.from_dict(header["config"])
    return params, cfg, header.get("pipeline", {})
