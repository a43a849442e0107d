"""Versioned checkpoint blobs: named float32 tensors plus a JSON manifest.

Layout: magic "RRCK", u32 format version, u64 manifest length, manifest
JSON (UTF-8), then the tensor payload — each tensor little-endian float32,
row-major, at the offset recorded in the manifest. The manifest carries
the tensor shapes, the training config and its hash, so a checkpoint can
be validated against the data it is evaluated on.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RRCK"
VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    config: dict,
    extra: dict | None = None,
    optimizer: dict[str, np.ndarray] | None = None,
) -> None:
    """Write params (and optionally optimizer moment tensors) to one file."""
    tensors: list[tuple[str, np.ndarray]] = list(params.items())
    if optimizer:
        tensors.extend((f"optim.{k}", v) for k, v in optimizer.items())

    entries = []
    offset = 0
    payload = bytearray()
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.extend(data)
        offset += len(data)

    manifest = {
        "version": VERSION,
        "tensors": entries,
        "config": config,
        "config_hash": config_hash(config),
        "extra": extra or {},
    }
    blob = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (float64 tensors, manifest).

    The stored config hash is recomputed and verified, so a tampered or
    mismatched config is rejected rather than silently evaluated.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    mlen = struct.unpack("<Q", raw[8:16])[0]
    manifest = json.loads(raw[16 : 16 + mlen].decode())
    stored = manifest.get("config_hash")
    actual = config_hash(manifest.get("config", {}))
    if stored != actual:
        raise CheckpointError(
            f"{path}: config hash mismatch (manifest {stored}, recomputed {actual})"
        )

    payload = raw[16 + mlen :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=_F32, count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return tensors, manifest
