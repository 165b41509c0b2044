"""Versioned, checksummed policy checkpoints.

Layout: 8-byte magic, u32 format version, u32 JSON header length, the JSON
header (array names, shapes, dtypes, training step, config hash), the raw
array bytes in header order, and a trailing sha256 over everything before
it. Arrays round-trip bitwise.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointError

MAGIC = b"PIANOCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    arrays: dict                 # name -> np.ndarray
    train_step: int = 0
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.train_step != other.train_step
                or self.config_hash != other.config_hash
                or self.meta != other.meta
                or set(self.arrays) != set(other.arrays)):
            return False
        for k, a in self.arrays.items():
            b = other.arrays[k]
            if a.dtype != b.dtype or a.shape != b.shape:
                return False
            if a.tobytes() != b.tobytes():
                return False
        return True


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.arrays)
    header = {
        "arrays": [{"name": n,
                    "shape": list(ckpt.arrays[n].shape),
                    "dtype": str(ckpt.arrays[n].dtype)} for n in names],
        "train_step": int(ckpt.train_step),
        "config_hash": ckpt.config_hash,
        "meta": ckpt.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack(">II", FORMAT_VERSION, len(header_bytes))
    blob += header_bytes
    for n in names:
        arr = ckpt.arrays[n]
        blob += np.ascontiguousarray(arr).tobytes()
    digest = hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
        fh.write(digest)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    if body[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    off = len(MAGIC)
    version, header_len = struct.unpack_from(">II", body, off)
    off += 8
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} not supported "
            f"(this build reads version {FORMAT_VERSION})")
    try:
        header = json.loads(body[off:off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    off += header_len
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        raw = body[off:off + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: array {spec['name']} truncated")
        arrays[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes")
    return Checkpoint(arrays=arrays, train_step=header["train_step"],
                      config_hash=header["config_hash"],
                      meta=header.get("meta", {}))
