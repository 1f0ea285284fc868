"""Versioned binary checkpoint format.

Layout, all little-endian:

    magic   4 bytes  b"TARD"
    version u32
    digest  32 bytes (sha256 of the canonical config document)
    seed    u64
    epoch   u32
    count   u32      number of arrays
    then per array:
        name_len u16, name utf-8 bytes,
        ndim u8, each dim u32,
        float32 data, row-major

Writes go to a temp file in the same directory and are moved into place with
os.replace, so a reader never sees a partial checkpoint.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError

log = logging.getLogger(__name__)

MAGIC = b"TARD"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config_digest: bytes
    seed: int
    epoch: int
    arrays: dict[str, np.ndarray]


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    config_digest: bytes,
    seed: int,
    epoch: int,
) -> None:
    if len(config_digest) != 32:
        raise CheckpointFormatError(f"digest must be 32 bytes, got {len(config_digest)}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(config_digest)
        fh.write(struct.pack("<QI", seed, epoch))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())
    os.replace(tmp, path)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str | Path, expected_digest: bytes | None = None) -> Checkpoint:
    """Read a checkpoint back; a digest mismatch is surfaced as a warning,
    a version mismatch or any structural damage as a format error."""
    path = Path(path)
    with path.open("rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"checkpoint version {version} is incompatible with reader version {FORMAT_VERSION}"
            )
        digest = _read_exact(fh, 32, "config digest")
        seed, epoch = struct.unpack("<QI", _read_exact(fh, 12, "header"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"dim of {name}"))[0]
                for _ in range(ndim)
            )
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
            raw = _read_exact(fh, n_bytes, f"data of {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointFormatError(f"{path} has trailing bytes after the last array")
    if expected_digest is not None and digest != expected_digest:
        log.warning(
            "checkpoint %s was written under a different config (digest mismatch)", path
        )
    return Checkpoint(version=version, config_digest=digest, seed=seed, epoch=epoch, arrays=arrays)
