"""
Weight Codec
============
Flatten Θ into one vector in manifest order, cut it into fixed-size chunks
for the hypernetwork, put it back together bit-exactly, and persist
parameter bundles as MCWT checkpoints.

MCWT layout (little endian)::

    b"MCWT"  u16 version  u32 entries
    entries x ( u16 name_len | name utf-8 | u8 kind (0 param, 1 buffer)
                | u8 ndim | ndim x u32 dims )
    float64 values of every entry, in entry order
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from errors import (
    BadMagicError,
    ContractError,
    DataFormatError,
    LengthMismatchError,
    TruncatedFileError,
)
from semi_acgan import GanArch, ModelParams, default_buffers
from tensor_core import DTYPE, ParamBundle

logger = logging.getLogger(__name__)

MAGIC = b"MCWT"
VERSION = 1
DEFAULT_CHUNK_SIZE = 250

Manifest = tuple[tuple[str, tuple[int, ...]], ...]
B = TypeVar("B", bound=ParamBundle)


def _as_manifest(manifest: Sequence[tuple[str, Sequence[int]]]) -> Manifest:
    return tuple((str(name), tuple(int(d) for d in shape)) for name, shape in manifest)


def manifest_length(manifest: Sequence[tuple[str, Sequence[int]]]) -> int:
    return int(sum(math.prod(shape) for _, shape in manifest))


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    manifest: Manifest

    def __post_init__(self) -> None:
        if manifest_length(self.manifest) != self.values.size:
            raise ContractError(
                f"manifest covers {manifest_length(self.manifest)} values, vector has {self.values.size}"
            )

    @property
    def total_len(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ChunkSet:
    chunk_size: int
    chunks: np.ndarray  # (num_chunks, chunk_size)
    pad_len: int
    manifest: Manifest

    @property
    def num_chunks(self) -> int:
        return int(self.chunks.shape[0])

    @property
    def chunk_ids(self) -> np.ndarray:
        return np.arange(self.num_chunks)


def num_chunks_for(total_len: int, chunk_size: int) -> int:
    return math.ceil(total_len / chunk_size)


# ---------------------------------------------------------------------------
# Flatten / chunk
# ---------------------------------------------------------------------------

def flatten(params: ParamBundle) -> WeightVector:
    values = [arr.ravel() for arr in params.params.values()]
    flat = np.concatenate(values).astype(DTYPE) if values else np.zeros(0, dtype=DTYPE)
    return WeightVector(values=flat, manifest=_as_manifest(params.manifest))


def unflatten(w: WeightVector, buffers: dict[str, np.ndarray] | None = None) -> ModelParams:
    """Rebuild a ModelParams; batch-norm buffers default to (mean 0, var 1)."""
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in w.manifest:
        n = math.prod(shape)
        params[name] = w.values[offset:offset + n].reshape(shape).copy()
        offset += n
    if buffers is None:
        buffers = default_buffers(GanArch.from_manifest(w.manifest))
    return ModelParams(params=params, buffers={k: v.copy() for k, v in buffers.items()})


def chunk(w: WeightVector, chunk_size: int = DEFAULT_CHUNK_SIZE) -> ChunkSet:
    if chunk_size < 1:
        raise ContractError(f"chunk_size must be >= 1, got {chunk_size}")
    n = num_chunks_for(w.total_len, chunk_size)
    pad = n * chunk_size - w.total_len
    padded = np.concatenate([w.values, np.zeros(pad, dtype=DTYPE)])
    return ChunkSet(chunk_size=chunk_size, chunks=padded.reshape(n, chunk_size), pad_len=pad, manifest=w.manifest)


def unchunk(c: ChunkSet) -> WeightVector:
    if c.pad_len < 0 or c.pad_len > c.chunk_size:
        raise DataFormatError(f"pad_len {c.pad_len} outside [0, {c.chunk_size}]")
    if c.chunks.ndim != 2 or c.chunks.shape[1] != c.chunk_size:
        raise DataFormatError(f"chunks of shape {c.chunks.shape} do not have size {c.chunk_size}")
    flat = c.chunks.reshape(-1)
    total = flat.size - c.pad_len
    if total != manifest_length(c.manifest):
        raise LengthMismatchError(
            f"{c.num_chunks} chunks minus {c.pad_len} padding = {total}, "
            f"manifest needs {manifest_length(c.manifest)}"
        )
    return WeightVector(values=flat[:total].copy(), manifest=c.manifest)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_HEAD = struct.Struct("<4sHI")


def save_checkpoint(params: ParamBundle, path: str | Path) -> Path:
    path = Path(path)
    entries = [(name, 0, arr) for name, arr in params.params.items()]
    entries += [(name, 1, arr) for name, arr in params.buffers.items()]
    parts = [_HEAD.pack(MAGIC, VERSION, len(entries))]
    for name, kind, arr in entries:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", kind, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, _, arr in entries:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    logger.debug("Saved %d entries to %s", len(entries), path)
    return path


def load_checkpoint(path: str | Path, cls: type[B] = ModelParams) -> B:  # type: ignore[assignment]
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an MCWT checkpoint")
    try:
        _, version, count = _HEAD.unpack_from(blob, 0)
        if version != VERSION:
            raise BadMagicError(f"{path}: unsupported MCWT version {version}")
        offset = _HEAD.size
        layout = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            if offset + name_len > len(blob):
                raise TruncatedFileError(f"{path}: manifest truncated")
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            kind, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            layout.append((name, kind, tuple(shape)))
    except struct.error as exc:
        raise TruncatedFileError(f"{path}: manifest truncated") from exc
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: manifest name is not UTF-8") from exc

    needed = 8 * sum(math.prod(shape) for _, _, shape in layout)
    payload = len(blob) - offset
    if payload < needed:
        raise TruncatedFileError(f"{path}: {payload} data bytes, manifest needs {needed}")
    if payload > needed:
        raise LengthMismatchError(f"{path}: {payload - needed} bytes beyond the manifest")

    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for name, kind, shape in layout:
        n = math.prod(shape)
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(DTYPE).reshape(shape)
        offset += 8 * n
        (buffers if kind == 1 else params)[name] = arr
    return cls(params=params, buffers=buffers)
