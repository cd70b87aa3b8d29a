"""
Bench Data
==========
Labelled image pools, the SSDS container that stores them, the synthetic
blob generator used at desk scale, and the Semi-Split stream builder that
turns a pool into K sequential semi-supervised tasks.

SSDS layout (little endian)::

    b"SSDS"  u16 version  u32 count  u16 H  u16 W  u16 C  u16 classes
    count x ( i16 label  |  H*W*C u8 pixels, HWC order )

Label ``-1`` marks an unlabelled record.  Bytes map linearly onto [-1, 1].
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from errors import (
    BadMagicError,
    ConfigError,
    DataError,
    LabelRangeError,
    LengthMismatchError,
    TruncatedFileError,
)
from tensor_core import rng_stream

logger = logging.getLogger(__name__)

MAGIC = b"SSDS"
VERSION = 1
UNLABELLED = -1
_HEADER = struct.Struct("<4sHIHHHH")


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelledSet:
    images: np.ndarray  # (N, C, H, W) in [-1, 1]
    labels: np.ndarray  # (N,) int64
    ids: np.ndarray     # (N,) item ids in the source pool

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))


@dataclass(frozen=True)
class UnlabelledSet:
    images: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class SemiSplit:
    labelled: LabelledSet
    unlabelled: UnlabelledSet


@dataclass(frozen=True)
class SemiTask:
    task_id: int
    classes: tuple[int, ...]
    train: SemiSplit
    val: SemiSplit
    test: SemiSplit


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[SemiTask, ...]
    num_classes: int
    provenance: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class SplitSizes:
    """Per-task sizes of the held-out splits (labelled counts are class-balanced)."""

    val_labelled: int = 0
    val_unlabelled: int = 0
    test_labelled: int = 0
    test_unlabelled: int = 0


def image_shape(images: np.ndarray) -> tuple[int, int, int]:
    return tuple(int(d) for d in images.shape[1:])  # type: ignore[return-value]


def empty_labelled(shape: tuple[int, int, int]) -> LabelledSet:
    return LabelledSet(np.zeros((0, *shape)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def empty_unlabelled(shape: tuple[int, int, int]) -> UnlabelledSet:
    return UnlabelledSet(np.zeros((0, *shape)), np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# Synthetic pool
# ---------------------------------------------------------------------------

def gen_synth_blobs(
    num_classes: int,
    per_class: int,
    image_size: int,
    noise_level: float,
    seed: int,
    channels: int = 1,
) -> LabelledSet:
    """Class ``c`` = one fixed ±0.6 spatial pattern plus Gaussian pixel noise."""
    if min(num_classes, per_class, image_size, channels) < 1 or noise_level < 0:
        raise ConfigError("gen_synth_blobs parameters must be positive")
    shape = (channels, image_size, image_size)
    patterns = 0.6 * np.sign(rng_stream(seed, "blob-patterns").standard_normal((num_classes, *shape)))
    patterns[patterns == 0] = 0.6

    noise_rng = rng_stream(seed, "blob-noise")
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    images = patterns[labels] + noise_level * noise_rng.standard_normal((labels.size, *shape))
    images = np.clip(images, -1.0, 1.0)
    return LabelledSet(images=images, labels=labels, ids=np.arange(labels.size, dtype=np.int64))


# ---------------------------------------------------------------------------
# SSDS container
# ---------------------------------------------------------------------------

def _to_bytes(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((images + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def quantize_images(images: np.ndarray) -> np.ndarray:
    """The values ``images`` take after one trip through a container."""
    return _from_bytes(_to_bytes(images))


def _record_dtype(h: int, w: int, c: int) -> np.dtype:
    return np.dtype([("label", "<i2"), ("pixels", "u1", (h, w, c))])


def write_container(
    path: str | Path,
    images: np.ndarray,
    labels: np.ndarray | None,
    num_classes: int,
) -> Path:
    """Write NCHW ``images``; ``labels=None`` writes an unlabelled container."""
    path = Path(path)
    n, c, h, w = images.shape
    records = np.zeros(n, dtype=_record_dtype(h, w, c))
    records["label"] = UNLABELLED if labels is None else np.asarray(labels, dtype=np.int16)
    records["pixels"] = _to_bytes(images).transpose(0, 2, 3, 1)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c, num_classes))
        fh.write(records.tobytes())
    logger.debug("Wrote %d records to %s", n, path)
    return path


def read_container(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(images NCHW, labels with -1 sentinel, class count)``."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an SSDS container")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, count, h, w, c, classes = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise BadMagicError(f"{path}: unsupported SSDS version {version}")
    dtype = _record_dtype(h, w, c)
    payload = blob[_HEADER.size:]
    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: {len(payload)} payload bytes, expected {expected}")
    if len(payload) > expected:
        raise LengthMismatchError(f"{path}: {len(payload) - expected} trailing bytes")
    records = np.frombuffer(payload, dtype=dtype, count=count)
    labels = records["label"].astype(np.int64)
    if np.any(labels < UNLABELLED) or np.any(labels >= classes):
        raise LabelRangeError(f"{path}: label outside [-1, {classes})")
    images = _from_bytes(records["pixels"]).transpose(0, 3, 1, 2).copy()
    return images, labels, int(classes)


def ingest_images(path: str | Path) -> LabelledSet:
    """Load a labelled pool; the unlabelled sentinel is a format error here."""
    images, labels, _ = read_container(path)
    if np.any(labels == UNLABELLED):
        raise LabelRangeError(f"{path}: label -1 is reserved for unlabelled containers")
    return LabelledSet(images=images, labels=labels, ids=np.arange(labels.size, dtype=np.int64))


def save_pool(pool: LabelledSet, path: str | Path, num_classes: int) -> Path:
    return write_container(path, pool.images, pool.labels, num_classes)


# ---------------------------------------------------------------------------
# Semi-Split stream
# ---------------------------------------------------------------------------

def balanced_counts(total: int, groups: int) -> list[int]:
    base, extra = divmod(total, groups)
    return [base + (1 if i < extra else 0) for i in range(groups)]


def build_semi_split(
    dataset: LabelledSet,
    num_tasks: int,
    classes_per_task: int,
    labelled_per_task: int,
    unlabelled_per_task: int,
    splits: SplitSizes,
    seed: int,
    num_classes: int | None = None,
) -> TaskStream:
    """Partition classes into tasks and carve disjoint splits out of each."""
    classes = np.array(dataset.classes, dtype=np.int64)
    if num_tasks * classes_per_task > classes.size:
        raise DataError(
            f"{num_tasks} tasks x {classes_per_task} classes need more than the "
            f"{classes.size} classes in the pool"
        )
    rng = rng_stream(seed, "semi-split")
    order = rng.permutation(classes)

    tasks = []
    for k in range(num_tasks):
        task_classes = tuple(sorted(int(c) for c in order[k * classes_per_task:(k + 1) * classes_per_task]))
        quotas = {
            "train": balanced_counts(labelled_per_task, classes_per_task),
            "val": balanced_counts(splits.val_labelled, classes_per_task),
            "test": balanced_counts(splits.test_labelled, classes_per_task),
        }
        picked: dict[str, list[np.ndarray]] = {"train": [], "val": [], "test": []}
        leftovers = []
        for ci, c in enumerate(task_classes):
            pool = rng.permutation(np.flatnonzero(dataset.labels == c))
            need = sum(q[ci] for q in quotas.values())
            if pool.size < need:
                raise DataError(f"class {c} has {pool.size} items, task {k} needs at least {need}")
            start = 0
            for split, q in quotas.items():
                picked[split].append(pool[start:start + q[ci]])
                start += q[ci]
            leftovers.append(pool[start:])

        rest = rng.permutation(np.concatenate(leftovers))
        n_unl = (unlabelled_per_task, splits.val_unlabelled, splits.test_unlabelled)
        if rest.size < sum(n_unl):
            raise DataError(f"task {k}: {rest.size} items left for {sum(n_unl)} unlabelled slots")
        cuts = np.cumsum(n_unl)
        unl = {"train": rest[:cuts[0]], "val": rest[cuts[0]:cuts[1]], "test": rest[cuts[1]:cuts[2]]}

        def make(split: str) -> SemiSplit:
            lab = np.sort(np.concatenate(picked[split]))
            u = np.sort(unl[split])
            return SemiSplit(
                labelled=LabelledSet(dataset.images[lab], dataset.labels[lab], dataset.ids[lab]),
                unlabelled=UnlabelledSet(dataset.images[u], dataset.ids[u]),
            )

        tasks.append(SemiTask(k, task_classes, make("train"), make("val"), make("test")))
        logger.debug("Task %d: classes %s", k, task_classes)

    provenance = {
        "seed": seed,
        "num_tasks": num_tasks,
        "classes_per_task": classes_per_task,
        "labelled_per_task": labelled_per_task,
        "unlabelled_per_task": unlabelled_per_task,
        "class_order": [int(c) for c in order],
    }
    total = num_classes if num_classes is not None else int(classes.max()) + 1
    return TaskStream(tasks=tuple(tasks), num_classes=total, provenance=provenance)


def stream_from_config(cfg) -> TaskStream:
    """Build the stream ``cfg`` describes (synthetic pool unless ``data_path`` is set)."""
    if cfg.data_path:
        pool = ingest_images(cfg.data_path)
        provenance_id = str(cfg.data_path)
    else:
        pool = gen_synth_blobs(
            cfg.num_classes, cfg.synth_per_class, cfg.image_size, cfg.noise_level,
            cfg.seed, channels=cfg.channels,
        )
        provenance_id = "synthetic-blobs"
    if image_shape(pool.images) != (cfg.channels, cfg.image_size, cfg.image_size):
        raise DataError(
            f"pool images {image_shape(pool.images)} do not match config "
            f"({cfg.channels}, {cfg.image_size}, {cfg.image_size})"
        )
    if pool.labels.size and int(pool.labels.max()) >= cfg.num_classes:
        raise DataError(f"pool label {int(pool.labels.max())} exceeds num_classes={cfg.num_classes}")
    stream = build_semi_split(
        pool,
        cfg.num_tasks,
        cfg.classes_per_task,
        cfg.labelled_per_task,
        cfg.unlabelled_per_task,
        SplitSizes(cfg.val_labelled, cfg.val_unlabelled, cfg.test_labelled, cfg.test_unlabelled),
        cfg.seed,
        num_classes=cfg.num_classes,
    )
    stream.provenance["dataset"] = provenance_id
    return stream
