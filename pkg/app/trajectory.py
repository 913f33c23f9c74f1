import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import torch

from .constants.constants import (
    ACTION_DIM,
    DATASET_FAMILY,
    DATASET_MAGIC,
    DEGENERATE_RANGE,
)
from .errors import (
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from .preprocessors.storage import atomic_write_bytes

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float]]


def _frozen(a: ArrayLike) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def check_finite(data: np.ndarray) -> None:
    """Raise NonFiniteError naming the first offending column"""
    data = np.asarray(data)
    if data.size and not np.all(np.isfinite(data)):
        bad = ~np.isfinite(data.reshape(-1, data.shape[-1]))
        raise NonFiniteError(int(np.argmax(bad.any(axis=0))))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """horizon x transition_dim array; each row is [action | state]"""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2:
            raise ShapeMismatchError(f"trajectory must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2:
            raise ShapeMismatchError(f"horizon must be >= 2, got {data.shape[0]}")
        check_finite(data)
        object.__setattr__(self, "data", data)

    @property
    def horizon(self) -> int:
        return self.data.shape[0]

    @property
    def transition_dim(self) -> int:
        return self.data.shape[1]

    def actions(self, action_dim: int = ACTION_DIM) -> np.ndarray:
        return self.data[:, :action_dim]

    def states(self, action_dim: int = ACTION_DIM) -> np.ndarray:
        return self.data[:, action_dim:]

    def positions(self, action_dim: int = ACTION_DIM) -> np.ndarray:
        return self.data[:, action_dim:action_dim + 2]


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins, maxs = _frozen(self.mins), _frozen(self.maxs)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ShapeMismatchError(f"stats shapes disagree: {mins.shape} vs {maxs.shape}")
        check_finite(np.stack([mins, maxs]))
        if np.any(maxs < mins):
            raise ValueError("normalization max below min")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @classmethod
    def fit(cls, data: np.ndarray) -> "NormalizationStats":
        """Per-dimension min/max over every row of `data` (..., transition_dim)"""
        rows = np.asarray(data, dtype=np.float64).reshape(-1, np.shape(data)[-1])
        check_finite(rows)
        return cls(rows.min(axis=0), rows.max(axis=0))

    @property
    def dim(self) -> int:
        return self.mins.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        """Dimensions with max - min below DEGENERATE_RANGE; they normalize to 0"""
        return (self.maxs - self.mins) < DEGENERATE_RANGE

    def select(self, start: int, stop: int) -> "NormalizationStats":
        return NormalizationStats(self.mins[start:stop], self.maxs[start:stop])


def normalize_array(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Affine map [min, max] -> [-1, 1] along the last axis"""
    x = np.asarray(x, dtype=np.float64)
    check_finite(x)
    span = np.where(stats.degenerate, 1.0, stats.maxs - stats.mins)
    out = 2.0 * (x - stats.mins) / span - 1.0
    return np.where(stats.degenerate, 0.0, out)


def denormalize_array(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    check_finite(x)
    out = (x + 1.0) / 2.0 * (stats.maxs - stats.mins) + stats.mins
    return np.where(stats.degenerate, stats.mins, out)


def normalize(traj: Trajectory, stats: NormalizationStats) -> Trajectory:
    return Trajectory(normalize_array(traj.data, stats), normalized=True)


def denormalize(traj: Trajectory, stats: NormalizationStats) -> Trajectory:
    return Trajectory(denormalize_array(traj.data, stats), normalized=False)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Fixed-horizon segments in raw units, stored as one (n, horizon, dim) block"""

    segments: np.ndarray
    stats: NormalizationStats
    maze_id: str
    _normalized: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        segments = _frozen(self.segments)
        if segments.ndim != 3:
            raise ShapeMismatchError(f"segments must be (n, horizon, dim), got {segments.shape}")
        if segments.shape[1] < 2:
            raise ShapeMismatchError(f"horizon must be >= 2, got {segments.shape[1]}")
        if segments.shape[2] != self.stats.dim:
            raise ShapeMismatchError(
                f"segment width {segments.shape[2]} does not match stats width {self.stats.dim}"
            )
        check_finite(segments)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "_normalized", _frozen(normalize_array(segments, self.stats)))

    def __len__(self) -> int:
        return self.segments.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.segments[i])

    def __iter__(self) -> Iterator[Trajectory]:
        return (self[i] for i in range(len(self)))

    @property
    def horizon(self) -> int:
        return self.segments.shape[1]

    @property
    def transition_dim(self) -> int:
        return self.segments.shape[2]

    @property
    def normalized_segments(self) -> np.ndarray:
        return self._normalized

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Same stats, selected segments"""
        return Dataset(self.segments[np.asarray(indices, dtype=np.int64)], self.stats, self.maze_id)


@dataclass(frozen=True, eq=False)
class Conditioning:
    """
    Inpainting constraints: row 0 state dims = start, last row state dims = goal.
    Values are in normalized space, one row per batch item; actions are never fixed.
    """

    start: torch.Tensor
    goal: torch.Tensor
    action_dim: int = ACTION_DIM

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        x = x.clone()
        x[:, 0, self.action_dim:] = self.start
        x[:, -1, self.action_dim:] = self.goal
        return x

    def satisfied_by(self, x: torch.Tensor) -> bool:
        return bool(
            torch.equal(x[:, 0, self.action_dim:], self.start.to(x.dtype))
            and torch.equal(x[:, -1, self.action_dim:], self.goal.to(x.dtype))
        )

    def free_mask(self, shape) -> torch.Tensor:
        """1.0 on entries the model must generate, 0.0 on conditioned entries"""
        mask = torch.ones(shape, dtype=torch.float64)
        mask[:, 0, self.action_dim:] = 0.0
        mask[:, -1, self.action_dim:] = 0.0
        return mask


# Dataset file: magic, u32 (n, horizon, dim, maze_id_len), maze_id utf-8,
# f64 mins, f64 maxs, f64 payload in row-major order; all little-endian.
_COUNTS = struct.Struct("<4I")


def dataset_to_bytes(ds: Dataset) -> bytes:
    maze = ds.maze_id.encode("utf-8")
    n, horizon, dim = ds.segments.shape
    return b"".join(
        [
            DATASET_MAGIC,
            _COUNTS.pack(n, horizon, dim, len(maze)),
            maze,
            ds.stats.mins.astype("<f8").tobytes(),
            ds.stats.maxs.astype("<f8").tobytes(),
            np.ascontiguousarray(ds.segments, dtype="<f8").tobytes(),
        ]
    )


def dataset_from_bytes(blob: bytes) -> Dataset:
    magic = blob[: len(DATASET_MAGIC)]
    if len(magic) < len(DATASET_MAGIC):
        raise TruncatedFileError("file shorter than the dataset header")
    if magic != DATASET_MAGIC:
        family = "dataset" if magic.startswith(DATASET_FAMILY) else "unrecognised"
        raise VersionMismatchError(f"{family} header {magic!r}, expected {DATASET_MAGIC!r}")

    offset = len(DATASET_MAGIC)
    if len(blob) < offset + _COUNTS.size:
        raise TruncatedFileError("file ends inside the count block")
    n, horizon, dim, maze_len = _COUNTS.unpack_from(blob, offset)
    offset += _COUNTS.size
    if horizon < 2 or dim < 1:
        raise ShapeMismatchError(f"invalid shape in header: horizon={horizon}, dim={dim}")

    expected = offset + maze_len + 8 * (2 * dim + n * horizon * dim)
    if len(blob) < expected:
        raise TruncatedFileError(f"expected {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise ShapeMismatchError(f"{len(blob) - expected} trailing bytes after payload")

    maze_id = blob[offset:offset + maze_len].decode("utf-8")
    offset += maze_len
    stats_block = np.frombuffer(blob, dtype="<f8", count=2 * dim, offset=offset)
    offset += 16 * dim
    count = n * horizon * dim
    payload = np.frombuffer(blob, dtype="<f8", count=count, offset=offset) if count else np.empty(0)
    stats = NormalizationStats(stats_block[:dim].astype(np.float64), stats_block[dim:].astype(np.float64))
    return Dataset(payload.astype(np.float64).reshape(n, horizon, dim), stats, maze_id)


def save_dataset(ds: Dataset, path: Path) -> Path:
    path = atomic_write_bytes(Path(path), dataset_to_bytes(ds))
    logger.info(f"Wrote dataset {path} ({len(ds)} segments, horizon {ds.horizon})")
    return path


def load_dataset(path: Path) -> Dataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())
