"""
Spatial Pooling
===============

Row/column sums of surface values inside the tracked box, resampled to a
fixed length so every frame has the same size regardless of the box.
"""

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import NORMALIZE_FRAMES, RESAMPLE_LEN, SAMPLE_INTERVAL_US
from .errors import ConfigError, DimensionMismatchError
from .surfaces import MemorySurface

logger = logging.getLogger(__name__)


class PoolMode(str, Enum):
    EVENTS = "E"
    FEATURES = "F"


@dataclass(frozen=True)
class PoolConfig:
    resample_len: int = RESAMPLE_LEN
    sample_interval: int = SAMPLE_INTERVAL_US
    mode: PoolMode = PoolMode.EVENTS
    normalize: bool = NORMALIZE_FRAMES

    def __post_init__(self):
        object.__setattr__(self, "mode", PoolMode(self.mode))
        if self.resample_len < 2:
            raise ConfigError(f"resample_len must be >= 2, got {self.resample_len}")

    def frame_length(self, channels: int) -> int:
        return self.resample_len * 2 * channels


@dataclass
class FeatureFrame:
    vector: np.ndarray
    label: Optional[int]
    recording_id: str
    frame_index: int
    instant: int = 0
    event_index: int = -1


def resample_linear(values: np.ndarray, m: int) -> np.ndarray:
    """Sample values at m points evenly spanning [0, n-1] with linear interpolation."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise DimensionMismatchError("Cannot resample an empty vector")
    if n == 1:
        return np.full(m, values[0])
    return np.interp(np.linspace(0.0, n - 1, m), np.arange(n), values)


def normalize_frame(vector: np.ndarray) -> np.ndarray:
    """Divide by the vector max; an all-zero vector is returned unchanged."""
    peak = vector.max() if vector.size else 0.0
    return vector / peak if peak > 0 else vector


def pool_profiles(surfaces: Union[MemorySurface, Sequence[MemorySurface]], bbox, now
                  ) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Un-resampled (row sums, column sums) for every channel of every surface, in order."""
    if isinstance(surfaces, MemorySurface):
        surfaces = [surfaces]
    dims = {s.config.dims for s in surfaces}
    if len(dims) != 1:
        raise DimensionMismatchError(f"Pooled surfaces must share dims, got {sorted(dims)}")
    profiles = []
    for surface in surfaces:
        block = surface.materialize_box(now, bbox)
        for channel in block:
            profiles.append((channel.sum(axis=1), channel.sum(axis=0)))
    return profiles


def pool_frame(surfaces: Union[MemorySurface, Sequence[MemorySurface]], bbox, now,
               config: PoolConfig = PoolConfig()) -> Optional[np.ndarray]:
    """
    Pooled vector: rows then columns of surface 0, rows then columns of surface 1, ...

    Returns:
        Vector of length resample_len * 2 * channels, or None when bbox is None
    """
    if bbox is None:
        return None
    parts = []
    for rows, cols in pool_profiles(surfaces, bbox, now):
        parts.append(resample_linear(rows, config.resample_len))
        parts.append(resample_linear(cols, config.resample_len))
    vector = np.concatenate(parts)
    return normalize_frame(vector) if config.normalize else vector


def frame_matrix(frames: Sequence[FeatureFrame]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack frames into (X, labels); all frames must share one length."""
    if not frames:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    lengths = {f.vector.size for f in frames}
    if len(lengths) != 1:
        raise DimensionMismatchError(f"Frames have differing lengths {sorted(lengths)}")
    X = np.stack([f.vector for f in frames])
    y = np.array([f.label for f in frames], dtype=np.int64)
    return X, y


def write_frames_csv(path, frames: Iterable[FeatureFrame]) -> int:
    """Frame matrix as CSV (recording_id, frame_index, label, v0..vD-1); returns rows written."""
    frames = list(frames)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    width = frames[0].vector.size if frames else 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["recording_id", "frame_index", "label"] + [f"v{j}" for j in range(width)])
        for frame in frames:
            writer.writerow([frame.recording_id, frame.frame_index, frame.label,
                             *(f"{v:.6g}" for v in frame.vector)])
    return len(frames)
