"""
Decaying Memory Surfaces
========================

Per-pixel stores of the most recent event (time, index, polarity) that are
materialized into decayed values only when read. Six variants come from
two decay bases (elapsed time, elapsed event count) and three kernels:

    BIN  P * [age <= c]            support [0, c]
    LIN  P * max(0, 1 - age/2c)    support [0, 2c]
    EXP  P * exp(-age/c)           support [0, inf)

with c = tau_e (microseconds) or n_e (events). Every kernel integrates to c.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .aer_io import DEFAULT_DIMS, Event, Recording
from .config import N_E, SURFACE_BASIS, SURFACE_KERNEL, TAU_E_US
from .errors import ConfigError, DataError, NegativeAgeError, OutOfRangeError, TimestampOrderError

logger = logging.getLogger(__name__)


class DecayBasis(str, Enum):
    TIME = "TIME"
    INDEX = "INDEX"


class Kernel(str, Enum):
    BIN = "BIN"
    LIN = "LIN"
    EXP = "EXP"


_KERNEL_LETTER = {Kernel.BIN: "B", Kernel.LIN: "L", Kernel.EXP: "E"}
_BASIS_LETTERS = {DecayBasis.TIME: "TS", DecayBasis.INDEX: "IS"}


@dataclass(frozen=True)
class SurfaceConfig:
    decay_basis: DecayBasis = DecayBasis(SURFACE_BASIS)
    kernel: Kernel = Kernel(SURFACE_KERNEL)
    tau_e: float = TAU_E_US
    n_e: float = N_E
    dims: Tuple[int, int] = DEFAULT_DIMS

    def __post_init__(self):
        object.__setattr__(self, "decay_basis", DecayBasis(self.decay_basis))
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        if self.tau_e <= 0 or self.n_e <= 0:
            raise ConfigError(f"tau_e and n_e must be positive, got {self.tau_e} and {self.n_e}")

    @property
    def constant(self) -> float:
        return self.tau_e if self.decay_basis is DecayBasis.TIME else self.n_e

    @property
    def code(self) -> str:
        """Short name such as ETS (exponential, time) or BIS (binning, index)."""
        return _KERNEL_LETTER[self.kernel] + _BASIS_LETTERS[self.decay_basis]

    @classmethod
    def from_code(cls, code: str, **kwargs) -> "SurfaceConfig":
        code = code.strip().upper()
        kernels = {letter: kernel for kernel, letter in _KERNEL_LETTER.items()}
        bases = {letters: basis for basis, letters in _BASIS_LETTERS.items()}
        if len(code) != 3 or code[0] not in kernels or code[1:] not in bases:
            raise ConfigError(f"Unknown surface code '{code}' (expected one of BTS, LTS, ETS, BIS, LIS, EIS)")
        return cls(decay_basis=bases[code[1:]], kernel=kernels[code[0]], **kwargs)

    def with_(self, **changes) -> "SurfaceConfig":
        return replace(self, **changes)


def kernel_value(kernel: Kernel, age, c: float) -> np.ndarray:
    """Kernel response for non-negative ages (scalar or array)."""
    age = np.asarray(age, dtype=float)
    if kernel is Kernel.BIN:
        return (age <= c).astype(float)
    if kernel is Kernel.LIN:
        return np.maximum(0.0, 1.0 - age / (2.0 * c))
    return np.exp(-age / c)


def kernel_area(kernel: Kernel, c: float, samples: int = 200001) -> float:
    """Trapezoidal integral of a kernel over its support (EXP truncated at 60c)."""
    kernel = Kernel(kernel)
    upper = {Kernel.BIN: c, Kernel.LIN: 2.0 * c, Kernel.EXP: 60.0 * c}[kernel]
    ages = np.linspace(0.0, upper, samples)
    return float(trapezoid(kernel_value(kernel, ages, c), ages))


class MemorySurface:
    """
    Lazy memory surface with an optional channel axis.

    A bank of K feature surfaces is one MemorySurface with channels=K; all
    channels then share one event counter (the feature-event index clock).
    absorb is O(1); nothing decays until a value is read.
    """

    def __init__(self, config: SurfaceConfig, channels: int = 1):
        width, height = config.dims
        self.config = config
        self.channels = channels
        self.last_t = np.zeros((channels, height, width), dtype=np.int64)
        self.last_i = np.zeros((channels, height, width), dtype=np.int64)
        self.last_p = np.zeros((channels, height, width), dtype=np.int8)
        self.event_count = 0
        self.last_time: Optional[int] = None
        self._populated: List[int] = []
        self._populated_array = np.zeros(0, dtype=np.int64)

    # -- writing ----------------------------------------------------------
    def absorb(self, event: Event, channel: int = 0) -> "MemorySurface":
        """Overwrite the event's pixel with (t, i, p); the event index must equal event_count."""
        if event.i != self.event_count:
            raise TimestampOrderError(f"Event index {event.i} does not continue the stream at {self.event_count}")
        return self.absorb_at(event.x, event.y, event.t, event.p, channel)

    def absorb_at(self, x: int, y: int, t: int, p: int = 1, channel: int = 0) -> "MemorySurface":
        """Absorb the next event of the stream; its index is assigned as event_count."""
        width, height = self.config.dims
        if not (0 <= x < width and 0 <= y < height and 0 <= channel < self.channels):
            raise OutOfRangeError(f"Event at ({x}, {y}) channel {channel} outside surface {width}x{height}")
        if self.last_time is not None and t < self.last_time:
            raise TimestampOrderError(f"Event time {t} precedes previously absorbed time {self.last_time}")

        if self.last_p[channel, y, x] == 0:
            self._populated.append((channel * height + y) * width + x)
        self.last_t[channel, y, x] = t
        self.last_i[channel, y, x] = self.event_count
        self.last_p[channel, y, x] = p
        self.event_count += 1
        self.last_time = t
        return self

    # -- reading ----------------------------------------------------------
    @property
    def current_instant(self) -> int:
        """Instant of the latest absorbed event in this surface's basis (0 when empty)."""
        if self.config.decay_basis is DecayBasis.TIME:
            return self.last_time or 0
        return max(self.event_count - 1, 0)

    def _stamps(self) -> np.ndarray:
        return self.last_t if self.config.decay_basis is DecayBasis.TIME else self.last_i

    def _values(self, stamps: np.ndarray, polarity: np.ndarray, now) -> np.ndarray:
        populated = polarity != 0
        ages = now - stamps
        if np.any(ages[populated] < 0):
            raise NegativeAgeError(f"Query instant {now} precedes a stored event")
        values = polarity * kernel_value(self.config.kernel, ages, self.config.constant)
        return np.where(populated, values, 0.0)

    def sample_value(self, pixel: Tuple[int, int], now, channel: int = 0) -> float:
        x, y = pixel
        polarity = int(self.last_p[channel, y, x])
        if polarity == 0:
            return 0.0
        age = now - int(self._stamps()[channel, y, x])
        if age < 0:
            raise NegativeAgeError(f"Query instant {now} precedes the event stored at ({x}, {y})")
        return float(polarity * kernel_value(self.config.kernel, age, self.config.constant))

    def materialize(self, now, channel: Optional[int] = 0) -> np.ndarray:
        """Dense snapshot: (H, W) for one channel, (C, H, W) when channel is None."""
        if channel is None:
            return self._values(self._stamps(), self.last_p, now)
        return self._values(self._stamps()[channel], self.last_p[channel], now)

    def materialize_box(self, now, bbox: Tuple[int, int, int, int]) -> np.ndarray:
        """(C, h, w) values inside the inclusive box (x_lo, x_hi, y_lo, y_hi)."""
        x_lo, x_hi, y_lo, y_hi = bbox
        window = (slice(None), slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
        return self._values(self._stamps()[window], self.last_p[window], now)

    def extract_patch(self, center: Tuple[int, int], size: int, now, channel: int = 0) -> np.ndarray:
        """size x size window of sampled values around center; cells outside the frame are 0."""
        if size % 2 == 0:
            raise DataError(f"Patch size must be odd, got {size}")
        width, height = self.config.dims
        cx, cy = center
        r = size // 2
        x0, x1 = max(cx - r, 0), min(cx + r + 1, width)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, height)

        patch = np.zeros((size, size))
        if x0 < x1 and y0 < y1:
            stamps = self._stamps()[channel, y0:y1, x0:x1]
            polarity = self.last_p[channel, y0:y1, x0:x1]
            patch[y0 - (cy - r):y1 - (cy - r), x0 - (cx - r):x1 - (cx - r)] = self._values(stamps, polarity, now)
        return patch

    def populated_indices(self) -> np.ndarray:
        if len(self._populated) != self._populated_array.size:
            self._populated_array = np.asarray(self._populated, dtype=np.int64)
        return self._populated_array

    def total_activation(self, now, channel: Optional[int] = None) -> float:
        """Sum of sampled values over populated pixels (all channels when channel is None)."""
        flat = self.populated_indices()
        if flat.size == 0:
            return 0.0
        if channel is not None:
            plane = self.last_p[0].size
            flat = flat[(flat // plane) == channel]
        stamps = self._stamps().ravel()[flat]
        polarity = self.last_p.ravel()[flat]
        return float(self._values(stamps, polarity, now).sum())


# =============================================================================
# STREAM HELPERS
# =============================================================================
def absorb_recording(surface: MemorySurface, recording: Recording) -> MemorySurface:
    for x, y, t, p in zip(recording.x.tolist(), recording.y.tolist(), recording.t.tolist(), recording.p.tolist()):
        surface.absorb_at(x, y, t, p)
    return surface


def activation_series(recording: Recording, config: SurfaceConfig, sample_stride) -> List[Tuple[int, float]]:
    """
    Total activation sampled every sample_stride over the recording.

    TIME basis: instants t0, t0 + stride, ... (microseconds), all events up
    to each instant absorbed. INDEX basis: instants 0, stride, 2*stride, ...
    (event indices), sampled right after that event is absorbed.
    """
    if len(recording) == 0:
        return []
    if sample_stride <= 0:
        raise DataError(f"sample_stride must be positive, got {sample_stride}")

    surface = MemorySurface(config)
    xs, ys, ts, ps = recording.x.tolist(), recording.y.tolist(), recording.t.tolist(), recording.p.tolist()
    series = []

    if config.decay_basis is DecayBasis.TIME:
        k = 0
        for instant in range(ts[0], ts[-1] + 1, int(sample_stride)):
            while k < len(ts) and ts[k] <= instant:
                surface.absorb_at(xs[k], ys[k], ts[k], ps[k])
                k += 1
            series.append((instant, surface.total_activation(instant)))
    else:
        for k in range(len(ts)):
            surface.absorb_at(xs[k], ys[k], ts[k], ps[k])
            if k % int(sample_stride) == 0:
                series.append((k, surface.total_activation(k)))
    return series


def mean_activation_curve(series_list: Sequence[Sequence[Tuple[int, float]]], grid: Optional[np.ndarray] = None
                          ) -> Tuple[np.ndarray, np.ndarray]:
    """Average several activation series on a common grid (instants relative to each series start)."""
    curves = [np.asarray(s, dtype=float) for s in series_list if len(s)]
    if not curves:
        return np.zeros(0), np.zeros(0)
    if grid is None:
        longest = max(c[-1, 0] - c[0, 0] for c in curves)
        step = min(c[1, 0] - c[0, 0] for c in curves if len(c) > 1) if any(len(c) > 1 for c in curves) else 1.0
        grid = np.arange(0.0, longest + step, step)
    stacked = np.full((len(curves), grid.size), np.nan)
    for row, curve in enumerate(curves):
        rel = curve[:, 0] - curve[0, 0]
        inside = grid <= rel[-1]
        stacked[row, inside] = np.interp(grid[inside], rel, curve[:, 1])
    return grid, np.nanmean(stacked, axis=0)


def surface_difference(a: MemorySurface, b: MemorySurface, now_a, now_b, channel: int = 0) -> np.ndarray:
    """Difference map between two surfaces each read at its own instant (e.g. ETS - EIS)."""
    return a.materialize(now_a, channel) - b.materialize(now_b, channel)


def calibrate_index_constant(recordings: Sequence[Recording], tau_e: float) -> float:
    """n_e = round(mean dataset event rate * tau_e), the index window matching tau_e on average."""
    rates = [r.mean_rate for r in recordings if r.mean_rate > 0]
    if not rates:
        raise DataError("Cannot calibrate n_e: no recording has a positive event rate")
    n_e = float(max(1, round(float(np.mean(rates)) * tau_e)))
    logger.info(f"Calibrated n_e = {n_e:.0f} events (mean rate {np.mean(rates) * 1e6:.0f} events/s, tau_e {tau_e:.0f} us)")
    return n_e


def save_surface_csv(path, matrix: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.6g")


def save_series_csv(path, rows, header: str = "instant,activation") -> None:
    """Two-column CSV of (instant, value) pairs, e.g. an activation series or a mean curve."""
    table = np.asarray(list(rows), dtype=float).reshape(-1, 2)
    np.savetxt(path, table, delimiter=",", fmt="%.6g", header=header, comments="")
