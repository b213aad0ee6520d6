"""
Projection Tracker
==================

Finds the fast-moving target from smoothed row/column projections of the
active memory surface, one frame every sample_interval, and estimates the
target's vertical velocity around the temporal midpoint of a recording.
"""

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .aer_io import Recording
from .config import (
    ACTIVATION_WINDOW_US,
    SAMPLE_INTERVAL_US,
    TRACKER_SMOOTHING_WINDOW,
    TRACKER_THRESHOLD,
    VELOCITY_HALF_WINDOW_US,
)
from .errors import ConfigError, UndefinedSlopeError, UndefinedVelocityError
from .surfaces import DecayBasis, MemorySurface, SurfaceConfig

logger = logging.getLogger(__name__)

BBox = Tuple[int, int, int, int]  # x_lo, x_hi, y_lo, y_hi (inclusive)


class Axis(str, Enum):
    ROWS = "rows"
    COLUMNS = "columns"


@dataclass(frozen=True)
class TrackerConfig:
    smoothing_window: int = TRACKER_SMOOTHING_WINDOW
    threshold: float = TRACKER_THRESHOLD
    sample_interval: int = SAMPLE_INTERVAL_US
    velocity_half_window: int = VELOCITY_HALF_WINDOW_US
    activation_window: int = ACTIVATION_WINDOW_US

    def __post_init__(self):
        if self.smoothing_window < 1:
            raise ConfigError(f"smoothing_window must be >= 1, got {self.smoothing_window}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.sample_interval < 1:
            raise ConfigError(f"sample_interval must be >= 1 us, got {self.sample_interval}")


@dataclass
class TrackState:
    instant: int
    bbox: Optional[BBox]
    midpoint: Optional[Tuple[float, float]]
    event_index: int = -1
    activation: float = 0.0

    @property
    def valid(self) -> bool:
        return self.bbox is not None


def smooth_profile(values: np.ndarray, window: int) -> np.ndarray:
    """Rectangular moving average over [i - window//2, i - window//2 + window), shrunk at the borders."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return values
    idx = np.arange(n)
    lo = np.clip(idx - window // 2, 0, n)
    hi = np.clip(idx - window // 2 + window, 0, n)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def project_and_smooth(surface: MemorySurface, axis: Axis, now, window: int, channel: int = 0) -> np.ndarray:
    """Per-row or per-column activation, box-smoothed and scaled so the maximum is 1."""
    grid = surface.materialize(now, channel)
    raw = grid.sum(axis=1) if Axis(axis) is Axis.ROWS else grid.sum(axis=0)
    smoothed = smooth_profile(raw, window)
    peak = smoothed.max() if smoothed.size else 0.0
    return smoothed / peak if peak > 0 else np.zeros_like(smoothed)


def detect_bounds(profile: np.ndarray, threshold: float) -> Optional[Tuple[int, int]]:
    """Inclusive extent of the longest run of samples >= threshold (earliest run wins ties)."""
    above = np.asarray(profile) >= threshold
    if not above.any():
        return None
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    k = int(np.argmax(stops - starts))
    return int(starts[k]), int(stops[k] - 1)


def detect_target(surface: MemorySurface, now, config: TrackerConfig, channel: int = 0
                  ) -> Tuple[Optional[BBox], Optional[Tuple[float, float]]]:
    rows = detect_bounds(project_and_smooth(surface, Axis.ROWS, now, config.smoothing_window, channel), config.threshold)
    cols = detect_bounds(project_and_smooth(surface, Axis.COLUMNS, now, config.smoothing_window, channel), config.threshold)
    if rows is None or cols is None:
        return None, None
    bbox = (cols[0], cols[1], rows[0], rows[1])
    return bbox, ((cols[0] + cols[1]) / 2.0, (rows[0] + rows[1]) / 2.0)


def frame_schedule(recording: Recording, sample_interval: int) -> List[Tuple[int, int]]:
    """
    (instant, last_event_index) for frames at t0 + k*interval, k = 1..floor(span/interval).

    last_event_index is the index of the latest event with t <= instant.
    """
    if len(recording) == 0:
        return []
    t0 = int(recording.t[0])
    count = recording.span_us // sample_interval
    instants = t0 + sample_interval * np.arange(1, count + 1, dtype=np.int64)
    last = np.searchsorted(recording.t, instants, side="right") - 1
    return list(zip(instants.tolist(), last.tolist()))


def index_schedule(recording: Recording, indices: Iterable[int]) -> List[Tuple[int, int]]:
    """Frames taken right after the given event indices; the instant is that event's time."""
    return [(int(recording.t[i]), int(i)) for i in sorted(indices)]


def query_instant(surface: MemorySurface, instant: int) -> int:
    """Read-out instant in the surface's own basis."""
    if surface.config.decay_basis is DecayBasis.TIME:
        return instant
    return max(surface.event_count - 1, 0)


def track(recording: Recording, surface_config: SurfaceConfig, tracker_config: TrackerConfig,
          sample_indices: Optional[Sequence[int]] = None) -> List[TrackState]:
    """
    Absorb the stream in order and emit one TrackState per frame.

    Args:
        sample_indices: sample right after these event indices instead of on the time grid

    Returns:
        One TrackState per frame (bbox None where either axis fails)
    """
    if sample_indices is None:
        schedule = frame_schedule(recording, tracker_config.sample_interval)
    else:
        schedule = index_schedule(recording, sample_indices)

    surface = MemorySurface(surface_config)
    xs, ys, ts, ps = recording.x.tolist(), recording.y.tolist(), recording.t.tolist(), recording.p.tolist()
    states, k = [], 0
    for instant, last in schedule:
        while k <= last:
            surface.absorb_at(xs[k], ys[k], ts[k], ps[k])
            k += 1
        now = query_instant(surface, instant)
        bbox, midpoint = detect_target(surface, now, tracker_config)
        states.append(TrackState(instant, bbox, midpoint, last, surface.total_activation(now)))
    return states


def velocity_at(states: Sequence[TrackState], instant: float, half_window: int) -> float:
    """
    Vertical midpoint velocity (px/s) from two valid frames bracketing instant.

    The bracketing frames are the nearest valid frames at least half_window
    before and after instant, falling back to the nearest valid frames on each side.
    """
    valid = [(s.instant, s.midpoint[1]) for s in states if s.midpoint is not None]
    if len(valid) < 2:
        raise UndefinedVelocityError(f"Need at least 2 frames with a detected target, got {len(valid)}")
    times = np.array([v[0] for v in valid], dtype=float)
    heights = np.array([v[1] for v in valid], dtype=float)

    def _last(mask):
        hits = np.flatnonzero(mask)
        return int(hits[-1]) if hits.size else None

    def _first(mask):
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else None

    a = _last(times <= instant - half_window)
    if a is None:
        a = _last(times <= instant)
    b = _first(times >= instant + half_window)
    if b is None:
        b = _first(times > instant)
    a = 0 if a is None else a
    b = len(valid) - 1 if b is None else b
    if a >= b:
        a, b = (b - 1, b) if b > 0 else (0, 1)
    return float((heights[b] - heights[a]) / (times[b] - times[a]) * 1e6)


def midpoint_velocity(states: Sequence[TrackState], recording_span: Optional[Tuple[int, int]] = None,
                      half_window: int = VELOCITY_HALF_WINDOW_US) -> float:
    """Velocity at the temporal midpoint of the recording (or of the frames when no span is given)."""
    if recording_span is None:
        if not states:
            raise UndefinedVelocityError("No frames to estimate a velocity from")
        recording_span = (states[0].instant, states[-1].instant)
    t_mid = (recording_span[0] + recording_span[1]) / 2.0
    return velocity_at(states, t_mid, half_window)


def detection_window(states: Sequence[TrackState]) -> Optional[Tuple[int, int]]:
    """(first, last) instants with a valid detection."""
    valid = [s.instant for s in states if s.valid]
    if not valid:
        return None
    return valid[0], valid[-1]


def detection_window_summary(tracks: Sequence[Sequence[TrackState]]) -> Dict[str, float]:
    """Mean and std (ms) of the first-to-last valid detection interval over a dataset."""
    spans = []
    for states in tracks:
        window = detection_window(states)
        if window is not None:
            spans.append((window[1] - window[0]) / 1000.0)
    if not spans:
        return {"count": 0, "mean_ms": float("nan"), "std_ms": float("nan")}
    return {"count": len(spans), "mean_ms": float(np.mean(spans)), "std_ms": float(np.std(spans))}


def activation_rate(states: Sequence[TrackState], window_us: int) -> Optional[float]:
    """Least-squares slope of total activation (per ms) over the early detection window."""
    window = detection_window(states)
    if window is None:
        return None
    start = window[0]
    picked = [(s.instant, s.activation) for s in states if start <= s.instant <= start + window_us]
    if len(picked) < 2:
        return None
    t = np.array([p[0] for p in picked], dtype=float) / 1000.0
    a = np.array([p[1] for p in picked], dtype=float)
    return float(np.polyfit(t, a, 1)[0])


def fit_slope(velocities: Sequence[float], rates: Sequence[float]) -> float:
    velocities = np.asarray(velocities, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if velocities.size < 2:
        raise UndefinedSlopeError(f"Need at least 2 points for a slope, got {velocities.size}")
    if np.ptp(velocities) == 0:
        raise UndefinedSlopeError("All velocities are equal; slope is undefined")
    return float(np.polyfit(velocities, rates, 1)[0])


def activation_velocity_fit(recordings: Sequence[Recording], surface_config: SurfaceConfig,
                            tracker_config: TrackerConfig = TrackerConfig()) -> Dict[int, Dict]:
    """
    Per class, the best-fit slope m of early activation rate against midpoint velocity.

    Returns:
        {label: {"slope": m, "velocities": [...], "rates": [...]}}
    """
    tracks = []
    for recording in recordings:
        if len(recording) == 0:
            continue
        states = track(recording, surface_config, tracker_config)
        tracks.append((recording.recording_id, recording.label, states, (int(recording.t[0]), int(recording.t[-1]))))
    return fit_tracks(tracks, tracker_config)


def fit_tracks(tracks: Sequence[Tuple[str, int, Sequence[TrackState], Tuple[int, int]]],
               tracker_config: TrackerConfig = TrackerConfig(), strict: bool = True) -> Dict[int, Dict]:
    """
    activation_velocity_fit on already tracked recordings: (recording_id, label, states, span) each.

    With strict=False a class whose slope is undefined gets slope None instead of raising.
    """
    points: Dict[int, Tuple[List[float], List[float]]] = {}
    for recording_id, label, states, span in tracks:
        rate = activation_rate(states, tracker_config.activation_window)
        try:
            velocity = midpoint_velocity(states, span, tracker_config.velocity_half_window)
        except UndefinedVelocityError:
            velocity = None
        if rate is None or velocity is None:
            logger.warning(f"Skipping {recording_id or 'recording'}: no usable detections for the fit")
            continue
        vs, rs = points.setdefault(label, ([], []))
        vs.append(velocity)
        rs.append(rate)

    fits = {}
    for label in sorted(points):
        vs, rs = points[label]
        try:
            slope = fit_slope(vs, rs)
        except UndefinedSlopeError:
            if strict:
                raise
            logger.warning(f"Activation slope undefined for class {label}")
            slope = None
        fits[label] = {"slope": slope, "velocities": vs, "rates": rs}
    return fits


TRAJECTORY_HEADER = ["recording_id", "frame_instant", "event_index", "x_lo", "x_hi", "y_lo", "y_hi", "mid_x", "mid_y"]


def trajectory_rows(recording_id: str, states: Sequence[TrackState]) -> List[list]:
    rows = []
    for s in states:
        box = s.bbox or ("", "", "", "")
        mid = s.midpoint or ("", "")
        rows.append([recording_id, s.instant, s.event_index, *box, *mid])
    return rows


def write_trajectory_csv(path, rows: Iterable[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRAJECTORY_HEADER)
        writer.writerows(rows)


def ground_truth_agreement(states: Sequence[TrackState], trajectory: Dict[str, list],
                           tolerance: float = 4.0) -> Tuple[int, int]:
    """
    (frames within tolerance px of the true box centre, in-view frames).

    trajectory is a per-ms ground-truth log with t_ms, center_x, center_y and in_view.
    In-view frames without a detection count as misses.
    """
    index = {t: k for k, t in enumerate(trajectory["t_ms"])}
    hits = total = 0
    for s in states:
        k = index.get(s.instant // 1000)
        if k is None or not trajectory["in_view"][k]:
            continue
        total += 1
        if s.midpoint is None:
            continue
        dx = s.midpoint[0] - trajectory["center_x"][k]
        dy = s.midpoint[1] - trajectory["center_y"][k]
        if abs(dx) <= tolerance and abs(dy) <= tolerance:
            hits += 1
    return hits, total
