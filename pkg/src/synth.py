"""
Synthetic Drop Recordings
=========================

Deterministic generator for falling-silhouette event recordings, plus the
monotonic time-warp used to probe velocity invariance.

A silhouette is rasterized once, then translated downward along
y(t) = y0 + v*t + a*t^2/2. Every micro-step where the integer placement
changes, each pixel whose occupancy flipped emits one ON event at the
step time plus a seeded emission jitter.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.path import Path as PolygonPath

from .aer_io import DEFAULT_DIMS, Recording
from .config import SYNTH_JITTER_US, SYNTH_MICRO_STEP_US
from .errors import DataError

logger = logging.getLogger(__name__)

# Outlines in centimetres, x to the right, y toward the nose (down the image).
# Wingspans 9.1 / 7.5 / 10.3 / 9.0 cm. Edges are kept slanted so that every
# row of a moving silhouette keeps producing contour events.
SILHOUETTES: Dict[str, Tuple[float, List[Tuple[float, float]]]] = {
    "dart": (9.1, [
        (0.0, 4.0), (4.55, -0.6), (1.5, -2.4), (0.0, -1.8), (-1.5, -2.4), (-4.55, -0.6),
    ]),
    "glider": (7.5, [
        (0.0, 4.6), (0.9, 2.2), (3.75, 0.6), (3.3, -0.4), (0.8, -1.0), (1.7, -3.3),
        (0.0, -2.9), (-1.7, -3.3), (-0.8, -1.0), (-3.3, -0.4), (-3.75, 0.6), (-0.9, 2.2),
    ]),
    "jet": (10.3, [
        (0.0, 4.2), (1.0, 1.2), (5.15, -1.8), (4.6, -2.5), (1.0, -1.6), (1.4, -3.0),
        (-1.4, -3.0), (-1.0, -1.6), (-4.6, -2.5), (-5.15, -1.8), (-1.0, 1.2),
    ]),
    "trainer": (9.0, [
        (0.0, 3.4), (0.8, 2.4), (4.5, 1.5), (4.2, 0.5), (1.0, 0.1), (0.3, -2.0),
        (2.0, -2.8), (1.8, -3.3), (-1.8, -3.3), (-2.0, -2.8), (-0.3, -2.0), (-1.0, 0.1),
        (-4.2, 0.5), (-4.5, 1.5), (-0.8, 2.4),
    ]),
}
CLASS_NAMES = list(SILHOUETTES)

# Widest silhouette spans this fraction of the sensor width at scale 1.
SPAN_FRACTION = 0.35
LARGEST_SPAN_CM = max(span for span, _ in SILHOUETTES.values())

MEAN_CROSSING_S = 0.242
STD_CROSSING_S = 0.020


@dataclass
class DropSpec:
    shape_class: int
    initial_position: Tuple[float, float]  # silhouette box centre (x, y), pixels
    initial_velocity: float  # px/s, downward
    acceleration: float = 0.0  # px/s^2
    scale: float = 1.0
    rotation: float = 0.0  # degrees
    noise_rate: float = 0.0  # spurious events/s over the frame
    seed: int = 0
    sensor_dims: Tuple[int, int] = DEFAULT_DIMS
    jitter_us: int = SYNTH_JITTER_US
    micro_step_us: int = SYNTH_MICRO_STEP_US
    max_duration_us: int = 1_000_000

    def validate(self) -> None:
        if self.shape_class not in range(len(CLASS_NAMES)):
            raise DataError(f"Unknown silhouette class {self.shape_class}")
        if self.noise_rate < 0 or self.acceleration < 0:
            raise DataError("noise_rate and acceleration must be non-negative")
        if self.scale <= 0:
            raise DataError(f"scale must be positive, got {self.scale}")
        if self.micro_step_us < 1 or self.jitter_us < 0:
            raise DataError("micro_step_us must be >= 1 and jitter_us >= 0")


def pixels_per_cm(sensor_dims: Tuple[int, int]) -> float:
    return SPAN_FRACTION * sensor_dims[0] / LARGEST_SPAN_CM


def shape_mask(shape_class: int, scale: float, rotation: float, sensor_dims: Tuple[int, int]) -> np.ndarray:
    """Rasterize a silhouette (pixel centres inside the outline) into a tight boolean mask."""
    _, outline = SILHOUETTES[CLASS_NAMES[shape_class]]
    vertices = np.asarray(outline, dtype=float) * pixels_per_cm(sensor_dims) * scale

    angle = np.deg2rad(rotation)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    vertices = vertices @ rot.T

    lo = np.floor(vertices.min(axis=0)) - 1
    hi = np.ceil(vertices.max(axis=0)) + 1
    xs = np.arange(lo[0], hi[0]) + 0.5
    ys = np.arange(lo[1], hi[1]) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    inside = PolygonPath(vertices).contains_points(np.column_stack([gx.ravel(), gy.ravel()]))
    mask = inside.reshape(gy.shape)

    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DataError("Silhouette rasterized to an empty mask; increase scale")
    return mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def _placements(spec: DropSpec, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    """Micro-step times (us) and integer top-row placements, plus the column offset."""
    height, width = mask.shape
    sensor_w, sensor_h = spec.sensor_dims
    x_off = int(round(spec.initial_position[0] - (width - 1) / 2))
    if x_off < 0 or x_off + width > sensor_w:
        raise DataError(
            f"Silhouette ({width} px wide at x offset {x_off}) does not fit the sensor width {sensor_w}"
        )

    n_steps = spec.max_duration_us // spec.micro_step_us
    times = np.arange(n_steps + 1, dtype=np.int64) * spec.micro_step_us
    seconds = times / 1e6
    top = spec.initial_position[1] - (height - 1) / 2
    y_top = top + spec.initial_velocity * seconds + 0.5 * spec.acceleration * seconds ** 2
    rows = np.floor(y_top).astype(np.int64)

    if spec.initial_velocity > 0 or spec.acceleration > 0:
        gone = np.flatnonzero(rows >= sensor_h)
        if gone.size:
            times, rows = times[:gone[0] + 1], rows[:gone[0] + 1]
    return times, rows, x_off


def _occupancy_change(mask: np.ndarray, row_a: int, row_b: int, sensor_h: int) -> Tuple[np.ndarray, np.ndarray]:
    """Frame (row, col) of pixels whose occupancy differs between two placements."""
    height = mask.shape[0]
    base = min(row_a, row_b)
    band = np.zeros((height + abs(row_a - row_b), mask.shape[1]), dtype=bool)
    other = band.copy()
    band[row_a - base:row_a - base + height] = mask
    other[row_b - base:row_b - base + height] = mask
    r, c = np.nonzero(band ^ other)
    r = r + base
    keep = (r >= 0) & (r < sensor_h)
    return r[keep], c[keep]


def trajectory_log(spec: DropSpec, mask: Optional[np.ndarray] = None) -> Dict[str, list]:
    """Per-millisecond ground truth: silhouette box centre, area centroid and in-view flag."""
    mask = shape_mask(spec.shape_class, spec.scale, spec.rotation, spec.sensor_dims) if mask is None else mask
    times, rows, x_off = _placements(spec, mask)
    height, width = mask.shape
    sensor_h = spec.sensor_dims[1]
    cy, cx = np.argwhere(mask).mean(axis=0)

    per_ms = times % 1000 == 0
    t_ms = (times[per_ms] // 1000).tolist()
    top = rows[per_ms]
    return {
        "t_ms": t_ms,
        "center_x": [x_off + (width - 1) / 2] * len(t_ms),
        "center_y": (top + (height - 1) / 2).tolist(),
        "centroid_x": [x_off + float(cx)] * len(t_ms),
        "centroid_y": (top + float(cy)).tolist(),
        "in_view": ((top >= 0) & (top + height <= sensor_h)).tolist(),
    }


def crossing_duration_us(spec: DropSpec) -> Optional[int]:
    """Time from the silhouette first touching the frame until it has fully left it."""
    mask = shape_mask(spec.shape_class, spec.scale, spec.rotation, spec.sensor_dims)
    times, rows, _ = _placements(spec, mask)
    sensor_h = spec.sensor_dims[1]
    entered = np.flatnonzero((rows + mask.shape[0] > 0) & (rows < sensor_h))
    left = np.flatnonzero(rows >= sensor_h)
    if entered.size == 0 or left.size == 0:
        return None
    return int(times[left[0]] - times[entered[0]])


def generate_drop(spec: DropSpec) -> Recording:
    """
    Generate one drop recording.

    Args:
        spec: drop parameters; identical spec (including seed) gives an identical recording

    Returns:
        Recording sorted by time, labelled with the silhouette class
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sensor_w, sensor_h = spec.sensor_dims

    mask = shape_mask(spec.shape_class, spec.scale, spec.rotation, spec.sensor_dims)
    times, rows, x_off = _placements(spec, mask)

    xs, ys, ts = [], [], []
    changes = np.flatnonzero(np.diff(rows)) + 1
    for k in changes:
        r, c = _occupancy_change(mask, int(rows[k - 1]), int(rows[k]), sensor_h)
        if r.size == 0:
            continue
        ys.append(r)
        xs.append(c + x_off)
        ts.append(np.full(r.size, times[k], dtype=np.int64))

    if not xs:
        logger.warning(f"Silhouette never produced contour events for seed {spec.seed}; recording holds noise only")

    duration_us = int(times[-1]) if times.size else 0
    n_noise = int(rng.poisson(spec.noise_rate * duration_us / 1e6)) if spec.noise_rate > 0 else 0

    x = np.concatenate(xs) if xs else np.zeros(0, np.int64)
    y = np.concatenate(ys) if ys else np.zeros(0, np.int64)
    t = np.concatenate(ts) if ts else np.zeros(0, np.int64)
    if spec.jitter_us > 0 and t.size:
        t = t + rng.integers(0, spec.jitter_us + 1, size=t.size)

    if n_noise:
        x = np.concatenate([x, rng.integers(0, sensor_w, n_noise)])
        y = np.concatenate([y, rng.integers(0, sensor_h, n_noise)])
        t = np.concatenate([t, rng.integers(0, duration_us + 1, n_noise)])

    order = np.lexsort((x, y, t))
    recording = Recording(
        x=x[order],
        y=y[order],
        t=t[order],
        p=np.ones(order.size, dtype=np.int8),
        sensor_dims=spec.sensor_dims,
        label=spec.shape_class,
    )
    recording.meta["seed"] = spec.seed
    return recording


def random_drop_spec(shape_class: int, rng: np.random.Generator, sensor_dims=DEFAULT_DIMS,
                     noise_rate: float = 0.0, jitter_us: int = SYNTH_JITTER_US,
                     crossing_range: Optional[Tuple[float, float]] = None,
                     micro_step_us: int = SYNTH_MICRO_STEP_US) -> DropSpec:
    """
    Draw drop parameters whose crossing time averages ~242 ms (std ~20 ms).

    crossing_range (seconds) replaces that with a uniform draw, for
    velocity-swept sets.

    Part of the crossing distance is covered by acceleration (20-50%), so
    every drop speeds up while in view.
    """
    scale = float(rng.uniform(0.85, 1.15))
    rotation = float(rng.uniform(-10.0, 10.0))
    mask = shape_mask(shape_class, scale, rotation, sensor_dims)
    height, width = mask.shape

    if crossing_range is None:
        crossing = float(np.clip(rng.normal(MEAN_CROSSING_S, STD_CROSSING_S), 0.17, 0.32))
    else:
        crossing = float(rng.uniform(*crossing_range))
    accel_share = float(rng.uniform(0.2, 0.5))
    distance = sensor_dims[1] + height
    acceleration = accel_share * 2 * distance / crossing ** 2
    velocity = distance * (1 - accel_share) / crossing

    margin = (width - 1) / 2
    x_center = float(rng.uniform(margin + 1, sensor_dims[0] - margin - 2))
    return DropSpec(
        shape_class=shape_class,
        initial_position=(x_center, -(height - 1) / 2 - 1),
        initial_velocity=velocity,
        acceleration=acceleration,
        scale=scale,
        rotation=rotation,
        noise_rate=noise_rate,
        seed=int(rng.integers(0, 2 ** 31 - 1)),
        sensor_dims=tuple(sensor_dims),
        jitter_us=jitter_us,
        micro_step_us=micro_step_us,
    )


def generate_dataset(per_class: int, n_classes: int = 4, seed: int = 0, sensor_dims=DEFAULT_DIMS,
                     noise_rate: float = 0.0, jitter_us: int = SYNTH_JITTER_US,
                     crossing_range: Optional[Tuple[float, float]] = None,
                     micro_step_us: int = SYNTH_MICRO_STEP_US) -> Tuple[List[Recording], List[DropSpec]]:
    """Specs are drawn class by class from one seeded generator, so the set is reproducible."""
    rng = np.random.default_rng(seed)
    recordings, specs = [], []
    for shape_class in range(n_classes):
        for k in range(per_class):
            spec = random_drop_spec(shape_class, rng, sensor_dims, noise_rate, jitter_us, crossing_range, micro_step_us)
            recording = generate_drop(spec)
            recording.recording_id = f"{CLASS_NAMES[shape_class]}/{k:04d}"
            recordings.append(recording)
            specs.append(spec)
    logger.info(f"Generated {len(recordings)} synthetic recordings ({n_classes} classes, seed {seed})")
    return recordings, specs


def write_manifest(root, recordings: Sequence[Recording], specs: Sequence[DropSpec], seed: int) -> Path:
    """Dataset manifest: every DropSpec, generator settings and per-ms ground-truth trajectory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for recording, spec in zip(recordings, specs):
        entries.append({
            "recording_id": recording.recording_id,
            "spec": asdict(spec),
            "events": len(recording),
            "crossing_us": crossing_duration_us(spec),
            "trajectory": trajectory_log(spec),
        })
    manifest = {
        "generator": "contour-change",
        "seed": seed,
        "class_names": CLASS_NAMES[: max((s.shape_class for s in specs), default=-1) + 1],
        # free parameter: per-pixel emission jitter, uniform 0..jitter_us
        "jitter_us": specs[0].jitter_us if specs else SYNTH_JITTER_US,
        "recordings": entries,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_manifest(root) -> Dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"No manifest.json in {root}")
    return json.loads(path.read_text())


def time_warp(recording: Recording, warp: Callable[[np.ndarray], np.ndarray]) -> Recording:
    """
    Re-time a recording through a strictly increasing map (us -> us).

    Addresses, polarity, order and indices are untouched; warped times are
    rounded to whole microseconds.
    """
    if len(recording) == 0:
        return recording.with_columns()

    origin = float(np.asarray(warp(np.zeros(1)), dtype=float)[0])
    if origin < 0:
        raise DataError(f"Warp maps 0 to negative time {origin}")
    distinct = np.unique(recording.t).astype(float)
    warped = np.asarray(warp(distinct), dtype=float)
    if warped[0] < 0:
        raise DataError(f"Warp maps {distinct[0]} to negative time {warped[0]}")
    if np.any(np.diff(warped) <= 0):
        raise DataError("Warp is not strictly increasing on the recording's timestamps")

    new_t = np.round(np.asarray(warp(recording.t.astype(float)), dtype=float)).astype(np.int64)
    return recording.with_columns(t=new_t)
