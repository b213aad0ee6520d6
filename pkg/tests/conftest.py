import numpy as np
import pytest

from src.aer_io import Recording
from src.synth import DropSpec, generate_drop, shape_mask

SMALL_DIMS = (64, 48)
DESK_DIMS = (96, 72)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_recording():
    """Recording from (x, y, t) or (x, y, t, p) tuples."""

    def _make(events, dims=SMALL_DIMS, label=None, recording_id=""):
        rows = [tuple(e) + (1,) * (4 - len(e)) for e in events]
        if not rows:
            return Recording.empty(dims, label, recording_id)
        x, y, t, p = zip(*rows)
        return Recording(x=x, y=y, t=t, p=p, sensor_dims=dims, label=label, recording_id=recording_id)

    return _make


@pytest.fixture
def drop_spec():
    """DropSpec starting just above the frame, horizontally centred."""

    def _spec(shape_class=0, velocity=800.0, acceleration=0.0, dims=DESK_DIMS, jitter_us=0,
              noise_rate=0.0, seed=0, rotation=0.0, scale=1.0):
        height = shape_mask(shape_class, scale, rotation, dims).shape[0]
        return DropSpec(
            shape_class=shape_class,
            initial_position=(dims[0] / 2, -(height - 1) / 2 - 1),
            initial_velocity=velocity,
            acceleration=acceleration,
            scale=scale,
            rotation=rotation,
            noise_rate=noise_rate,
            seed=seed,
            sensor_dims=dims,
            jitter_us=jitter_us,
        )

    return _spec


@pytest.fixture
def small_dataset(drop_spec):
    """Three drops per class on the small sensor with varied speeds."""
    recordings = []
    for shape_class in range(4):
        for k in range(3):
            spec = drop_spec(shape_class, velocity=450.0 + 120.0 * k, acceleration=900.0 * k,
                             dims=SMALL_DIMS, jitter_us=100, seed=10 * shape_class + k)
            recording = generate_drop(spec)
            recording.recording_id = f"c{shape_class}/{k:04d}"
            recordings.append(recording)
    return recordings, ["dart", "glider", "jet", "trainer"]
