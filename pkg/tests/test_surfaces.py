import math

import numpy as np
import pytest

from src.aer_io import Event
from src.errors import ConfigError, NegativeAgeError, OutOfRangeError, TimestampOrderError
from src.surfaces import (
    DecayBasis,
    Kernel,
    MemorySurface,
    SurfaceConfig,
    activation_series,
    calibrate_index_constant,
    kernel_area,
    kernel_value,
    mean_activation_curve,
    surface_difference,
)
from src.synth import generate_drop, time_warp

DIMS = (30, 30)


def surface(code, tau_e=1000.0, n_e=10.0, dims=DIMS, channels=1):
    return MemorySurface(SurfaceConfig.from_code(code, tau_e=tau_e, n_e=n_e, dims=dims), channels)


def test_surface_codes():
    assert SurfaceConfig.from_code("eis").code == "EIS"
    config = SurfaceConfig.from_code("LTS")
    assert config.kernel is Kernel.LIN and config.decay_basis is DecayBasis.TIME
    with pytest.raises(ConfigError):
        SurfaceConfig.from_code("XYZ")
    with pytest.raises(ConfigError):
        SurfaceConfig(tau_e=0.0)


def test_empty_surface_reads_zero():
    s = surface("ETS")
    assert s.sample_value((3, 4), 100) == 0.0
    assert s.total_activation(100) == 0.0
    assert not s.materialize(100).any()


def test_exponential_time_value_at_one_tau():
    s = surface("ETS", tau_e=1000.0)
    s.absorb(Event(5, 5, 1000, 1, 0))
    assert s.sample_value((5, 5), 2000) == pytest.approx(math.exp(-1))


def test_linear_time_values():
    s = surface("LTS", tau_e=1000.0)
    s.absorb(Event(5, 5, 0, 1, 0))
    assert s.sample_value((5, 5), 1000) == pytest.approx(0.5)
    assert s.sample_value((5, 5), 2000) == 0.0


def test_binning_index_support_is_inclusive():
    s = surface("BIS", n_e=10.0)
    s.absorb_at(5, 5, 0)
    for k in range(1, 12):
        s.absorb_at(0, 0, k)
    assert s.sample_value((5, 5), 10) == 1.0
    assert s.sample_value((5, 5), 11) == 0.0


def test_off_events_read_negative():
    s = surface("BTS")
    s.absorb_at(1, 1, 10, p=-1)
    assert s.sample_value((1, 1), 10) == -1.0


def test_kernels_integrate_to_their_constant():
    for kernel in Kernel:
        assert kernel_area(kernel, 250.0) == pytest.approx(250.0, rel=0.005)


def test_values_never_increase_with_age():
    ages = np.linspace(0, 5000, 400)
    for kernel in Kernel:
        values = kernel_value(kernel, ages, 700.0)
        assert np.all(np.diff(values) <= 0)
        assert np.all((values >= 0) & (values <= 1))


def test_absorb_rejects_bad_events():
    s = surface("ETS")
    s.absorb_at(1, 1, 100)
    with pytest.raises(TimestampOrderError):
        s.absorb_at(1, 1, 50)
    with pytest.raises(OutOfRangeError):
        s.absorb_at(30, 1, 200)
    with pytest.raises(TimestampOrderError):
        s.absorb(Event(2, 2, 300, 1, 7))
    with pytest.raises(NegativeAgeError):
        s.sample_value((1, 1), 99)


@pytest.mark.parametrize("n_events", [2000, pytest.param(100_000, marks=pytest.mark.slow)])
def test_lazy_values_match_full_replay(rng, n_events):
    """Reading after interleaved absorbs equals replaying the whole history."""
    for code in ("BTS", "LTS", "ETS", "BIS", "LIS", "EIS"):
        s = surface(code, tau_e=400.0, n_e=40.0)
        index_basis = s.config.decay_basis is DecayBasis.INDEX
        t = np.cumsum(rng.integers(0, 20, n_events))
        xs, ys = rng.integers(0, 30, n_events), rng.integers(0, 30, n_events)
        pixels = ys * 30 + xs
        for k in range(n_events):
            s.absorb_at(int(xs[k]), int(ys[k]), int(t[k]))
            if k % 10:
                continue
            px, py = int(rng.integers(0, 30)), int(rng.integers(0, 30))
            now = k + int(rng.integers(0, 30)) if index_basis else int(t[k]) + int(rng.integers(0, 300))
            seen = np.flatnonzero(pixels[:k + 1] == py * 30 + px)
            expected = 0.0
            if seen.size:
                last = int(seen[-1])
                age = now - (last if index_basis else int(t[last]))
                expected = float(kernel_value(s.config.kernel, age, s.config.constant))
            assert s.sample_value((px, py), now) == pytest.approx(expected, abs=1e-12)


def test_overwrite_orders_kernel_activations(rng):
    """EXP <= LIN <= BIN in total activation for a steady random stream with a shared constant."""
    pixels = rng.integers(0, 30, size=(6000, 2))
    for basis, constant in (("IS", 900.0), ("TS", 9000.0)):
        surfaces = {k: surface(k + basis, tau_e=constant, n_e=constant) for k in "BLE"}
        for k, (x, y) in enumerate(pixels.tolist()):
            for s in surfaces.values():
                s.absorb_at(x, y, 10 * k)
            if k >= 3000 and k % 500 == 0:
                now = 10 * k if basis == "TS" else k
                b, l, e = (surfaces[c].total_activation(now) for c in "BLE")
                assert e <= l <= b


def test_materialize_box_matches_full_snapshot(rng):
    s = surface("LIS", n_e=50.0, channels=3)
    for k in range(300):
        s.absorb_at(int(rng.integers(0, 30)), int(rng.integers(0, 30)), k, channel=int(rng.integers(0, 3)))
    full = s.materialize(s.current_instant, channel=None)
    box = s.materialize_box(s.current_instant, (4, 12, 7, 20))
    assert box.shape == (3, 14, 9)
    np.testing.assert_allclose(box, full[:, 7:21, 4:13])


def test_channels_share_one_event_counter():
    s = surface("BIS", n_e=1.0, channels=2)
    s.absorb_at(0, 0, 0, channel=0)
    s.absorb_at(0, 0, 1, channel=1)
    s.absorb_at(1, 1, 2, channel=1)
    assert s.event_count == 3
    assert s.sample_value((0, 0), 2, channel=0) == 0.0
    assert s.sample_value((0, 0), 2, channel=1) == 1.0
    assert s.total_activation(2, channel=1) == 2.0


def test_extract_patch_zero_pads_outside_frame():
    s = surface("BTS", tau_e=100.0)
    s.absorb_at(0, 0, 10)
    patch = s.extract_patch((0, 0), 3, 10)
    assert patch.shape == (3, 3)
    assert patch[1, 1] == 1.0
    assert patch.sum() == 1.0


def test_surface_difference_reads_each_surface_at_its_own_instant():
    ets, eis = surface("ETS", tau_e=1000.0), surface("EIS", n_e=10.0)
    for x, y, t in [(1, 1, 0), (2, 2, 1000), (3, 3, 2000)]:
        ets.absorb_at(x, y, t)
        eis.absorb_at(x, y, t)
    diff = surface_difference(ets, eis, ets.current_instant, eis.current_instant)
    np.testing.assert_allclose(diff, ets.materialize(2000) - eis.materialize(2))
    assert diff[1, 1] == pytest.approx(math.exp(-2) - math.exp(-0.2))
    assert diff[0, 0] == 0.0


def test_mean_activation_curve_averages_on_relative_instants():
    first = [(100, 1.0), (110, 3.0), (120, 5.0)]
    second = [(500, 3.0), (510, 5.0)]
    grid, curve = mean_activation_curve([first, second, []])
    np.testing.assert_allclose(grid, [0.0, 10.0, 20.0])
    np.testing.assert_allclose(curve, [2.0, 4.0, 5.0])
    grid, curve = mean_activation_curve([])
    assert grid.size == curve.size == 0


WARPS = (
    lambda t: t / 2,
    lambda t: 3 * t,
    lambda t: t ** 1.2,
    lambda t: 0.5 * t + t ** 1.1,
    lambda t: 2000 + t + 40 * np.sqrt(t),
)


@pytest.mark.parametrize("n_recordings", [3, pytest.param(20, marks=pytest.mark.slow)])
def test_index_surfaces_ignore_time_warps(drop_spec, n_recordings):
    """Monotone time warps leave every index-basis activation unchanged."""
    for seed in range(n_recordings):
        recording = generate_drop(drop_spec(seed % 4, velocity=600.0 + 25.0 * seed, dims=(64, 48),
                                            jitter_us=150, seed=seed))
        for code in ("BIS", "LIS", "EIS"):
            config = SurfaceConfig.from_code(code, n_e=60.0, dims=(64, 48))
            reference = activation_series(recording, config, 7)
            for warp in WARPS:
                assert activation_series(time_warp(recording, warp), config, 7) == reference


def test_time_surfaces_change_under_time_compression(drop_spec):
    recording = generate_drop(drop_spec(1, velocity=600.0, dims=(64, 48), jitter_us=150, seed=5))
    warped = time_warp(recording, lambda t: t / 2)
    config = SurfaceConfig.from_code("ETS", tau_e=3000.0, dims=(64, 48))
    a, b = MemorySurface(config), MemorySurface(config)
    changed = total = 0
    start = len(recording) // 10
    for k in range(len(recording)):
        a.absorb_at(int(recording.x[k]), int(recording.y[k]), int(recording.t[k]))
        b.absorb_at(int(warped.x[k]), int(warped.y[k]), int(warped.t[k]))
        if k >= start and k % 20 == 0:
            va, vb = a.total_activation(a.current_instant), b.total_activation(b.current_instant)
            total += 1
            changed += abs(vb - va) > 0.1 * va
    assert changed >= 0.8 * total


def test_calibrate_index_constant(make_recording):
    recordings = [
        make_recording([(0, 0, 0), (1, 1, 100), (2, 2, 200)]),
        make_recording([(0, 0, 0), (1, 1, 50), (2, 2, 100)]),
    ]
    # mean rate 0.0225 events/us
    assert calibrate_index_constant(recordings, 2000.0) == 45.0
