import csv

import numpy as np
import pytest

from src.errors import ConfigError, DimensionMismatchError
from src.pooling import (
    FeatureFrame,
    PoolConfig,
    frame_matrix,
    normalize_frame,
    pool_frame,
    pool_profiles,
    resample_linear,
    write_frames_csv,
)
from src.surfaces import MemorySurface, SurfaceConfig

DIMS = (40, 30)


def test_resample_examples():
    np.testing.assert_allclose(resample_linear([0.0, 1.0], 4), [0, 1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(resample_linear([5.0], 3), [5, 5, 5])
    np.testing.assert_allclose(resample_linear([1.0, 2.0, 3.0], 3), [1, 2, 3])
    with pytest.raises(DimensionMismatchError):
        resample_linear([], 4)


def test_pool_config_validation():
    with pytest.raises(ConfigError):
        PoolConfig(resample_len=1)
    assert PoolConfig(resample_len=72).frame_length(25) == 3600


def test_empty_surface_pools_to_zeros():
    s = MemorySurface(SurfaceConfig.from_code("EIS", dims=DIMS))
    vector = pool_frame(s, (0, 39, 0, 29), 0, PoolConfig(resample_len=72, normalize=True))
    assert vector.shape == (144,)
    assert not vector.any()


def test_missing_box_gives_no_frame():
    s = MemorySurface(SurfaceConfig.from_code("EIS", dims=DIMS))
    assert pool_frame(s, None, 0) is None


def test_row_and_column_sums_carry_the_same_mass(rng):
    s = MemorySurface(SurfaceConfig.from_code("LIS", n_e=80.0, dims=DIMS))
    for k in range(200):
        s.absorb_at(int(rng.integers(0, 40)), int(rng.integers(0, 30)), k)
    (rows, cols), = pool_profiles(s, (5, 30, 3, 25), s.current_instant)
    assert rows.size == 23 and cols.size == 26
    assert rows.sum() == pytest.approx(cols.sum())
    assert rows.sum() == pytest.approx(s.materialize_box(s.current_instant, (5, 30, 3, 25)).sum())


def test_frame_layout_is_rows_then_columns_per_channel():
    bank = MemorySurface(SurfaceConfig.from_code("BIS", n_e=100.0, dims=DIMS), channels=2)
    bank.absorb_at(10, 5, 0, channel=0)
    bank.absorb_at(12, 8, 1, channel=1)
    config = PoolConfig(resample_len=2, normalize=False)
    vector = pool_frame(bank, (10, 12, 5, 8), bank.current_instant, config)
    # channel 0: rows (1 at top, 0 at bottom), cols (1 left, 0 right); channel 1 mirrored
    np.testing.assert_allclose(vector, [1, 0, 1, 0, 0, 1, 0, 1])


def test_feature_bank_frame_length():
    bank = MemorySurface(SurfaceConfig.from_code("EIS", dims=DIMS), channels=25)
    bank.absorb_at(3, 3, 0, channel=7)
    vector = pool_frame(bank, (0, 10, 0, 10), bank.current_instant, PoolConfig(resample_len=72))
    assert vector.shape == (3600,)
    assert vector.max() == pytest.approx(1.0)


def test_pooling_several_surfaces_concatenates_them():
    a = MemorySurface(SurfaceConfig.from_code("EIS", dims=DIMS))
    b = MemorySurface(SurfaceConfig.from_code("BIS", dims=DIMS))
    for s in (a, b):
        s.absorb_at(4, 4, 0)
    vector = pool_frame([a, b], (0, 9, 0, 9), 0, PoolConfig(resample_len=10, normalize=False))
    assert vector.shape == (40,)
    other = MemorySurface(SurfaceConfig.from_code("EIS", dims=(10, 10)))
    with pytest.raises(DimensionMismatchError):
        pool_frame([a, other], (0, 5, 0, 5), 0)


def test_normalize_frame():
    np.testing.assert_allclose(normalize_frame(np.array([1.0, 4.0, 2.0])), [0.25, 1.0, 0.5])
    assert not normalize_frame(np.zeros(3)).any()


def test_frame_matrix_and_csv(tmp_path):
    frames = [
        FeatureFrame(np.array([0.0, 1.0]), 1, "jet/0001", 0),
        FeatureFrame(np.array([0.5, 0.25]), 0, "dart/0002", 3),
    ]
    X, y = frame_matrix(frames)
    assert X.shape == (2, 2) and y.tolist() == [1, 0]
    path = tmp_path / "frames.csv"
    assert write_frames_csv(path, frames) == 2
    with path.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["recording_id", "frame_index", "label", "v0", "v1"]
    assert rows[2] == ["dart/0002", "3", "0", "0.5", "0.25"]
    with pytest.raises(DimensionMismatchError):
        frame_matrix(frames + [FeatureFrame(np.zeros(3), 0, "x", 0)])
