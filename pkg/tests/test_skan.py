import math

import numpy as np
import pytest

from src.errors import ConfigError, DataError, DimensionMismatchError
from src.skan import (
    SkanConfig,
    SkanNetwork,
    SpikePattern,
    encode_patch,
    export_feature_maps,
    feature_events,
    feature_set_distance,
    load_network,
    random_features,
    sample_patches,
    save_network,
    skan_step,
    train_features,
)
from src.surfaces import SurfaceConfig

SMALL = (64, 48)
SMALL_EIS = SurfaceConfig.from_code("EIS", n_e=60.0, dims=SMALL)


def pattern(channels, delays, size=25):
    return SpikePattern(np.asarray(channels, dtype=np.int64), np.asarray(delays, dtype=np.int64), size)


def test_config_validation():
    with pytest.raises(ConfigError):
        SkanConfig(patch_size=4)
    with pytest.raises(ConfigError):
        SkanConfig(w_min=10, w_max=5)
    config = SkanConfig(features=3, patch_size=5, theta_init_fraction=0.3, theta_down_fraction=0.01)
    assert config.channels == 25
    assert config.theta_init == pytest.approx(7.5)
    assert config.theta_down == pytest.approx(0.075)


def test_encode_patch_delays():
    encoded = encode_patch(np.array([[1.0, 0.0], [math.exp(-1), 0.001]]))
    assert encoded.channels.tolist() == [0, 2]
    assert encoded.delays.tolist() == [0, 161]
    assert encoded.size == 4


def test_encode_patch_rejects_out_of_range():
    with pytest.raises(DataError):
        encode_patch(np.array([0.5, 1.2]))
    with pytest.raises(DataError):
        encode_patch(np.array([-0.1]))


def test_soma_is_a_triangle():
    config = SkanConfig(features=1, patch_size=1, w_min=1, w_max=64, t_max=16)
    net = SkanNetwork(config, [[4]], [0.5])
    potential = net.soma(pattern([0], [0], size=1))[0]
    expected = [0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0, 0, 0, 0, 0, 0, 0, 0]
    np.testing.assert_allclose(potential, expected, atol=1e-12)


def test_soma_shifts_with_delay():
    config = SkanConfig(features=1, patch_size=1, w_min=1, w_max=64, t_max=32)
    net = SkanNetwork(config, [[3]], [0.5])
    potential = net.soma(pattern([0], [10], size=1))[0]
    assert potential[:11].max() == 0
    assert potential[13] == pytest.approx(1.0)


def test_network_shape_is_checked():
    with pytest.raises(DimensionMismatchError):
        SkanNetwork(SkanConfig(features=2, patch_size=3), np.ones((2, 8)), np.ones(2))


def test_empty_pattern_produces_no_winner_and_no_update():
    net = SkanNetwork.initial(SkanConfig(features=3, patch_size=3), seed=1)
    before = net.widths.copy(), net.thresholds.copy()
    winner, net = skan_step(net, encode_patch(np.zeros((3, 3))))
    assert winner is None
    np.testing.assert_array_equal(net.widths, before[0])
    np.testing.assert_array_equal(net.thresholds, before[1])


def test_single_neuron_below_peak_always_wins(rng):
    config = SkanConfig(features=1, patch_size=3)
    net = SkanNetwork(config, rng.integers(2, 40, size=(1, 9)), [0.5])
    for _ in range(20):
        winner, _, _ = net.fire(encode_patch(rng.random((3, 3)) * 0.5 + 0.5))
        assert winner == 0


def test_repeating_a_pattern_fires_no_later(rng):
    config = SkanConfig(features=1, patch_size=5, theta_up=0.0)
    for _ in range(10):
        net = SkanNetwork(config, rng.integers(2, 200, size=(1, 25)), [1.0])
        p = encode_patch(rng.random((5, 5)))
        _, first, _ = net.fire(p)
        skan_step(net, p)
        _, second, _ = net.fire(p)
        assert first is not None and second <= first


def test_losers_decay_and_widths_stay_in_bounds(rng):
    config = SkanConfig(features=4, patch_size=3, w_min=2, w_max=30, theta_down_fraction=0.01)
    net = SkanNetwork.initial(config, seed=2)
    for _ in range(300):
        winner, net = skan_step(net, encode_patch(rng.random((3, 3))))
    assert net.widths.min() >= 2 and net.widths.max() <= 30
    assert np.all(net.thresholds > 0)

    frozen = net.frozen()
    before = frozen.widths.copy()
    skan_step(frozen, encode_patch(rng.random((3, 3))))
    np.testing.assert_array_equal(frozen.widths, before)


def test_two_distinct_patterns_map_to_two_features():
    config = SkanConfig(features=2, patch_size=5, w_min=2, w_max=256, theta_up=0.05, theta_down_fraction=0.001)
    a = pattern(range(12), [0] * 12)
    b = pattern(range(12, 25), [0] * 13)
    widths = np.full((2, 25), 200)
    widths[0, :12] = 2
    widths[1, 12:] = 2
    net = SkanNetwork(config, widths, [6.0, 6.0])
    for k in range(200):
        skan_step(net, a if k % 2 == 0 else b)
    net = net.frozen()
    winners = {(k % 2, net.fire(a if k % 2 == 0 else b)[0]) for k in range(100)}
    assert winners == {(0, 0), (1, 1)}


def test_training_is_deterministic_and_freezes_the_network(small_dataset):
    recordings = small_dataset[0][::3]
    config = SkanConfig(features=4, patch_size=3)
    one = train_features(recordings, SMALL_EIS, SkanNetwork.initial(config, seed=5))
    two = train_features(recordings, SMALL_EIS, SkanNetwork.initial(config, seed=5))
    assert not one.learning_enabled
    np.testing.assert_array_equal(one.widths, two.widths)
    np.testing.assert_array_equal(one.thresholds, two.thresholds)
    assert feature_set_distance(one, two) == 0.0
    with pytest.raises(ConfigError):
        train_features(recordings, SMALL_EIS, one)


def test_feature_events_are_at_most_one_per_input_event(small_dataset):
    recording = small_dataset[0][4]
    net = random_features(SkanConfig(features=4, patch_size=3), seed=1,
                          calibration_patches=sample_patches([recording], SMALL_EIS, 3, count=200))
    events = feature_events(recording, SMALL_EIS, net)
    assert 0 < len(events) <= len(recording.on_events())
    indices = [e.i for e in events]
    assert indices == sorted(set(indices))
    assert all(0 <= e.feature_id < 4 for e in events)
    assert feature_events(recording, SMALL_EIS, net) == events


def test_random_features_depend_on_seed():
    config = SkanConfig(features=5, patch_size=3)
    assert feature_set_distance(random_features(config, seed=1), random_features(config, seed=1)) == 0.0
    assert feature_set_distance(random_features(config, seed=1), random_features(config, seed=2)) > 0.0


def test_feature_set_distance_ignores_ordering():
    net = SkanNetwork.initial(SkanConfig(features=6, patch_size=3), seed=4)
    shuffled = SkanNetwork(net.config, net.widths[::-1], net.thresholds[::-1])
    assert feature_set_distance(net, shuffled) == 0.0


def test_sample_patches_is_seeded(small_dataset):
    recordings = small_dataset[0][:2]
    a = sample_patches(recordings, SMALL_EIS, 3, count=50, seed=7)
    b = sample_patches(recordings, SMALL_EIS, 3, count=50, seed=7)
    assert a.shape == (50, 3, 3)
    np.testing.assert_array_equal(a, b)


def test_save_and_load_network(tmp_path):
    net = SkanNetwork.initial(SkanConfig(features=3, patch_size=3), seed=9).frozen()
    path = tmp_path / "nets" / "skan.json"
    save_network(path, net)
    loaded = load_network(path)
    np.testing.assert_array_equal(loaded.widths, net.widths)
    np.testing.assert_allclose(loaded.thresholds, net.thresholds)
    assert loaded.config == net.config
    assert export_feature_maps(loaded).shape == (3, 3, 3)


def test_load_network_rejects_other_versions(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 99}')
    with pytest.raises(DataError):
        load_network(path)
    with pytest.raises(DataError):
        load_network(tmp_path / "missing.json")
