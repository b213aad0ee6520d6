import json

import numpy as np
import pytest

from src.aer_io import save_dataset
from src.bench import bench_throughput
from src.config import load_settings
from src.errors import ConfigError, DataError
from src.experiments import (
    ExperimentConfig,
    derive_seed,
    feature_network,
    prepare_dataset,
    run_feature_sweep,
    run_frame_balanced,
    run_full,
    run_protocol,
    run_velocity_segregated,
    stratified_split,
    training_subset,
    velocity_halves,
)
from src.frames import build_dataset_frames, build_frames
from src.pooling import PoolConfig
from src.reports import report_json, summarize, write_report
from src.skan import SkanConfig, random_features
from src.surfaces import SurfaceConfig
from src.tracker import TrackerConfig

SMALL = (64, 48)


def tiny_config(**changes):
    values = dict(
        surfaces=("EIS", "ETS"),
        surface=SurfaceConfig(tau_e=3000.0, n_e=60.0, dims=SMALL),
        pool=PoolConfig(resample_len=8),
        skan=SkanConfig(features=4, patch_size=3),
        features="random",
        train_per_class=1,
        elm_hidden=30,
        lambda_grid=(0.01, 1.0),
        trials=1,
        frame_counts=(1, 2),
        feature_sizes=(3,),
        feature_counts=(2,),
    )
    values.update(changes)
    return ExperimentConfig(**values)


def test_config_from_default_settings():
    cfg = ExperimentConfig.from_settings(load_settings(overrides=["SURFACES=ETS,eis", "TRIALS=3"]))
    assert cfg.surfaces == ("ETS", "EIS")
    assert cfg.trials == 3
    assert [s.code for s in cfg.surface_configs()] == ["ETS", "EIS"]
    assert cfg.modes() == ("E", "F")


@pytest.mark.parametrize("override", [
    "PROTOCOL=everything",
    "FEATURE_SIZES=3,4",
    "FRAME_COUNTS=1,3",
    "SURFACES=ETS,XYZ",
    "TRIALS=0",
    "FEATURES=handmade",
    "CLASSIFIERS=svm",
    "TAU_E_US=abc",
    "NORMALIZE_FRAMES=maybe",
])
def test_bad_settings_raise_config_error(override):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_settings(load_settings(overrides=[override]))


def test_unknown_setting_is_rejected(tmp_path):
    path = tmp_path / "exp.env"
    path.write_text("TRIALS=2\nNOT_A_KNOB=1\n")
    with pytest.raises(ConfigError):
        load_settings(str(path))
    with pytest.raises(ConfigError):
        load_settings(overrides=["NOPE=1"])
    with pytest.raises(ConfigError):
        load_settings(str(tmp_path / "missing.env"))


def test_experiment_file_is_applied_before_overrides(tmp_path):
    path = tmp_path / "exp.env"
    path.write_text("TRIALS=2\nSPLIT_SEED=9\n")
    settings = load_settings(str(path), ["TRIALS=5"])
    assert settings["TRIALS"] == "5"
    assert settings["SPLIT_SEED"] == "9"


def test_derive_seed_is_stable():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(1, 0)
    assert 0 <= derive_seed("x") < 2 ** 32


def test_stratified_split_keeps_every_class_on_both_sides():
    labels = np.array([0] * 5 + [1] * 4 + [2] * 2)
    train, test = stratified_split(labels, seed=3)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(11))
    for label in range(3):
        assert (labels[train] == label).any() and (labels[test] == label).any()
    again = stratified_split(labels, seed=3)
    np.testing.assert_array_equal(train, again[0])


def test_velocity_halves_split_each_class():
    velocities = {0: 5.0, 1: 1.0, 2: 3.0, 3: 2.0, 4: 9.0}
    slow, fast = velocity_halves(velocities, [0, 0, 0, 1, 1])
    assert slow == [1, 3]
    assert fast == [0, 4]


def test_training_subset_limits_each_class(small_dataset):
    recordings, _ = small_dataset
    subset = training_subset(recordings, 2, seed=1)
    assert len(subset) == 8
    assert sorted(r.label for r in subset) == [0, 0, 1, 1, 2, 2, 3, 3]


def test_feature_network_modes(small_dataset):
    recordings, _ = small_dataset
    surface = SurfaceConfig.from_code("EIS", n_e=60.0, dims=SMALL)
    skan = SkanConfig(features=3, patch_size=3)
    assert feature_network("none", recordings, surface, skan, 0, 1) is None
    learnt = feature_network("learnt", recordings, surface, skan, 0, 1)
    random = feature_network("random", recordings, surface, skan, 0, 1)
    assert not learnt.learning_enabled and not random.learning_enabled
    assert learnt.widths.shape == random.widths.shape == (3, 9)


def test_build_frames_lengths_and_counts(small_dataset):
    recording = small_dataset[0][0]
    surface = SurfaceConfig.from_code("EIS", n_e=60.0, dims=SMALL)
    network = random_features(SkanConfig(features=4, patch_size=3), seed=0)
    frames = build_frames(recording, surface, TrackerConfig(), PoolConfig(resample_len=8), network)
    assert frames.total == len(frames.states) > 0
    assert len(frames.event_frames) == len(frames.feature_frames) == frames.total - frames.dropped
    assert all(f.vector.shape == (16,) for f in frames.event_frames)
    assert all(f.vector.shape == (64,) for f in frames.feature_frames)
    assert frames.feature_event_count <= frames.input_event_count


def test_parallel_frames_match_serial(small_dataset):
    recordings = small_dataset[0][:4]
    surface = SurfaceConfig.from_code("ETS", dims=SMALL)
    serial = build_dataset_frames(recordings, surface, TrackerConfig(), PoolConfig(resample_len=8), workers=1)
    parallel = build_dataset_frames(recordings, surface, TrackerConfig(), PoolConfig(resample_len=8), workers=2)
    for a, b in zip(serial, parallel):
        assert a.recording_id == b.recording_id
        assert len(a.event_frames) == len(b.event_frames)
        for fa, fb in zip(a.event_frames, b.event_frames):
            np.testing.assert_array_equal(fa.vector, fb.vector)


def test_full_protocol_report(small_dataset):
    recordings, names = small_dataset
    report = run_full(tiny_config(), recordings, names)
    assert set(report.results) == {"EIS", "ETS"}
    assert set(report.results["EIS"]) == {"L-E", "ELM-E", "L-F", "ELM-F"}
    cell = report.results["EIS"]["L-E"]["all"]
    assert len(cell["trials"]) == 1
    trial = cell["trials"][0]
    assert 0.0 <= trial["frame_accuracy"] <= 1.0 and 0.0 <= trial["drop_accuracy"] <= 1.0
    assert trial["n_drops"] == 4
    assert trial["lambda"] in (0.01, 1.0)
    assert cell["frame_accuracy"]["n"] == 1
    assert "EIS" in report.extras["elm_over_linear_error_ratio"]
    assert set(report.extras["dropped_frames"]) == {"EIS", "ETS"}
    assert all(isinstance(v, bool) for v in report.checks.values())


def test_full_protocol_is_reproducible(small_dataset, tmp_path):
    recordings, names = small_dataset
    first = report_json(run_full(tiny_config(features="none"), recordings, names))
    second = report_json(run_full(tiny_config(features="none"), recordings, names))
    assert first == second
    data = json.loads(first)
    assert set(data["results"]["ETS"]) == {"L-E", "ELM-E"}


def test_frame_balanced_protocol(small_dataset):
    recordings, names = small_dataset
    report = run_frame_balanced(tiny_config(features="none", classifiers=("linear",)), recordings, names)
    cells = report.results["EIS"]["L-E"]
    assert set(cells) == {"n=1", "n=2"}
    assert cells["n=1"]["trials"][0]["train_frames"] == 8
    assert cells["n=2"]["trials"][0]["train_frames"] == 16
    assert report.extras["excluded"]["EIS"]["1"] == []
    assert "drop_geq_frame_EIS_L-E" in report.checks


def test_velocity_segregated_protocol(small_dataset):
    recordings, names = small_dataset
    cfg = tiny_config(features="none", frame_counts=(2,), classifiers=("linear",))
    report = run_velocity_segregated(cfg, recordings, names)
    assert len(report.extras["slow"]) == 4 and len(report.extras["fast"]) == 4
    assert not set(report.extras["slow"]) & set(report.extras["fast"])
    trial = report.results["EIS"]["L-E"]["n=2"]["trials"][0]
    assert trial["train_frames"] == 8
    assert trial["n_frames"] == 8
    assert "EIS_beats_ETS_L-E_n2" in report.checks


def test_feature_sweep_protocol(small_dataset):
    recordings, names = small_dataset
    report = run_feature_sweep(tiny_config(features="learnt"), recordings, names)
    arms = report.results["EIS"]
    assert set(arms) == {"L-E", "L-F-learnt", "L-F-random"}
    assert set(arms["L-F-learnt"]) == {"R3xK2"}
    assert "learnt_geq_random_R3xK2" in report.checks


def test_run_protocol_from_disk(small_dataset, tmp_path):
    recordings, names = small_dataset
    save_dataset(tmp_path / "data", recordings, names)
    cfg = tiny_config(dataset=str(tmp_path / "data"), features="none", classifiers=("linear",), surfaces=("EIS",))
    report = run_protocol(cfg, "frame_balanced")
    assert report.class_names == sorted(names)
    assert report.extras["n_e"] > 0
    paths = write_report(report, tmp_path / "reports")
    assert paths[0].name == "frame_balanced.json"
    assert {p.name for p in paths[1:]} == {"frame_balanced_summary.csv", "frame_balanced_trials.csv"}


def test_prepare_dataset_errors(tmp_path):
    with pytest.raises(ConfigError):
        prepare_dataset(tiny_config(dataset=""))
    with pytest.raises(DataError):
        prepare_dataset(tiny_config(dataset=str(tmp_path / "missing")))
    with pytest.raises(ConfigError):
        run_protocol(tiny_config(dataset=str(tmp_path)), "unknown")


def test_missing_class_is_a_data_error(small_dataset):
    recordings, names = small_dataset
    with pytest.raises(DataError):
        run_full(tiny_config(), [r for r in recordings if r.label != 2], names)


def test_summarize():
    stats = summarize([0.5, 1.0, 0.75])
    assert stats["n"] == 3
    assert stats["median"] == 0.75
    assert stats["min"] == 0.5 and stats["max"] == 1.0
    assert summarize([])["n"] == 0


def test_bench_reports_every_stage(small_dataset, make_recording):
    recordings = small_dataset[0][:2]
    surface = SurfaceConfig.from_code("EIS", n_e=60.0, dims=SMALL)
    network = random_features(SkanConfig(features=2, patch_size=3), seed=0)
    result = bench_throughput(recordings, surface, TrackerConfig(), PoolConfig(resample_len=8), network, warmup=1)
    assert set(result["throughput"]) == {"absorb", "absorb_track", "full"}
    assert all(rate > 0 for rate in result["throughput"].values())
    assert result["events"] == sum(len(r) for r in recordings)
    assert result["warmup"] == 1
    assert result["machine"]["logical_cores"] >= 1
    with pytest.raises(DataError):
        bench_throughput([make_recording([(1, 1, 5, -1)])], surface)
