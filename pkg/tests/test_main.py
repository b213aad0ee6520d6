import csv
import json

import numpy as np

from main import main
from src.aer_io import save_dataset
from src.synth import load_manifest
from src.tools import describe_dataset

SMALL = ["--set", "SENSOR_WIDTH=64", "--set", "SENSOR_HEIGHT=48"]


def test_info_succeeds(capsys):
    assert main(["info"]) == 0
    assert "CONFIGURATION SUMMARY" in capsys.readouterr().out


def test_unknown_override_exits_with_config_code():
    assert main(["run", "full", "--set", "NOT_A_KNOB=1"]) == 2


def test_missing_dataset_exits_with_data_code(tmp_path):
    assert main(["track", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "t.csv")]) == 3


def test_synth_track_and_export(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--per-class", "2", "--set", "SYNTH_CLASSES=2", *SMALL]) == 0
    manifest = load_manifest(data)
    assert len(manifest["recordings"]) == 4
    assert sorted(p.parent.name for p in data.glob("*/*.bin")) == ["dart", "dart", "glider", "glider"]

    tracks = tmp_path / "tracks.csv"
    assert main(["track", "--dataset", str(data), "--out", str(tracks), *SMALL]) == 0
    with tracks.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0][0] == "recording_id"
    assert len(rows) > 4

    snapshot = tmp_path / "diff.csv"
    recording = sorted(data.glob("dart/*.bin"))[0]
    assert main(["export-surface", "--recording", str(recording), "--surface", "ETS", "--diff", "EIS",
                 "--at-index", "200", "--out", str(snapshot), *SMALL]) == 0
    assert np.loadtxt(snapshot, delimiter=",").shape == (48, 64)


def test_describe_dataset_lists_classes(tmp_path, monkeypatch, capsys, make_recording):
    recordings = [
        make_recording([(1, 1, 0), (2, 2, 1000)], label=0, recording_id="a/0000"),
        make_recording([(3, 3, 0)], label=1, recording_id="b/0000"),
    ]
    save_dataset(tmp_path, recordings, ["a", "b"])
    monkeypatch.setattr("sys.argv", ["describe_dataset", str(tmp_path)])
    describe_dataset.main()
    out = capsys.readouterr().out
    assert "[0] a - recordings:1 events:2 mean rate:2,000/s" in out
    assert "[1] b - recordings:1 events:1 mean rate:0/s" in out


def test_info_rejects_invalid_experiment_file(tmp_path):
    bad = tmp_path / "bad.env"
    bad.write_text("TRACKER_THRESHOLD=5\nSKAN_PATCH_SIZE=4\n")
    assert main(["info", "--config", str(bad)]) == 2
    assert main(["info", "--set", "SKAN_FEATURES=0"]) == 2


def test_synth_and_bench_honour_overrides(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--per-class", "1", "--set", "SYNTH_CLASSES=2",
                 "--set", "SYNTH_MICRO_STEP_US=1000", *SMALL]) == 0
    assert {e["spec"]["micro_step_us"] for e in load_manifest(data)["recordings"]} == {1000}

    out = tmp_path / "bench.json"
    assert main(["bench", "--dataset", str(data), "--out", str(out), "--set", "BENCH_WARMUP_RECORDINGS=0",
                 "--set", "SKAN_FEATURES=4", "--set", "SKAN_PATCH_SIZE=3", *SMALL]) == 0
    result = json.loads(out.read_text())
    assert result["warmup"] == 0
    assert result["recordings"] == 2


def test_export_surface_writes_activation_series(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--per-class", "2", "--set", "SYNTH_CLASSES=1", *SMALL]) == 0
    recording = sorted(data.glob("dart/*.bin"))[0]
    series, mean = tmp_path / "series.csv", tmp_path / "mean.csv"
    assert main(["export-surface", "--recording", str(recording), "--surface", "ETS", "--out", str(tmp_path / "s.csv"),
                 "--series", str(series), "--mean-series", str(mean), "--dataset", str(data), *SMALL]) == 0

    assert series.read_text().splitlines()[0] == "instant,activation"
    table = np.loadtxt(series, delimiter=",", skiprows=1)
    assert table.shape[1] == 2
    assert np.all(np.diff(table[:, 0]) == 3000)
    assert table[:, 1].max() > 0

    assert mean.read_text().splitlines()[0] == "offset,mean_activation"
    curve = np.loadtxt(mean, delimiter=",", skiprows=1)
    assert curve[0, 0] == 0.0
    assert np.all(np.diff(curve[:, 0]) > 0)

    assert main(["export-surface", "--recording", str(recording), "--out", str(tmp_path / "s.csv"),
                 "--mean-series", str(mean), *SMALL]) == 3
