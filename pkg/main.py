#!/usr/bin/env python3
"""
Event Memory Surfaces - Command Line Launcher
============================================

Single entry point for the recognition pipeline:
- Synthetic drop datasets (synth)
- SKAN feature training (train-features)
- Target tracking and trajectory export (track)
- The four experiment protocols (run <protocol>)
- Throughput benchmark (bench)
- Surface snapshots (export-surface)
- Configuration summary (info)

Settings come from .env / the environment, an optional experiment file
(--config, KEY=VALUE lines) and --set KEY=VALUE overrides, in that order.

Exit codes: 0 success, 2 configuration error, 3 data error.

Just run: python main.py run full --config configs/desk.env
"""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from src.config import DEBUG_MODE, VERBOSE_LOGGING, load_settings, print_config_summary, validate_config
from src.errors import ConfigError, DataError


def setup_logging():
    level = logging.DEBUG if (VERBOSE_LOGGING or DEBUG_MODE) else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def settings_for(args):
    settings = load_settings(args.config, args.set or [])
    if getattr(args, "dataset", None):
        settings["DATASET"] = args.dataset
    return settings


def experiment_config(args):
    from src.experiments import ExperimentConfig

    return ExperimentConfig.from_settings(settings_for(args))


# =============================================================================
# SUBCOMMANDS
# =============================================================================
def cmd_synth(args):
    from src.aer_io import save_dataset
    from src.experiments import ExperimentConfig
    from src.synth import CLASS_NAMES, generate_dataset, write_manifest

    settings = settings_for(args)
    cfg = ExperimentConfig.from_settings(settings)
    per_class = args.per_class or int(settings["SYNTH_RECORDINGS_PER_CLASS"])
    n_classes = int(settings["SYNTH_CLASSES"])
    seed = int(settings["SYNTH_SEED"])
    crossing = tuple(args.velocity_sweep) if args.velocity_sweep else None

    print(f"🚀 Generating {per_class} drops for each of {n_classes} classes (seed {seed})...")
    recordings, specs = generate_dataset(
        per_class, n_classes, seed, cfg.surface.dims,
        noise_rate=float(settings["SYNTH_NOISE_RATE"]),
        jitter_us=int(settings["SYNTH_JITTER_US"]),
        crossing_range=crossing,
        micro_step_us=int(settings["SYNTH_MICRO_STEP_US"]),
    )
    save_dataset(args.out, recordings, CLASS_NAMES[:n_classes])
    manifest = write_manifest(args.out, recordings, specs, seed)
    print(f"📁 Dataset written to {Path(args.out).absolute()}")
    print(f"✅ {len(recordings)} recordings, manifest: {manifest}")
    return 0


def cmd_train_features(args):
    from src.experiments import feature_network, prepare_dataset
    from src.skan import save_network, write_feature_maps_csv

    cfg, recordings, class_names = prepare_dataset(experiment_config(args))
    surface = cfg.surface_configs()[0]
    kind = "random" if args.random else "learnt"
    print(f"🧠 {kind.capitalize()} features: {cfg.skan.features} x {cfg.skan.patch_size}x{cfg.skan.patch_size} "
          f"on {surface.code} surfaces...")
    network = feature_network(kind, recordings, surface, cfg.skan, cfg.skan_seed, cfg.train_per_class)
    save_network(args.out, network)
    maps = Path(args.out).with_suffix(".maps.csv")
    write_feature_maps_csv(maps, network)
    print(f"✅ Network saved: {args.out}")
    print(f"📁 Feature maps: {maps}")
    return 0


def cmd_track(args):
    from src.experiments import prepare_dataset
    from src.synth import load_manifest
    from src.tracker import detection_window_summary, ground_truth_agreement, track, trajectory_rows, write_trajectory_csv

    cfg, recordings, _ = prepare_dataset(experiment_config(args))
    surface = cfg.surface_configs()[0]
    truth = {}
    if (Path(cfg.dataset) / "manifest.json").exists():
        truth = {e["recording_id"]: e["trajectory"] for e in load_manifest(cfg.dataset)["recordings"]}

    print(f"🎯 Tracking {len(recordings)} recordings on {surface.code} surfaces...")
    rows, tracks, hits, total = [], [], 0, 0
    for recording in recordings:
        states = track(recording.on_events(), surface, cfg.tracker)
        tracks.append(states)
        rows.extend(trajectory_rows(recording.recording_id, states))
        if recording.recording_id in truth:
            h, n = ground_truth_agreement(states, truth[recording.recording_id])
            hits, total = hits + h, total + n

    write_trajectory_csv(args.out, rows)
    window = detection_window_summary(tracks)
    print(f"📁 Trajectories: {args.out}")
    print(f"⏱️ Detection window: {window['mean_ms']:.1f} ± {window['std_ms']:.1f} ms over {window['count']} recordings")
    if total:
        print(f"✅ {hits}/{total} in-view frames within 4 px of ground truth ({hits / total:.1%})")
    return 0


def cmd_run(args):
    from src.experiments import run_protocol
    from src.reports import print_report_summary, write_report

    cfg = experiment_config(args)
    print(f"🚀 Running protocol '{args.protocol}' ({cfg.trials} trials)...")
    report = run_protocol(cfg, args.protocol)
    out = args.out or cfg.output_dir
    paths = write_report(report, out)
    print_report_summary(report)
    print(f"📁 Report: {paths[0]}")
    return 0


def cmd_bench(args):
    from src.bench import bench_throughput
    from src.experiments import ExperimentConfig, feature_network, prepare_dataset

    settings = settings_for(args)
    cfg, recordings, _ = prepare_dataset(ExperimentConfig.from_settings(settings))
    if args.limit:
        recordings = recordings[:args.limit]
    surface = cfg.surface_configs()[0]
    print(f"⏱️ Benchmarking {len(recordings)} recordings on {surface.code} surfaces...")
    network = feature_network("random", recordings, surface, cfg.skan, cfg.skan_seed, cfg.train_per_class)
    result = bench_throughput(recordings, surface, cfg.tracker, cfg.pool, network,
                              warmup=int(settings["BENCH_WARMUP_RECORDINGS"]))
    for stage, rate in result["throughput"].items():
        print(f"  {stage:<14} {rate:>14,.0f} events/s")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True))
        print(f"📁 Benchmark: {args.out}")
    return 0


def cmd_export_surface(args):
    import numpy as np

    from src.aer_io import load_dataset, read_recording
    from src.surfaces import (DecayBasis, MemorySurface, SurfaceConfig, activation_series, mean_activation_curve,
                              save_series_csv, save_surface_csv, surface_difference)

    cfg = experiment_config(args)
    recording = read_recording(args.recording, cfg.surface.dims, timestamp_mode=cfg.timestamp_mode).on_events()
    if len(recording) == 0:
        raise DataError(f"{args.recording} has no ON events")
    if args.at_index is not None:
        last = min(args.at_index, len(recording) - 1)
    else:
        at = int(recording.t[0]) + args.at_us if args.at_us is not None else int(recording.t[-1])
        last = int(np.searchsorted(recording.t, at, side="right")) - 1
    if last < 0:
        raise DataError("Requested instant precedes the first event")

    def filled(code):
        config = SurfaceConfig.from_code(code, tau_e=cfg.surface.tau_e, n_e=cfg.surface.n_e, dims=cfg.surface.dims)
        surface = MemorySurface(config)
        for k in range(last + 1):
            surface.absorb_at(int(recording.x[k]), int(recording.y[k]), int(recording.t[k]))
        return surface

    surface = filled(args.surface)
    if args.diff:
        other = filled(args.diff)
        matrix = surface_difference(surface, other, surface.current_instant, other.current_instant)
    else:
        matrix = surface.materialize(surface.current_instant)
    save_surface_csv(args.out, matrix)
    print(f"✅ Surface after event {last} saved: {args.out}")

    if args.series or args.mean_series:
        config = surface.config
        stride = args.stride or (cfg.tracker.sample_interval if config.decay_basis is DecayBasis.TIME else 10)
    if args.series:
        save_series_csv(args.series, activation_series(recording, config, stride))
        print(f"📁 Activation series: {args.series}")
    if args.mean_series:
        if not cfg.dataset:
            raise DataError("--mean-series needs --dataset")
        recordings, _ = load_dataset(cfg.dataset, cfg.surface.dims, cfg.timestamp_mode)
        grid, curve = mean_activation_curve([activation_series(r.on_events(), config, stride) for r in recordings])
        save_series_csv(args.mean_series, zip(grid, curve), header="offset,mean_activation")
        print(f"📁 Mean activation curve over {len(recordings)} recordings: {args.mean_series}")
    return 0


def cmd_info(args):
    from src.experiments import ExperimentConfig

    settings = load_settings(args.config, args.set or [])
    print_config_summary(settings)
    ok = validate_config(settings)
    if ok:
        ExperimentConfig.from_settings(settings)
    print("✅ Configuration valid!" if ok else "❌ Configuration invalid")
    return 0 if ok else 2


# =============================================================================
# ARGUMENT PARSING
# =============================================================================
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment file with KEY=VALUE lines")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")

    parser = argparse.ArgumentParser(description="Event memory surfaces recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic drop dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int)
    p.add_argument("--velocity-sweep", type=float, nargs=2, metavar=("MIN_S", "MAX_S"),
                   help="draw crossing times uniformly in this range instead of ~242 ms")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-features", parents=[common], help="train (or draw random) SKAN features")
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--random", action="store_true")
    p.set_defaults(func=cmd_train_features)

    p = sub.add_parser("track", parents=[common], help="track every recording and export trajectories")
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("run", parents=[common], help="run an experiment protocol")
    p.add_argument("protocol", choices=["full", "frame_balanced", "velocity_segregated", "feature_sweep"])
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="measure pipeline throughput")
    p.add_argument("--dataset")
    p.add_argument("--limit", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-surface", parents=[common], help="save a surface snapshot as CSV")
    p.add_argument("--recording", required=True)
    p.add_argument("--surface", default="EIS")
    p.add_argument("--diff", help="subtract this surface (e.g. ETS - EIS)")
    p.add_argument("--series", help="also write the total activation series of the recording (CSV)")
    p.add_argument("--mean-series", help="also write the mean activation curve over --dataset (CSV)")
    p.add_argument("--dataset")
    p.add_argument("--stride", type=int, help="series sampling stride (us for TIME surfaces, events for INDEX)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--at-us", type=int, help="microseconds after the first event")
    group.add_argument("--at-index", type=int, help="event index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_surface)

    p = sub.add_parser("info", parents=[common], help="print the configuration summary")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None):
    """Main function - the only entry point you need!"""
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        if DEBUG_MODE:
            traceback.print_exc()
        return 2
    except DataError as e:
        print(f"❌ Data error: {e}")
        if DEBUG_MODE:
            traceback.print_exc()
        return 3
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
