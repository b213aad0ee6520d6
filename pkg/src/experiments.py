"""
Experiment Protocols
====================

Trial orchestration for the four recognition experiments:

    full                 random 50/50 recording split, every surface and arm
    frame_balanced       n randomly chosen frames per training recording
    velocity_segregated  train on the slow half's first n frames, test on the fast half's last n
    feature_sweep        learnt vs random features over a (patch size, feature count) grid

An arm is a classifier applied to one frame kind: L-E, ELM-E (event
surface) and L-F, ELM-F (feature surfaces). Event frames are built once
per surface; feature frames once per surface and trial, then shared by
every classifier arm.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .aer_io import Recording, load_dataset
from .classifiers import ClassifierKind, evaluate, median_error_ratio, select_lambda, train_classifier
from .config import load_settings, parse_float_list, parse_int_list
from .errors import ConfigError, DataError, InsufficientFramesError
from .frames import RecordingFrames, build_dataset_frames, stack_frames
from .pooling import FeatureFrame, PoolConfig
from .reports import Report, summarize
from .skan import SkanConfig, SkanNetwork, random_features, sample_patches, train_features
from .surfaces import DecayBasis, Kernel, SurfaceConfig, calibrate_index_constant
from .tracker import TrackerConfig, detection_window_summary, fit_tracks

logger = logging.getLogger(__name__)

PROTOCOLS = ("full", "frame_balanced", "velocity_segregated", "feature_sweep")
FEATURE_MODES = ("none", "learnt", "random")
ALLOWED_FRAME_COUNTS = (1, 2, 4, 8, 16, 32)
ARM_PREFIX = {ClassifierKind.LINEAR: "L", ClassifierKind.ELM: "ELM"}
CALIBRATION_PATCHES = 1000
SLOW_TRAIN_FRACTION = 0.75


# =============================================================================
# CONFIGURATION
# =============================================================================
def _convert(settings: Dict[str, str], key: str, kind: Callable):
    try:
        return kind(settings[key])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {settings.get(key)!r} ({e})")


def _flag(settings: Dict[str, str], key: str) -> bool:
    value = settings[key].strip().lower()
    if value not in ("true", "false"):
        raise ConfigError(f"{key} must be true or false, got {settings[key]!r}")
    return value == "true"


@dataclass
class ExperimentConfig:
    dataset: str = ""
    protocol: str = "full"
    surfaces: Tuple[str, ...] = ("BTS", "LTS", "ETS", "BIS", "LIS", "EIS")
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    auto_calibrate_n_e: bool = True
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    skan: SkanConfig = field(default_factory=SkanConfig)
    features: str = "learnt"
    skan_seed: int = 0
    train_per_class: int = 50
    classifiers: Tuple[str, ...] = ("linear", "elm")
    elm_hidden: int = 2000
    elm_seed: int = 0
    lambda_grid: Tuple[float, ...] = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
    validation_fraction: float = 0.2
    trials: int = 20
    split_seed: int = 0
    frame_counts: Tuple[int, ...] = ALLOWED_FRAME_COUNTS
    feature_sizes: Tuple[int, ...] = (3, 5, 9, 13, 17)
    feature_counts: Tuple[int, ...] = (1, 5, 10, 25, 50)
    timestamp_mode: str = "reject"
    output_dir: str = "./reports"
    workers: int = 1

    def __post_init__(self):
        self.surfaces = tuple(code.strip().upper() for code in self.surfaces)
        self.classifiers = tuple(ClassifierKind(c.strip().lower()).value for c in self.classifiers)
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"Unknown protocol '{self.protocol}' (expected one of {', '.join(PROTOCOLS)})")
        if self.features not in FEATURE_MODES:
            raise ConfigError(f"FEATURES must be one of {', '.join(FEATURE_MODES)}, got '{self.features}'")
        if self.trials < 1:
            raise ConfigError(f"TRIALS must be >= 1, got {self.trials}")
        if not self.surfaces or not self.classifiers or not self.lambda_grid:
            raise ConfigError("SURFACES, CLASSIFIERS and LAMBDA_GRID must not be empty")
        bad = [n for n in self.frame_counts if n not in ALLOWED_FRAME_COUNTS]
        if bad:
            raise ConfigError(f"FRAME_COUNTS must be drawn from {ALLOWED_FRAME_COUNTS}, got {bad}")
        even = [s for s in self.feature_sizes if s % 2 == 0 or s < 1]
        if even:
            raise ConfigError(f"FEATURE_SIZES must be odd (patches are centered), got {even}")
        if not self.feature_counts or min(self.feature_counts) < 1:
            raise ConfigError(f"FEATURE_COUNTS must be positive, got {self.feature_counts}")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigError(f"VALIDATION_FRACTION must be in (0, 1), got {self.validation_fraction}")
        if self.workers < 1:
            raise ConfigError(f"WORKERS must be >= 1, got {self.workers}")
        self.surface_configs()

    @classmethod
    def from_settings(cls, settings: Dict[str, str]) -> "ExperimentConfig":
        """Convert a load_settings() mapping; bad values raise ConfigError."""
        dims = (_convert(settings, "SENSOR_WIDTH", int), _convert(settings, "SENSOR_HEIGHT", int))
        try:
            surface = SurfaceConfig(
                decay_basis=settings["SURFACE_BASIS"].strip().upper(),
                kernel=settings["SURFACE_KERNEL"].strip().upper(),
                tau_e=_convert(settings, "TAU_E_US", float),
                n_e=_convert(settings, "N_E", float),
                dims=dims,
            )
        except ValueError as e:
            raise ConfigError(f"Invalid surface settings: {e}")
        tracker = TrackerConfig(
            smoothing_window=_convert(settings, "TRACKER_SMOOTHING_WINDOW", int),
            threshold=_convert(settings, "TRACKER_THRESHOLD", float),
            sample_interval=_convert(settings, "SAMPLE_INTERVAL_US", int),
            velocity_half_window=_convert(settings, "VELOCITY_HALF_WINDOW_US", int),
            activation_window=_convert(settings, "ACTIVATION_WINDOW_US", int),
        )
        pool = PoolConfig(
            resample_len=_convert(settings, "RESAMPLE_LEN", int),
            sample_interval=tracker.sample_interval,
            normalize=_flag(settings, "NORMALIZE_FRAMES"),
        )
        skan = SkanConfig(
            features=_convert(settings, "SKAN_FEATURES", int),
            patch_size=_convert(settings, "SKAN_PATCH_SIZE", int),
            peak=_convert(settings, "SKAN_PEAK", float),
            w_min=_convert(settings, "SKAN_W_MIN", int),
            w_max=_convert(settings, "SKAN_W_MAX", int),
            dw=_convert(settings, "SKAN_DW", int),
            theta_up=_convert(settings, "SKAN_THETA_UP", float),
            theta_down_fraction=_convert(settings, "SKAN_THETA_DOWN_FRACTION", float),
            theta_init_fraction=_convert(settings, "SKAN_THETA_INIT_FRACTION", float),
            t_max=_convert(settings, "SKAN_T_MAX", int),
        )
        try:
            classifiers = tuple(c for c in settings["CLASSIFIERS"].split(",") if c.strip())
            return cls(
                dataset=settings["DATASET"],
                protocol=settings["PROTOCOL"].strip().lower(),
                surfaces=tuple(c for c in settings["SURFACES"].split(",") if c.strip()),
                surface=surface,
                auto_calibrate_n_e=_flag(settings, "AUTO_CALIBRATE_N_E"),
                tracker=tracker,
                pool=pool,
                skan=skan,
                features=settings["FEATURES"].strip().lower(),
                skan_seed=_convert(settings, "SKAN_SEED", int),
                train_per_class=_convert(settings, "SKAN_TRAIN_PER_CLASS", int),
                classifiers=classifiers,
                elm_hidden=_convert(settings, "ELM_HIDDEN", int),
                elm_seed=_convert(settings, "ELM_SEED", int),
                lambda_grid=tuple(parse_float_list(settings["LAMBDA_GRID"])),
                validation_fraction=_convert(settings, "VALIDATION_FRACTION", float),
                trials=_convert(settings, "TRIALS", int),
                split_seed=_convert(settings, "SPLIT_SEED", int),
                frame_counts=tuple(parse_int_list(settings["FRAME_COUNTS"])),
                feature_sizes=tuple(parse_int_list(settings["FEATURE_SIZES"])),
                feature_counts=tuple(parse_int_list(settings["FEATURE_COUNTS"])),
                timestamp_mode=settings["TIMESTAMP_MODE"].strip().lower(),
                output_dir=settings["OUTPUT_DIR"],
                workers=_convert(settings, "WORKERS", int),
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e))

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        return cls.from_settings(load_settings(path, overrides))

    def surface_configs(self) -> List[SurfaceConfig]:
        return [SurfaceConfig.from_code(code, tau_e=self.surface.tau_e, n_e=self.surface.n_e, dims=self.surface.dims)
                for code in self.surfaces]

    def modes(self) -> Tuple[str, ...]:
        return ("E",) if self.features == "none" else ("E", "F")

    def to_dict(self) -> Dict:
        return asdict(self)


# =============================================================================
# SEEDS AND SPLITS
# =============================================================================
def derive_seed(*parts) -> int:
    """Stable 32-bit seed from any parts (sha256 of their joined text)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 32)


def trial_seed(split_seed: int, trial_index: int) -> int:
    return derive_seed(split_seed, trial_index)


def stratified_split(labels: Sequence[int], seed: int, train_fraction: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Per class, a random train_fraction of recordings for training (at least one each side when possible)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == label))
        n_train = int(round(train_fraction * members.size))
        n_train = min(max(n_train, 1), max(members.size - 1, 1))
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def require_all_classes(recordings: Sequence[Recording], class_names: Sequence[str]) -> np.ndarray:
    labels = np.array([r.label for r in recordings])
    missing = [name for k, name in enumerate(class_names) if not np.any(labels == k)]
    if not recordings or missing:
        raise DataError(f"Dataset has no recordings for classes {missing or list(class_names)}")
    return labels


# =============================================================================
# FEATURES AND ARMS
# =============================================================================
def training_subset(recordings: Sequence[Recording], per_class: int, seed: int) -> List[Recording]:
    """Up to per_class recordings of each class in a seeded shuffled order."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(recordings))
    counts: Dict[int, int] = {}
    subset = []
    for k in order:
        label = recordings[k].label
        if counts.get(label, 0) < per_class:
            counts[label] = counts.get(label, 0) + 1
            subset.append(recordings[k])
    return subset


def feature_network(kind: str, training: Sequence[Recording], surface: SurfaceConfig, skan: SkanConfig,
                    seed: int, per_class: int) -> Optional[SkanNetwork]:
    """Learnt and random networks drawn from the same seed differ only by learning."""
    if kind == "none":
        return None
    subset = training_subset(training, per_class, seed)
    if kind == "learnt":
        return train_features(subset, surface, SkanNetwork.initial(skan, seed))
    patches = sample_patches(subset, surface, skan.patch_size, CALIBRATION_PATCHES, seed)
    return random_features(skan, seed, patches)


def arm_name(kind: str, mode: str) -> str:
    return f"{ARM_PREFIX[ClassifierKind(kind)]}-{mode}"


FrameSelector = Callable[[List[FeatureFrame], np.random.Generator], List[FeatureFrame]]


def all_frames(frames: List[FeatureFrame], rng: np.random.Generator) -> List[FeatureFrame]:
    return frames


def run_arm(kind: str, mode: str, frames: Sequence[RecordingFrames], train_idx: Sequence[int],
            test_idx: Sequence[int], cfg: ExperimentConfig, n_classes: int, seed: int,
            train_select: FrameSelector = all_frames, test_select: FrameSelector = all_frames) -> Dict:
    """Train one classifier arm on the training recordings' frames and score it on the test recordings."""
    rng = np.random.default_rng(derive_seed(seed, kind, mode))
    chosen, groups = [], []
    for i in train_idx:
        picked = train_select(frames[i].frames(mode), rng)
        chosen.extend(picked)
        groups.extend([frames[i].recording_id] * len(picked))
    if not chosen:
        raise InsufficientFramesError(f"No training frames for arm {arm_name(kind, mode)}")
    X = stack_frames(chosen)
    y = np.array([f.label for f in chosen], dtype=np.int64)

    trainer = partial(_train, kind=kind, n_classes=n_classes, hidden=cfg.elm_hidden, seed=cfg.elm_seed)
    lam = select_lambda(trainer, X, y, np.array(groups), cfg.lambda_grid, cfg.validation_fraction,
                        derive_seed(seed, "lambda"))
    model = trainer(X, y, lam)

    tests = []
    for i in test_idx:
        picked = test_select(frames[i].frames(mode), rng)
        if picked:
            tests.append((frames[i].recording_id, frames[i].label, stack_frames(picked)))
    result = evaluate(model, tests).to_dict()
    result.update({"lambda": lam, "train_frames": len(chosen)})
    return result


def _train(X, y, lam, kind, n_classes, hidden, seed):
    return train_classifier(kind, X, y, lam, n_classes=n_classes, hidden_size=hidden, seed=seed)


def record_trial(report: Report, surface: str, arm: str, cell: str, trial: int, seed: int, result: Dict) -> None:
    cells = report.results.setdefault(surface, {}).setdefault(arm, {})
    cells.setdefault(cell, {"trials": []})["trials"].append({"trial": trial, "seed": seed, **result})
    report.table("trials", ["surface", "arm", "cell", "trial", "seed", "lambda", "frame_accuracy", "drop_accuracy"]
                 ).add(surface, arm, cell, trial, seed, result["lambda"], result["frame_accuracy"],
                       result["drop_accuracy"])


def finalize(report: Report) -> None:
    """Per-cell mean/std/median of both accuracies plus the summary table."""
    summary = report.table("summary", ["surface", "arm", "cell", "frame_median", "frame_mean", "frame_std",
                                       "drop_median", "drop_mean", "drop_std"])
    for surface in sorted(report.results):
        for arm in sorted(report.results[surface]):
            for cell, data in sorted(report.results[surface][arm].items()):
                data["frame_accuracy"] = summarize([t["frame_accuracy"] for t in data["trials"]])
                data["drop_accuracy"] = summarize([t["drop_accuracy"] for t in data["trials"]])
                summary.add(surface, arm, cell, data["frame_accuracy"]["median"], data["frame_accuracy"]["mean"],
                            data["frame_accuracy"]["std"], data["drop_accuracy"]["median"],
                            data["drop_accuracy"]["mean"], data["drop_accuracy"]["std"])


def cell_stat(report: Report, surface: str, arm: str, cell: str, measure: str = "frame_accuracy",
              stat: str = "median") -> Optional[float]:
    try:
        return report.results[surface][arm][cell][measure][stat]
    except KeyError:
        return None


def _dataset_extras(report: Report, code: str, frames: Sequence[RecordingFrames], cfg: ExperimentConfig) -> None:
    report.extras.setdefault("dropped_frames", {})[code] = {
        "dropped": sum(f.dropped for f in frames),
        "total": sum(f.total for f in frames),
    }
    report.extras.setdefault("detection_window", {})[code] = detection_window_summary([f.states for f in frames])


# =============================================================================
# PROTOCOLS
# =============================================================================
def run_full(cfg: ExperimentConfig, recordings: Sequence[Recording], class_names: Sequence[str]) -> Report:
    """Random 50/50 split per trial; every surface, every classifier on E and F frames."""
    labels = require_all_classes(recordings, class_names)
    report = Report("full", cfg.to_dict(), list(class_names))

    for surface in cfg.surface_configs():
        code = surface.code
        event_frames = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, workers=cfg.workers)
        _dataset_extras(report, code, event_frames, cfg)
        tracks = [(f.recording_id, f.label, f.states, f.span) for f in event_frames if f.total]
        slopes = fit_tracks(tracks, cfg.tracker, strict=False)
        report.extras.setdefault("activation_slopes", {})[code] = {
            class_names[label]: fit["slope"] for label, fit in slopes.items()
        }

        for trial in range(cfg.trials):
            seed = trial_seed(cfg.split_seed, trial)
            train_idx, test_idx = stratified_split(labels, seed)
            frames_by_mode = {"E": event_frames}
            if "F" in cfg.modes():
                network = feature_network(cfg.features, [recordings[i] for i in train_idx], surface, cfg.skan,
                                          derive_seed(cfg.skan_seed, trial), cfg.train_per_class)
                frames_by_mode["F"] = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, network,
                                                           with_events=False, workers=cfg.workers)
            for kind in cfg.classifiers:
                for mode in cfg.modes():
                    result = run_arm(kind, mode, frames_by_mode[mode], train_idx, test_idx, cfg,
                                     len(class_names), seed)
                    record_trial(report, code, arm_name(kind, mode), "all", trial, seed, result)
            logger.info(f"{code} trial {trial + 1}/{cfg.trials} done")

    finalize(report)
    _error_ratios(report, cfg)
    _full_checks(report, cfg)
    return report


def _error_ratios(report: Report, cfg: ExperimentConfig) -> None:
    ratios = {}
    for code, arms in report.results.items():
        for mode in cfg.modes():
            elm, lin = arms.get(f"ELM-{mode}"), arms.get(f"L-{mode}")
            if elm is None or lin is None:
                continue
            ratios.setdefault(code, {})[mode] = median_error_ratio(
                [t["frame_accuracy"] for t in elm["all"]["trials"]],
                [t["frame_accuracy"] for t in lin["all"]["trials"]],
            )
    report.extras["elm_over_linear_error_ratio"] = ratios


def _full_checks(report: Report, cfg: ExperimentConfig) -> None:
    codes = set(report.results)
    for basis in ("TS", "IS"):
        trio = [f"{k}{basis}" for k in ("E", "L", "B")]
        if not all(c in codes for c in trio):
            continue
        for arm in sorted(report.results[trio[0]]):
            medians = [cell_stat(report, c, arm, "all") for c in trio]
            if None not in medians:
                report.checks[f"kernel_order_{basis}_{arm}"] = medians[0] >= medians[1] >= medians[2]
    for code in sorted(codes):
        lf, elme = cell_stat(report, code, "L-F", "all"), cell_stat(report, code, "ELM-E", "all")
        le, elmf = cell_stat(report, code, "L-E", "all"), cell_stat(report, code, "ELM-F", "all")
        if lf is not None and elme is not None:
            report.checks[f"lf_beats_elme_{code}"] = lf > elme
        if None not in (lf, elme, le, elmf):
            report.checks[f"feature_margin_smaller_{code}"] = (elmf - lf) < (elme - le)


def _valid_counts(frames: Sequence[RecordingFrames]) -> np.ndarray:
    return np.array([len(f.event_frames) for f in frames])


def run_frame_balanced(cfg: ExperimentConfig, recordings: Sequence[Recording], class_names: Sequence[str],
                       counts: Optional[Sequence[int]] = None) -> Report:
    """Train on n random frames per recording; recordings with fewer than n valid frames are excluded."""
    counts = sorted(counts or cfg.frame_counts)
    labels = require_all_classes(recordings, class_names)
    report = Report("frame_balanced", cfg.to_dict(), list(class_names))
    report.extras["frame_counts"] = counts

    for surface in cfg.surface_configs():
        code = surface.code
        event_frames = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, workers=cfg.workers)
        _dataset_extras(report, code, event_frames, cfg)
        valid = _valid_counts(event_frames)
        for n in counts:
            short = [event_frames[i].recording_id for i in np.flatnonzero(valid < n)]
            if short:
                logger.warning(f"{code}: {len(short)} recordings have fewer than {n} valid frames and are excluded")
            report.extras.setdefault("excluded", {}).setdefault(code, {})[str(n)] = short

        for trial in range(cfg.trials):
            seed = trial_seed(cfg.split_seed, trial)
            train_idx, test_idx = stratified_split(labels, seed)
            frames_by_mode = {"E": event_frames}
            if "F" in cfg.modes():
                network = feature_network(cfg.features, [recordings[i] for i in train_idx], surface, cfg.skan,
                                          derive_seed(cfg.skan_seed, trial), cfg.train_per_class)
                frames_by_mode["F"] = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, network,
                                                           with_events=False, workers=cfg.workers)
            for n in counts:
                train_n = [i for i in train_idx if valid[i] >= n]
                test_n = [i for i in test_idx if valid[i] >= n]
                if not train_n or not test_n:
                    logger.warning(f"{code}: no eligible recordings for n = {n}, skipping")
                    continue
                pick = partial(_random_frames, n=n)
                for kind in cfg.classifiers:
                    for mode in cfg.modes():
                        result = run_arm(kind, mode, frames_by_mode[mode], train_n, test_n, cfg,
                                         len(class_names), derive_seed(seed, n), train_select=pick)
                        record_trial(report, code, arm_name(kind, mode), f"n={n}", trial, seed, result)
            logger.info(f"{code} trial {trial + 1}/{cfg.trials} done")

    finalize(report)
    _balanced_checks(report, counts)
    return report


def _random_frames(frames: List[FeatureFrame], rng: np.random.Generator, n: int) -> List[FeatureFrame]:
    picked = np.sort(rng.choice(len(frames), size=n, replace=False))
    return [frames[k] for k in picked]


def _balanced_checks(report: Report, counts: Sequence[int]) -> None:
    for code in sorted(report.results):
        for arm in sorted(report.results[code]):
            frame_medians = [cell_stat(report, code, arm, f"n={n}") for n in counts]
            drop_medians = [cell_stat(report, code, arm, f"n={n}", "drop_accuracy") for n in counts]
            present = [(f, d) for f, d in zip(frame_medians, drop_medians) if f is not None]
            if len(present) > 1:
                series = [f for f, _ in present]
                report.checks[f"nondecreasing_in_n_{code}_{arm}"] = all(a <= b for a, b in zip(series, series[1:]))
            if present:
                report.checks[f"drop_geq_frame_{code}_{arm}"] = all(d >= f for f, d in present)


def velocity_halves(velocities: Dict[int, float], labels: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Per class, the slower half and the faster half of recordings (odd middle recording left out)."""
    slow, fast = [], []
    labels = np.asarray(labels)
    for label in np.unique(labels):
        members = sorted((velocities[i], i) for i in np.flatnonzero(labels == label) if i in velocities)
        half = len(members) // 2
        slow.extend(i for _, i in members[:half])
        fast.extend(i for _, i in members[len(members) - half:])
    return sorted(slow), sorted(fast)


def run_velocity_segregated(cfg: ExperimentConfig, recordings: Sequence[Recording], class_names: Sequence[str],
                            counts: Optional[Sequence[int]] = None) -> Report:
    """
    Train on the first n frames of slow recordings, test on the last n frames of fast ones.

    Velocities come from the tracker on the first configured surface so
    every surface shares one slow/fast split.
    """
    counts = sorted(counts or cfg.frame_counts)
    labels = require_all_classes(recordings, class_names)
    report = Report("velocity_segregated", cfg.to_dict(), list(class_names))
    surfaces = cfg.surface_configs()

    event_frames = {s.code: build_dataset_frames(recordings, s, cfg.tracker, cfg.pool, workers=cfg.workers)
                    for s in surfaces}
    reference = event_frames[surfaces[0].code]
    velocities = {}
    for i, f in enumerate(reference):
        v = f.velocity(cfg.tracker.velocity_half_window)
        if v is None:
            logger.warning(f"Excluding {f.recording_id}: midpoint velocity undefined")
        else:
            velocities[i] = v
    slow, fast = velocity_halves(velocities, labels)
    report.extras["velocities"] = {reference[i].recording_id: v for i, v in sorted(velocities.items())}
    report.extras["slow"] = [reference[i].recording_id for i in slow]
    report.extras["fast"] = [reference[i].recording_id for i in fast]
    for code, frames in event_frames.items():
        _dataset_extras(report, code, frames, cfg)

    slow_labels = labels[slow]
    for trial in range(cfg.trials):
        seed = trial_seed(cfg.split_seed, trial)
        sub_train, _ = stratified_split(slow_labels, seed, SLOW_TRAIN_FRACTION)
        train_idx = [slow[k] for k in sub_train]
        for surface in surfaces:
            code = surface.code
            frames_by_mode = {"E": event_frames[code]}
            if "F" in cfg.modes():
                network = feature_network(cfg.features, [recordings[i] for i in train_idx], surface, cfg.skan,
                                          derive_seed(cfg.skan_seed, trial), cfg.train_per_class)
                frames_by_mode["F"] = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, network,
                                                           with_events=False, workers=cfg.workers)
            valid = _valid_counts(event_frames[code])
            for n in counts:
                train_n = [i for i in train_idx if valid[i] >= n]
                test_n = [i for i in fast if valid[i] >= n]
                if not train_n or not test_n:
                    logger.warning(f"{code}: no eligible recordings for n = {n}, skipping")
                    continue
                for kind in cfg.classifiers:
                    for mode in cfg.modes():
                        result = run_arm(kind, mode, frames_by_mode[mode], train_n, test_n, cfg, len(class_names),
                                         derive_seed(seed, n), train_select=partial(_first_frames, n=n),
                                         test_select=partial(_last_frames, n=n))
                        record_trial(report, code, arm_name(kind, mode), f"n={n}", trial, seed, result)
        logger.info(f"Trial {trial + 1}/{cfg.trials} done")

    finalize(report)
    _velocity_checks(report, counts)
    return report


def _first_frames(frames: List[FeatureFrame], rng: np.random.Generator, n: int) -> List[FeatureFrame]:
    return frames[:n]


def _last_frames(frames: List[FeatureFrame], rng: np.random.Generator, n: int) -> List[FeatureFrame]:
    return frames[-n:]


def _velocity_checks(report: Report, counts: Sequence[int]) -> None:
    for kernel in Kernel:
        index_code = SurfaceConfig(decay_basis=DecayBasis.INDEX, kernel=kernel).code
        time_code = SurfaceConfig(decay_basis=DecayBasis.TIME, kernel=kernel).code
        if index_code not in report.results or time_code not in report.results:
            continue
        for arm in sorted(report.results[index_code]):
            for n in counts:
                a = cell_stat(report, index_code, arm, f"n={n}")
                b = cell_stat(report, time_code, arm, f"n={n}")
                if a is not None and b is not None:
                    report.checks[f"{index_code}_beats_{time_code}_{arm}_n{n}"] = a > b


def run_feature_sweep(cfg: ExperimentConfig, recordings: Sequence[Recording], class_names: Sequence[str],
                      sizes: Optional[Sequence[int]] = None, counts: Optional[Sequence[int]] = None) -> Report:
    """Linear classifier on learnt and random feature surfaces over a (size, count) grid, plus the L-E baseline."""
    sizes = list(sizes or cfg.feature_sizes)
    counts = list(counts or cfg.feature_counts)
    if not counts:
        raise ConfigError("Feature sweep needs at least one feature count")
    skans = {(size, count): cfg.skan.with_(patch_size=size, features=count) for size in sizes for count in counts}
    labels = require_all_classes(recordings, class_names)
    report = Report("feature_sweep", cfg.to_dict(), list(class_names))
    report.extras.update({"feature_sizes": sizes, "feature_counts": counts})

    surface = cfg.surface_configs()[0]
    code = surface.code
    event_frames = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, workers=cfg.workers)
    _dataset_extras(report, code, event_frames, cfg)

    for trial in range(cfg.trials):
        seed = trial_seed(cfg.split_seed, trial)
        train_idx, test_idx = stratified_split(labels, seed)
        training = [recordings[i] for i in train_idx]
        baseline = run_arm("linear", "E", event_frames, train_idx, test_idx, cfg, len(class_names), seed)
        record_trial(report, code, "L-E", "baseline", trial, seed, baseline)
        for (size, count), skan in skans.items():
            for kind in ("learnt", "random"):
                network = feature_network(kind, training, surface, skan, derive_seed(cfg.skan_seed, trial),
                                          cfg.train_per_class)
                frames = build_dataset_frames(recordings, surface, cfg.tracker, cfg.pool, network,
                                              with_events=False, workers=cfg.workers)
                result = run_arm("linear", "F", frames, train_idx, test_idx, cfg, len(class_names), seed)
                record_trial(report, code, f"L-F-{kind}", f"R{size}xK{count}", trial, seed, result)
        logger.info(f"Sweep trial {trial + 1}/{cfg.trials} done")

    finalize(report)
    _sweep_checks(report, code, sizes, counts)
    return report


def _sweep_checks(report: Report, code: str, sizes: Sequence[int], counts: Sequence[int]) -> None:
    for size in sizes:
        for count in counts:
            cell = f"R{size}xK{count}"
            learnt = cell_stat(report, code, "L-F-learnt", cell, stat="mean")
            random = cell_stat(report, code, "L-F-random", cell, stat="mean")
            if learnt is not None and random is not None:
                report.checks[f"learnt_geq_random_{cell}"] = learnt >= random
    if 1 in counts and 25 in counts and len(sizes) > 1:
        def spread(count):
            means = [cell_stat(report, code, "L-F-learnt", f"R{s}xK{count}", stat="mean") for s in sizes]
            means = [m for m in means if m is not None]
            return max(means) - min(means) if means else None
        few, many = spread(1), spread(25)
        if few is not None and many is not None:
            report.checks["size_matters_less_with_one_feature"] = few < many


RUNNERS = {
    "full": run_full,
    "frame_balanced": run_frame_balanced,
    "velocity_segregated": run_velocity_segregated,
    "feature_sweep": run_feature_sweep,
}


def prepare_dataset(cfg: ExperimentConfig) -> Tuple[ExperimentConfig, List[Recording], List[str]]:
    """Load the dataset and, when enabled, calibrate n_e to its mean event rate."""
    if not cfg.dataset:
        raise ConfigError("DATASET is not set")
    recordings, class_names = load_dataset(cfg.dataset, cfg.surface.dims, cfg.timestamp_mode)
    if not recordings:
        raise DataError(f"No recordings found under {cfg.dataset}")
    if cfg.auto_calibrate_n_e:
        n_e = calibrate_index_constant([r.on_events() for r in recordings], cfg.surface.tau_e)
        cfg.surface = cfg.surface.with_(n_e=n_e)
    return cfg, recordings, class_names


def run_protocol(cfg: ExperimentConfig, protocol: Optional[str] = None) -> Report:
    protocol = protocol or cfg.protocol
    if protocol not in RUNNERS:
        raise ConfigError(f"Unknown protocol '{protocol}' (expected one of {', '.join(PROTOCOLS)})")
    cfg.protocol = protocol
    cfg, recordings, class_names = prepare_dataset(cfg)
    logger.info(f"Running {protocol} on {len(recordings)} recordings, {len(class_names)} classes, "
                f"{cfg.trials} trials")
    report = RUNNERS[protocol](cfg, recordings, class_names)
    report.extras["n_e"] = cfg.surface.n_e
    return report
