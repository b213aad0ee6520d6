import os
from typing import Dict, Iterable, Optional

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError


load_dotenv()


# Every knob the pipeline understands, with its default as it would appear
# in a .env file. Experiment files and --set overrides may only use these keys.
DEFAULTS: Dict[str, str] = {
    # sensor / files
    "SENSOR_WIDTH": "304",
    "SENSOR_HEIGHT": "240",
    "TIMESTAMP_MODE": "reject",
    # surfaces
    "SURFACE_BASIS": "INDEX",
    "SURFACE_KERNEL": "EXP",
    "TAU_E_US": "3000",
    "N_E": "554",
    "AUTO_CALIBRATE_N_E": "true",
    "SURFACES": "BTS,LTS,ETS,BIS,LIS,EIS",
    # tracker
    "TRACKER_SMOOTHING_WINDOW": "8",
    "TRACKER_THRESHOLD": "0.1",
    "SAMPLE_INTERVAL_US": "3000",
    "VELOCITY_HALF_WINDOW_US": "10000",
    "ACTIVATION_WINDOW_US": "50000",
    # skan
    "SKAN_FEATURES": "25",
    "SKAN_PATCH_SIZE": "13",
    "SKAN_PEAK": "1.0",
    "SKAN_W_MIN": "2",
    "SKAN_W_MAX": "256",
    "SKAN_DW": "1",
    "SKAN_THETA_UP": "0.05",
    "SKAN_THETA_DOWN_FRACTION": "0.001",
    "SKAN_THETA_INIT_FRACTION": "0.3",
    "SKAN_T_MAX": "512",
    "SKAN_SEED": "0",
    "SKAN_TRAIN_PER_CLASS": "50",
    "FEATURES": "learnt",
    # pooling / classifiers
    "RESAMPLE_LEN": "72",
    "NORMALIZE_FRAMES": "true",
    "CLASSIFIERS": "linear,elm",
    "ELM_HIDDEN": "2000",
    "ELM_SEED": "0",
    "LAMBDA_GRID": "0.001,0.01,0.1,1,10,100",
    "VALIDATION_FRACTION": "0.2",
    # synthetic data
    "SYNTH_CLASSES": "4",
    "SYNTH_RECORDINGS_PER_CLASS": "100",
    "SYNTH_JITTER_US": "200",
    "SYNTH_NOISE_RATE": "0",
    "SYNTH_MICRO_STEP_US": "100",
    "SYNTH_SEED": "0",
    # experiment
    "DATASET": "",
    "PROTOCOL": "full",
    "TRIALS": "20",
    "SPLIT_SEED": "0",
    "FRAME_COUNTS": "1,2,4,8,16,32",
    "FEATURE_SIZES": "3,5,9,13,17",
    "FEATURE_COUNTS": "1,5,10,25,50",
    "OUTPUT_DIR": "./reports",
    # performance
    "WORKERS": "1",
    "BENCH_WARMUP_RECORDINGS": "1",
    # development
    "DEBUG_MODE": "false",
    "VERBOSE_LOGGING": "false",
}


def _env(name: str) -> str:
    return os.getenv(name, DEFAULTS[name])


def _flag(name: str) -> bool:
    return _env(name).lower() == "true"


# =============================================================================
# SENSOR CONFIGURATION
# =============================================================================
SENSOR_WIDTH = int(_env("SENSOR_WIDTH"))
SENSOR_HEIGHT = int(_env("SENSOR_HEIGHT"))
TIMESTAMP_MODE = _env("TIMESTAMP_MODE").lower()


# =============================================================================
# MEMORY SURFACE CONFIGURATION
# =============================================================================
SURFACE_BASIS = _env("SURFACE_BASIS").upper()
SURFACE_KERNEL = _env("SURFACE_KERNEL").upper()
TAU_E_US = float(_env("TAU_E_US"))
N_E = float(_env("N_E"))
AUTO_CALIBRATE_N_E = _flag("AUTO_CALIBRATE_N_E")


# =============================================================================
# TRACKER CONFIGURATION
# =============================================================================
TRACKER_SMOOTHING_WINDOW = int(_env("TRACKER_SMOOTHING_WINDOW"))
TRACKER_THRESHOLD = float(_env("TRACKER_THRESHOLD"))
SAMPLE_INTERVAL_US = int(_env("SAMPLE_INTERVAL_US"))
VELOCITY_HALF_WINDOW_US = int(_env("VELOCITY_HALF_WINDOW_US"))
ACTIVATION_WINDOW_US = int(_env("ACTIVATION_WINDOW_US"))


# =============================================================================
# SKAN FEATURE EXTRACTION CONFIGURATION
# =============================================================================
SKAN_FEATURES = int(_env("SKAN_FEATURES"))
SKAN_PATCH_SIZE = int(_env("SKAN_PATCH_SIZE"))
SKAN_PEAK = float(_env("SKAN_PEAK"))
SKAN_W_MIN = int(_env("SKAN_W_MIN"))
SKAN_W_MAX = int(_env("SKAN_W_MAX"))
SKAN_DW = int(_env("SKAN_DW"))
SKAN_THETA_UP = float(_env("SKAN_THETA_UP"))
SKAN_THETA_DOWN_FRACTION = float(_env("SKAN_THETA_DOWN_FRACTION"))
SKAN_THETA_INIT_FRACTION = float(_env("SKAN_THETA_INIT_FRACTION"))
SKAN_T_MAX = int(_env("SKAN_T_MAX"))
SKAN_SEED = int(_env("SKAN_SEED"))


# =============================================================================
# POOLING / CLASSIFIER CONFIGURATION
# =============================================================================
RESAMPLE_LEN = int(_env("RESAMPLE_LEN"))
NORMALIZE_FRAMES = _flag("NORMALIZE_FRAMES")
ELM_HIDDEN = int(_env("ELM_HIDDEN"))
ELM_SEED = int(_env("ELM_SEED"))


# =============================================================================
# SYNTHETIC DATA CONFIGURATION
# =============================================================================
SYNTH_JITTER_US = int(_env("SYNTH_JITTER_US"))
SYNTH_NOISE_RATE = float(_env("SYNTH_NOISE_RATE"))
SYNTH_MICRO_STEP_US = int(_env("SYNTH_MICRO_STEP_US"))


# =============================================================================
# PERFORMANCE SETTINGS
# =============================================================================
WORKERS = int(_env("WORKERS"))
BENCH_WARMUP_RECORDINGS = int(_env("BENCH_WARMUP_RECORDINGS"))


# =============================================================================
# DEVELOPMENT SETTINGS
# =============================================================================
DEBUG_MODE = _flag("DEBUG_MODE")
VERBOSE_LOGGING = _flag("VERBOSE_LOGGING")


# =============================================================================
# EXPERIMENT FILES
# =============================================================================
def load_settings(path: Optional[str] = None, overrides: Iterable[str] = ()) -> Dict[str, str]:
    """
    Merge defaults, environment, an experiment file and CLI overrides.

    Args:
        path: dotenv-format experiment file (KEY=VALUE lines), optional
        overrides: "KEY=VALUE" strings applied last

    Returns:
        Mapping of every known key to its raw string value
    """
    settings = {name: _env(name) for name in DEFAULTS}

    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Experiment file not found: {path}")
        for key, value in dotenv_values(path).items():
            if key not in DEFAULTS:
                raise ConfigError(f"Unknown setting '{key}' in {path}")
            settings[key] = "" if value is None else value

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override must look like KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        key = key.strip().upper()
        if key not in DEFAULTS:
            raise ConfigError(f"Unknown setting '{key}' in override")
        settings[key] = value.strip()

    return settings


def parse_int_list(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of integers, got '{text}'")


def parse_float_list(text: str) -> list:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of numbers, got '{text}'")


# =============================================================================
# CONFIGURATION VALIDATION
# =============================================================================
def validate_config(settings: Optional[Dict[str, str]] = None) -> bool:
    """Validate merged settings (module configuration when omitted); True if valid, False otherwise."""
    settings = settings or load_settings()
    errors = []

    def number(name, kind):
        try:
            return kind(settings[name])
        except ValueError:
            errors.append(f"{name} must be a number, got '{settings[name]}'")
            return None

    width, height = number("SENSOR_WIDTH", int), number("SENSOR_HEIGHT", int)
    if width is not None and width < 1:
        errors.append(f"SENSOR_WIDTH must be positive, got {width}")

    if height is not None and height < 1:
        errors.append(f"SENSOR_HEIGHT must be positive, got {height}")

    mode = settings["TIMESTAMP_MODE"].strip().lower()
    if mode not in ["reject", "clamp"]:
        errors.append(f"TIMESTAMP_MODE must be one of [reject, clamp], got {mode}")

    basis = settings["SURFACE_BASIS"].strip().upper()
    if basis not in ["TIME", "INDEX"]:
        errors.append(f"SURFACE_BASIS must be one of [TIME, INDEX], got {basis}")

    kernel = settings["SURFACE_KERNEL"].strip().upper()
    if kernel not in ["BIN", "LIN", "EXP"]:
        errors.append(f"SURFACE_KERNEL must be one of [BIN, LIN, EXP], got {kernel}")

    tau_e, n_e = number("TAU_E_US", float), number("N_E", float)
    if tau_e is not None and n_e is not None and (tau_e <= 0 or n_e <= 0):
        errors.append(f"TAU_E_US and N_E must be positive, got {tau_e} and {n_e}")

    window = number("TRACKER_SMOOTHING_WINDOW", int)
    if window is not None and window < 1:
        errors.append(f"TRACKER_SMOOTHING_WINDOW must be >= 1, got {window}")

    threshold = number("TRACKER_THRESHOLD", float)
    if threshold is not None and not (0.0 < threshold < 1.0):
        errors.append(f"TRACKER_THRESHOLD must be between 0 and 1, got {threshold}")

    patch = number("SKAN_PATCH_SIZE", int)
    if patch is not None and patch % 2 == 0:
        errors.append(f"SKAN_PATCH_SIZE must be odd, got {patch}")

    w_min, w_max = number("SKAN_W_MIN", int), number("SKAN_W_MAX", int)
    if w_min is not None and w_max is not None and not (1 <= w_min <= w_max):
        errors.append(f"SKAN_W_MIN/SKAN_W_MAX must satisfy 1 <= min <= max, got {w_min}/{w_max}")

    resample = number("RESAMPLE_LEN", int)
    if resample is not None and resample < 2:
        errors.append(f"RESAMPLE_LEN must be >= 2, got {resample}")

    micro_step = number("SYNTH_MICRO_STEP_US", int)
    if micro_step is not None and micro_step < 1:
        errors.append(f"SYNTH_MICRO_STEP_US must be >= 1, got {micro_step}")

    warmup = number("BENCH_WARMUP_RECORDINGS", int)
    if warmup is not None and warmup < 0:
        errors.append(f"BENCH_WARMUP_RECORDINGS must be >= 0, got {warmup}")

    workers = number("WORKERS", int)
    if workers is not None and workers < 1:
        errors.append(f"WORKERS must be >= 1, got {workers}")

    if errors:
        print("Configuration validation failed:")
        for error in errors:
            print(f"  - {error}")
        return False

    return True


def print_config_summary(settings: Optional[Dict[str, str]] = None):
    """Print a summary of the current configuration."""
    settings = settings or load_settings()
    print("=" * 60)
    print("EVENT MEMORY SURFACES - CONFIGURATION SUMMARY")
    print("=" * 60)

    print(f"Sensor: {settings['SENSOR_WIDTH']}x{settings['SENSOR_HEIGHT']}")
    print(f"Surface: {settings['SURFACE_KERNEL']} / {settings['SURFACE_BASIS']}")
    print(f"Time constant: {settings['TAU_E_US']} us")
    print(f"Index constant: {settings['N_E']} events (auto: {settings['AUTO_CALIBRATE_N_E']})")
    print(f"Tracker: window {settings['TRACKER_SMOOTHING_WINDOW']}, threshold {settings['TRACKER_THRESHOLD']}")
    print(f"SKAN: {settings['SKAN_FEATURES']} features, {settings['SKAN_PATCH_SIZE']}x{settings['SKAN_PATCH_SIZE']} patches")
    print(f"ELM hidden size: {settings['ELM_HIDDEN']}")
    print(f"Protocol: {settings['PROTOCOL']} x {settings['TRIALS']} trials")
    print(f"Workers: {settings['WORKERS']}")
    print(f"Debug Mode: {settings['DEBUG_MODE']}")
    print("=" * 60)
