"""
SKAN Feature Extraction
=======================

Delay-coded patch encoding and a winner-take-all network of neurons with
adaptive triangular synaptic kernels and adaptive thresholds.

Each channel j of an R x R patch spikes at delay d_j (bright/recent values
first). Neuron k convolves that spike with a triangle of width w[k][j]
(rise over w steps to height h, fall over w steps) and sums over channels.
The first neuron whose soma reaches its threshold wins the pattern.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .aer_io import Event, Recording, flip_horizontal
from .config import (
    SKAN_DW,
    SKAN_FEATURES,
    SKAN_PATCH_SIZE,
    SKAN_PEAK,
    SKAN_SEED,
    SKAN_T_MAX,
    SKAN_THETA_DOWN_FRACTION,
    SKAN_THETA_INIT_FRACTION,
    SKAN_THETA_UP,
    SKAN_W_MAX,
    SKAN_W_MIN,
)
from .errors import ConfigError, DataError, DimensionMismatchError
from .surfaces import MemorySurface, SurfaceConfig

logger = logging.getLogger(__name__)

NETWORK_FORMAT_VERSION = 1
LEVELS = 255
MIN_THRESHOLD = 1e-9


@dataclass(frozen=True)
class SpikePattern:
    """Present channels (ascending) and their spike delays in 0..255."""

    channels: np.ndarray
    delays: np.ndarray
    size: int

    def __len__(self) -> int:
        return int(self.channels.size)

    @property
    def delay_map(self) -> dict:
        return dict(zip(self.channels.tolist(), self.delays.tolist()))


@dataclass(frozen=True)
class FeatureEvent:
    x: int
    y: int
    t: int
    i: int
    feature_id: int


@dataclass(frozen=True)
class SkanConfig:
    features: int = SKAN_FEATURES
    patch_size: int = SKAN_PATCH_SIZE
    peak: float = SKAN_PEAK
    w_min: int = SKAN_W_MIN
    w_max: int = SKAN_W_MAX
    dw: int = SKAN_DW
    theta_up: float = SKAN_THETA_UP
    theta_down_fraction: float = SKAN_THETA_DOWN_FRACTION
    theta_init_fraction: float = SKAN_THETA_INIT_FRACTION
    t_max: int = SKAN_T_MAX

    def __post_init__(self):
        if self.features < 1:
            raise ConfigError(f"SKAN needs at least one feature, got {self.features}")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError(f"Patch size must be odd and positive (patches are centered), got {self.patch_size}")
        if not (1 <= self.w_min <= self.w_max):
            raise ConfigError(f"Kernel width bounds must satisfy 1 <= w_min <= w_max, got {self.w_min}..{self.w_max}")
        if self.t_max < 1:
            raise ConfigError(f"t_max must be positive, got {self.t_max}")

    @property
    def channels(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def theta_init(self) -> float:
        return self.theta_init_fraction * self.channels

    @property
    def theta_down(self) -> float:
        return self.theta_down_fraction * self.theta_init

    def with_(self, **changes) -> "SkanConfig":
        return replace(self, **changes)


class SkanNetwork:
    """K competing neurons; widths is (K, R*R) integer steps, thresholds is (K,)."""

    def __init__(self, config: SkanConfig, widths: np.ndarray, thresholds: np.ndarray,
                 learning_enabled: bool = True, seed: Optional[int] = None):
        widths = np.asarray(widths, dtype=np.int64)
        thresholds = np.asarray(thresholds, dtype=float)
        if widths.shape != (config.features, config.channels) or thresholds.shape != (config.features,):
            raise DimensionMismatchError(
                f"Expected widths {(config.features, config.channels)} and thresholds ({config.features},), "
                f"got {widths.shape} and {thresholds.shape}"
            )
        self.config = config
        self.widths = np.clip(widths, config.w_min, config.w_max)
        self.thresholds = np.maximum(thresholds, MIN_THRESHOLD)
        self.learning_enabled = learning_enabled
        self.seed = seed

    @classmethod
    def initial(cls, config: SkanConfig = SkanConfig(), seed: int = SKAN_SEED) -> "SkanNetwork":
        """Untrained network: widths uniform in [w_min, w_max], thresholds at theta_init."""
        rng = np.random.default_rng(seed)
        widths = rng.integers(config.w_min, config.w_max + 1, size=(config.features, config.channels))
        return cls(config, widths, np.full(config.features, config.theta_init), True, seed)

    @property
    def K(self) -> int:
        return self.config.features

    @property
    def R(self) -> int:
        return self.config.patch_size

    def copy(self) -> "SkanNetwork":
        return SkanNetwork(self.config, self.widths.copy(), self.thresholds.copy(), self.learning_enabled, self.seed)

    def frozen(self) -> "SkanNetwork":
        net = self.copy()
        net.learning_enabled = False
        return net

    def soma(self, pattern: SpikePattern) -> np.ndarray:
        """Soma potential of every neuron at steps 0..t_max-1, shape (K, t_max)."""
        K, T, h = self.K, self.config.t_max, self.config.peak
        if len(pattern) == 0:
            return np.zeros((K, T))
        w = self.widths[:, pattern.channels]
        d = np.broadcast_to(pattern.delays, w.shape)
        slope = h / w
        positions = np.concatenate([d, d + w, d + 2 * w], axis=1).clip(max=T)
        weights = np.concatenate([slope, -2.0 * slope, slope], axis=1)
        rows = np.repeat(np.arange(K), positions.shape[1])
        deltas = np.bincount(rows * (T + 1) + positions.ravel(), weights.ravel(), minlength=K * (T + 1))
        rate = np.cumsum(deltas.reshape(K, T + 1), axis=1)
        potential = np.concatenate([np.zeros((K, 1)), np.cumsum(rate, axis=1)], axis=1)
        return potential[:, :T]

    def fire(self, pattern: SpikePattern) -> Tuple[Optional[int], Optional[int], np.ndarray]:
        """(winner, firing step, soma); winner is None if no neuron reaches threshold."""
        potential = self.soma(pattern)
        above = potential >= self.thresholds[:, None]
        crossed = above.any(axis=1)
        if not crossed.any():
            return None, None, potential
        first = np.where(crossed, np.argmax(above, axis=1), np.iinfo(np.int64).max)
        winner = int(np.argmin(first))
        return winner, int(first[winner]), potential

    def to_dict(self) -> dict:
        return {
            "version": NETWORK_FORMAT_VERSION,
            "config": asdict(self.config),
            "widths": self.widths.tolist(),
            "thresholds": self.thresholds.tolist(),
            "learning_enabled": self.learning_enabled,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SkanNetwork":
        if data.get("version") != NETWORK_FORMAT_VERSION:
            raise DataError(f"Unsupported network format version {data.get('version')}")
        config = SkanConfig(**data["config"])
        return cls(config, np.array(data["widths"]), np.array(data["thresholds"]),
                   data.get("learning_enabled", False), data.get("seed"))


def encode_patch(patch: np.ndarray) -> SpikePattern:
    """
    Quantize surface values to q = round(255 v); q = 0 emits no spike, otherwise delay = 255 - q.

    Raises:
        DataError: if any value lies outside [0, 1]
    """
    values = np.asarray(patch, dtype=float).ravel()
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise DataError(f"Patch values must lie in [0, 1], got range [{values.min():.4g}, {values.max():.4g}]")
    q = np.rint(LEVELS * values).astype(np.int64)
    channels = np.flatnonzero(q > 0)
    return SpikePattern(channels=channels, delays=LEVELS - q[channels], size=values.size)


def skan_step(network: SkanNetwork, pattern: SpikePattern) -> Tuple[Optional[int], SkanNetwork]:
    """
    Present one pattern; adapt the network in place when learning is enabled.

    Returns:
        (winner feature id or None, the network)
    """
    if len(pattern) == 0:
        return None, network
    winner, t_fire, potential = network.fire(pattern)
    if not network.learning_enabled:
        return winner, network

    cfg = network.config
    losers = np.ones(network.K, dtype=bool)
    if winner is not None:
        losers[winner] = False
        row = network.widths[winner]
        current = row[pattern.channels]
        step = cfg.dw * np.sign(t_fire - pattern.delays - current)
        row[pattern.channels] = np.clip(current + step, cfg.w_min, cfg.w_max)
        peak = float(potential[winner].max())
        network.thresholds[winner] += cfg.theta_up * (peak - network.thresholds[winner])
    network.thresholds[losers] = np.maximum(network.thresholds[losers] - cfg.theta_down, MIN_THRESHOLD)
    return winner, network


def _patch_stream(recording: Recording, surface_config: SurfaceConfig, size: int):
    """Absorb ON events one by one and yield (event, patch around it)."""
    surface = MemorySurface(surface_config)
    for event in recording.on_events():
        surface.absorb(event)
        yield event, surface.extract_patch((event.x, event.y), size, surface.current_instant)


def training_stream(recordings: Sequence[Recording], augment_flip: bool = True) -> List[Recording]:
    stream = []
    for recording in recordings:
        stream.append(recording)
        if augment_flip:
            stream.append(flip_horizontal(recording))
    return stream


def train_features(recordings: Sequence[Recording], surface_config: SurfaceConfig, network: SkanNetwork,
                   augment_flip: bool = True) -> SkanNetwork:
    """
    One unsupervised pass over every ON event of the training recordings (and their mirror images).

    The network is adapted in place; learning is disabled afterwards.
    """
    if not network.learning_enabled:
        raise ConfigError("train_features needs a network with learning enabled")
    stream = training_stream(recordings, augment_flip)
    wins = np.zeros(network.K, dtype=np.int64)
    presented = 0
    for recording in stream:
        for _, patch in _patch_stream(recording, surface_config, network.R):
            winner, _ = skan_step(network, encode_patch(patch))
            presented += 1
            if winner is not None:
                wins[winner] += 1
    network.learning_enabled = False
    logger.info(f"Trained {network.K} features on {presented} events from {len(stream)} recordings "
                f"({int((wins > 0).sum())} features won at least once)")
    return network


def extract_feature_event(event: Event, event_surface: MemorySurface, network: SkanNetwork) -> Optional[FeatureEvent]:
    """Winner for the patch around an event that has just been absorbed; None if nothing fires."""
    patch = event_surface.extract_patch((event.x, event.y), network.R, event_surface.current_instant)
    pattern = encode_patch(patch)
    if len(pattern) == 0:
        return None
    winner, _, _ = network.fire(pattern)
    if winner is None:
        return None
    return FeatureEvent(event.x, event.y, event.t, event.i, winner)


def feature_events(recording: Recording, surface_config: SurfaceConfig, network: SkanNetwork) -> List[FeatureEvent]:
    """Frozen inference over the ON events of one recording."""
    out = []
    for event, patch in _patch_stream(recording, surface_config, network.R):
        pattern = encode_patch(patch)
        if len(pattern) == 0:
            continue
        winner, _, _ = network.fire(pattern)
        if winner is not None:
            out.append(FeatureEvent(event.x, event.y, event.t, event.i, winner))
    return out


def sample_patches(recordings: Sequence[Recording], surface_config: SurfaceConfig, size: int,
                   count: int = 1000, seed: int = 0) -> np.ndarray:
    """Up to count patches sampled uniformly (seeded) from the event streams, shape (n, size, size)."""
    rng = np.random.default_rng(seed)
    reservoir: List[np.ndarray] = []
    seen = 0
    for recording in recordings:
        for _, patch in _patch_stream(recording, surface_config, size):
            if len(reservoir) < count:
                reservoir.append(patch)
            else:
                slot = int(rng.integers(0, seen + 1))
                if slot < count:
                    reservoir[slot] = patch
            seen += 1
    if not reservoir:
        return np.zeros((0, size, size))
    return np.stack(reservoir)


def random_features(config: SkanConfig = SkanConfig(), seed: int = SKAN_SEED,
                    calibration_patches: Optional[np.ndarray] = None) -> SkanNetwork:
    """
    Frozen network with uniform random widths.

    Each threshold is the neuron's peak soma on the mean calibration patch,
    so every neuron can fire on typical input; theta_init without patches.
    """
    network = SkanNetwork.initial(config, seed)
    network.learning_enabled = False
    if calibration_patches is not None and len(calibration_patches):
        mean_patch = np.asarray(calibration_patches, dtype=float).mean(axis=0)
        peaks = network.soma(encode_patch(np.clip(mean_patch, 0.0, 1.0))).max(axis=1)
        network.thresholds = np.where(peaks > 0, peaks, config.theta_init)
    return network


def feature_set_distance(a: SkanNetwork, b: SkanNetwork) -> float:
    """Mean absolute width difference between best-matched features (Hungarian assignment)."""
    if a.widths.shape != b.widths.shape:
        raise DimensionMismatchError(f"Cannot compare feature sets {a.widths.shape} and {b.widths.shape}")
    cost = np.abs(a.widths[:, None, :] - b.widths[None, :, :]).mean(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def export_feature_maps(network: SkanNetwork) -> np.ndarray:
    """Kernel widths as K matrices of R x R."""
    return network.widths.reshape(network.K, network.R, network.R).copy()


def write_feature_maps_csv(path, network: SkanNetwork) -> None:
    maps = export_feature_maps(network)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["feature_id", "row"] + [f"c{j}" for j in range(network.R)])
        for k, matrix in enumerate(maps):
            for r, row in enumerate(matrix):
                writer.writerow([k, r, *row.tolist()])


def save_network(path, network: SkanNetwork) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(network.to_dict(), sort_keys=True))


def load_network(path) -> SkanNetwork:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Network file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"Network file {path} is not valid JSON: {e}")
    return SkanNetwork.from_dict(data)
