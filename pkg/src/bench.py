"""
Throughput Benchmark
====================

Events per second for three nested pipelines over a dataset:

    absorb          event surface updates only
    absorb_track    + tracker frames on the sample grid
    full            + frozen SKAN inference and pooling of E and F frames

The first warm-up recordings run once untimed.
"""

import logging
import platform
import time
from typing import Dict, Optional, Sequence

import psutil

from . import __version__
from .aer_io import Recording
from .config import BENCH_WARMUP_RECORDINGS, SKAN_SEED
from .errors import DataError
from .frames import build_frames
from .pooling import PoolConfig
from .skan import SkanConfig, SkanNetwork, random_features, sample_patches
from .surfaces import MemorySurface, SurfaceConfig, absorb_recording
from .tracker import TrackerConfig, track

logger = logging.getLogger(__name__)


def machine_metadata() -> Dict:
    memory = psutil.virtual_memory()
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "processor": platform.processor() or platform.machine(),
        "physical_cores": psutil.cpu_count(logical=False),
        "logical_cores": psutil.cpu_count(logical=True),
        "memory_gb": round(memory.total / 1e9, 2),
        "version": __version__,
    }


def _absorb(recording: Recording, surface_config: SurfaceConfig, **_) -> None:
    absorb_recording(MemorySurface(surface_config), recording)


def _absorb_track(recording: Recording, surface_config: SurfaceConfig, tracker_config: TrackerConfig, **_) -> None:
    track(recording, surface_config, tracker_config)


def _full(recording: Recording, surface_config: SurfaceConfig, tracker_config: TrackerConfig,
          pool_config: PoolConfig, network: SkanNetwork) -> None:
    build_frames(recording, surface_config, tracker_config, pool_config, network, with_events=True)


STAGES = {"absorb": _absorb, "absorb_track": _absorb_track, "full": _full}


def bench_throughput(recordings: Sequence[Recording], surface_config: SurfaceConfig,
                     tracker_config: TrackerConfig = TrackerConfig(), pool_config: PoolConfig = PoolConfig(),
                     network: Optional[SkanNetwork] = None, warmup: int = BENCH_WARMUP_RECORDINGS) -> Dict:
    """
    Wall-clock throughput of each pipeline stage on the ON events of recordings.

    Args:
        network: frozen SKAN network for the full stage (random features calibrated on
            the first recording when omitted)
        warmup: number of leading recordings run once, untimed, before measuring

    Returns:
        {"events": N, "throughput": {stage: events/s}, "seconds": {stage: s}, "machine": {...}}
    """
    streams = [r.on_events() for r in recordings]
    total = sum(len(s) for s in streams)
    if total == 0:
        raise DataError("Cannot benchmark a dataset without ON events")
    if network is None:
        skan = SkanConfig()
        network = random_features(skan, SKAN_SEED, sample_patches(streams[:1], surface_config, skan.patch_size))
    args = dict(surface_config=surface_config, tracker_config=tracker_config, pool_config=pool_config,
                network=network)

    for stream in streams[:warmup]:
        for stage in STAGES.values():
            stage(stream, **args)

    throughput, seconds = {}, {}
    for name, stage in STAGES.items():
        start = time.perf_counter()
        for stream in streams:
            stage(stream, **args)
        elapsed = max(time.perf_counter() - start, 1e-9)
        seconds[name] = elapsed
        throughput[name] = total / elapsed
        logger.info(f"{name}: {throughput[name]:,.0f} events/s over {total} events")

    return {
        "surface": surface_config.code,
        "events": total,
        "recordings": len(streams),
        "warmup": warmup,
        "throughput": throughput,
        "seconds": seconds,
        "machine": machine_metadata(),
    }
