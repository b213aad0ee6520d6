"""
Recording -> Frames Pipeline
============================

One pass per recording: absorb ON events into the event surface, optionally
run frozen SKAN inference into a bank of feature surfaces, track the target
and pool both surface kinds over the tracked box at every frame instant.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .aer_io import Recording
from .config import WORKERS
from .errors import UndefinedVelocityError
from .pooling import FeatureFrame, PoolConfig, pool_frame
from .skan import SkanNetwork, extract_feature_event
from .surfaces import MemorySurface, SurfaceConfig
from .tracker import TrackState, TrackerConfig, detect_target, frame_schedule, midpoint_velocity, query_instant

logger = logging.getLogger(__name__)


@dataclass
class RecordingFrames:
    """Valid frames of one recording; frames with no detection are counted, not kept."""

    recording_id: str
    label: Optional[int]
    event_frames: List[FeatureFrame] = field(default_factory=list)
    feature_frames: List[FeatureFrame] = field(default_factory=list)
    states: List[TrackState] = field(default_factory=list)
    span: Tuple[int, int] = (0, 0)
    feature_event_count: int = 0
    input_event_count: int = 0

    @property
    def total(self) -> int:
        return len(self.states)

    @property
    def dropped(self) -> int:
        return sum(1 for s in self.states if not s.valid)

    def frames(self, mode: str) -> List[FeatureFrame]:
        return self.event_frames if mode == "E" else self.feature_frames

    def velocity(self, half_window: int) -> Optional[float]:
        try:
            return midpoint_velocity(self.states, self.span, half_window)
        except UndefinedVelocityError:
            return None


def build_frames(recording: Recording, surface_config: SurfaceConfig, tracker_config: TrackerConfig,
                 pool_config: PoolConfig = PoolConfig(), network: Optional[SkanNetwork] = None,
                 with_events: bool = True) -> RecordingFrames:
    """
    Frames of one recording on the tracker's time grid.

    Args:
        network: frozen SKAN network; when given, feature frames are pooled from K feature surfaces
        with_events: also pool the raw event surface (E frames)
    """
    on = recording.on_events()
    result = RecordingFrames(recording.recording_id, recording.label, input_event_count=len(on))
    if len(on) == 0:
        return result
    result.span = (int(on.t[0]), int(on.t[-1]))

    surface = MemorySurface(surface_config)
    bank = MemorySurface(surface_config, channels=network.K) if network is not None else None
    xs, ys, ts = on.x.tolist(), on.y.tolist(), on.t.tolist()

    k = 0
    for frame_index, (instant, last) in enumerate(frame_schedule(on, tracker_config.sample_interval)):
        while k <= last:
            surface.absorb_at(xs[k], ys[k], ts[k], 1)
            if bank is not None:
                feature = extract_feature_event(on.event(k), surface, network)
                if feature is not None:
                    bank.absorb_at(feature.x, feature.y, feature.t, 1, channel=feature.feature_id)
            k += 1

        now = query_instant(surface, instant)
        bbox, midpoint = detect_target(surface, now, tracker_config)
        result.states.append(TrackState(instant, bbox, midpoint, last, surface.total_activation(now)))
        if bbox is None:
            continue
        if with_events:
            vector = pool_frame(surface, bbox, now, pool_config)
            result.event_frames.append(FeatureFrame(vector, recording.label, recording.recording_id,
                                                    frame_index, instant, last))
        if bank is not None:
            vector = pool_frame(bank, bbox, query_instant(bank, instant), pool_config)
            result.feature_frames.append(FeatureFrame(vector, recording.label, recording.recording_id,
                                                      frame_index, instant, last))
    if bank is not None:
        result.feature_event_count = bank.event_count
    return result


def build_dataset_frames(recordings: Sequence[Recording], surface_config: SurfaceConfig,
                         tracker_config: TrackerConfig, pool_config: PoolConfig = PoolConfig(),
                         network: Optional[SkanNetwork] = None, with_events: bool = True,
                         workers: int = WORKERS) -> List[RecordingFrames]:
    """build_frames over a dataset, in input order; recordings run in parallel when workers > 1."""
    job = partial(build_frames, surface_config=surface_config, tracker_config=tracker_config,
                  pool_config=pool_config, network=network, with_events=with_events)
    if workers > 1 and len(recordings) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, recordings, chunksize=max(1, len(recordings) // (4 * workers))))
    else:
        results = [job(recording) for recording in recordings]

    total = sum(r.total for r in results)
    dropped = sum(r.dropped for r in results)
    logger.info(f"{surface_config.code}: {total - dropped} valid frames from {len(results)} recordings "
                f"({dropped} frames without a detection dropped)")
    return results


def stack_frames(frames: Sequence[FeatureFrame]) -> np.ndarray:
    return np.stack([f.vector for f in frames]) if frames else np.zeros((0, 0))
