"""
AER Event Recordings - 5-byte N-MNIST/ATIS format
=================================================

Bit-exact decoding/encoding of event recordings, stream iteration and
left-right flip augmentation. Each event is one 5-byte word:

    byte0      x address
    byte1      y address
    byte2 b7   polarity (1 -> ON/+1, 0 -> OFF/-1)
    byte2 b6..0, byte3, byte4   timestamp in microseconds (23 bits, big-endian)

Datasets live on disk as ``<class_name>/<recording_id>.bin``.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import SENSOR_HEIGHT, SENSOR_WIDTH, TIMESTAMP_MODE
from .errors import (
    DataError,
    EncodeError,
    MalformedFileError,
    OutOfRangeError,
    TimestampOrderError,
)

logger = logging.getLogger(__name__)

WORD_BYTES = 5
MAX_TIMESTAMP = (1 << 23) - 1
MAX_ADDRESS = 255
DEFAULT_DIMS = (SENSOR_WIDTH, SENSOR_HEIGHT)


@dataclass(frozen=True)
class Event:
    """One camera event: address, time in microseconds, polarity and global index"""

    x: int
    y: int
    t: int
    p: int
    i: int


@dataclass(eq=False)
class Recording:
    """
    An ordered event stream stored column-wise.

    The global index of an event is its position in the arrays, so indices
    are always dense (0, 1, 2, ...).
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor_dims: Tuple[int, int] = DEFAULT_DIMS
    label: Optional[int] = None
    recording_id: str = ""
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int32)
        self.y = np.asarray(self.y, dtype=np.int32)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        self.sensor_dims = (int(self.sensor_dims[0]), int(self.sensor_dims[1]))
        if not (len(self.x) == len(self.y) == len(self.t) == len(self.p)):
            raise DataError("Event columns must have equal length")

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __iter__(self) -> Iterator[Event]:
        return iter_events(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.sensor_dims == other.sensor_dims
            and self.label == other.label
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    @property
    def events(self) -> List[Event]:
        return list(iter_events(self))

    def event(self, index: int) -> Event:
        return Event(int(self.x[index]), int(self.y[index]), int(self.t[index]), int(self.p[index]), int(index))

    @property
    def span_us(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.t[-1] - self.t[0])

    @property
    def mean_rate(self) -> float:
        """Events per microsecond over the recording span (0 for degenerate spans)"""
        if len(self) < 2 or self.span_us == 0:
            return 0.0
        return len(self) / self.span_us

    def with_columns(self, **columns) -> "Recording":
        values = dict(x=self.x, y=self.y, t=self.t, p=self.p)
        values.update(columns)
        return Recording(
            sensor_dims=self.sensor_dims,
            label=self.label,
            recording_id=self.recording_id,
            meta=dict(self.meta),
            **values,
        )

    def select(self, mask: np.ndarray) -> "Recording":
        """Keep events where mask is true; indices are re-assigned densely."""
        return self.with_columns(x=self.x[mask], y=self.y[mask], t=self.t[mask], p=self.p[mask])

    def on_events(self) -> "Recording":
        """ON-polarity sub-stream used by the standard pipeline."""
        return self.select(self.p > 0)

    @classmethod
    def empty(cls, sensor_dims=DEFAULT_DIMS, label=None, recording_id="", meta=None) -> "Recording":
        return cls(
            x=np.zeros(0, np.int32),
            y=np.zeros(0, np.int32),
            t=np.zeros(0, np.int64),
            p=np.zeros(0, np.int8),
            sensor_dims=sensor_dims,
            label=label,
            recording_id=recording_id,
            meta=meta or {},
        )

    @classmethod
    def from_events(cls, events: Sequence[Event], sensor_dims=DEFAULT_DIMS, label=None, recording_id="") -> "Recording":
        if not events:
            return cls.empty(sensor_dims, label, recording_id)
        return cls(
            x=[e.x for e in events],
            y=[e.y for e in events],
            t=[e.t for e in events],
            p=[e.p for e in events],
            sensor_dims=sensor_dims,
            label=label,
            recording_id=recording_id,
        )


def iter_events(recording: Recording) -> Iterator[Event]:
    """Yield events in stream order."""
    xs, ys, ts, ps = (recording.x.tolist(), recording.y.tolist(), recording.t.tolist(), recording.p.tolist())
    for i, (x, y, t, p) in enumerate(zip(xs, ys, ts, ps)):
        yield Event(x, y, t, p, i)


def decode_events(
    data: bytes,
    sensor_dims: Tuple[int, int] = DEFAULT_DIMS,
    timestamp_mode: str = TIMESTAMP_MODE,
    label: Optional[int] = None,
    recording_id: str = "",
) -> Recording:
    """
    Decode a 5-byte-per-event AER buffer.

    Args:
        data: raw file contents
        sensor_dims: (width, height) addresses must fall inside
        timestamp_mode: 'reject' raises on decreasing timestamps, 'clamp' repairs them
        label: class id to attach

    Returns:
        Recording with indices 0..N-1 in file order
    """
    if len(data) % WORD_BYTES:
        raise MalformedFileError(
            f"AER buffer length {len(data)} is not a multiple of {WORD_BYTES} bytes"
        )

    words = np.frombuffer(data, dtype=np.uint8).reshape(-1, WORD_BYTES)
    x = words[:, 0].astype(np.int32)
    y = words[:, 1].astype(np.int32)
    p = np.where(words[:, 2] & 0x80, 1, -1).astype(np.int8)
    t = (
        ((words[:, 2] & 0x7F).astype(np.int64) << 16)
        | (words[:, 3].astype(np.int64) << 8)
        | words[:, 4].astype(np.int64)
    )

    width, height = sensor_dims
    bad = (x >= width) | (y >= height)
    if bad.any():
        k = int(np.argmax(bad))
        raise OutOfRangeError(
            f"Event {k} address ({x[k]}, {y[k]}) outside sensor {width}x{height}", offset=k * WORD_BYTES
        )

    regress = np.diff(t) < 0
    if regress.any():
        if timestamp_mode == "clamp":
            logger.warning(f"Clamping {int(regress.sum())} non-monotone timestamps")
            t = np.maximum.accumulate(t)
        else:
            k = int(np.argmax(regress)) + 1
            raise TimestampOrderError(
                f"Timestamp decreases at event {k} ({t[k - 1]} -> {t[k]}), byte offset {k * WORD_BYTES}"
            )

    return Recording(x=x, y=y, t=t, p=p, sensor_dims=sensor_dims, label=label, recording_id=recording_id)


def encode_events(recording: Recording) -> bytes:
    """Exact inverse of decode_events; refuses values that do not fit the word."""
    if len(recording) == 0:
        return b""

    if recording.t.min() < 0 or recording.t.max() > MAX_TIMESTAMP:
        raise EncodeError(f"Timestamps must fit in 23 bits (0..{MAX_TIMESTAMP})")
    if recording.x.min() < 0 or recording.x.max() > MAX_ADDRESS or recording.y.min() < 0 or recording.y.max() > MAX_ADDRESS:
        raise EncodeError("Addresses must fit in 8 bits (0..255)")
    if not np.isin(recording.p, (-1, 1)).all():
        raise EncodeError("Polarity must be -1 or +1")

    t = recording.t
    words = np.empty((len(recording), WORD_BYTES), dtype=np.uint8)
    words[:, 0] = recording.x
    words[:, 1] = recording.y
    words[:, 2] = ((t >> 16) & 0x7F) | np.where(recording.p > 0, 0x80, 0)
    words[:, 3] = (t >> 8) & 0xFF
    words[:, 4] = t & 0xFF
    return words.tobytes()


def flip_horizontal(recording: Recording) -> Recording:
    """Left-right mirror: x -> width - 1 - x; everything else unchanged."""
    width = recording.sensor_dims[0]
    flipped = recording.with_columns(x=width - 1 - recording.x)
    flipped.recording_id = f"{recording.recording_id}~flip" if recording.recording_id else ""
    flipped.meta["flipped"] = not recording.meta.get("flipped", False)
    return flipped


# =============================================================================
# FILES AND DATASET DIRECTORIES
# =============================================================================
def read_recording(path, sensor_dims=DEFAULT_DIMS, label=None, timestamp_mode=TIMESTAMP_MODE) -> Recording:
    path = Path(path)
    recording = decode_events(path.read_bytes(), sensor_dims, timestamp_mode, label)
    recording.recording_id = f"{path.parent.name}/{path.stem}"
    recording.meta["source"] = str(path)
    return recording


def write_recording(path, recording: Recording) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_events(recording))


def load_dataset(root, sensor_dims=DEFAULT_DIMS, timestamp_mode=TIMESTAMP_MODE) -> Tuple[List[Recording], List[str]]:
    """
    Load every ``<class_name>/<recording_id>.bin`` under root.

    Returns:
        (recordings, class_names); labels index into the sorted class names
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"Dataset directory not found: {root}")

    class_names = sorted(d.name for d in root.iterdir() if d.is_dir())
    recordings = []
    for label, name in enumerate(class_names):
        for path in sorted((root / name).glob("*.bin")):
            recordings.append(read_recording(path, sensor_dims, label, timestamp_mode))

    logger.info(f"Loaded {len(recordings)} recordings in {len(class_names)} classes from {root}")
    return recordings, class_names


def save_dataset(root, recordings: Sequence[Recording], class_names: Sequence[str]) -> List[Path]:
    root = Path(root)
    paths = []
    for k, recording in enumerate(recordings):
        name = class_names[recording.label] if recording.label is not None else "unlabelled"
        stem = recording.recording_id.split("/")[-1] if recording.recording_id else f"{k:05d}"
        path = root / name / f"{stem}.bin"
        write_recording(path, recording)
        paths.append(path)
    return paths
