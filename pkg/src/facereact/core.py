"""Spatiotemporal expression types and the operations shared by every responder.

A facial expression is a short window of 3-D keypoints over time.  The
canonical flat encoding of a T-frame, N_kp-keypoint sequence is a vector of
length D = T * N_kp * 3, ordered frame-major, then keypoint index, then
(x, y, z).  All fitted models, indices and file formats in this package
agree on that ordering; changing it silently breaks every serialized
artifact, so it is fixed here and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .exceptions import DimensionError

DEFAULT_N_KP = 146
DEFAULT_FPS = 30.0

# Full label set for the facial corpus; experiments typically use the
# three-emotion subset.
FULL_EMOTIONS = (
    "charming",
    "happy",
    "impressed",
    "neutral",
    "shocked",
    "surprised",
    "laughing",
)
CORE_EMOTIONS = ("happy", "laughing", "surprised")


class EmotionLabel(str):
    """Lower-cased emotion name, optionally validated against a closed set."""

    def __new__(cls, name: str, allowed: Optional[Iterable[str]] = None):
        norm = str(name).strip().lower()
        if allowed is not None:
            allowed_norm = {str(a).strip().lower() for a in allowed}
            if norm not in allowed_norm:
                raise ValueError(
                    f"unknown emotion {norm!r}; expected one of {sorted(allowed_norm)}"
                )
        return super().__new__(cls, norm)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"points must be (n_kp, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("keypoint coordinates must be finite")
    pts = pts.copy()
    pts.flags.writeable = False
    return pts


@dataclass(frozen=True)
class KeypointFrame:
    """One timestamped set of 3-D facial keypoints."""

    timestamp: float
    points: np.ndarray  # (n_kp, 3) float64, read-only

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        ts = float(self.timestamp)
        if not np.isfinite(ts) or ts < 0:
            raise ValueError(f"timestamp must be a non-negative real, got {ts}")
        object.__setattr__(self, "timestamp", ts)

    @property
    def n_kp(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KeypointFrame):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(
            self.points, other.points
        )

    def __hash__(self):
        return hash((self.timestamp, self.points.tobytes()))


@dataclass(frozen=True)
class ExpressionSequence:
    """An ordered run of keypoint frames: the universal currency of the engine.

    Immutable after construction; safe to share between threads.
    """

    frames: tuple[KeypointFrame, ...]
    fps: float = DEFAULT_FPS
    label: Optional[str] = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        n_kp = frames[0].n_kp
        for f in frames[1:]:
            if f.n_kp != n_kp:
                raise DimensionError(
                    f"all frames must share n_kp; got {f.n_kp} after {n_kp}"
                )
        ts = np.array([f.timestamp for f in frames])
        if np.any(np.diff(ts) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))
        if self.label is not None:
            object.__setattr__(self, "label", EmotionLabel(self.label))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_kp(self) -> int:
        return self.frames[0].n_kp

    @property
    def dim(self) -> int:
        """Length of the flat vector: T * n_kp * 3."""
        return len(self.frames) * self.n_kp * 3

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    def as_array(self) -> np.ndarray:
        """Coordinates as a (T, n_kp, 3) block."""
        return np.stack([f.points for f in self.frames])

    def with_coords(self, coords: np.ndarray, label: Optional[str] = None):
        """New sequence with the same timestamps/fps but replaced coordinates.

        ``coords`` may be flat (D,) or shaped (T, n_kp, 3).
        """
        arr = np.asarray(coords, dtype=np.float64)
        T, n_kp = len(self.frames), self.n_kp
        if arr.ndim == 1:
            if arr.size != self.dim:
                raise DimensionError(
                    f"flat coords must have length {self.dim}, got {arr.size}"
                )
            arr = arr.reshape(T, n_kp, 3)
        elif arr.shape != (T, n_kp, 3):
            raise DimensionError(
                f"coords must be ({T}, {n_kp}, 3), got {arr.shape}"
            )
        frames = tuple(
            KeypointFrame(f.timestamp, arr[i]) for i, f in enumerate(self.frames)
        )
        return replace(self, frames=frames, label=label)

    def __eq__(self, other):
        if not isinstance(other, ExpressionSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.label == other.label
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    def __hash__(self):
        return hash((self.fps, self.label, self.frames))


def flatten(seq: ExpressionSequence) -> np.ndarray:
    """Flatten to the canonical length-D vector (frame-major, keypoint, xyz)."""
    return seq.as_array().reshape(-1)


def unflatten(
    vec: np.ndarray,
    template: ExpressionSequence,
    label: Optional[str] = None,
) -> ExpressionSequence:
    """Inverse of :func:`flatten`; timestamps/fps are taken from ``template``."""
    return template.with_coords(np.asarray(vec, dtype=np.float64), label=label)


def window(
    stream: Iterable[KeypointFrame] | ExpressionSequence,
    size: int,
    stride: int,
    fps: float = DEFAULT_FPS,
    label: Optional[str] = None,
) -> list[ExpressionSequence]:
    """Cut a frame stream into complete windows of exactly ``size`` frames.

    Windows start at offsets 0, stride, 2*stride, ...; a trailing partial
    window is dropped.  Returns [] when the stream is shorter than ``size``.
    """
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be >= 1")
    if isinstance(stream, ExpressionSequence):
        fps = stream.fps
        label = stream.label if label is None else label
        frames = stream.frames
    else:
        frames = tuple(stream)
    out = []
    for start in range(0, len(frames) - size + 1, stride):
        out.append(
            ExpressionSequence(frames[start : start + size], fps=fps, label=label)
        )
    return out


def window_count(length: int, size: int, stride: int) -> int:
    """Number of complete windows in a stream of ``length`` frames."""
    if length < size:
        return 0
    return (length - size) // stride + 1


def subtract_mean_frame(
    seq: ExpressionSequence,
) -> tuple[ExpressionSequence, np.ndarray]:
    """Remove the temporal mean frame (static pose), preserving motion.

    Returns the centered sequence and the mean frame as a flat
    (n_kp * 3,) vector.  The temporal mean of the centered output is the
    zero frame.
    """
    arr = seq.as_array()
    mean_frame = arr.mean(axis=0)
    centered = seq.with_coords(arr - mean_frame, label=seq.label)
    return centered, mean_frame.reshape(-1)
