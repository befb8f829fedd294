"""Real-time orchestration: buffer a frame stream into chunks and respond.

Chunking is tumbling (non-overlapping): every ``window`` accepted frames
form one chunk, the configured responder is invoked once, and the response
occupies the same time slots as the input.  Every method returns exactly
as many frames as it receives.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .core import ExpressionSequence, KeypointFrame, window as cut_windows
from .distill import StudentNetwork, respond_nn
from .exceptions import DimensionError, FaceReactError
from .pca import DEFAULT_SIGMA, ExpressionSpacePCA
from .retrieval import NearestReactionIndex
from .validation import as_rng

METHODS = ("mirror", "pca", "nn", "retrieval")


class MirrorResponder:
    """Identity responder: the reaction is the interaction itself."""

    method = "mirror"

    def __init__(self, window: int = 60):
        self.window = window
        self.n_kp = None  # any keypoint count

    def respond_chunk(self, chunk: ExpressionSequence, rng=None) -> ExpressionSequence:
        return chunk


class PCAResponder:
    method = "pca"

    def __init__(self, model: ExpressionSpacePCA, sigma: Optional[float] = None):
        self.model = model
        self.sigma = model.sigma if sigma is None else float(sigma)
        self.window = model.window_
        self.n_kp = model.n_kp_

    def respond_chunk(self, chunk, rng=None):
        return self.model.respond(chunk, sigma=self.sigma, rng=rng)


class StudentChunkResponder:
    method = "nn"

    def __init__(self, network: StudentNetwork, sigma: Optional[float] = None):
        self.network = network
        self.sigma = DEFAULT_SIGMA if sigma is None else float(sigma)
        self.window = network.window
        self.n_kp = network.n_kp

    def respond_chunk(self, chunk, rng=None):
        return respond_nn(self.network, chunk, sigma=self.sigma, rng=rng)


class RetrievalChunkResponder:
    method = "retrieval"

    def __init__(self, index: NearestReactionIndex):
        self.index = index
        self.window = index.window
        self.n_kp = index.n_kp_

    def respond_chunk(self, chunk, rng=None):
        return self.index.predict(chunk)


@dataclass
class ResponderConfig:
    """Which method to run, at which window, with which artifacts."""

    method: str
    window: Optional[int] = None  # None -> the method's natural window
    sigma: Optional[float] = None
    model_path: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method != "mirror" and not self.model_path:
            raise ValueError(f"method {self.method!r} requires model_path")

    def load(self):
        """Load artifacts and build the responder; validates the window."""
        if self.method == "mirror":
            responder = MirrorResponder(window=self.window or 60)
        elif self.method == "pca":
            responder = PCAResponder(
                ExpressionSpacePCA.load(self.model_path), sigma=self.sigma
            )
        elif self.method == "nn":
            responder = StudentChunkResponder(
                StudentNetwork.load(self.model_path), sigma=self.sigma
            )
        else:
            responder = RetrievalChunkResponder(
                NearestReactionIndex.load(self.model_path)
            )
        if self.window is not None and self.window != responder.window:
            raise DimensionError(
                f"window {self.window} does not match the {self.method} "
                f"responder's required {responder.window}"
            )
        return responder


def respond_chunk(responder, chunk: ExpressionSequence, rng=None) -> ExpressionSequence:
    """Dispatch one chunk; enforces the frame-count conservation contract."""
    if len(chunk) != responder.window:
        raise DimensionError(
            f"chunk has {len(chunk)} frames, responder needs {responder.window}"
        )
    if responder.n_kp is not None and chunk.n_kp != responder.n_kp:
        raise DimensionError(
            f"chunk has n_kp={chunk.n_kp}, responder needs {responder.n_kp}"
        )
    response = responder.respond_chunk(chunk, rng=rng)
    if len(response) != len(chunk):
        raise FaceReactError(
            f"{responder.method} responder returned {len(response)} frames "
            f"for a {len(chunk)}-frame chunk"
        )
    return response


def respond_sequence(
    responder, seq: ExpressionSequence, rng=None
) -> Optional[ExpressionSequence]:
    """Respond to a whole recording, chunk by tumbling chunk.

    Returns the concatenated response (one frame per consumed input frame)
    or None when the recording is shorter than a single chunk.
    """
    chunks = cut_windows(seq, responder.window, responder.window)
    if not chunks:
        return None
    gen = as_rng(rng)
    frames = []
    for chunk in chunks:
        frames.extend(respond_chunk(responder, chunk, rng=gen).frames)
    return ExpressionSequence(tuple(frames), fps=seq.fps, label=seq.label)


@dataclass
class SessionStats:
    chunks_processed: int = 0
    mean_latency_ms: float = 0.0
    max_latency_ms: float = 0.0
    frames_pushed: int = 0
    frames_consumed: int = 0
    frames_dropped: int = 0
    _latency_total_ms: float = field(default=0.0, repr=False)

    def record_chunk(self, latency_ms: float, window: int):
        self.chunks_processed += 1
        self.frames_consumed += window
        self._latency_total_ms += latency_ms
        self.mean_latency_ms = self._latency_total_ms / self.chunks_processed
        self.max_latency_ms = max(self.max_latency_ms, latency_ms)

    @property
    def frames_buffered(self) -> int:
        return self.frames_pushed - self.frames_consumed - self.frames_dropped

    def snapshot(self) -> dict:
        return {
            "chunks": self.chunks_processed,
            "mean_latency_ms": round(self.mean_latency_ms, 3),
            "max_latency_ms": round(self.max_latency_ms, 3),
        }


class ResponseSession:
    """Single-writer chunking session around one responder.

    push_frame calls must be externally serialized; distinct sessions are
    independent and share only read-only model artifacts.
    """

    def __init__(self, responder, fps: float = 30.0, rng=None, n_kp: Optional[int] = None):
        self.responder = responder
        self.fps = float(fps)
        self.rng = as_rng(rng)
        self.n_kp = n_kp if n_kp is not None else responder.n_kp
        self.buffer: list[KeypointFrame] = []
        self.chunk_index = 0
        self.stats = SessionStats()

    def push_frame(self, frame: KeypointFrame) -> Optional[ExpressionSequence]:
        """Buffer one frame; returns a response when a chunk completes.

        A frame with the wrong keypoint count is dropped, counted, and
        reported by raising DimensionError; the session stays usable.
        """
        self.stats.frames_pushed += 1
        if self.n_kp is not None and frame.n_kp != self.n_kp:
            self.stats.frames_dropped += 1
            raise DimensionError(
                f"frame has {frame.n_kp} keypoints, session expects {self.n_kp}"
            )
        if self.n_kp is None:
            self.n_kp = frame.n_kp
        self.buffer.append(frame)
        if len(self.buffer) < self.responder.window:
            return None
        chunk_frames = tuple(self.buffer[: self.responder.window])
        del self.buffer[: self.responder.window]
        chunk = ExpressionSequence(chunk_frames, fps=self.fps)
        start = time.perf_counter()
        response = respond_chunk(self.responder, chunk, rng=self.rng)
        latency_ms = (time.perf_counter() - start) * 1e3
        self.stats.record_chunk(latency_ms, self.responder.window)
        self.chunk_index += 1
        return response
