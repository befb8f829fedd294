"""Live session orchestration: capture -> stream -> replay (+ recording).

The core loop is renderer-agnostic so it runs headless (tests, SSH) and
interactively (the OpenCV shell in :mod:`render_cv`).  Responses replay one
chunk behind the user's own motion, which is the pipeline's inherent
latency; the left/right panes make that visible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .client import METHOD_WINDOWS, EngineClient, EngineDisconnected
from .kpjl import KpjlWriter
from .landmarks import N_KEYPOINTS

METHODS = ("mirror", "pca", "nn", "retrieval")


@dataclass
class CaptureConfig:
    engine: str = "127.0.0.1:7460"
    camera_index: int = 0
    fps: float = 30.0
    n_kp: int = N_KEYPOINTS
    method: str = "mirror"
    sigma: Optional[float] = None
    window: Optional[int] = None  # None -> the method's natural window
    seed: Optional[int] = None
    landmark_map_path: Optional[str] = None
    record_path: Optional[str] = None  # user stream KPJL; responses go next to it
    record_label: Optional[str] = None

    def window_for(self, method: str) -> int:
        return self.window or METHOD_WINDOWS.get(method, 60)


@dataclass
class LiveState:
    """Everything a renderer needs for one tick of UI."""

    method: str
    sigma: Optional[float]
    frames_sent: int = 0
    chunks_received: int = 0
    buffer_fill: int = 0  # frames into the current chunk
    window: int = 60
    last_latency_ms: Optional[float] = None
    mean_latency_ms: Optional[float] = None
    no_face: bool = False
    recording: bool = False
    banner: Optional[str] = None
    user_points: Optional[np.ndarray] = None
    response_points: Optional[np.ndarray] = None
    pending_method: Optional[str] = None


class ResponseReplayer:
    """Queues response frames and hands them out at the session fps."""

    def __init__(self, fps: float):
        self.fps = fps
        self._frames: list[np.ndarray] = []
        self._cursor = 0

    def push_chunk(self, frames: list[dict]):
        self._frames.extend(np.asarray(f["p"], dtype=float) for f in frames)

    def tick(self) -> Optional[np.ndarray]:
        if self._cursor < len(self._frames):
            frame = self._frames[self._cursor]
            self._cursor += 1
            return frame
        return self._frames[-1] if self._frames else None


class LiveSession:
    """One human <-> engine exchange over a landmark source."""

    def __init__(
        self,
        cfg: CaptureConfig,
        source,
        client: Optional[EngineClient] = None,
        on_tick: Optional[Callable[[LiveState], bool]] = None,
        reconnect_delay: float = 1.0,
        max_reconnects: int = 3,
    ):
        self.cfg = cfg
        self.source = source
        self.client = client or EngineClient(cfg.engine, n_kp=cfg.n_kp, fps=cfg.fps)
        self.on_tick = on_tick
        self.reconnect_delay = reconnect_delay
        self.max_reconnects = max_reconnects
        self.state = LiveState(
            method=cfg.method, sigma=cfg.sigma, window=cfg.window_for(cfg.method)
        )
        self.replayer = ResponseReplayer(cfg.fps)
        self._user_writer: Optional[KpjlWriter] = None
        self._response_writer: Optional[KpjlWriter] = None
        self._frames_since_config = 0

    # -- controls (hotkeys call these) --------------------------------------

    def request_method(self, method: str, sigma: Optional[float] = None):
        """Queue a method switch; applied at the next chunk boundary."""
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.state.pending_method = method
        if sigma is not None:
            self.state.sigma = sigma

    def adjust_sigma(self, delta: float):
        current = self.state.sigma if self.state.sigma is not None else 0.1
        self.state.sigma = max(0.0, round(current + delta, 4))
        # Takes effect with the next (re)config.
        self.state.pending_method = self.state.pending_method or self.state.method

    # -- lifecycle ------------------------------------------------------------

    def _connect_and_configure(self):
        self.client.connect()
        self.client.configure(
            self.state.method,
            window=self.cfg.window_for(self.state.method),
            sigma=self.state.sigma,
            seed=self.cfg.seed,
        )
        self.state.window = self.cfg.window_for(self.state.method)
        self._frames_since_config = 0
        self.state.banner = None

    def _open_recorders(self):
        if not self.cfg.record_path:
            return
        path = Path(self.cfg.record_path)
        self._user_writer = KpjlWriter(
            path, n_kp=self.cfg.n_kp, fps=self.cfg.fps, label=self.cfg.record_label
        ).__enter__()
        response_path = path.with_suffix(".response.kpjl")
        self._response_writer = KpjlWriter(
            response_path, n_kp=self.cfg.n_kp, fps=self.cfg.fps
        ).__enter__()
        self.state.recording = True

    def _close_recorders(self):
        for writer in (self._user_writer, self._response_writer):
            if writer is not None:
                writer.__exit__(None, None, None)
        self._user_writer = self._response_writer = None
        self.state.recording = False

    def _apply_pending_switch(self):
        if self.state.pending_method is None:
            return
        if self._frames_since_config % self.cfg.window_for(self.state.method) != 0:
            return  # only at a chunk boundary
        method = self.state.pending_method
        self.client.configure(
            method,
            window=self.cfg.window_for(method),
            sigma=self.state.sigma,
            seed=self.cfg.seed,
        )
        self.state.method = method
        self.state.window = self.cfg.window_for(method)
        self.state.pending_method = None
        self._frames_since_config = 0

    def _handle_messages(self):
        for msg in self.client.poll():
            kind = msg.get("type")
            if kind == "response":
                self.state.chunks_received += 1
                self.replayer.push_chunk(msg["frames"])
                if self._response_writer is not None:
                    for frame in msg["frames"]:
                        self._response_writer.write_frame(frame["t"], frame["p"])
            elif kind == "stats":
                self.state.mean_latency_ms = msg.get("mean_latency_ms")
                self.state.last_latency_ms = msg.get("max_latency_ms")
            elif kind == "error":
                self.state.banner = f"engine error {msg.get('code')}: {msg.get('detail')}"
            elif kind == "bye":
                raise EngineDisconnected("engine said bye")

    def run(self, max_frames: Optional[int] = None) -> LiveState:
        """Stream until the source ends, the tick callback stops, or max_frames."""
        reconnects_left = self.max_reconnects
        self._connect_and_configure()
        self._open_recorders()
        try:
            for tick in self.source.ticks():
                if max_frames is not None and self.state.frames_sent >= max_frames:
                    break
                self.state.no_face = tick.points is None
                self.state.user_points = tick.points
                if tick.points is not None:
                    try:
                        self._apply_pending_switch()
                        self.client.send_frame(tick.timestamp, tick.points)
                        self.state.frames_sent += 1
                        self._frames_since_config += 1
                        if self._user_writer is not None:
                            self._user_writer.write_frame(tick.timestamp, tick.points)
                        self._handle_messages()
                    except EngineDisconnected:
                        if reconnects_left <= 0:
                            raise
                        reconnects_left -= 1
                        self.state.banner = "engine disconnected, reconnecting"
                        time.sleep(self.reconnect_delay)
                        self._connect_and_configure()
                        continue
                self.state.buffer_fill = self._frames_since_config % self.state.window
                self.state.response_points = self.replayer.tick()
                if self.on_tick is not None and not self.on_tick(self.state):
                    break
            # Collect stragglers for the final chunk before saying goodbye.
            deadline = time.monotonic() + 2.0
            while (
                self.state.chunks_received * self.state.window < self.state.frames_sent
                and time.monotonic() < deadline
            ):
                try:
                    self._handle_messages()
                except EngineDisconnected:
                    break
                time.sleep(0.01)
            if self.state.response_points is None:
                self.state.response_points = self.replayer.tick()
            self.client.bye()
            return self.state
        finally:
            self._close_recorders()
            self.client.close()
            self.source.close()


def record_clip(
    source,
    out_path,
    n_kp: int = N_KEYPOINTS,
    fps: float = 30.0,
    label: Optional[str] = None,
    seconds: float = 5.0,
    countdown: Optional[Callable[[int], None]] = None,
    countdown_seconds: int = 3,
    paced_countdown: bool = False,
) -> int:
    """Dataset acquisition: one labeled clip of ``seconds`` at ``fps``.

    Returns the number of frames written.  The countdown callback fires
    once per remaining second so shells can show the framing guide.
    """
    if countdown is not None:
        for remaining in range(countdown_seconds, 0, -1):
            countdown(remaining)
            if paced_countdown:
                time.sleep(1.0)
    target = int(round(seconds * fps))
    with KpjlWriter(out_path, n_kp=n_kp, fps=fps, label=label) as writer:
        for tick in source.ticks():
            if tick.points is None:
                continue
            writer.write_frame(tick.timestamp, tick.points)
            if writer.frames_written >= target:
                break
        written = writer.frames_written
    source.close()
    return written
