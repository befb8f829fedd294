"""Live session service: newline-delimited JSON over TCP.

Message vocabulary (one JSON object per line):

    client -> server:  hello, config, frame, bye
    server -> client:  stats, response, error, bye

Session grammar: ``hello`` first, then ``config``, then frames.  Every
completed window yields exactly one ``response`` with a strictly
increasing chunk index.  The server acknowledges each accepted ``config``
with an immediate ``stats`` message (chunk count so far), which is the
go-signal clients wait for before streaming; re-sending ``config``
mid-session switches method at the next chunk boundary (any buffered
partial chunk is discarded).

Error codes: ``protocol`` (fatal, connection closes), ``config`` and
``dims`` (recoverable), ``overflow`` (fatal).  Overflow fires when a
client runs more than ``overflow_chunks`` windows ahead of real time as
declared by its hello fps, protecting the latency contract.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import KeypointFrame
from .distill import StudentNetwork
from .exceptions import DimensionError, FaceReactError
from .pca import ExpressionSpacePCA
from .pipeline import (
    METHODS,
    MirrorResponder,
    PCAResponder,
    ResponseSession,
    RetrievalChunkResponder,
    StudentChunkResponder,
)
from .retrieval import NearestReactionIndex

WIRE_VERSION = 1
DEFAULT_BIND = "127.0.0.1:7460"
BIND_ENV = "FACEREACT_BIND"

DEFAULT_OVERFLOW_CHUNKS = 10
DEFAULT_STATS_EVERY = 10


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


@dataclass
class ModelRegistry:
    """Loaded model artifacts shared read-only across sessions."""

    pca: Optional[ExpressionSpacePCA] = None
    nn: Optional[StudentNetwork] = None
    retrieval: Optional[NearestReactionIndex] = None

    @classmethod
    def from_paths(
        cls,
        pca: Optional[str] = None,
        nn: Optional[str] = None,
        retrieval: Optional[str] = None,
    ) -> "ModelRegistry":
        # Fail fast: a bad artifact should kill startup, not a session.
        return cls(
            pca=ExpressionSpacePCA.load(pca) if pca else None,
            nn=StudentNetwork.load(nn) if nn else None,
            retrieval=NearestReactionIndex.load(retrieval) if retrieval else None,
        )

    def available_methods(self) -> list[str]:
        out = ["mirror"]
        if self.pca is not None:
            out.append("pca")
        if self.nn is not None:
            out.append("nn")
        if self.retrieval is not None:
            out.append("retrieval")
        return out

    def build_responder(self, method: str, sigma: Optional[float], window: Optional[int]):
        if method == "mirror":
            return MirrorResponder(window=window or 60)
        if method == "pca" and self.pca is not None:
            return PCAResponder(self.pca, sigma=sigma)
        if method == "nn" and self.nn is not None:
            return StudentChunkResponder(self.nn, sigma=sigma)
        if method == "retrieval" and self.retrieval is not None:
            return RetrievalChunkResponder(self.retrieval)
        raise LookupError(method)


class _WireError(Exception):
    def __init__(self, code: str, detail: str, fatal: bool):
        super().__init__(detail)
        self.code = code
        self.detail = detail
        self.fatal = fatal


class _ClientSession(threading.Thread):
    def __init__(self, server: "EngineServer", conn: socket.socket, peer):
        super().__init__(daemon=True, name=f"session-{peer}")
        self.server = server
        self.conn = conn
        self.peer = peer
        self._send_lock = threading.Lock()
        self.session: Optional[ResponseSession] = None
        self.hello: Optional[dict] = None
        self._frames_received = 0
        self._first_frame_at: Optional[float] = None

    # -- plumbing ---------------------------------------------------------

    def send(self, obj: dict) -> None:
        data = (json.dumps(obj) + "\n").encode("utf-8")
        with self._send_lock:
            self.conn.sendall(data)

    def send_bye(self) -> None:
        try:
            self.send({"type": "bye"})
        except OSError:
            pass

    # -- message handling ---------------------------------------------------

    def run(self):
        try:
            reader = self.conn.makefile("r", encoding="utf-8", newline="\n")
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    self.handle_line(line)
                except _WireError as err:
                    try:
                        self.send(
                            {"type": "error", "code": err.code, "detail": err.detail}
                        )
                    except OSError:
                        break
                    if err.fatal:
                        break
                except _SessionDone:
                    break
        except OSError:
            pass
        finally:
            self.server._forget(self)
            try:
                self.conn.close()
            except OSError:
                pass

    def handle_line(self, line: str):
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _WireError("protocol", f"malformed JSON: {exc}", fatal=True)
        if not isinstance(msg, dict) or "type" not in msg:
            raise _WireError("protocol", "message must be an object with a type", fatal=True)
        kind = msg["type"]
        if kind == "hello":
            self.on_hello(msg)
        elif kind == "config":
            self.on_config(msg)
        elif kind == "frame":
            self.on_frame(msg)
        elif kind == "bye":
            self.send_bye()
            raise _SessionDone()
        else:
            raise _WireError("protocol", f"unexpected message type {kind!r}", fatal=True)

    def on_hello(self, msg: dict):
        if self.hello is not None:
            raise _WireError("protocol", "duplicate hello", fatal=True)
        if msg.get("version") != WIRE_VERSION:
            raise _WireError(
                "protocol", f"unsupported version {msg.get('version')!r}", fatal=True
            )
        try:
            n_kp = int(msg["n_kp"])
            fps = float(msg.get("fps", 30))
        except (KeyError, TypeError, ValueError):
            raise _WireError("protocol", "hello needs integer n_kp and fps", fatal=True)
        if n_kp < 1 or fps <= 0:
            raise _WireError("protocol", "hello n_kp/fps out of range", fatal=True)
        self.hello = {"n_kp": n_kp, "fps": fps}

    def on_config(self, msg: dict):
        if self.hello is None:
            raise _WireError("protocol", "config before hello", fatal=True)
        method = msg.get("method")
        if method not in METHODS:
            raise _WireError("config", f"unknown method {method!r}", fatal=False)
        sigma = msg.get("sigma")
        if sigma is not None and (not isinstance(sigma, (int, float)) or sigma < 0):
            raise _WireError("config", "sigma must be a non-negative number", fatal=False)
        window = msg.get("window")
        try:
            responder = self.server.registry.build_responder(method, sigma, window)
        except LookupError:
            raise _WireError(
                "config",
                f"method {method!r} has no model loaded "
                f"(available: {self.server.registry.available_methods()})",
                fatal=False,
            )
        if window is not None and window != responder.window:
            raise _WireError(
                "config",
                f"window {window} does not match {method}'s required {responder.window}",
                fatal=False,
            )
        if responder.n_kp is not None and responder.n_kp != self.hello["n_kp"]:
            raise _WireError(
                "config",
                f"session n_kp={self.hello['n_kp']} but the {method} model "
                f"expects {responder.n_kp}",
                fatal=False,
            )
        chunk_base = self.session.chunk_index if self.session else 0
        new_session = ResponseSession(
            responder,
            fps=self.hello["fps"],
            rng=np.random.default_rng(msg.get("seed")),
            n_kp=self.hello["n_kp"],
        )
        new_session.chunk_index = chunk_base  # numbering continues across re-config
        self.session = new_session
        self.send({"type": "stats", **new_session.stats.snapshot()})

    def on_frame(self, msg: dict):
        if self.session is None:
            raise _WireError("protocol", "frame before config", fatal=True)
        now = time.monotonic()
        if self._first_frame_at is None:
            self._first_frame_at = now
        self._frames_received += 1
        ahead = self._frames_received - (now - self._first_frame_at) * self.hello["fps"]
        limit = self.server.overflow_chunks * self.session.responder.window
        if ahead > limit:
            raise _WireError(
                "overflow",
                f"{self._frames_received} frames received, "
                f"more than {self.server.overflow_chunks} chunks ahead of real time",
                fatal=True,
            )
        try:
            frame = KeypointFrame(msg["t"], msg["p"])
        except (KeyError, TypeError, ValueError, DimensionError) as exc:
            raise _WireError("protocol", f"bad frame message: {exc}", fatal=True)
        try:
            response = self.session.push_frame(frame)
        except DimensionError as exc:
            raise _WireError("dims", str(exc), fatal=False)
        except (FaceReactError, ValueError) as exc:
            raise _WireError("protocol", f"frame rejected: {exc}", fatal=True)
        if response is None:
            return
        chunk_index = self.session.chunk_index - 1
        self.send(
            {
                "type": "response",
                "chunk": chunk_index,
                "frames": [
                    {"t": f.timestamp, "p": f.points.tolist()} for f in response.frames
                ],
            }
        )
        if self.session.stats.chunks_processed % self.server.stats_every == 0:
            self.send({"type": "stats", **self.session.stats.snapshot()})


class _SessionDone(Exception):
    pass


class EngineServer:
    """Thread-per-session TCP server around a shared model registry."""

    def __init__(
        self,
        registry: Optional[ModelRegistry] = None,
        host: str = "127.0.0.1",
        port: int = 7460,
        overflow_chunks: int = DEFAULT_OVERFLOW_CHUNKS,
        stats_every: int = DEFAULT_STATS_EVERY,
    ):
        self.registry = registry or ModelRegistry()
        self.host = host
        self.port = port
        self.overflow_chunks = overflow_chunks
        self.stats_every = stats_every
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._sessions: set[_ClientSession] = set()
        self._lock = threading.Lock()
        self._stopping = threading.Event()

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "EngineServer":
        listener = socket.create_server((self.host, self.port))
        listener.settimeout(0.2)
        self._listener = listener
        self.port = listener.getsockname()[1]  # resolves port=0
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name="engine-accept"
        )
        self._accept_thread.start()
        return self

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            session = _ClientSession(self, conn, peer)
            with self._lock:
                self._sessions.add(session)
            session.start()

    def _forget(self, session: _ClientSession):
        with self._lock:
            self._sessions.discard(session)

    def stop(self):
        """Graceful shutdown: flush every active session with a bye."""
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.send_bye()
            try:
                session.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for session in sessions:
            session.join(timeout=2.0)

    def serve_forever(self):
        if self._listener is None:
            self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(
    bind: str = DEFAULT_BIND,
    pca: Optional[str] = None,
    nn: Optional[str] = None,
    retrieval: Optional[str] = None,
    overflow_chunks: int = DEFAULT_OVERFLOW_CHUNKS,
    stats_every: int = DEFAULT_STATS_EVERY,
) -> EngineServer:
    """Build a server with artifacts loaded from disk (fail fast)."""
    host, port = parse_bind(bind)
    registry = ModelRegistry.from_paths(pca=pca, nn=nn, retrieval=retrieval)
    return EngineServer(
        registry,
        host=host,
        port=port,
        overflow_chunks=overflow_chunks,
        stats_every=stats_every,
    )
