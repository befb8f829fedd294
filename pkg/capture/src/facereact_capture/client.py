"""Wire client for the engine's newline-delimited JSON protocol.

Session grammar: ``hello`` first, one ``config`` per method selection, then
frames.  The engine acknowledges each accepted config with a ``stats``
message; no frame is sent before that acknowledgment arrives.
"""

from __future__ import annotations

import json
import socket
import threading
from collections import deque
from typing import Optional

WIRE_VERSION = 1
DEFAULT_ENGINE = "127.0.0.1:7460"

# Natural chunk size per method; the engine rejects mismatches.
METHOD_WINDOWS = {"mirror": 60, "pca": 60, "retrieval": 60, "nn": 30}


class EngineError(Exception):
    """Engine answered with an error message."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class EngineDisconnected(Exception):
    """Connection dropped; the viewer shows a banner and reconnects."""


class EngineClient:
    def __init__(
        self,
        address: str = DEFAULT_ENGINE,
        n_kp: int = 146,
        fps: float = 30.0,
        timeout: float = 10.0,
    ):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"engine address must be host:port, got {address!r}")
        self.host, self.port = host, int(port)
        self.n_kp = n_kp
        self.fps = fps
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._inbox: deque = deque()
        self._cond = threading.Condition()
        self._reader: Optional[threading.Thread] = None
        self._closed = False

    # -- connection --------------------------------------------------------

    def connect(self) -> "EngineClient":
        self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        self._sock.settimeout(None)
        self._closed = False
        self._inbox.clear()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._send({"type": "hello", "version": WIRE_VERSION, "n_kp": self.n_kp, "fps": self.fps})
        return self

    def _read_loop(self):
        try:
            reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    continue
                with self._cond:
                    self._inbox.append(msg)
                    self._cond.notify_all()
        except OSError:
            pass
        finally:
            with self._cond:
                self._closed = True
                self._cond.notify_all()

    def _send(self, obj: dict):
        if self._sock is None:
            raise EngineDisconnected("not connected")
        try:
            self._sock.sendall((json.dumps(obj) + "\n").encode("utf-8"))
        except OSError as exc:
            raise EngineDisconnected(str(exc)) from exc

    # -- protocol ------------------------------------------------------------

    def configure(
        self,
        method: str,
        window: Optional[int] = None,
        sigma: Optional[float] = None,
        seed: Optional[int] = None,
        timeout: float = 10.0,
    ) -> dict:
        """Send config and block until the engine acknowledges with stats.

        Messages that arrive in between (responses for earlier chunks) stay
        queued for :meth:`poll`.
        """
        if window is None:
            window = METHOD_WINDOWS.get(method)
        msg = {"type": "config", "method": method, "window": window, "sigma": sigma, "seed": seed}
        self._send(msg)
        ack = self._wait_for(("stats", "error"), timeout=timeout)
        if ack["type"] == "error":
            raise EngineError(ack.get("code", "?"), ack.get("detail", ""))
        return ack

    def send_frame(self, t: float, points) -> None:
        rows = points.tolist() if hasattr(points, "tolist") else points
        self._send({"type": "frame", "t": float(t), "p": rows})

    def poll(self) -> list[dict]:
        """Drain everything received so far (responses, stats, errors, bye)."""
        with self._cond:
            out = list(self._inbox)
            self._inbox.clear()
            if not out and self._closed:
                raise EngineDisconnected("engine closed the connection")
        return out

    def _wait_for(self, kinds, timeout: float) -> dict:
        """Pop the first message of the wanted kinds; others stay in order."""
        with self._cond:
            scanned = 0
            while True:
                while scanned < len(self._inbox):
                    if self._inbox[scanned]["type"] in kinds:
                        msg = self._inbox[scanned]
                        del self._inbox[scanned]
                        return msg
                    scanned += 1
                if self._closed:
                    raise EngineDisconnected("engine closed the connection")
                if not self._cond.wait(timeout=timeout):
                    raise TimeoutError(f"no {kinds} message within {timeout}s")

    def wait_response(self, timeout: float = 10.0) -> dict:
        return self._wait_for(("response",), timeout=timeout)

    def bye(self):
        try:
            self._send({"type": "bye"})
        except EngineDisconnected:
            pass

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
