"""KPJL keypoint-sequence files, as consumed by the response engine.

One JSON object per line: a header
``{"format":"kpjl","version":1,"n_kp":146,"fps":30,"label":...}`` followed
by frames ``{"t": seconds, "p": [[x, y, z], ...]}``.  Timestamps must be
strictly increasing and coordinates finite, or the engine's dataset
scanner will reject the file.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Union

FORMAT_NAME = "kpjl"
FORMAT_VERSION = 1


class KpjlWriter:
    """Streaming writer; enforces the invariants the engine checks."""

    def __init__(
        self,
        path: Union[str, Path],
        n_kp: int,
        fps: float,
        label: Optional[str] = None,
    ):
        self.path = Path(path)
        self.n_kp = n_kp
        self.fps = fps
        self.label = label.lower() if label else None
        self._fh = None
        self._frames = 0
        self._last_t = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "n_kp": self.n_kp,
            "fps": self.fps,
            "label": self.label,
        }
        self._fh.write(json.dumps(header) + "\n")
        return self

    def write_frame(self, t: float, points) -> float:
        """Append one frame; nudges non-increasing timestamps forward.

        Returns the timestamp actually written.
        """
        rows = [[float(v) for v in p] for p in points]
        if len(rows) != self.n_kp or any(len(r) != 3 for r in rows):
            raise ValueError(f"frame must be {self.n_kp} points of (x, y, z)")
        if any(not math.isfinite(v) for r in rows for v in r):
            raise ValueError("coordinates must be finite")
        t = float(t)
        if self._last_t is not None and t <= self._last_t:
            t = self._last_t + 1.0 / (self.fps * 1000.0)
        self._fh.write(json.dumps({"t": t, "p": rows}) + "\n")
        self._frames += 1
        self._last_t = t
        return t

    @property
    def frames_written(self) -> int:
        return self._frames

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        # A header with no frames is not a valid sequence; remove the stub.
        if self._frames == 0 and exc_type is None:
            self.path.unlink(missing_ok=True)
        return False


def read_kpjl(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    """(header, frames) for replay and tests; engine-side parsing is richer."""
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} file")
        frames = [json.loads(line) for line in fh if line.strip()]
    return header, frames
