"""Choosing which detected face drives the interaction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class FaceDetection:
    """One detected face: landmarks in normalized image coordinates."""

    landmarks: np.ndarray  # (n, 3)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        xs, ys = self.landmarks[:, 0], self.landmarks[:, 1]
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


def select_face(
    detections: Sequence[FaceDetection],
    frame_center: tuple[float, float] = (0.5, 0.5),
) -> Optional[FaceDetection]:
    """The face whose box center is closest to the frame center.

    Equidistant candidates resolve to the largest box.  Returns None when
    nothing was detected (the caller skips this tick).
    """
    if not detections:
        return None
    cx, cy = frame_center

    def key(det: FaceDetection):
        dx, dy = det.center[0] - cx, det.center[1] - cy
        return (math.hypot(dx, dy), -det.area)

    return min(detections, key=key)
