"""Landmark sources: where (timestamp, 146 keypoints) ticks come from.

``SyntheticLandmarkSource`` needs no hardware and drives tests, demos and
headless soak runs.  ``MediapipeCameraSource`` wraps a webcam plus the
face-mesh extractor; both are optional dependencies imported lazily so the
rest of the client works on machines without them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .landmarks import N_KEYPOINTS, default_landmark_map
from .select import FaceDetection, select_face


@dataclass
class CaptureTick:
    timestamp: float
    points: Optional[np.ndarray]  # (n_kp, 3), or None when no face this tick
    image: Optional[np.ndarray] = None  # BGR frame for the viewer, if any


class SyntheticLandmarkSource:
    """Deterministic oscillating face; optionally paced to the target fps."""

    def __init__(
        self,
        n_kp: int = N_KEYPOINTS,
        fps: float = 30.0,
        seed: int = 0,
        paced: bool = False,
        dropout: float = 0.0,  # fraction of no-face ticks
    ):
        self.n_kp = n_kp
        self.fps = fps
        self.paced = paced
        self.dropout = dropout
        rng = np.random.default_rng(seed)
        cols = int(np.ceil(np.sqrt(n_kp)))
        idx = np.arange(n_kp)
        self._base = np.stack(
            [
                0.35 + 0.3 * (idx % cols) / max(cols - 1, 1),
                0.3 + 0.4 * (idx // cols) / max(cols - 1, 1),
                0.05 * np.ones(n_kp),
            ],
            axis=1,
        ) + rng.normal(0.0, 0.003, size=(n_kp, 3))
        self._weights = rng.uniform(0.3, 1.0, size=(n_kp, 1))
        self._rng = rng
        self._i = 0

    def ticks(self) -> Iterator[CaptureTick]:
        start = time.monotonic()
        while True:
            t = self._i / self.fps
            if self.dropout and self._rng.random() < self.dropout:
                points = None
            else:
                sway = np.sin(2.0 * np.pi * 0.7 * t)
                nod = np.cos(2.0 * np.pi * 1.3 * t)
                offset = np.concatenate(
                    [
                        0.02 * sway * self._weights,
                        0.03 * nod * self._weights,
                        0.005 * sway * np.ones((self.n_kp, 1)),
                    ],
                    axis=1,
                )
                points = self._base + offset
            if self.paced:
                due = start + t
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            yield CaptureTick(timestamp=t, points=points)
            self._i += 1

    def close(self):
        pass


class MediapipeCameraSource:
    """Webcam frames through the face-mesh extractor, center-most face wins."""

    def __init__(
        self,
        camera_index: int = 0,
        fps: float = 30.0,
        landmark_map: Optional[list[int]] = None,
        max_faces: int = 4,
    ):
        try:
            import cv2
            import mediapipe as mp
        except ImportError as exc:
            raise RuntimeError(
                "camera capture needs the [camera] extra "
                "(pip install facereact-capture[camera])"
            ) from exc
        self._cv2 = cv2
        self.landmark_map = landmark_map or default_landmark_map()
        self.fps = fps
        self.capture = cv2.VideoCapture(camera_index)
        if not self.capture.isOpened():
            raise RuntimeError(f"camera {camera_index} did not open")
        self.capture.set(cv2.CAP_PROP_FPS, fps)
        self._mesh = mp.solutions.face_mesh.FaceMesh(
            max_num_faces=max_faces,
            refine_landmarks=False,
            min_detection_confidence=0.5,
            min_tracking_confidence=0.5,
        )
        self._start = None

    def ticks(self) -> Iterator[CaptureTick]:
        cv2 = self._cv2
        while True:
            ok, frame = self.capture.read()
            if not ok:
                return  # camera failure: clean exit, caller reports
            now = time.monotonic()
            if self._start is None:
                self._start = now
            result = self._mesh.process(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
            points = None
            if result.multi_face_landmarks:
                detections = [
                    FaceDetection(
                        np.array([[lm.x, lm.y, lm.z] for lm in face.landmark])
                    )
                    for face in result.multi_face_landmarks
                ]
                chosen = select_face(detections)
                if chosen is not None:
                    points = chosen.landmarks[self.landmark_map]
            yield CaptureTick(timestamp=now - self._start, points=points, image=frame)

    def close(self):
        self.capture.release()
        self._mesh.close()


def make_source(kind: str, **kwargs):
    if kind == "synthetic":
        kwargs.pop("camera_index", None)
        kwargs.pop("landmark_map", None)
        return SyntheticLandmarkSource(**kwargs)
    if kind == "camera":
        kwargs.pop("seed", None)
        kwargs.pop("paced", None)
        return MediapipeCameraSource(**kwargs)
    raise ValueError(f"unknown source {kind!r} (expected synthetic or camera)")
