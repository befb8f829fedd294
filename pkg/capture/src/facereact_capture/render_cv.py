"""OpenCV side-by-side shell: the user's landmarks left, the reaction right.

Hotkeys: ``m`` cycles the method (applied at the next chunk boundary),
``[`` / ``]`` lower/raise sigma, ``q`` quits.  Needs a display; headless
runs use the LiveSession core directly.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .viewer import METHODS, LiveState

PANEL = 480


def _require_cv2():
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError(
            "interactive view needs OpenCV (pip install facereact-capture[camera])"
        ) from exc
    return cv2


def draw_panel(canvas, points: Optional[np.ndarray], x_offset: int, color):
    import cv2

    if points is None:
        return
    xy = points[:, :2]
    lo = xy.min(axis=0)
    span = max(float((xy.max(axis=0) - lo).max()), 1e-6)
    scaled = (xy - lo) / span * (PANEL * 0.8) + PANEL * 0.1
    for x, y in scaled:
        cv2.circle(canvas, (x_offset + int(x), int(y)), 2, color, -1)


class CvShell:
    """Tick callback + window management around a LiveSession."""

    def __init__(self, session):
        self.session = session
        self.cv2 = _require_cv2()
        self.window_name = "facereact capture"

    def __call__(self, state: LiveState) -> bool:
        cv2 = self.cv2
        canvas = np.full((PANEL, PANEL * 2, 3), 24, dtype=np.uint8)
        cv2.line(canvas, (PANEL, 0), (PANEL, PANEL), (64, 64, 64), 1)
        draw_panel(canvas, state.user_points, 0, (90, 220, 90))
        draw_panel(canvas, state.response_points, PANEL, (90, 160, 255))
        lines = [
            f"method {state.method}"
            + (f" -> {state.pending_method}" if state.pending_method else ""),
            f"sigma {state.sigma if state.sigma is not None else 'model default'}",
            f"chunk {state.buffer_fill}/{state.window}  responses {state.chunks_received}",
        ]
        if state.mean_latency_ms is not None:
            lines.append(f"latency mean {state.mean_latency_ms:.1f} ms")
        if state.no_face:
            lines.append("no face")
        if state.recording:
            lines.append("REC")
        if state.banner:
            lines.append(state.banner)
        for i, text in enumerate(lines):
            cv2.putText(
                canvas, text, (8, 20 + 18 * i),
                cv2.FONT_HERSHEY_SIMPLEX, 0.45, (255, 255, 255), 1,
            )
        cv2.imshow(self.window_name, canvas)
        key = cv2.waitKey(1) & 0xFF
        if key == ord("q"):
            return False
        if key == ord("m"):
            current = METHODS.index(state.method)
            self.session.request_method(METHODS[(current + 1) % len(METHODS)])
        elif key == ord("]"):
            self.session.adjust_sigma(+0.05)
        elif key == ord("["):
            self.session.adjust_sigma(-0.05)
        return True

    def close(self):
        try:
            self.cv2.destroyWindow(self.window_name)
        except self.cv2.error:
            pass
