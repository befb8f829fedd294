"""Builders for synthetic keypoint sequences used across the test suite."""

import numpy as np

from facereact.core import ExpressionSequence, KeypointFrame


def make_frames(coords, fps=30.0, t0=0.0):
    """Frames from a (T, n_kp, 3) array, timestamps spaced 1/fps apart."""
    coords = np.asarray(coords, dtype=np.float64)
    return tuple(
        KeypointFrame(t0 + i / fps, coords[i]) for i in range(coords.shape[0])
    )


def make_sequence(coords, fps=30.0, label=None, t0=0.0):
    return ExpressionSequence(make_frames(coords, fps=fps, t0=t0), fps=fps, label=label)


def random_sequence(rng, n_frames=60, n_kp=146, fps=30.0, label=None, scale=1.0):
    return make_sequence(
        rng.normal(0.0, scale, size=(n_frames, n_kp, 3)), fps=fps, label=label
    )
