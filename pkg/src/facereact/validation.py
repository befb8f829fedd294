"""Input validation helpers used by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import ExpressionSequence
from .exceptions import DimensionError, FitError


def check_sequence(seq, n_kp=None, n_frames=None, name="sequence"):
    """Validate one ExpressionSequence against expected dimensions."""
    if not isinstance(seq, ExpressionSequence):
        raise TypeError(f"{name} must be an ExpressionSequence, got {type(seq)!r}")
    if n_kp is not None and seq.n_kp != n_kp:
        raise DimensionError(f"{name} has n_kp={seq.n_kp}, expected {n_kp}")
    if n_frames is not None and len(seq) != n_frames:
        raise DimensionError(f"{name} has {len(seq)} frames, expected {n_frames}")
    return seq


def check_training_set(
    sequences: Sequence[ExpressionSequence], min_samples: int = 2
) -> tuple[int, int]:
    """Validate a homogeneous training set; returns (n_frames, n_kp)."""
    seqs = list(sequences)
    if len(seqs) < min_samples:
        raise FitError(f"need at least {min_samples} sequences, got {len(seqs)}")
    first = seqs[0]
    check_sequence(first)
    for i, s in enumerate(seqs[1:], start=1):
        check_sequence(s, n_kp=first.n_kp, n_frames=len(first), name=f"sequence[{i}]")
    return len(first), first.n_kp


def check_vector(vec, length, name="vector") -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if arr.size != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.size}")
    return arr


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator, a seed, or None (fresh OS entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
