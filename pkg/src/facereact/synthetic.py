"""Seeded synthetic expression corpus for tests, demos and the acceptance suite.

Each emotion gets a distinct parametric motion signature (oscillation
frequencies, amplitudes and spatial emphasis) layered on a shared neutral
face made of a jittered keypoint grid.  Clips of one emotion are
variations of that signature, so windows of the same emotion stay closer
to each other than to other emotions, which is all the downstream
algorithms need.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import CORE_EMOTIONS, DEFAULT_FPS, DEFAULT_N_KP, ExpressionSequence, KeypointFrame
from .kpjl import write_kpjl

# Per-emotion motion signature: (base frequency Hz, amplitude, vertical bias)
_SIGNATURES = {
    "happy": (0.8, 0.020, 0.3),
    "laughing": (2.5, 0.045, 0.8),
    "surprised": (0.4, 0.060, -0.6),
    "charming": (0.6, 0.015, 0.1),
    "impressed": (1.2, 0.030, -0.2),
    "neutral": (0.3, 0.005, 0.0),
    "shocked": (3.0, 0.055, -0.9),
}
_FALLBACK_SIGNATURE = (1.0, 0.025, 0.0)


def neutral_face(n_kp: int = DEFAULT_N_KP, rng=None) -> np.ndarray:
    """A stable keypoint layout in normalized image coordinates."""
    gen = np.random.default_rng(0 if rng is None else rng)
    cols = int(np.ceil(np.sqrt(n_kp)))
    idx = np.arange(n_kp)
    grid = np.stack(
        [
            0.3 + 0.4 * (idx % cols) / max(cols - 1, 1),
            0.3 + 0.4 * (idx // cols) / max(cols - 1, 1),
            0.05 * np.ones(n_kp),
        ],
        axis=1,
    )
    return grid + gen.normal(0.0, 0.004, size=grid.shape)


def generate_clip(
    emotion: str,
    rng: np.random.Generator,
    n_frames: int,
    n_kp: int = DEFAULT_N_KP,
    fps: float = DEFAULT_FPS,
    face: Optional[np.ndarray] = None,
) -> ExpressionSequence:
    freq, amp, vertical = _SIGNATURES.get(emotion, _FALLBACK_SIGNATURE)
    base = neutral_face(n_kp) if face is None else face
    # Clip-level variation keeps clips of one emotion near, not identical.
    freq = freq * rng.uniform(0.85, 1.15)
    amp = amp * rng.uniform(0.8, 1.2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    weights = rng.uniform(0.2, 1.0, size=(n_kp, 1))
    t = np.arange(n_frames) / fps
    carrier = np.sin(2.0 * np.pi * freq * t + phase)
    motion = np.zeros((n_frames, n_kp, 3))
    motion[:, :, 0] = 0.3 * amp * carrier[:, None] * weights.T
    motion[:, :, 1] = amp * (1.0 + 0.5 * vertical) * carrier[:, None] * weights.T
    motion[:, :, 2] = 0.1 * amp * np.cos(2.0 * np.pi * freq * t + phase)[:, None]
    coords = base + motion + rng.normal(0.0, 0.0015, size=motion.shape)
    frames = tuple(
        KeypointFrame(i / fps, coords[i]) for i in range(n_frames)
    )
    return ExpressionSequence(frames, fps=fps, label=emotion)


def generate_corpus(
    root: Union[str, Path],
    emotions: Sequence[str] = CORE_EMOTIONS,
    clips_per_emotion: int = 30,
    seed: int = 0,
    n_kp: int = DEFAULT_N_KP,
    fps: float = DEFAULT_FPS,
    min_seconds: float = 3.0,
    max_seconds: float = 6.0,
) -> list[Path]:
    """Write a KPJL corpus under ``root``; returns the file paths."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    face = neutral_face(n_kp, rng=seed)
    paths = []
    for emotion in emotions:
        sub = root / emotion
        sub.mkdir(parents=True, exist_ok=True)
        for i in range(clips_per_emotion):
            seconds = rng.uniform(min_seconds, max_seconds)
            n_frames = max(int(round(seconds * fps)), 1)
            clip = generate_clip(
                emotion, rng, n_frames=n_frames, n_kp=n_kp, fps=fps, face=face
            )
            path = sub / f"clip_{i:03d}.kpjl"
            write_kpjl(path, clip)
            paths.append(path)
    return paths


def _main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(
        description="Generate a synthetic KPJL expression corpus."
    )
    parser.add_argument("--root", required=True)
    parser.add_argument("--emotions", default=",".join(CORE_EMOTIONS))
    parser.add_argument("--clips", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-kp", type=int, default=DEFAULT_N_KP)
    parser.add_argument("--fps", type=float, default=DEFAULT_FPS)
    args = parser.parse_args(argv)
    paths = generate_corpus(
        args.root,
        emotions=[e.strip() for e in args.emotions.split(",") if e.strip()],
        clips_per_emotion=args.clips,
        seed=args.seed,
        n_kp=args.n_kp,
        fps=args.fps,
    )
    print(f"wrote {len(paths)} clips under {args.root}")


if __name__ == "__main__":
    _main()
