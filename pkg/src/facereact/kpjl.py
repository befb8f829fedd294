"""KPJL: line-delimited JSON keypoint sequence files.

First line is a header object::

    {"format": "kpjl", "version": 1, "n_kp": 146, "fps": 30, "label": "happy"}

(``label`` may be null.)  Every following line is one frame::

    {"t": <seconds>, "p": [[x, y, z], ...]}

Coordinates survive a write/read round trip bit-identically (JSON floats
are emitted with shortest round-trip repr).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, TextIO, Union

from .core import ExpressionSequence, KeypointFrame
from .exceptions import ArtifactFormatError, DimensionError

FORMAT_NAME = "kpjl"
FORMAT_VERSION = 1


def write_kpjl(path: Union[str, Path], seq: ExpressionSequence) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        dump_kpjl(fh, seq)


def dump_kpjl(fh: TextIO, seq: ExpressionSequence) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_kp": seq.n_kp,
        "fps": seq.fps,
        "label": str(seq.label) if seq.label is not None else None,
    }
    fh.write(json.dumps(header) + "\n")
    for frame in seq.frames:
        fh.write(
            json.dumps({"t": frame.timestamp, "p": frame.points.tolist()}) + "\n"
        )


def read_kpjl(
    path: Union[str, Path], expect_n_kp: Optional[int] = None
) -> ExpressionSequence:
    with open(path, "r", encoding="utf-8") as fh:
        return load_kpjl(fh, expect_n_kp=expect_n_kp, name=str(path))


def load_kpjl(
    fh: TextIO, expect_n_kp: Optional[int] = None, name: str = "<stream>"
) -> ExpressionSequence:
    header_line = fh.readline()
    if not header_line.strip():
        raise ArtifactFormatError(f"{name}: empty file")
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ArtifactFormatError(f"{name}: bad header line: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ArtifactFormatError(f"{name}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise ArtifactFormatError(
            f"{name}: unsupported version {header.get('version')!r}"
        )
    n_kp = int(header["n_kp"])
    if expect_n_kp is not None and n_kp != expect_n_kp:
        raise DimensionError(f"{name}: n_kp={n_kp}, expected {expect_n_kp}")

    frames = []
    for lineno, line in enumerate(fh, start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            frame = KeypointFrame(obj["t"], obj["p"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ArtifactFormatError(f"{name}:{lineno}: bad frame: {exc}") from exc
        if frame.n_kp != n_kp:
            raise DimensionError(
                f"{name}:{lineno}: frame has {frame.n_kp} keypoints, header says {n_kp}"
            )
        frames.append(frame)
    if not frames:
        raise ArtifactFormatError(f"{name}: header but no frames")
    return ExpressionSequence(
        tuple(frames), fps=float(header["fps"]), label=header.get("label")
    )


def read_kpjl_header(path: Union[str, Path]) -> dict:
    """Header object only (cheap inspection without parsing frames)."""
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ArtifactFormatError(f"{path}: bad header line: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ArtifactFormatError(f"{path}: not a {FORMAT_NAME} file")
    return header
