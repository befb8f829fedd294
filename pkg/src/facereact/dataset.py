"""Corpus ingestion and deterministic per-emotion train/test splits.

Layout on disk: ``<root>/<emotion>/<clip>.kpjl``.  The split is
materialized into a JSON manifest so PCA training, student training, the
retrieval index and evaluation all provably consume the same partition.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import FULL_EMOTIONS, EmotionLabel, ExpressionSequence
from .exceptions import ArtifactFormatError, DatasetError, FaceReactError
from .kpjl import read_kpjl

MANIFEST_FORMAT = "facereact-manifest"
MANIFEST_VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLIT_UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest root
    label: str
    duration_s: float
    fps: float
    n_frames: int
    split: str = SPLIT_UNASSIGNED


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    emotions: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]
    rejects: tuple[dict, ...] = ()
    seed: Optional[int] = None
    ratio: Optional[float] = None

    def select(
        self,
        split: Optional[str] = None,
        emotions: Optional[Iterable[str]] = None,
    ) -> list[ManifestEntry]:
        wanted = None if emotions is None else {str(e).lower() for e in emotions}
        out = []
        for entry in self.entries:
            if split is not None and entry.split != split:
                continue
            if wanted is not None and entry.label not in wanted:
                continue
            out.append(entry)
        return out

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path

    def load_sequence(self, entry: ManifestEntry) -> ExpressionSequence:
        seq = read_kpjl(self.resolve(entry))
        if seq.label is None or seq.label != entry.label:
            # Directory name is authoritative for supervision.
            seq = ExpressionSequence(seq.frames, fps=seq.fps, label=entry.label)
        return seq

    def load_sequences(
        self,
        split: Optional[str] = None,
        emotions: Optional[Iterable[str]] = None,
    ) -> list[ExpressionSequence]:
        return [self.load_sequence(e) for e in self.select(split, emotions)]

    def counts(self) -> dict:
        by_label: dict[str, dict[str, int]] = {}
        for entry in self.entries:
            per = by_label.setdefault(entry.label, {})
            per[entry.split] = per.get(entry.split, 0) + 1
        return by_label


def scan(
    root: Union[str, Path], emotions: Optional[Sequence[str]] = None
) -> DatasetManifest:
    """Walk ``root`` and build an unsplit manifest; malformed files become rejects."""
    root = Path(root).resolve()
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    allowed = tuple(EmotionLabel(e) for e in (emotions or FULL_EMOTIONS))
    entries = []
    rejects = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            label = EmotionLabel(sub.name, allowed=allowed)
        except ValueError as exc:
            raise DatasetError(str(exc)) from exc
        for clip in sorted(sub.glob("*.kpjl")):
            rel = str(clip.relative_to(root))
            try:
                seq = read_kpjl(clip)
            except (FaceReactError, ValueError) as exc:
                rejects.append({"path": rel, "reason": str(exc)})
                continue
            entries.append(
                ManifestEntry(
                    path=rel,
                    label=label,
                    duration_s=len(seq) / seq.fps,
                    fps=seq.fps,
                    n_frames=len(seq),
                )
            )
    if not entries:
        raise DatasetError(f"no parseable clips under {root}")
    entries.sort(key=lambda e: e.path)
    return DatasetManifest(
        root=str(root),
        emotions=allowed,
        entries=tuple(entries),
        rejects=tuple(rejects),
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(manifest: DatasetManifest, ratio: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Assign per-emotion train/test with |train| = round-half-up(ratio * n).

    The shuffle is drawn from one generator seeded with ``seed``, consumed
    in sorted-emotion order, so the assignment is a pure function of
    (manifest contents, ratio, seed).
    """
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    by_label: dict[str, list[ManifestEntry]] = {}
    for entry in manifest.entries:
        by_label.setdefault(entry.label, []).append(entry)

    rng = np.random.default_rng(seed)
    assigned: dict[str, str] = {}
    for label in sorted(by_label):
        clips = sorted(by_label[label], key=lambda e: e.path)
        if len(clips) < 2:
            raise DatasetError(
                f"emotion {label!r} has {len(clips)} clip(s); need at least 2 to split"
            )
        n_train = _round_half_up(ratio * len(clips))
        order = rng.permutation(len(clips))
        for rank, idx in enumerate(order):
            assigned[clips[idx].path] = SPLIT_TRAIN if rank < n_train else SPLIT_TEST
    entries = tuple(
        replace(entry, split=assigned[entry.path]) for entry in manifest.entries
    )
    return replace(manifest, entries=entries, seed=int(seed), ratio=float(ratio))


def save_manifest(path: Union[str, Path], manifest: DatasetManifest) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "root": manifest.root,
        "emotions": list(manifest.emotions),
        "seed": manifest.seed,
        "ratio": manifest.ratio,
        "entries": [asdict(e) for e in manifest.entries],
        "rejects": list(manifest.rejects),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise ArtifactFormatError(f"{path}: not a {MANIFEST_FORMAT} file")
    if doc.get("version") != MANIFEST_VERSION:
        raise ArtifactFormatError(f"{path}: unsupported version {doc.get('version')!r}")
    entries = tuple(ManifestEntry(**e) for e in doc["entries"])
    return DatasetManifest(
        root=doc["root"],
        emotions=tuple(doc["emotions"]),
        entries=entries,
        rejects=tuple(doc.get("rejects", ())),
        seed=doc.get("seed"),
        ratio=doc.get("ratio"),
    )


def verify_manifest(manifest: DatasetManifest) -> list[str]:
    """Check that every entry still matches the file on disk."""
    problems = []
    for entry in manifest.entries:
        path = manifest.resolve(entry)
        if not path.is_file():
            problems.append(f"{entry.path}: missing file")
            continue
        try:
            seq = read_kpjl(path)
        except (FaceReactError, ValueError) as exc:
            problems.append(f"{entry.path}: unreadable: {exc}")
            continue
        if len(seq) != entry.n_frames:
            problems.append(
                f"{entry.path}: {len(seq)} frames on disk, manifest says {entry.n_frames}"
            )
        if seq.fps != entry.fps:
            problems.append(
                f"{entry.path}: fps {seq.fps} on disk, manifest says {entry.fps}"
            )
    return problems


def describe_manifest(manifest: DatasetManifest) -> dict:
    return {
        "kind": "dataset-manifest",
        "root": manifest.root,
        "emotions": list(manifest.emotions),
        "seed": manifest.seed,
        "ratio": manifest.ratio,
        "entries": len(manifest.entries),
        "rejects": len(manifest.rejects),
        "counts": manifest.counts(),
    }
