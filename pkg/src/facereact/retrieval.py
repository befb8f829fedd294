"""Nearest-neighbor reaction retrieval over stored training windows.

Training streams are cut into fixed-length windows (default 60 frames
every 30), each window is centered by removing its temporal mean frame,
and queries are matched by Euclidean distance in the centered space.  The
matched window is replayed at the query's own mean pose, so the reaction
appears at the user's head position.  A plain linear scan keeps this
exactly reproducible; index sizes are a few hundred entries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
from sklearn.base import BaseEstimator

from .core import ExpressionSequence, subtract_mean_frame, window
from .exceptions import ArtifactFormatError, EmptyIndexError
from .validation import check_sequence

RIX_MAGIC = b"RIX1"
_RIX_HEADER = struct.Struct("<4sIIII")  # magic, n_kp, T, stride, entry_count

DEFAULT_WINDOW = 60
DEFAULT_STRIDE = 30


@dataclass(frozen=True)
class RetrievalEntry:
    """One stored reaction window with provenance."""

    centered: np.ndarray  # (D,) flat, temporal mean frame removed
    mean_frame: np.ndarray  # (n_kp*3,)
    label: Optional[str]
    source_id: str
    offset: int  # start frame within the source stream

    def sort_key(self):
        return (self.source_id, self.offset)


class RetrievalMatch(NamedTuple):
    response: ExpressionSequence
    entry: RetrievalEntry
    distance: float


class NearestReactionIndex(BaseEstimator):
    """Retrieval responder: fit stores windows, predict replays the closest.

    Ties are broken by the lowest (source_id, offset) pair, which makes
    matching a total, reproducible order.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE):
        self.window = window
        self.stride = stride

    def fit(self, X, y=None):
        """Build the index from labeled streams.

        ``X`` is a sequence of ExpressionSequence (auto-named stream-NNN)
        or of (source_id, ExpressionSequence) pairs.  Streams shorter than
        the window contribute nothing; an index with zero entries is an
        error.
        """
        named = []
        for i, item in enumerate(X):
            if isinstance(item, ExpressionSequence):
                named.append((f"stream-{i:03d}", item))
            else:
                source_id, seq = item
                named.append((str(source_id), seq))
        entries = []
        n_kp = None
        for source_id, stream in named:
            check_sequence(stream, n_kp=n_kp, name=f"stream {source_id!r}")
            n_kp = stream.n_kp
            for w_index, win in enumerate(window(stream, self.window, self.stride)):
                centered, mean_frame = subtract_mean_frame(win)
                entries.append(
                    RetrievalEntry(
                        centered=centered.as_array().reshape(-1),
                        mean_frame=mean_frame,
                        label=stream.label,
                        source_id=source_id,
                        offset=w_index * self.stride,
                    )
                )
        if not entries:
            raise EmptyIndexError(
                f"no stream is long enough for a {self.window}-frame window"
            )
        entries.sort(key=RetrievalEntry.sort_key)
        self.entries_ = entries
        self.n_kp_ = n_kp
        self.dim_ = self.window * n_kp * 3
        self._matrix_ = np.stack([e.centered for e in entries])
        return self

    def __len__(self) -> int:
        return len(getattr(self, "entries_", ()))

    def query(self, seq: ExpressionSequence) -> RetrievalMatch:
        """Closest stored window to ``seq``, re-offset by the query's mean pose."""
        check_sequence(seq, n_kp=self.n_kp_, n_frames=self.window)
        centered, query_mean = subtract_mean_frame(seq)
        q = centered.as_array().reshape(-1)
        dists = np.linalg.norm(self._matrix_ - q, axis=1)
        # argmin returns the first minimum; entries are sorted by
        # (source_id, offset), so exact ties resolve to the lowest pair.
        best = int(np.argmin(dists))
        entry = self.entries_[best]
        coords = entry.centered.reshape(self.window, self.n_kp_, 3) + query_mean.reshape(
            self.n_kp_, 3
        )
        response = seq.with_coords(coords, label=entry.label)
        return RetrievalMatch(response, entry, float(dists[best]))

    def predict(self, seq: ExpressionSequence) -> ExpressionSequence:
        return self.query(seq).response

    # -- persistence (RIX1, binary little-endian) --------------------------

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(
                _RIX_HEADER.pack(
                    RIX_MAGIC, self.n_kp_, self.window, self.stride, len(self.entries_)
                )
            )
            for e in self.entries_:
                for text in (e.label or "", e.source_id):
                    blob = text.encode("utf-8")
                    fh.write(struct.pack("<I", len(blob)))
                    fh.write(blob)
                fh.write(struct.pack("<I", e.offset))
                fh.write(np.ascontiguousarray(e.mean_frame, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(e.centered, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NearestReactionIndex":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _RIX_HEADER.size or raw[:4] != RIX_MAGIC:
            raise ArtifactFormatError(f"{path}: not a RIX1 retrieval-index file")
        magic, n_kp, win, stride, count = _RIX_HEADER.unpack_from(raw)
        dim = win * n_kp * 3
        offset = _RIX_HEADER.size
        entries = []
        try:
            for _ in range(count):
                texts = []
                for _ in range(2):
                    (length,) = struct.unpack_from("<I", raw, offset)
                    offset += 4
                    texts.append(raw[offset : offset + length].decode("utf-8"))
                    offset += length
                (frame_offset,) = struct.unpack_from("<I", raw, offset)
                offset += 4
                mean_frame = np.frombuffer(
                    raw, dtype="<f8", count=n_kp * 3, offset=offset
                ).copy()
                offset += 8 * n_kp * 3
                centered = np.frombuffer(
                    raw, dtype="<f8", count=dim, offset=offset
                ).copy()
                offset += 8 * dim
                entries.append(
                    RetrievalEntry(
                        centered=centered,
                        mean_frame=mean_frame,
                        label=texts[0] or None,
                        source_id=texts[1],
                        offset=int(frame_offset),
                    )
                )
        except (struct.error, ValueError) as exc:
            raise ArtifactFormatError(f"{path}: truncated entry payload") from exc
        if offset != len(raw):
            raise ArtifactFormatError(f"{path}: trailing bytes after last entry")
        index = cls(window=int(win), stride=int(stride))
        index.entries_ = entries
        index.n_kp_ = int(n_kp)
        index.dim_ = dim
        index._matrix_ = (
            np.stack([e.centered for e in entries]) if entries else np.empty((0, dim))
        )
        return index

    def describe(self) -> dict:
        labels = sorted({e.label for e in self.entries_ if e.label})
        return {
            "kind": "retrieval-index",
            "n_kp": self.n_kp_,
            "window": self.window,
            "stride": self.stride,
            "entries": len(self.entries_),
            "labels": labels,
        }
