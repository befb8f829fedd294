"""Landmark-index maps: which extractor landmarks feed the 146-keypoint order.

The default map selects 146 indices out of the face-mesh extractor's 468
landmarks, grouped as face oval, brows, eyes, nose region and lips.  The
exact subset used to build any given engine model is a data decision, so
the map ships as a JSON file (a plain list of integers) and can be swapped
per deployment; it must simply match the map used when the models were
trained.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Union

N_KEYPOINTS = 146
EXTRACTOR_LANDMARKS = 468  # face-mesh topology without iris refinement


def default_landmark_map() -> list[int]:
    text = resources.files("facereact_capture").joinpath(
        "data/landmark_map_146.json"
    ).read_text(encoding="utf-8")
    return validate_landmark_map(json.loads(text), source="<default>")


def load_landmark_map(path: Union[str, Path]) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_landmark_map(json.load(fh), source=str(path))


def validate_landmark_map(indices, source: str = "<map>") -> list[int]:
    if not isinstance(indices, list) or not all(
        isinstance(i, int) and not isinstance(i, bool) for i in indices
    ):
        raise ValueError(f"{source}: landmark map must be a JSON list of integers")
    if len(indices) != N_KEYPOINTS:
        raise ValueError(
            f"{source}: landmark map must have {N_KEYPOINTS} indices, got {len(indices)}"
        )
    if len(set(indices)) != len(indices):
        raise ValueError(f"{source}: landmark indices must be unique")
    out_of_range = [i for i in indices if i < 0 or i >= EXTRACTOR_LANDMARKS]
    if out_of_range:
        raise ValueError(
            f"{source}: indices outside [0, {EXTRACTOR_LANDMARKS}): {out_of_range[:5]}"
        )
    return list(indices)
