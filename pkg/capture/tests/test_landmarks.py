import json

import pytest

from facereact_capture.landmarks import (
    EXTRACTOR_LANDMARKS,
    N_KEYPOINTS,
    default_landmark_map,
    load_landmark_map,
    validate_landmark_map,
)


def test_default_map_is_valid():
    indices = default_landmark_map()
    assert len(indices) == N_KEYPOINTS == 146
    assert len(set(indices)) == 146
    assert all(0 <= i < EXTRACTOR_LANDMARKS for i in indices)


def test_load_from_file(tmp_path):
    path = tmp_path / "map.json"
    path.write_text(json.dumps(list(range(146))))
    assert load_landmark_map(path) == list(range(146))


@pytest.mark.parametrize(
    "bad",
    [
        list(range(145)),                      # too short
        list(range(147)),                      # too long
        [0] * 146,                             # duplicates
        list(range(145)) + [500],              # out of range
        list(range(145)) + [True],             # bool is not an index
        "not a list",
    ],
)
def test_invalid_maps_rejected(bad):
    with pytest.raises(ValueError):
        validate_landmark_map(bad)
