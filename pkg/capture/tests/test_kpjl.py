import json
import math

import numpy as np
import pytest

from facereact_capture.kpjl import KpjlWriter, read_kpjl


def test_writer_round_trip(tmp_path):
    path = tmp_path / "clip.kpjl"
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(5, 3, 3))
    with KpjlWriter(path, n_kp=3, fps=30.0, label="Happy") as writer:
        for i in range(5):
            writer.write_frame(i / 30.0, frames[i])
    header, read_frames = read_kpjl(path)
    assert header == {
        "format": "kpjl",
        "version": 1,
        "n_kp": 3,
        "fps": 30.0,
        "label": "happy",
    }
    assert len(read_frames) == 5
    assert read_frames[0]["t"] == 0.0
    assert np.allclose(np.array(read_frames[2]["p"]), frames[2])


def test_non_increasing_timestamps_nudged(tmp_path):
    path = tmp_path / "clip.kpjl"
    with KpjlWriter(path, n_kp=1, fps=30.0) as writer:
        t1 = writer.write_frame(0.5, [[0, 0, 0]])
        t2 = writer.write_frame(0.5, [[1, 1, 1]])
        t3 = writer.write_frame(0.2, [[2, 2, 2]])
    assert t1 < t2 < t3


def test_wrong_shape_rejected(tmp_path):
    path = tmp_path / "clip.kpjl"
    with KpjlWriter(path, n_kp=2, fps=30.0) as writer:
        writer.write_frame(0.0, [[0, 0, 0], [1, 1, 1]])
        with pytest.raises(ValueError):
            writer.write_frame(0.1, [[0, 0, 0]])
        with pytest.raises(ValueError):
            writer.write_frame(0.2, [[0, 0], [1, 1]])


def test_nonfinite_rejected(tmp_path):
    path = tmp_path / "clip.kpjl"
    with KpjlWriter(path, n_kp=1, fps=30.0) as writer:
        writer.write_frame(0.0, [[0, 0, 0]])
        with pytest.raises(ValueError):
            writer.write_frame(0.1, [[math.nan, 0, 0]])


def test_empty_recording_leaves_no_stub(tmp_path):
    path = tmp_path / "empty.kpjl"
    with KpjlWriter(path, n_kp=1, fps=30.0):
        pass
    assert not path.exists()


def test_lines_are_json_objects(tmp_path):
    path = tmp_path / "clip.kpjl"
    with KpjlWriter(path, n_kp=1, fps=30.0) as writer:
        writer.write_frame(0.0, [[0.25, 0.5, 0.01]])
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[1])["p"] == [[0.25, 0.5, 0.01]]
