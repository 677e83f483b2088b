import json

import numpy as np
import pytest

from mapsparse import (
    CameraModel,
    Keyframe,
    Landmark,
    Map,
    MapFormatError,
    MapIntegrityError,
    Observation,
    Pose,
    association_matrix,
    load_map,
    project,
    save_map,
)
from conftest import make_camera, make_map


def write_doc(tmp_path, doc, name="m.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def minimal_doc():
    return {
        "cameras": [{"id": 0, "fx": 100, "fy": 100, "cx": 320, "cy": 240, "width": 640, "height": 480}],
        "keyframes": [
            {"id": 0, "camera_id": 0, "q": [1, 0, 0, 0], "t": [0, 0, 0]},
            {"id": 1, "camera_id": 0, "q": [1, 0, 0, 0], "t": [1, 0, 0]},
        ],
        "landmarks": [
            {"id": 0, "p": [0.0, 0.0, 2.0], "match_count": 3},
            {"id": 1, "p": [0.5, 0.0, 3.0], "match_count": 2},
            {"id": 2, "p": [-0.5, 0.2, 4.0], "match_count": 1},
        ],
        "observations": [
            {"kf": 0, "lm": 0, "u": 320.0, "v": 240.0},
            {"kf": 0, "lm": 1, "u": 336.7, "v": 240.0},
            {"kf": 1, "lm": 1, "u": 303.3, "v": 240.0},
            {"kf": 1, "lm": 2, "u": 282.5, "v": 245.0},
        ],
    }


def test_load_well_formed(tmp_path):
    mp = load_map(write_doc(tmp_path, minimal_doc()))
    assert mp.n_landmarks == 3
    assert mp.n_keyframes == 2
    assert len(mp.observations) == 4


def test_load_dangling_landmark(tmp_path):
    doc = minimal_doc()
    doc["observations"].append({"kf": 0, "lm": 99, "u": 1.0, "v": 1.0})
    with pytest.raises(MapIntegrityError, match="99"):
        load_map(write_doc(tmp_path, doc))


def test_load_duplicate_observation(tmp_path):
    doc = minimal_doc()
    doc["observations"].append({"kf": 0, "lm": 0, "u": 5.0, "v": 5.0})
    with pytest.raises(MapFormatError, match="duplicate"):
        load_map(write_doc(tmp_path, doc))


def test_load_missing_field_names_record(tmp_path):
    doc = minimal_doc()
    del doc["landmarks"][1]["match_count"]
    with pytest.raises(MapFormatError, match=r"landmarks\[1\].*match_count"):
        load_map(write_doc(tmp_path, doc))


def test_load_rejects_bad_quaternion(tmp_path):
    doc = minimal_doc()
    doc["keyframes"][0]["q"] = [1, 1, 0, 0]
    with pytest.raises(MapFormatError, match="quaternion"):
        load_map(write_doc(tmp_path, doc))


def test_load_rejects_out_of_bounds_pixel(tmp_path):
    doc = minimal_doc()
    doc["observations"][0]["u"] = 640.0
    with pytest.raises(MapFormatError, match="outside"):
        load_map(write_doc(tmp_path, doc))


def test_observed_landmark_needs_match_count(tmp_path):
    doc = minimal_doc()
    doc["landmarks"][0]["match_count"] = 0
    with pytest.raises(MapFormatError, match="match_count"):
        load_map(write_doc(tmp_path, doc))


def test_round_trip(tmp_path):
    mp = load_map(write_doc(tmp_path, minimal_doc()))
    out = tmp_path / "rt.json"
    save_map(mp, out)
    mp2 = load_map(out)
    assert [l.id for l in mp2.landmarks] == [l.id for l in mp.landmarks]
    assert np.array_equal(mp2.landmark_positions, mp.landmark_positions)
    assert len(mp2.observations) == len(mp.observations)
    out2 = tmp_path / "rt2.json"
    save_map(mp2, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_load_order_irrelevant(tmp_path):
    doc = minimal_doc()
    doc["landmarks"] = doc["landmarks"][::-1]
    doc["keyframes"] = doc["keyframes"][::-1]
    mp = load_map(write_doc(tmp_path, doc))
    assert [l.id for l in mp.landmarks] == [0, 1, 2]
    assert [k.id for k in mp.keyframes] == [0, 1]


def test_project_principal_axis():
    cam = make_camera()
    assert project(cam, Pose.identity(), [0, 0, 2]) == (320.0, 240.0)


def test_project_offset_point():
    cam = make_camera()
    assert project(cam, Pose.identity(), [1, 0, 2]) == (370.0, 240.0)


def test_project_behind_camera():
    cam = make_camera()
    assert project(cam, Pose.identity(), [0, 0, -1]) is None


def test_project_out_of_frame():
    cam = make_camera()
    assert project(cam, Pose.identity(), [100, 0, 2]) is None


def test_project_scale_consistent():
    cam = make_camera()
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = rng.uniform([-2, -2, 0.5], [2, 2, 9])
        for s in (2.0, 7.5, 0.5):
            a = project(cam, Pose.identity(), p)
            b = project(cam, Pose.identity(), s * p)
            if a is not None and b is not None:
                assert a == pytest.approx(b, abs=1e-9)


def test_association_matrix_transcription():
    mp = make_map([(0, 0), (0, 1), (1, 1), (1, 2)])
    A = association_matrix(mp)
    assert A.shape == (2, 3)
    assert np.array_equal(A.toarray(), [[1, 1, 0], [0, 1, 1]])
    assert A.nnz == len(mp.observations)


def test_association_matrix_empty():
    mp = make_map([], n_landmarks=3, n_keyframes=2)
    A = association_matrix(mp)
    assert A.shape == (2, 3)
    assert A.nnz == 0


def test_association_column_sums_match_observations(loop_scene):
    A = association_matrix(loop_scene)
    col = np.asarray(A.sum(axis=0)).ravel()
    counts = np.zeros(loop_scene.n_landmarks)
    for o in loop_scene.observations:
        counts[loop_scene.landmark_index[o.landmark_id]] += 1
    assert np.array_equal(col, counts)


def test_pose_center_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        from scipy.spatial.transform import Rotation

        rot = Rotation.from_rotvec(axis * rng.uniform(0, 3)).as_matrix()
        center = rng.normal(size=3)
        pose = Pose.from_matrix(rot, -rot @ center)
        assert pose.center() == pytest.approx(center, abs=1e-12)


def test_restrict_landmarks_keeps_ids(loop_scene):
    selected = np.zeros(loop_scene.n_landmarks, dtype=np.int8)
    selected[::3] = 1
    compact = loop_scene.restrict_landmarks(selected)
    kept = {loop_scene.landmarks[j].id for j in np.flatnonzero(selected)}
    assert {l.id for l in compact.landmarks} == kept
    assert all(o.landmark_id in kept for o in compact.observations)
    assert compact.n_keyframes == loop_scene.n_keyframes
