"""Map data model: landmarks, keyframes, observations, pinhole projection.

Poses are stored world-to-camera: a world point ``p`` maps to camera
coordinates as ``R @ p + t``. Quaternions use (w, x, y, z) order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial.transform import Rotation


class MapFormatError(ValueError):
    """Raised when a map file violates the schema or a field-level invariant."""


class MapIntegrityError(ValueError):
    """Raised when records reference ids that do not exist in the map."""


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics for one camera."""

    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise MapFormatError(f"camera {self.id}: focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise MapFormatError(f"camera {self.id}: image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise MapFormatError(f"camera {self.id}: principal point outside image")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world-to-camera transform, quaternion (w, x, y, z) + translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(4))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        n = float(np.linalg.norm(self.q))
        if abs(n - 1.0) > 1e-9:
            raise MapFormatError(f"quaternion norm {n!r} differs from 1 by more than 1e-9")

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    def center(self) -> np.ndarray:
        """Optical center in world coordinates (-R^T t)."""
        return -self.rotation_matrix().T @ self.t

    @staticmethod
    def from_matrix(rot: np.ndarray, t: np.ndarray) -> "Pose":
        x, y, z, w = Rotation.from_matrix(rot).as_quat()
        q = np.array([w, x, y, z])
        q /= np.linalg.norm(q)
        return Pose(q=q, t=np.asarray(t, dtype=float))

    @staticmethod
    def identity() -> "Pose":
        return Pose(q=np.array([1.0, 0.0, 0.0, 0.0]), t=np.zeros(3))


@dataclass(frozen=True, eq=False)
class Landmark:
    id: int
    position: np.ndarray  # (3,) world frame, meters
    match_count: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.position)):
            raise MapFormatError(f"landmark {self.id}: non-finite position")
        if self.match_count < 0:
            raise MapFormatError(f"landmark {self.id}: negative match_count")


@dataclass(frozen=True, eq=False)
class Keyframe:
    id: int
    pose: Pose
    camera: CameraModel


@dataclass(frozen=True, eq=False)
class Observation:
    keyframe_id: int
    landmark_id: int
    pixel: np.ndarray  # (2,) = (u, v)

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float).reshape(2))


class Map:
    """Immutable landmark map with dense internal indices sorted by id.

    Index i of ``keyframes`` / index j of ``landmarks`` are the row/column
    indices used by every matrix built from this map.
    """

    def __init__(self, cameras, keyframes, landmarks, observations, metadata=None):
        self.cameras = sorted(cameras, key=lambda c: c.id)
        self.keyframes = sorted(keyframes, key=lambda k: k.id)
        self.landmarks = sorted(landmarks, key=lambda l: l.id)
        self.observations = list(observations)
        self.metadata = dict(metadata or {})
        self._validate()

        self.landmark_index = {lm.id: j for j, lm in enumerate(self.landmarks)}
        self.keyframe_index = {kf.id: i for i, kf in enumerate(self.keyframes)}
        self.landmark_positions = (
            np.stack([lm.position for lm in self.landmarks])
            if self.landmarks
            else np.zeros((0, 3))
        )
        self.match_counts = np.array([lm.match_count for lm in self.landmarks], dtype=float)
        self.keyframe_centers = (
            np.stack([kf.pose.center() for kf in self.keyframes])
            if self.keyframes
            else np.zeros((0, 3))
        )
        self._build_obs_index()

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    @property
    def n_keyframes(self) -> int:
        return len(self.keyframes)

    def _validate(self):
        for name, items in (("camera", self.cameras), ("keyframe", self.keyframes), ("landmark", self.landmarks)):
            ids = [x.id for x in items]
            if len(ids) != len(set(ids)):
                dup = sorted({i for i in ids if ids.count(i) > 1})
                raise MapFormatError(f"duplicate {name} ids: {dup}")
        cam_ids = {c.id for c in self.cameras}
        kf_ids = {k.id for k in self.keyframes}
        lm_ids = {l.id for l in self.landmarks}
        dangling_cams = sorted({k.camera.id for k in self.keyframes} - cam_ids)
        if dangling_cams:
            raise MapIntegrityError(f"keyframes reference unknown camera ids: {dangling_cams}")
        bad_kf = sorted({o.keyframe_id for o in self.observations} - kf_ids)
        bad_lm = sorted({o.landmark_id for o in self.observations} - lm_ids)
        if bad_kf or bad_lm:
            raise MapIntegrityError(
                f"observations reference unknown ids: keyframes {bad_kf}, landmarks {bad_lm}"
            )
        seen = set()
        kf_by_id = {k.id: k for k in self.keyframes}
        for idx, o in enumerate(self.observations):
            key = (o.keyframe_id, o.landmark_id)
            if key in seen:
                raise MapFormatError(
                    f"observation {idx}: duplicate (keyframe {o.keyframe_id}, landmark {o.landmark_id})"
                )
            seen.add(key)
            cam = kf_by_id[o.keyframe_id].camera
            u, v = o.pixel
            if not (0 <= u < cam.width and 0 <= v < cam.height):
                raise MapFormatError(
                    f"observation {idx}: pixel ({u}, {v}) outside {cam.width}x{cam.height} image"
                )
        n_obs = {}
        for o in self.observations:
            n_obs[o.landmark_id] = n_obs.get(o.landmark_id, 0) + 1
        for lm in self.landmarks:
            if n_obs.get(lm.id, 0) >= 1 and lm.match_count < 1:
                raise MapFormatError(
                    f"landmark {lm.id}: observed but match_count = {lm.match_count}"
                )

    def _build_obs_index(self):
        per_kf_lm = [[] for _ in self.keyframes]
        per_lm_kf = [[] for _ in self.landmarks]
        for o in self.observations:
            i = self.keyframe_index[o.keyframe_id]
            j = self.landmark_index[o.landmark_id]
            per_kf_lm[i].append(j)
            per_lm_kf[j].append(i)
        self.obs_by_keyframe = [np.array(sorted(v), dtype=np.int64) for v in per_kf_lm]
        self.obs_by_landmark = [np.array(sorted(v), dtype=np.int64) for v in per_lm_kf]

    def restrict_landmarks(self, selected: np.ndarray) -> "Map":
        """New map keeping only landmarks with ``selected[j] != 0`` (original ids)."""
        selected = np.asarray(selected).astype(bool)
        keep_ids = {self.landmarks[j].id for j in np.flatnonzero(selected)}
        landmarks = [lm for lm in self.landmarks if lm.id in keep_ids]
        observations = [o for o in self.observations if o.landmark_id in keep_ids]
        return Map(self.cameras, self.keyframes, landmarks, observations, dict(self.metadata))


def project_points(camera: CameraModel, pose: Pose, points: np.ndarray):
    """Project world points; returns (uv array, validity mask).

    A point is valid when it is in front of the camera (z > 0) and its pixel
    lies inside [0, width) x [0, height). Pixels of invalid points are NaN.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    cam_pts = points @ pose.rotation_matrix().T + pose.t
    z = cam_pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam_pts[:, 0] / z + camera.cx
        v = camera.fy * cam_pts[:, 1] / z + camera.cy
    valid = (z > 0) & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    uv = np.stack([u, v], axis=1)
    uv[~valid] = np.nan
    return uv, valid


def project(camera: CameraModel, pose: Pose, point) -> Optional[tuple]:
    """Project one world point, or None when invisible (behind or out of frame)."""
    uv, valid = project_points(camera, pose, np.asarray(point, dtype=float).reshape(1, 3))
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def association_matrix(mp: Map) -> sp.csr_matrix:
    """Binary keyframe-landmark matrix A (M x N); A[i, j] = 1 iff keyframe i observes landmark j."""
    rows = np.array([mp.keyframe_index[o.keyframe_id] for o in mp.observations], dtype=np.int64)
    cols = np.array([mp.landmark_index[o.landmark_id] for o in mp.observations], dtype=np.int64)
    data = np.ones(len(mp.observations), dtype=np.int8)
    return sp.csr_matrix((data, (rows, cols)), shape=(mp.n_keyframes, mp.n_landmarks))


def _require(cond, kind, record, idx, msg):
    if not cond:
        raise MapFormatError(f"{kind}[{idx}]: {msg} (record: {record!r})")


def load_map(path) -> Map:
    """Load and validate a map from a JSON file (see ``save_map`` for the schema)."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise MapFormatError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MapFormatError("top-level document must be an object")

    cameras = []
    for idx, rec in enumerate(doc.get("cameras", [])):
        for key in ("id", "fx", "fy", "cx", "cy", "width", "height"):
            _require(key in rec, "cameras", rec, idx, f"missing field '{key}'")
        cameras.append(
            CameraModel(
                id=int(rec["id"]), fx=float(rec["fx"]), fy=float(rec["fy"]),
                cx=float(rec["cx"]), cy=float(rec["cy"]),
                width=int(rec["width"]), height=int(rec["height"]),
            )
        )
    cam_by_id = {c.id: c for c in cameras}

    keyframes = []
    for idx, rec in enumerate(doc.get("keyframes", [])):
        for key in ("id", "camera_id", "q", "t"):
            _require(key in rec, "keyframes", rec, idx, f"missing field '{key}'")
        _require(len(rec["q"]) == 4, "keyframes", rec, idx, "field 'q' must have 4 entries")
        _require(len(rec["t"]) == 3, "keyframes", rec, idx, "field 't' must have 3 entries")
        cam_id = int(rec["camera_id"])
        if cam_id not in cam_by_id:
            raise MapIntegrityError(f"keyframes reference unknown camera ids: [{cam_id}]")
        try:
            pose = Pose(q=np.array(rec["q"], dtype=float), t=np.array(rec["t"], dtype=float))
        except MapFormatError as e:
            raise MapFormatError(f"keyframes[{idx}]: {e}") from e
        keyframes.append(Keyframe(id=int(rec["id"]), pose=pose, camera=cam_by_id[cam_id]))

    landmarks = []
    for idx, rec in enumerate(doc.get("landmarks", [])):
        for key in ("id", "p", "match_count"):
            _require(key in rec, "landmarks", rec, idx, f"missing field '{key}'")
        _require(len(rec["p"]) == 3, "landmarks", rec, idx, "field 'p' must have 3 entries")
        landmarks.append(
            Landmark(id=int(rec["id"]), position=np.array(rec["p"], dtype=float),
                     match_count=int(rec["match_count"]))
        )

    observations = []
    for idx, rec in enumerate(doc.get("observations", [])):
        for key in ("kf", "lm", "u", "v"):
            _require(key in rec, "observations", rec, idx, f"missing field '{key}'")
        observations.append(
            Observation(keyframe_id=int(rec["kf"]), landmark_id=int(rec["lm"]),
                        pixel=np.array([float(rec["u"]), float(rec["v"])]))
        )

    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise MapFormatError("metadata must map strings to strings")

    return Map(cameras, keyframes, landmarks, observations, metadata)


def map_to_dict(mp: Map) -> dict:
    return {
        "cameras": [
            {"id": c.id, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
             "width": c.width, "height": c.height}
            for c in mp.cameras
        ],
        "keyframes": [
            {"id": k.id, "camera_id": k.camera.id,
             "q": [float(x) for x in k.pose.q], "t": [float(x) for x in k.pose.t]}
            for k in mp.keyframes
        ],
        "landmarks": [
            {"id": l.id, "p": [float(x) for x in l.position], "match_count": l.match_count}
            for l in mp.landmarks
        ],
        "observations": [
            {"kf": o.keyframe_id, "lm": o.landmark_id,
             "u": float(o.pixel[0]), "v": float(o.pixel[1])}
            for o in mp.observations
        ],
        "metadata": dict(mp.metadata),
    }


def save_map(mp: Map, path) -> None:
    """Write a map as canonical JSON (sorted keys, shortest float repr)."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(map_to_dict(mp), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
