"""Seeded synthetic maps, trajectories, and query views for desk-scale runs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .mapmodel import CameraModel, Keyframe, Landmark, Map, Observation, Pose, project_points

DEPTH_WINDOW = (0.5, 20.0)  # observations only inside this camera-z range
_MAX_REGEN_ROUNDS = 6


def default_camera() -> CameraModel:
    return CameraModel(id=0, fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class SceneSpec:
    n_landmarks: int = 2000
    n_keyframes: int = 50
    trajectory: str = "loop"            # loop | corridor | random-walk
    placement: str = "uniform-box"      # uniform-box | clustered
    clusters: int = 8                   # clustered placement only
    cluster_sigma: float = 0.5
    camera: CameraModel = field(default_factory=default_camera)
    noise_px: float = 0.5
    seed: int = 0
    min_obs_per_keyframe: int = 20

    def __post_init__(self):
        if self.n_landmarks < 1 or self.n_keyframes < 1:
            raise ValueError("counts must be positive")
        if self.noise_px < 0:
            raise ValueError("noise must be non-negative")
        if self.trajectory not in ("loop", "corridor", "random-walk"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.placement not in ("uniform-box", "clustered"):
            raise ValueError(f"unknown placement {self.placement!r}")

    @staticmethod
    def from_dict(doc: dict) -> "SceneSpec":
        doc = dict(doc)
        cam = doc.pop("camera", None)
        kwargs = dict(doc)
        if cam is not None:
            kwargs["camera"] = CameraModel(**cam)
        return SceneSpec(**kwargs)

    def to_dict(self) -> dict:
        c = self.camera
        return {
            "n_landmarks": self.n_landmarks, "n_keyframes": self.n_keyframes,
            "trajectory": self.trajectory, "placement": self.placement,
            "clusters": self.clusters, "cluster_sigma": self.cluster_sigma,
            "camera": {"id": c.id, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                       "width": c.width, "height": c.height},
            "noise_px": self.noise_px, "seed": self.seed,
            "min_obs_per_keyframe": self.min_obs_per_keyframe,
        }


def look_at_pose(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose for a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ValueError("camera cannot look at its own center")
    forward = forward / fn
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight along the up axis
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])  # rows: camera axes in world coords
    return Pose.from_matrix(rot, -rot @ center)


def _trajectory(spec: SceneSpec, rng: np.random.Generator):
    """Keyframe poses plus the box landmarks are drawn from."""
    m = spec.n_keyframes
    z = 1.5
    if spec.trajectory == "loop":
        radius = 8.0
        angles = 2.0 * math.pi * np.arange(m) / m
        centers = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.full(m, z)], axis=1)
        poses = [look_at_pose(c, np.array([0.0, 0.0, z])) for c in centers]
        box = (np.array([-5.0, -5.0, 0.0]), np.array([5.0, 5.0, 3.0]))
    elif spec.trajectory == "corridor":
        length = max(4.0, 0.4 * m)
        xs = np.linspace(0.0, length, m)
        centers = np.stack([xs, np.zeros(m), np.full(m, z)], axis=1)
        poses = [look_at_pose(c, c + np.array([5.0, 0.0, 0.0])) for c in centers]
        box = (np.array([2.0, -4.0, 0.0]), np.array([length + 14.0, 4.0, 3.0]))
    else:  # random-walk
        steps = rng.normal(size=(m, 2))
        heading = np.cumsum(0.35 * steps, axis=0)
        xy = np.cumsum(0.4 * np.stack([np.cos(heading[:, 0]), np.sin(heading[:, 0])], axis=1), axis=0)
        centers = np.column_stack([xy, np.full(m, z)])
        targets = np.vstack([centers[1:], centers[-1:] + np.array([0.5, 0.0, 0.0])])
        poses = []
        for c, t in zip(centers, targets):
            t = np.where(np.linalg.norm(t - c) < 1e-9, c + np.array([1.0, 0.0, 0.0]), t)
            poses.append(look_at_pose(c, t))
        lo = centers.min(axis=0) - np.array([6.0, 6.0, 1.5])
        hi = centers.max(axis=0) + np.array([6.0, 6.0, 1.5])
        box = (lo, hi)
    return poses, centers, box


def _place_landmarks(spec: SceneSpec, rng: np.random.Generator, box):
    lo, hi = box
    if spec.placement == "uniform-box":
        return rng.uniform(lo, hi, size=(spec.n_landmarks, 3))
    centers = rng.uniform(lo, hi, size=(spec.clusters, 3))
    assign = rng.integers(0, spec.clusters, size=spec.n_landmarks)
    return centers[assign] + rng.normal(scale=spec.cluster_sigma, size=(spec.n_landmarks, 3))


def generate_map(spec: SceneSpec) -> Map:
    """Deterministic synthetic map for a scene spec.

    Every keyframe observes every landmark that projects in-bounds inside the
    depth window; keyframes short of ``min_obs_per_keyframe`` get extra
    landmarks sampled inside their own viewing frustum. Landmarks that end up
    unobserved are dropped and ids reassigned densely.
    """
    rng = np.random.default_rng(spec.seed)
    poses, _, box = _trajectory(spec, rng)
    positions = _place_landmarks(spec, rng, box)
    cam = spec.camera

    rot_all = [p.rotation_matrix() for p in poses]
    for round_idx in range(_MAX_REGEN_ROUNDS + 1):
        visible = []
        short = []
        for i, pose in enumerate(poses):
            cam_pts = positions @ rot_all[i].T + pose.t
            uv, valid = project_points(cam, pose, positions)
            valid &= (cam_pts[:, 2] > DEPTH_WINDOW[0]) & (cam_pts[:, 2] < DEPTH_WINDOW[1])
            visible.append(np.flatnonzero(valid))
            if visible[-1].size < spec.min_obs_per_keyframe:
                short.append(i)
        if not short:
            break
        if round_idx == _MAX_REGEN_ROUNDS:
            raise ValueError(
                f"could not reach {spec.min_obs_per_keyframe} observations for "
                f"keyframes {short} after {_MAX_REGEN_ROUNDS} regeneration rounds"
            )
        extras = []
        for i in short:
            need = spec.min_obs_per_keyframe - visible[i].size
            u = rng.uniform(0.05 * cam.width, 0.95 * cam.width, size=2 * need)
            v = rng.uniform(0.05 * cam.height, 0.95 * cam.height, size=2 * need)
            depth = rng.uniform(2.0, 10.0, size=2 * need)
            pts_cam = np.stack([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth], axis=1)
            extras.append((pts_cam - poses[i].t) @ rot_all[i])
        positions = np.vstack([positions] + extras)

    observations = []
    obs_count = np.zeros(positions.shape[0], dtype=np.int64)
    for i, pose in enumerate(poses):
        idx = visible[i]
        if idx.size == 0:
            continue
        uv, _ = project_points(cam, pose, positions[idx])
        noisy = uv + rng.normal(scale=spec.noise_px, size=uv.shape) if spec.noise_px > 0 else uv
        noisy[:, 0] = np.clip(noisy[:, 0], 0.0, np.nextafter(float(cam.width), 0.0))
        noisy[:, 1] = np.clip(noisy[:, 1], 0.0, np.nextafter(float(cam.height), 0.0))
        for j, px in zip(idx, noisy):
            observations.append((i, int(j), px))
        obs_count[idx] += 1

    keep = np.flatnonzero(obs_count > 0)
    new_id = np.full(positions.shape[0], -1, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    match_noise = rng.integers(0, 6, size=keep.size)
    landmarks = [
        Landmark(id=int(new_id[j]), position=positions[j],
                 match_count=int(obs_count[j] + match_noise[new_id[j]]))
        for j in keep
    ]
    keyframes = [Keyframe(id=i, pose=pose, camera=cam) for i, pose in enumerate(poses)]
    obs = [
        Observation(keyframe_id=i, landmark_id=int(new_id[j]), pixel=px)
        for (i, j, px) in observations
    ]
    metadata = {"generator": "mapsparse.synthgen", "scene_spec": json.dumps(spec.to_dict(), sort_keys=True)}
    return Map([cam], keyframes, landmarks, obs, metadata)


@dataclass(frozen=True, eq=False)
class QueryView:
    pose: Pose
    camera: CameraModel
    label: str  # on-trajectory | offset | free-space


STRATA = ("on-trajectory", "offset", "free-space")


def _perturb_pose(pose: Pose, rng: np.random.Generator, max_t: float, max_deg: float) -> Pose:
    rot = pose.rotation_matrix()
    center = pose.center()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = direction * max_t * rng.uniform() ** (1.0 / 3.0)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(max_deg) * rng.uniform()
    d_rot = Rotation.from_rotvec(axis * angle).as_matrix()
    new_rot = d_rot @ rot
    new_center = center + shift
    return Pose.from_matrix(new_rot, -new_rot @ new_center)


def _offset_pose(pose: Pose, rng: np.random.Generator) -> Pose:
    rot = pose.rotation_matrix()
    center = pose.center()
    lateral_dirs = rot[0], -rot[0], rot[1], -rot[1]  # camera right/down axes in world
    direction = lateral_dirs[int(rng.integers(0, 4))]
    center = center + direction * rng.uniform(0.5, 2.0)
    yaw = math.radians(rng.uniform(-30.0, 30.0))
    d_rot = Rotation.from_rotvec(np.array([0.0, 0.0, yaw])).as_matrix()
    new_rot = rot @ d_rot.T
    return Pose.from_matrix(new_rot, -new_rot @ center)


def generate_queries(mp: Map, stratum: str, count: int, seed: int) -> list:
    """Deterministic query views of one stratum.

    on-trajectory: keyframe poses nudged by <= 0.1 m and <= 5 degrees.
    offset: keyframe poses shifted 0.5-2.0 m laterally and yawed <= 30 degrees.
    free-space: camera centers uniform in the padded map box, aimed at the
    landmark centroid.
    """
    if stratum not in STRATA:
        raise ValueError(f"unknown stratum {stratum!r}; expected one of {STRATA}")
    rng = np.random.default_rng(seed)
    out = []
    if count <= 0:
        return out
    if stratum == "free-space":
        pts = np.vstack([mp.landmark_positions, mp.keyframe_centers])
        lo, hi = pts.min(axis=0) - 1.0, pts.max(axis=0) + 1.0
        target = mp.landmark_positions.mean(axis=0)
        cam = mp.cameras[0]
        for _ in range(count):
            center = rng.uniform(lo, hi)
            while np.linalg.norm(center - target) < 1e-6:
                center = rng.uniform(lo, hi)
            out.append(QueryView(pose=look_at_pose(center, target), camera=cam, label=stratum))
        return out
    for i in range(count):
        kf = mp.keyframes[i % mp.n_keyframes]
        if stratum == "on-trajectory":
            pose = _perturb_pose(kf.pose, rng, max_t=0.1, max_deg=5.0)
        else:
            pose = _offset_pose(kf.pose, rng)
        out.append(QueryView(pose=pose, camera=kf.camera, label=stratum))
    return out


def save_queries(queries, path) -> None:
    doc = [
        {"q": [float(x) for x in qv.pose.q], "t": [float(x) for x in qv.pose.t],
         "camera_id": qv.camera.id, "label": qv.label}
        for qv in queries
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_queries(path, mp: Map) -> list:
    cam_by_id = {c.id: c for c in mp.cameras}
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    out = []
    for rec in doc:
        cam = cam_by_id.get(int(rec["camera_id"]))
        if cam is None:
            raise ValueError(f"query references unknown camera id {rec['camera_id']}")
        out.append(
            QueryView(pose=Pose(q=np.array(rec["q"], dtype=float), t=np.array(rec["t"], dtype=float)),
                      camera=cam, label=str(rec["label"]))
        )
    return out
