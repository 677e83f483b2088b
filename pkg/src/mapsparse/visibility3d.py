"""Per-landmark visibility regions and the 3D valid-cell constraint matrix.

A landmark is considered matchable from a query position when the viewing
direction stays within an angular threshold of its mean mapping direction and
the viewing distance stays inside a scaled version of the mapping distance
range: a truncated spherical cone anchored at the landmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .mapmodel import Landmark, Map

# Added to the widest mapping angle so the generating observations themselves
# pass the strict angular test.
_ANGLE_MARGIN = 1e-7


@dataclass(frozen=True, eq=False)
class VisibilityRegion:
    """Truncated spherical cone: mean direction, angle threshold, distance band."""

    mean_dir: np.ndarray  # unit vector, landmark -> camera centers average
    theta_th: float       # radians, 0 < theta_th <= pi
    d_min: float
    d_max: float
    fallback_dir: bool = False  # True when mean direction degenerated to the first observation

    def __post_init__(self):
        object.__setattr__(self, "mean_dir", np.asarray(self.mean_dir, dtype=float).reshape(3))
        n = float(np.linalg.norm(self.mean_dir))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"mean_dir norm {n} not within 1e-9 of 1")
        if not (0.0 < self.theta_th <= math.pi):
            raise ValueError(f"theta_th {self.theta_th} outside (0, pi]")
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")


@dataclass(frozen=True)
class VisibilityConfig:
    margin_lo: float = 0.8          # scales the smallest mapping distance down
    margin_hi: float = 1.3          # scales the largest mapping distance up
    theta_floor: float = math.radians(10.0)

    def __post_init__(self):
        if not (0.0 < self.margin_lo < 1.0 < self.margin_hi):
            raise ValueError("margins must satisfy 0 < margin_lo < 1 < margin_hi")
        if not (0.0 < self.theta_floor <= math.pi):
            raise ValueError("theta_floor outside (0, pi]")


@dataclass(frozen=True, eq=False)
class Grid3DConfig:
    resolution: float
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    cell_cap: int = 2_000_000

    def __post_init__(self):
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float).reshape(3))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float).reshape(3))
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not np.all(self.bounds_max > self.bounds_min):
            raise ValueError("bounds box is empty")

    @property
    def shape(self) -> tuple:
        return tuple(
            int(np.ceil((self.bounds_max[a] - self.bounds_min[a]) / self.resolution))
            for a in range(3)
        )

    def cell_count(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    def centers_axis(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return self.bounds_min[axis] + (np.arange(n) + 0.5) * self.resolution


@dataclass(frozen=True, eq=False)
class ValidCell:
    index: tuple          # (i, j, k)
    center: np.ndarray    # (3,)
    visible_landmark_ids: frozenset


def _cos_and_dist(mean_dir, dx, dy, dz):
    # Shared by the scalar and vectorized paths so both make bitwise-identical
    # decisions at the cone boundary.
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    cos = (dx * mean_dir[0] + dy * mean_dir[1] + dz * mean_dir[2]) / d
    return cos, d


def visible_mask(region: VisibilityRegion, landmark_pos, query_centers) -> np.ndarray:
    """Boolean mask: which query centers fall inside the landmark's region."""
    centers = np.asarray(query_centers, dtype=float).reshape(-1, 3)
    p = np.asarray(landmark_pos, dtype=float).reshape(3)
    cos, d = _cos_and_dist(
        region.mean_dir, centers[:, 0] - p[0], centers[:, 1] - p[1], centers[:, 2] - p[2]
    )
    return (cos > math.cos(region.theta_th)) & (region.d_min < d) & (d < region.d_max)


def is_visible(region: VisibilityRegion, landmark_pos, query_center) -> bool:
    """True iff the query center lies inside the truncated cone (strict bounds)."""
    return bool(visible_mask(region, landmark_pos, np.asarray(query_center).reshape(1, 3))[0])


def fit_visibility(landmark: Landmark, mp: Map, config: VisibilityConfig = VisibilityConfig()) -> VisibilityRegion:
    """Fit a region from the landmark's mapping observations.

    Mean direction is the normalized sum of unit vectors toward the observing
    optical centers; the angle threshold is the widest observed angle (plus a
    hair, floored at ``theta_floor``); the distance band is the observed range
    scaled by the margins. All generating observations satisfy the region.
    """
    j = mp.landmark_index[landmark.id]
    return _fit_one(mp, j, config)


def _fit_one(mp: Map, j: int, config: VisibilityConfig) -> VisibilityRegion:
    kf_rows = mp.obs_by_landmark[j]
    if kf_rows.size == 0:
        raise ValueError(f"landmark {mp.landmarks[j].id} has no observations")
    p = mp.landmark_positions[j]
    diffs = mp.keyframe_centers[kf_rows] - p
    d = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    if np.any(d <= 0):
        raise ValueError(f"landmark {mp.landmarks[j].id} coincides with a keyframe center")
    units = diffs / d[:, None]
    s = units.sum(axis=0)
    s_norm = float(np.linalg.norm(s))
    fallback = s_norm < 1e-12
    mean_dir = units[0] if fallback else s / s_norm
    mean_dir = mean_dir / np.linalg.norm(mean_dir)
    cos, _ = _cos_and_dist(mean_dir, diffs[:, 0], diffs[:, 1], diffs[:, 2])
    max_angle = float(np.arccos(np.clip(cos.min(), -1.0, 1.0)))
    theta = min(math.pi, max(config.theta_floor, max_angle + _ANGLE_MARGIN))
    return VisibilityRegion(
        mean_dir=mean_dir,
        theta_th=theta,
        d_min=config.margin_lo * float(d.min()),
        d_max=config.margin_hi * float(d.max()),
        fallback_dir=fallback,
    )


def fit_all_regions(mp: Map, config: VisibilityConfig = VisibilityConfig()):
    """Regions for every landmark, by landmark index; None where unobserved."""
    out: list[Optional[VisibilityRegion]] = []
    for j in range(mp.n_landmarks):
        out.append(_fit_one(mp, j, config) if mp.obs_by_landmark[j].size else None)
    return out


def default_bounds(mp: Map, regions, pad_quantile: float = 0.5):
    """Axis-aligned box over keyframe centers and landmarks, padded by the
    given quantile of the per-landmark maximum visibility distance."""
    pts = np.vstack([mp.landmark_positions, mp.keyframe_centers])
    if pts.shape[0] == 0:
        raise ValueError("map has no geometry to bound")
    d_max = [r.d_max for r in regions if r is not None]
    pad = float(np.quantile(d_max, pad_quantile)) if d_max else 1.0
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def valid_cells(mp: Map, regions, grid: Grid3DConfig, k2: int):
    """Valid 3D cells and their constraint matrix C.

    A cell is valid when at least ``k2`` landmarks are visible from its center;
    C[g, j] = 1 iff landmark j is visible from valid cell g. Rows follow
    lexicographic (i, j, k) cell order.
    """
    if k2 < 1:
        raise ValueError("k2 must be >= 1")
    n_cells = grid.cell_count()
    if n_cells > grid.cell_cap:
        raise ValueError(
            f"grid has {n_cells} cells, above the cap of {grid.cell_cap}; "
            f"use a coarser resolution or tighter bounds"
        )
    nx, ny, nz = grid.shape
    xs, ys, zs = (grid.centers_axis(a) for a in range(3))

    counts = np.zeros(n_cells, dtype=np.int32)
    pair_cells: list[np.ndarray] = []
    pair_lms: list[np.ndarray] = []
    for j in range(mp.n_landmarks):
        region = regions[j]
        if region is None:
            continue
        p = mp.landmark_positions[j]
        lo = p - region.d_max
        hi = p + region.d_max
        i0 = max(0, int(np.searchsorted(xs, lo[0], side="left")))
        i1 = min(nx, int(np.searchsorted(xs, hi[0], side="right")))
        j0 = max(0, int(np.searchsorted(ys, lo[1], side="left")))
        j1 = min(ny, int(np.searchsorted(ys, hi[1], side="right")))
        k0 = max(0, int(np.searchsorted(zs, lo[2], side="left")))
        k1 = min(nz, int(np.searchsorted(zs, hi[2], side="right")))
        if i0 >= i1 or j0 >= j1 or k0 >= k1:
            continue
        gx, gy, gz = np.meshgrid(xs[i0:i1], ys[j0:j1], zs[k0:k1], indexing="ij")
        cos, d = _cos_and_dist(
            region.mean_dir, gx.ravel() - p[0], gy.ravel() - p[1], gz.ravel() - p[2]
        )
        inside = (cos > math.cos(region.theta_th)) & (region.d_min < d) & (d < region.d_max)
        if not inside.any():
            continue
        ii, jj, kk = np.meshgrid(
            np.arange(i0, i1), np.arange(j0, j1), np.arange(k0, k1), indexing="ij"
        )
        lin = (ii.ravel() * ny + jj.ravel()) * nz + kk.ravel()
        lin = lin[inside]
        counts[lin] += 1
        pair_cells.append(lin)
        pair_lms.append(np.full(lin.size, j, dtype=np.int64))

    valid_lin = np.flatnonzero(counts >= k2)
    cells: list[ValidCell] = []
    C: sp.csr_matrix
    if valid_lin.size == 0:
        return cells, sp.csr_matrix((0, mp.n_landmarks), dtype=np.int8)

    row_of = np.full(n_cells, -1, dtype=np.int64)
    row_of[valid_lin] = np.arange(valid_lin.size)
    all_cells = np.concatenate(pair_cells)
    all_lms = np.concatenate(pair_lms)
    keep = row_of[all_cells] >= 0
    r = row_of[all_cells[keep]]
    c = all_lms[keep]
    C = sp.csr_matrix((np.ones(r.size, dtype=np.int8), (r, c)),
                      shape=(valid_lin.size, mp.n_landmarks))

    for lin in valid_lin:
        i = int(lin // (ny * nz))
        jy = int((lin // nz) % ny)
        k = int(lin % nz)
        center = np.array([xs[i], ys[jy], zs[k]])
        member_idx = C.indices[C.indptr[row_of[lin]]:C.indptr[row_of[lin] + 1]]
        ids = frozenset(mp.landmarks[m].id for m in member_idx)
        cells.append(ValidCell(index=(i, jy, k), center=center, visible_landmark_ids=ids))
    return cells, C
