"""Fixed-size 2D image grids and the landmark-to-occupied-cell matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mapmodel import CameraModel, Map, project_points


@dataclass(frozen=True)
class Grid2DConfig:
    cols: int = 8
    rows: int = 6

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ValueError("grid must have at least one column and one row")

    @staticmethod
    def parse(text: str) -> "Grid2DConfig":
        """Parse 'COLSxROWS', e.g. '8x6'."""
        try:
            c, r = text.lower().split("x")
            return Grid2DConfig(cols=int(c), rows=int(r))
        except (ValueError, AttributeError) as e:
            raise ValueError(f"expected COLSxROWS, got {text!r}") from e


@dataclass(frozen=True)
class CellOccupancy:
    keyframe_id: int
    cell: tuple  # (col, row)
    landmark_ids: frozenset


def cell_index(config: Grid2DConfig, camera: CameraModel, pixel) -> tuple:
    """Grid cell (col, row) containing an in-bounds pixel."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    col = int(u * config.cols / camera.width)
    row = int(v * config.rows / camera.height)
    return min(col, config.cols - 1), min(row, config.rows - 1)


def _check_grid_fits(mp: Map, config: Grid2DConfig):
    for cam in mp.cameras:
        if config.cols * config.rows > cam.width * cam.height:
            raise ValueError(
                f"grid {config.cols}x{config.rows} has more cells than camera {cam.id} has pixels"
            )


def occupancy_matrix(mp: Map, config: Grid2DConfig):
    """Occupied-cell constraint matrix B plus row labels.

    One row per (keyframe, cell) pair that has at least one of the keyframe's
    observed landmarks reprojecting into the cell; B[r, j] = 1 for each such
    landmark j. Labels map row index -> (keyframe_id, col, row). Cell
    membership comes from reprojected landmark positions, not stored pixels.
    Row order: ascending keyframe id, then row-major (row, col) within it.
    """
    _check_grid_fits(mp, config)
    rows_out, cols_out, labels = [], [], []
    for i, kf in enumerate(mp.keyframes):
        lm_idx = mp.obs_by_keyframe[i]
        if lm_idx.size == 0:
            continue
        uv, valid = project_points(kf.camera, kf.pose, mp.landmark_positions[lm_idx])
        lm_idx = lm_idx[valid]
        if lm_idx.size == 0:
            continue
        uv = uv[valid]
        ccol = (uv[:, 0] * config.cols / kf.camera.width).astype(np.int64)
        crow = (uv[:, 1] * config.rows / kf.camera.height).astype(np.int64)
        np.clip(ccol, 0, config.cols - 1, out=ccol)
        np.clip(crow, 0, config.rows - 1, out=crow)
        cell_key = crow * config.cols + ccol
        order = np.lexsort((lm_idx, cell_key))
        cell_key, lm_idx = cell_key[order], lm_idx[order]
        uniq, start = np.unique(cell_key, return_index=True)
        boundaries = np.append(start, cell_key.size)
        for u_i, key in enumerate(uniq):
            row_id = len(labels)
            labels.append((kf.id, int(key % config.cols), int(key // config.cols)))
            members = lm_idx[boundaries[u_i]:boundaries[u_i + 1]]
            rows_out.append(np.full(members.size, row_id, dtype=np.int64))
            cols_out.append(members)
    if labels:
        r = np.concatenate(rows_out)
        c = np.concatenate(cols_out)
        B = sp.csr_matrix((np.ones(r.size, dtype=np.int8), (r, c)),
                          shape=(len(labels), mp.n_landmarks))
    else:
        B = sp.csr_matrix((0, mp.n_landmarks), dtype=np.int8)
    return B, labels


def cell_occupancies(mp: Map, config: Grid2DConfig):
    """Occupied cells as CellOccupancy records, in occupancy_matrix row order."""
    B, labels = occupancy_matrix(mp, config)
    out = []
    for r, (kf_id, col, row) in enumerate(labels):
        member_idx = B.indices[B.indptr[r]:B.indptr[r + 1]]
        ids = frozenset(mp.landmarks[j].id for j in member_idx)
        out.append(CellOccupancy(keyframe_id=kf_id, cell=(col, row), landmark_ids=ids))
    return out
