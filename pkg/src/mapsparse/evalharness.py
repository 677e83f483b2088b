"""Localization replay, compression ratios, and valid-cell counts for compact maps.

Localization is a geometric oracle: a query succeeds when at least T selected
landmarks both project into its image and contain its optical center in their
visibility region. No descriptors are involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import visibility3d as v3
from .mapmodel import Map, project_points
from .synthgen import QueryView

DEFAULT_INLIER_THRESHOLD = 15


@dataclass(eq=False)
class StratumStats:
    total: int = 0
    localized: int = 0

    @property
    def rate(self) -> float:
        return self.localized / self.total if self.total else 0.0


@dataclass(eq=False)
class EvalReport:
    total: int
    localized: int
    rate: float
    matched_histogram: list
    strata: dict = field(default_factory=dict)
    compression_ratio: Optional[float] = None
    valid_cells_original: Optional[int] = None
    valid_cells_compact: Optional[int] = None


class EvalContext:
    """Stacked per-landmark region arrays so each query is one vector pass."""

    def __init__(self, mp: Map, regions=None, vis_config: v3.VisibilityConfig = v3.VisibilityConfig()):
        self.map = mp
        self.regions = regions if regions is not None else v3.fit_all_regions(mp, vis_config)
        n = mp.n_landmarks
        self.has_region = np.array([r is not None for r in self.regions])
        self.mean_dirs = np.zeros((n, 3))
        self.cos_theta = np.full(n, 2.0)  # impossible threshold where no region exists
        self.d_min = np.zeros(n)
        self.d_max = np.zeros(n)
        for j, r in enumerate(self.regions):
            if r is None:
                continue
            self.mean_dirs[j] = r.mean_dir
            self.cos_theta[j] = math.cos(r.theta_th)  # matches the is_visible comparison
            self.d_min[j] = r.d_min
            self.d_max[j] = r.d_max

    def matched_count(self, selected: np.ndarray, query: QueryView) -> int:
        selected = np.asarray(selected).astype(bool)
        idx = np.flatnonzero(selected & self.has_region)
        if idx.size == 0:
            return 0
        pts = self.map.landmark_positions[idx]
        _, in_view = project_points(query.camera, query.pose, pts)
        idx = idx[in_view]
        if idx.size == 0:
            return 0
        center = query.pose.center()
        p = self.map.landmark_positions[idx]
        dx, dy, dz = center[0] - p[:, 0], center[1] - p[:, 1], center[2] - p[:, 2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        cos = (dx * self.mean_dirs[idx, 0] + dy * self.mean_dirs[idx, 1]
               + dz * self.mean_dirs[idx, 2]) / d
        visible = (cos > self.cos_theta[idx]) & (self.d_min[idx] < d) & (d < self.d_max[idx])
        return int(visible.sum())


def localize(mp: Map, selected, query: QueryView, threshold: int = DEFAULT_INLIER_THRESHOLD,
             context: Optional[EvalContext] = None):
    """(success, matched count) for one query view."""
    ctx = context if context is not None else EvalContext(mp)
    matched = ctx.matched_count(np.asarray(selected), query)
    return matched >= threshold, matched


def localization_rate(mp: Map, selected, queries, threshold: int = DEFAULT_INLIER_THRESHOLD,
                      context: Optional[EvalContext] = None) -> EvalReport:
    """Aggregate localization over a query list, stratified by query label."""
    if not queries:
        raise ValueError("query list is empty")
    ctx = context if context is not None else EvalContext(mp)
    histogram = []
    strata: dict = {}
    localized = 0
    for q in queries:
        ok, matched = localize(mp, selected, q, threshold, context=ctx)
        histogram.append(matched)
        stats = strata.setdefault(q.label, StratumStats())
        stats.total += 1
        if ok:
            stats.localized += 1
            localized += 1
    return EvalReport(
        total=len(queries),
        localized=localized,
        rate=localized / len(queries),
        matched_histogram=histogram,
        strata=strata,
    )


def compression_report(mp: Map, selected):
    """(ratio, selected count, total count)."""
    selected = np.asarray(selected).astype(bool)
    n_sel = int(selected.sum())
    n = mp.n_landmarks
    return (n_sel / n if n else 0.0), n_sel, n


def count_valid_cells(mp: Map, selected, grid: v3.Grid3DConfig, k2: int, regions=None) -> int:
    """Number of valid 3D cells when only the selected landmarks remain."""
    if regions is None:
        regions = v3.fit_all_regions(mp)
    selected = np.asarray(selected).astype(bool)
    masked = [r if selected[j] else None for j, r in enumerate(regions)]
    cells, _ = v3.valid_cells(mp, masked, grid, k2)
    return len(cells)
