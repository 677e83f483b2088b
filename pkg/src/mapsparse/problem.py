"""Assembly of the selection programs and slack-free objective evaluation.

Every variant minimizes a weighted landmark count plus penalties for unmet
coverage:

    lp      keep >= k1 selected landmarks per keyframe
    ours2d  lp + keep >= 1 selected landmark per occupied 2D image cell
    ours3d  ours2d + keep >= k2 selected landmarks per valid 3D cell
    di      keep >= ceil(k1 / cells) selected landmarks per occupied cell
            (replaces the per-keyframe requirement)

Slack variables never appear explicitly: for a fixed selection x the optimal
slack of a row is max(0, rhs - coverage), so the penalized objective is
evaluated directly from x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import grid2d as g2
from . import visibility3d as v3
from .mapmodel import Map, association_matrix


class ConfigError(ValueError):
    """Raised for inconsistent or incomplete method parameters."""


VARIANTS = ("lp", "ours2d", "ours3d", "di")

BLOCK_KEYFRAME = "keyframe"
BLOCK_CELL2D = "cell2d"
BLOCK_CELL3D = "cell3d"
BLOCK_DICELL = "dicell"

SLACK_INTEGER = "integer"
SLACK_BINARY = "binary"


@dataclass(eq=False)
class ConstraintBlock:
    """One family of covering rows: matrix @ x >= rhs - slack, slack in [0, rhs]."""

    kind: str
    matrix: sp.csr_matrix
    rhs: np.ndarray          # positive integer per row
    penalty: float           # per unit of slack
    slack_kind: str
    labels: list             # one hashable label per row, used for naming

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=np.int64).reshape(-1)
        if self.rhs.size != self.matrix.shape[0]:
            raise ConfigError("rhs length must match the number of rows")
        if np.any(self.rhs < 1):
            raise ConfigError("rhs entries must be >= 1")
        if self.penalty < 0:
            raise ConfigError("penalty must be non-negative")
        if self.slack_kind not in (SLACK_INTEGER, SLACK_BINARY):
            raise ConfigError(f"unknown slack kind {self.slack_kind!r}")
        if self.slack_kind == SLACK_BINARY and np.any(self.rhs != 1):
            raise ConfigError("binary slack only makes sense for rhs = 1 rows")
        if len(self.labels) != self.matrix.shape[0]:
            raise ConfigError("labels length must match the number of rows")
        self._csc = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def column_view(self) -> sp.csc_matrix:
        if self._csc is None:
            self._csc = self.matrix.tocsc()
        return self._csc

    def row_name(self, r: int) -> str:
        prefix = {BLOCK_KEYFRAME: "a", BLOCK_CELL2D: "b", BLOCK_CELL3D: "c", BLOCK_DICELL: "d"}[self.kind]
        label = self.labels[r]
        if isinstance(label, tuple):
            return prefix + "_" + "_".join(str(x) for x in label)
        return f"{prefix}_{label}"


@dataclass(eq=False)
class SparsificationProblem:
    n_landmarks: int
    weight: np.ndarray            # q, positive, length N
    blocks: list
    variant: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float).reshape(-1)
        if self.weight.size != self.n_landmarks:
            raise ConfigError("weight vector length must equal n_landmarks")
        if not np.all(np.isfinite(self.weight)) or np.any(self.weight <= 0):
            raise ConfigError("weights must be finite and strictly positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        for b in self.blocks:
            if b.matrix.shape[1] != self.n_landmarks:
                raise ConfigError("block column count must equal n_landmarks")

    @property
    def total_rows(self) -> int:
        return sum(b.n_rows for b in self.blocks)

    def size_summary(self) -> dict:
        return {
            "variant": self.variant,
            "n_landmarks": self.n_landmarks,
            "rows_per_block": {b.kind: b.n_rows for b in self.blocks},
            "nnz_per_block": {b.kind: int(b.matrix.nnz) for b in self.blocks},
        }


@dataclass(eq=False)
class Solution:
    x: np.ndarray
    objective: float
    bound: float
    status: str  # optimal | gap-limit | time-limit | heuristic
    nodes: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int8).reshape(-1)

    @property
    def gap(self) -> float:
        return (self.objective - self.bound) / max(1.0, abs(self.objective))

    @property
    def n_selected(self) -> int:
        return int(self.x.sum())


@dataclass(frozen=True)
class SparsifyParams:
    """Knobs shared by all variants; unused ones are ignored per variant."""

    k1: int = 50
    k2: int = 30
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.5
    grid2d: g2.Grid2DConfig = g2.Grid2DConfig()
    grid3d_res: Optional[float] = None
    bounds: Optional[tuple] = None        # (min corner, max corner) or None for auto
    cell_cap: int = 2_000_000
    weight_scheme: str = "inverse-match"
    visibility: v3.VisibilityConfig = v3.VisibilityConfig()


def landmark_weights(mp: Map, scheme: str = "inverse-match") -> np.ndarray:
    """Selection costs q in (0, 1]; frequently matched landmarks are cheaper.

    'inverse-match': q_i = 1 / (1 + match_count_i), rescaled so max(q) = 1.
    'uniform': q_i = 1.
    """
    if scheme == "uniform":
        return np.ones(mp.n_landmarks)
    if scheme != "inverse-match":
        raise ConfigError(f"unknown weight scheme {scheme!r}")
    q = 1.0 / (1.0 + mp.match_counts)
    top = q.max() if q.size else 1.0
    return q / top


def _keyframe_block(mp: Map, k1: int, penalty: float) -> Optional[ConstraintBlock]:
    if k1 < 1:
        return None
    A = association_matrix(mp)
    return ConstraintBlock(
        kind=BLOCK_KEYFRAME,
        matrix=A,
        rhs=np.full(A.shape[0], k1, dtype=np.int64),
        penalty=penalty,
        slack_kind=SLACK_INTEGER,
        labels=[kf.id for kf in mp.keyframes],
    )


def _cell2d_block(mp: Map, grid: g2.Grid2DConfig, penalty: float) -> ConstraintBlock:
    B, labels = g2.occupancy_matrix(mp, grid)
    return ConstraintBlock(
        kind=BLOCK_CELL2D,
        matrix=B,
        rhs=np.ones(B.shape[0], dtype=np.int64),
        penalty=penalty,
        slack_kind=SLACK_BINARY,
        labels=labels,
    )


def _cell3d_block(mp: Map, params: SparsifyParams, regions=None) -> ConstraintBlock:
    if params.grid3d_res is None:
        raise ConfigError("the ours3d variant needs a 3D grid resolution (grid3d_res)")
    if regions is None:
        regions = v3.fit_all_regions(mp, params.visibility)
    if params.bounds is None:
        lo, hi = v3.default_bounds(mp, regions)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in params.bounds)
    grid = v3.Grid3DConfig(resolution=params.grid3d_res, bounds_min=lo, bounds_max=hi,
                           cell_cap=params.cell_cap)
    cells, C = v3.valid_cells(mp, regions, grid, params.k2)
    return ConstraintBlock(
        kind=BLOCK_CELL3D,
        matrix=C,
        rhs=np.full(C.shape[0], params.k2, dtype=np.int64),
        penalty=params.lambda3,
        slack_kind=SLACK_INTEGER,
        labels=[c.index for c in cells],
    )


def _di_block(mp: Map, k1: int, grid: g2.Grid2DConfig, penalty: float) -> ConstraintBlock:
    B, labels = g2.occupancy_matrix(mp, grid)
    per_cell = math.ceil(k1 / (grid.cols * grid.rows))
    return ConstraintBlock(
        kind=BLOCK_DICELL,
        matrix=B,
        rhs=np.full(B.shape[0], max(1, per_cell), dtype=np.int64),
        penalty=penalty,
        slack_kind=SLACK_INTEGER,
        labels=labels,
    )


def build_problem(mp: Map, variant: str, params: SparsifyParams = SparsifyParams(),
                  regions=None) -> SparsificationProblem:
    """Assemble the selection program for one method variant."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if params.k1 < 0:
        raise ConfigError("k1 must be >= 0")
    q = landmark_weights(mp, params.weight_scheme)
    blocks = []
    if variant == "di":
        blocks.append(_di_block(mp, params.k1, params.grid2d, params.lambda1))
    else:
        kb = _keyframe_block(mp, params.k1, params.lambda1)
        if kb is not None:
            blocks.append(kb)
        if variant in ("ours2d", "ours3d"):
            blocks.append(_cell2d_block(mp, params.grid2d, params.lambda2))
        if variant == "ours3d":
            blocks.append(_cell3d_block(mp, params, regions=regions))
    return SparsificationProblem(n_landmarks=mp.n_landmarks, weight=q, blocks=blocks,
                                 variant=variant)


def slack_values(problem: SparsificationProblem, x: np.ndarray):
    """Implied optimal slack per block for a fixed selection: max(0, rhs - coverage)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = []
    for b in problem.blocks:
        coverage = b.matrix @ x
        out.append(np.maximum(0.0, b.rhs - coverage))
    return out

def objective_value(problem: SparsificationProblem, x) -> float:
    """Objective at the optimal slack assignment implied by the selection x."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != problem.n_landmarks:
        raise ValueError("selection vector has the wrong length")
    total = float(problem.weight @ x)
    for b, s in zip(problem.blocks, slack_values(problem, x)):
        total += b.penalty * float(s.sum())
    return total


@dataclass(eq=False)
class CheckReport:
    ok: bool
    recomputed: float
    stated: float
    slack_totals: dict
    zero_slack_violations: dict
    detail: str = ""


def check_solution(problem: SparsificationProblem, solution: Solution) -> CheckReport:
    """Recompute the objective from x and compare against the stated value."""
    recomputed = objective_value(problem, solution.x)
    slacks = slack_values(problem, solution.x)
    totals = {b.kind: float(s.sum()) for b, s in zip(problem.blocks, slacks)}
    violations = {b.kind: int((s > 0).sum()) for b, s in zip(problem.blocks, slacks)}
    ok = abs(recomputed - solution.objective) <= 1e-6 * max(1.0, abs(recomputed))
    detail = ""
    if not ok:
        detail = (
            f"stated objective {solution.objective!r} differs from recomputed "
            f"{recomputed!r} beyond 1e-6 relative"
        )
        for b, s in zip(problem.blocks, slacks):
            nz = np.flatnonzero(s > 0)
            if nz.size:
                r = int(nz[0])
                detail += f"; first slack row: {b.row_name(r)} (slack {s[r]})"
                break
    return CheckReport(ok=ok, recomputed=recomputed, stated=solution.objective,
                       slack_totals=totals, zero_slack_violations=violations, detail=detail)
