"""Reference selection methods: greedy K-cover and the divided-image program."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid2d as g2
from .mapmodel import Map, association_matrix
from .problem import Solution, SparsifyParams, build_problem, objective_value
from .solver import SolveLimits, solve_bnb

# A small slack penalty keeps the per-cell quotas soft; large penalties force
# far more selections than the per-keyframe formulations at the same k1.
DI_DEFAULT_LAMBDA = 0.02


def greedy_kcover(mp: Map, k1: int, params: SparsifyParams = SparsifyParams()) -> Solution:
    """Greedy cover: repeatedly take the landmark observed by the most
    keyframes that still need landmarks.

    Per-keyframe deficits start at min(k1, observed count) so sparsely
    observed frames cannot stall the loop. Ties prefer higher match count,
    then lower landmark id. The objective is evaluated under the plain
    per-keyframe program with the caller's parameters.
    """
    a_csr = association_matrix(mp)
    A = a_csr.tocsc()
    n = mp.n_landmarks
    obs_per_kf = np.asarray(a_csr.sum(axis=1)).ravel()
    deficit = np.minimum(k1, obs_per_kf).astype(np.int64)
    # score[j] = number of keyframes with positive deficit observing j
    score = np.zeros(n, dtype=np.int64)
    for i in range(mp.n_keyframes):
        if deficit[i] > 0:
            cols = a_csr.indices[a_csr.indptr[i]:a_csr.indptr[i + 1]]
            score[cols] += 1

    x = np.zeros(n, dtype=np.int8)
    ids = np.array([lm.id for lm in mp.landmarks])
    match = mp.match_counts
    while deficit.sum() > 0:
        top = score.max()
        if top <= 0:
            break  # nothing selectable covers a needy keyframe
        cand = np.flatnonzero(score == top)
        cand = cand[match[cand] == match[cand].max()]
        best = int(cand[np.argmin(ids[cand])])
        x[best] = 1
        rows = A.indices[A.indptr[best]:A.indptr[best + 1]]
        for i in rows:
            if deficit[i] > 0:
                deficit[i] -= 1
                if deficit[i] == 0:
                    cols = a_csr.indices[a_csr.indptr[i]:a_csr.indptr[i + 1]]
                    score[cols] -= 1
        score[best] = 0
    problem = build_problem(mp, "lp", params)
    return Solution(x=x, objective=objective_value(problem, x), bound=0.0, status="heuristic")


def selected_counts_per_keyframe(mp: Map, x: np.ndarray) -> np.ndarray:
    """How many selected landmarks each keyframe observes."""
    A = association_matrix(mp)
    return np.asarray(A @ np.asarray(x, dtype=np.int64)).ravel()


@dataclass(eq=False)
class DIReport:
    solution: Solution
    per_keyframe_selected: np.ndarray
    fraction_below_k1: float


def run_di(mp: Map, k1: int, grid: g2.Grid2DConfig,
           params: SparsifyParams = None,
           limits: SolveLimits = SolveLimits()) -> DIReport:
    """Solve the divided-image program and report per-keyframe coverage.

    The per-cell quota ceil(k1 / cells) can leave keyframes well below k1
    selected landmarks overall, so the report carries the per-keyframe counts
    and the fraction of keyframes that fall short.
    """
    if params is None:
        params = SparsifyParams(k1=k1, lambda1=DI_DEFAULT_LAMBDA, grid2d=grid)
    else:
        params = SparsifyParams(**{**params.__dict__, "k1": k1, "grid2d": grid})
    problem = build_problem(mp, "di", params)
    solution = solve_bnb(problem, limits)
    counts = selected_counts_per_keyframe(mp, solution.x)
    frac = float((counts < k1).sum()) / max(1, mp.n_keyframes)
    return DIReport(solution=solution, per_keyframe_selected=counts, fraction_below_k1=frac)
