"""Solvers for the selection programs.

``solve_lp_relaxation`` drops integrality (selections in [0, 1], slacks in
[0, rhs]) and delegates to HiGHS through scipy. ``solve_bnb`` wraps it in a
best-first branch-and-bound over the selection variables, seeded with the
deterministic rounding heuristic. ``solve_exhaustive`` enumerates every
selection (for oracle-scale problems) and ``export_lp`` writes the explicit
mixed-integer program, slacks included, in LP text format.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from io import StringIO
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .problem import (
    SLACK_BINARY,
    Solution,
    SparsificationProblem,
    objective_value,
)

_INT_TOL = 1e-6          # integrality detection on relaxation values
_OPT_GAP_TOL = 1e-6      # gap at or below this counts as proven optimal
_PRUNE_EPS = 1e-9        # node bound must beat the incumbent by more than this

EXHAUSTIVE_MAX_N = 25


class SolverError(RuntimeError):
    """Raised when the relaxation backend fails to produce an optimum."""


@dataclass(eq=False)
class RelaxedSolution:
    x_frac: np.ndarray
    bound: float


@dataclass(frozen=True)
class SolveLimits:
    time_limit: Optional[float] = None   # seconds
    gap_limit: Optional[float] = None    # relative gap at which to stop
    node_limit: Optional[int] = None
    workers: int = 1


class _RelaxationSolver:
    """Caches the stacked LP data so branch-and-bound nodes only swap bounds."""

    def __init__(self, problem: SparsificationProblem):
        self.problem = problem
        n = problem.n_landmarks
        mats, rhs_parts, penalties = [], [], []
        for b in problem.blocks:
            if b.n_rows == 0:
                continue
            mats.append(b.matrix)
            rhs_parts.append(b.rhs.astype(float))
            penalties.append(np.full(b.n_rows, b.penalty))
        if mats:
            stacked = sp.vstack(mats, format="csr")
            rows = stacked.shape[0]
            # coverage + slack >= rhs  ->  -coverage - slack <= -rhs
            self.a_ub = sp.hstack(
                [-stacked, -sp.identity(rows, dtype=np.int8, format="csr")], format="csr"
            )
            self.b_ub = -np.concatenate(rhs_parts)
            self.slack_cost = np.concatenate(penalties)
            self.slack_ub = np.concatenate(rhs_parts)
        else:
            rows = 0
            self.a_ub = None
            self.b_ub = None
            self.slack_cost = np.zeros(0)
            self.slack_ub = np.zeros(0)
        self.n_rows = rows
        self.cost = np.concatenate([problem.weight, self.slack_cost])

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> RelaxedSolution:
        n = self.problem.n_landmarks
        if self.n_rows == 0:
            x = lb.astype(float)
            return RelaxedSolution(x_frac=x, bound=float(self.problem.weight @ x))
        bounds = list(zip(lb.tolist(), ub.tolist()))
        bounds += [(0.0, float(u)) for u in self.slack_ub]
        res = linprog(self.cost, A_ub=self.a_ub, b_ub=self.b_ub, bounds=bounds,
                      method="highs")
        if res.status != 0:
            raise SolverError(
                f"relaxation failed (status {res.status}): {res.message}; "
                f"iterations={getattr(res, 'nit', 'n/a')}"
            )
        return RelaxedSolution(x_frac=np.clip(res.x[:n], 0.0, 1.0), bound=float(res.fun))


def solve_lp_relaxation(problem: SparsificationProblem) -> RelaxedSolution:
    """Optimum of the continuous relaxation; a lower bound for any selection."""
    n = problem.n_landmarks
    return _RelaxationSolver(problem).solve(np.zeros(n), np.ones(n))


def round_relaxation(problem: SparsificationProblem, relaxed: RelaxedSolution) -> Solution:
    """Deterministic rounding of a relaxation point.

    Candidates are visited by descending fractional value (ties: cheaper
    weight, then lower index) and kept while they improve the objective;
    a single drop pass then removes selections whose removal improves it.
    """
    n = problem.n_landmarks
    x_frac = np.asarray(relaxed.x_frac, dtype=float)
    order = np.lexsort((np.arange(n), problem.weight, -x_frac))

    x = np.zeros(n, dtype=np.int8)
    coverage = [np.zeros(b.n_rows, dtype=np.int64) for b in problem.blocks]
    cols = [b.column_view() for b in problem.blocks]

    def add_delta(j: int) -> float:
        delta = problem.weight[j]
        for b, cov, csc in zip(problem.blocks, coverage, cols):
            rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            delta -= b.penalty * float(np.count_nonzero(cov[rows] < b.rhs[rows]))
        return delta

    def drop_delta(j: int) -> float:
        delta = -problem.weight[j]
        for b, cov, csc in zip(problem.blocks, coverage, cols):
            rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            delta += b.penalty * float(np.count_nonzero(cov[rows] <= b.rhs[rows]))
        return delta

    def apply(j: int, sign: int):
        x[j] = 1 if sign > 0 else 0
        for cov, csc in zip(coverage, cols):
            rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            cov[rows] += sign

    for j in order:
        delta = add_delta(int(j))
        integral_one = x_frac[j] >= 1.0 - _INT_TOL
        if delta < -1e-12 or (integral_one and delta <= 1e-12):
            apply(int(j), +1)

    for j in np.flatnonzero(x):
        if drop_delta(int(j)) < -1e-12:
            apply(int(j), -1)

    return Solution(x=x, objective=objective_value(problem, x), bound=relaxed.bound,
                    status="heuristic")


def solve_bnb(problem: SparsificationProblem, limits: SolveLimits = SolveLimits()) -> Solution:
    """Best-first branch-and-bound on the selection variables.

    The incumbent starts from ``round_relaxation``; nodes branch on the most
    fractional variable (ties: densest column of the first block, then lowest
    index). Slack variables stay implied, so every binary selection is
    feasible and integral relaxation points close nodes immediately.
    """
    start = time.perf_counter()
    n = problem.n_landmarks
    relax = _RelaxationSolver(problem)
    col_density = (
        np.asarray(problem.blocks[0].matrix.sum(axis=0)).ravel()
        if problem.blocks
        else np.zeros(n)
    )

    root = relax.solve(np.zeros(n), np.ones(n))
    incumbent = round_relaxation(problem, root)
    best_x = incumbent.x.copy()
    best_obj = incumbent.objective

    def out_of_time() -> bool:
        return limits.time_limit is not None and time.perf_counter() - start > limits.time_limit

    heap = []
    counter = 0
    heapq.heappush(heap, (root.bound, counter, np.zeros(n, dtype=np.int8),
                          np.ones(n, dtype=np.int8), root.x_frac))
    nodes = 0
    status = "optimal"

    while heap:
        bound, _, lb, ub, x_frac = heapq.heappop(heap)
        global_bound = min(bound, best_obj)
        gap = (best_obj - global_bound) / max(1.0, abs(best_obj))
        if bound >= best_obj - _PRUNE_EPS:
            break  # best-first: nothing left can improve
        if limits.gap_limit is not None and gap <= limits.gap_limit:
            status = "gap-limit"
            return Solution(x=best_x, objective=best_obj, bound=global_bound,
                            status=status, nodes=nodes)
        if out_of_time() or (limits.node_limit is not None and nodes >= limits.node_limit):
            status = "time-limit"
            return Solution(x=best_x, objective=best_obj, bound=global_bound,
                            status=status, nodes=nodes)

        frac = np.abs(x_frac - np.round(x_frac))
        if frac.max() <= _INT_TOL:
            x_int = np.round(x_frac).astype(np.int8)
            obj = objective_value(problem, x_int)
            if obj < best_obj - 1e-15:
                best_obj, best_x = obj, x_int
            continue

        j = int(np.lexsort((np.arange(n), -col_density, -frac))[0])
        nodes += 1
        for fixed in (0, 1):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = fixed
            child = relax.solve(clb.astype(float), cub.astype(float))
            if child.bound >= best_obj - _PRUNE_EPS:
                continue
            rounded = round_relaxation(problem, child)
            if rounded.objective < best_obj - 1e-15:
                best_obj, best_x = rounded.objective, rounded.x.copy()
            counter += 1
            heapq.heappush(heap, (child.bound, counter, clb, cub, child.x_frac))

    return Solution(x=best_x, objective=best_obj, bound=best_obj, status="optimal",
                    nodes=nodes)


def solve_exhaustive(problem: SparsificationProblem) -> Solution:
    """Exact optimum by enumerating all selections; ties pick the
    lexicographically smallest vector. Refuses above N = 25."""
    n = problem.n_landmarks
    if n > EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive enumeration refuses N = {n} > {EXHAUSTIVE_MAX_N}")
    total = 1 << n
    chunk = min(total, 1 << 18)
    bit = np.arange(n, dtype=np.int64)
    # x_0 is the most significant digit of the tie-break key, so the smallest
    # key is the lexicographically smallest selection vector.
    lex_weight = 1 << (n - 1 - bit) if n else np.zeros(0, dtype=np.int64)

    best_obj = math.inf
    best_key = None
    best_x = np.zeros(n, dtype=np.int8)
    dense = [np.asarray(b.matrix.todense()) for b in problem.blocks]
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        X = ((codes[:, None] >> bit[None, :]) & 1).astype(np.float64)
        obj = X @ problem.weight
        for b, m in zip(problem.blocks, dense):
            coverage = X @ m.T
            obj += b.penalty * np.maximum(0.0, b.rhs[None, :] - coverage).sum(axis=1)
        keys = (X.astype(np.int64) * lex_weight[None, :]).sum(axis=1)
        i = int(np.lexsort((keys, obj))[0])
        if obj[i] < best_obj - 1e-15 or (
            abs(obj[i] - best_obj) <= 1e-15 and (best_key is None or keys[i] < best_key)
        ):
            best_obj = float(obj[i])
            best_key = int(keys[i])
            best_x = X[i].astype(np.int8)
    exact = objective_value(problem, best_x)
    return Solution(x=best_x, objective=exact, bound=exact, status="optimal")


def _fmt(value: float) -> str:
    return repr(float(value))


def export_lp(problem: SparsificationProblem, path, header_comment: str = "") -> None:
    """Write the explicit mixed-integer program in LP text format.

    Selections become binaries x0..x{N-1}; each constraint row gets a named
    slack variable bounded by its rhs (Generals for integer slack, Binaries
    for 0/1 slack). Output is byte-deterministic for a fixed problem.
    """
    buf = StringIO()
    buf.write("\\ mapsparse explicit program export\n")
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"\\ {line}\n")
    buf.write(f"\\ variant: {problem.variant}\n")
    buf.write("Minimize\n obj:")
    terms = [f" {_fmt(problem.weight[j])} x{j}" for j in range(problem.n_landmarks)]
    for b in problem.blocks:
        for r in range(b.n_rows):
            terms.append(f" {_fmt(b.penalty)} s_{b.row_name(r)}")
    buf.write(" +".join(terms) if terms else " 0 x0")
    buf.write("\nSubject To\n")
    for b in problem.blocks:
        m = b.matrix.tocsr()
        for r in range(b.n_rows):
            cols = m.indices[m.indptr[r]:m.indptr[r + 1]]
            name = b.row_name(r)
            lhs = " + ".join(f"x{j}" for j in sorted(cols.tolist()))
            if lhs:
                lhs += f" + s_{name}"
            else:
                lhs = f"s_{name}"
            buf.write(f" {name}: {lhs} >= {int(b.rhs[r])}\n")
    buf.write("Bounds\n")
    for b in problem.blocks:
        for r in range(b.n_rows):
            buf.write(f" 0 <= s_{b.row_name(r)} <= {int(b.rhs[r])}\n")
    binaries = [f"x{j}" for j in range(problem.n_landmarks)]
    generals = []
    for b in problem.blocks:
        names = [f"s_{b.row_name(r)}" for r in range(b.n_rows)]
        if b.slack_kind == SLACK_BINARY:
            binaries.extend(names)
        else:
            generals.extend(names)
    buf.write("Binaries\n")
    for name in binaries:
        buf.write(f" {name}\n")
    if generals:
        buf.write("Generals\n")
        for name in generals:
            buf.write(f" {name}\n")
    buf.write("End\n")
    with open(path, "w", encoding="utf-8") as f:
        f.write(buf.getvalue())
