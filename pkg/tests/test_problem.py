import math

import numpy as np
import pytest

from mapsparse import (
    ConfigError,
    SparsificationProblem,
    SparsifyParams,
    Solution,
    build_problem,
    check_solution,
    landmark_weights,
    objective_value,
    solve_exhaustive,
)
from mapsparse.problem import (
    BLOCK_CELL2D,
    BLOCK_CELL3D,
    BLOCK_DICELL,
    BLOCK_KEYFRAME,
    SLACK_BINARY,
    SLACK_INTEGER,
    ConstraintBlock,
    slack_values,
)
from conftest import block_from_dense, brute_force_optimum, make_map, random_problem, simple_problem


def test_objective_reference_instance():
    # independently enumerated: all 8 selections of the 3-landmark instance
    problem = simple_problem()
    best_obj, best_x = brute_force_optimum(problem)
    assert best_obj == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(best_x, [0, 1, 0])
    assert objective_value(problem, [0, 1, 0]) == pytest.approx(1.0, abs=1e-12)


def test_objective_all_zero_is_max_slack():
    problem = simple_problem(k1=1, lam=10.0)
    # every row pays k1 units of slack
    assert objective_value(problem, [0, 0, 0]) == pytest.approx(2 * 10.0 * 1, abs=1e-12)


def test_objective_all_ones():
    problem = simple_problem(k1=3, lam=10.0)
    # rows have 2 nonzeros each: slack = 3 - 2 = 1 per row
    assert objective_value(problem, [1, 1, 1]) == pytest.approx(3 + 2 * 10.0, abs=1e-12)


def test_objective_mixed_blocks_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(25):
        problem = random_problem(rng, n_max=8, m_max=4)
        best_obj, best_x = brute_force_optimum(problem)
        sol = solve_exhaustive(problem)
        assert sol.objective == pytest.approx(best_obj, abs=1e-12)


def test_block_validation():
    with pytest.raises(ConfigError):
        block_from_dense(BLOCK_KEYFRAME, [[1, 0]], 0, 1.0)  # rhs < 1
    with pytest.raises(ConfigError):
        block_from_dense(BLOCK_CELL2D, [[1, 0]], 2, 1.0, SLACK_BINARY)  # binary slack needs rhs 1
    with pytest.raises(ConfigError):
        block_from_dense(BLOCK_KEYFRAME, [[1, 0]], 1, -1.0)  # negative penalty
    with pytest.raises(ConfigError):
        SparsificationProblem(n_landmarks=2, weight=np.array([1.0, -1.0]), blocks=[], variant="lp")
    with pytest.raises(ConfigError):
        SparsificationProblem(n_landmarks=2, weight=np.array([1.0, 1.0]), blocks=[], variant="qp")


def test_weights_inverse_match():
    mp = make_map([(0, 0), (0, 1), (1, 1), (1, 2)], match_counts={0: 9, 1: 4, 2: 1})
    q = landmark_weights(mp)
    # 1/(1+mc) scaled so the max is 1
    raw = np.array([0.1, 0.2, 0.5])
    assert q == pytest.approx(raw / 0.5, abs=1e-12)
    assert landmark_weights(mp, "uniform") == pytest.approx(np.ones(3))
    with pytest.raises(ConfigError):
        landmark_weights(mp, "nope")


def test_build_lp_structure():
    mp = make_map([(0, 0), (0, 1), (1, 1), (1, 2)])
    problem = build_problem(mp, "lp", SparsifyParams(k1=7))
    assert [b.kind for b in problem.blocks] == [BLOCK_KEYFRAME]
    assert problem.blocks[0].n_rows == 2
    assert np.all(problem.blocks[0].rhs == 7)
    assert problem.blocks[0].slack_kind == SLACK_INTEGER


def test_build_k1_zero_drops_keyframe_block():
    mp = make_map([(0, 0), (0, 1), (1, 1), (1, 2)])
    problem = build_problem(mp, "lp", SparsifyParams(k1=0))
    assert problem.blocks == []
    assert objective_value(problem, np.zeros(3)) == 0.0


def test_build_ours2d_adds_cell_rows(loop_scene):
    params = SparsifyParams(k1=5)
    lp = build_problem(loop_scene, "lp", params)
    ours2d = build_problem(loop_scene, "ours2d", params)
    assert [b.kind for b in ours2d.blocks] == [BLOCK_KEYFRAME, BLOCK_CELL2D]
    cell_block = ours2d.blocks[1]
    assert np.all(cell_block.rhs == 1)
    assert cell_block.slack_kind == SLACK_BINARY
    assert cell_block.penalty == params.lambda2
    assert lp.blocks[0].n_rows == ours2d.blocks[0].n_rows


def test_build_ours3d_structure(loop_scene):
    params = SparsifyParams(k1=5, k2=8, grid3d_res=1.0)
    problem = build_problem(loop_scene, "ours3d", params)
    kinds = [b.kind for b in problem.blocks]
    assert kinds == [BLOCK_KEYFRAME, BLOCK_CELL2D, BLOCK_CELL3D]
    c = problem.blocks[2]
    assert c.n_rows > 0
    assert np.all(c.rhs == 8)
    row_sums = np.asarray(c.matrix.sum(axis=1)).ravel()
    assert np.all(row_sums >= 8)  # valid cells see at least k2 landmarks


def test_build_ours3d_requires_resolution(loop_scene):
    with pytest.raises(ConfigError, match="resolution"):
        build_problem(loop_scene, "ours3d", SparsifyParams(k1=5, grid3d_res=None))


def test_build_di_per_cell_quota(loop_scene):
    from mapsparse import Grid2DConfig

    params = SparsifyParams(k1=50, grid2d=Grid2DConfig(8, 6), lambda1=0.02)
    problem = build_problem(loop_scene, "di", params)
    assert [b.kind for b in problem.blocks] == [BLOCK_DICELL]
    assert np.all(problem.blocks[0].rhs == math.ceil(50 / 48))
    assert problem.blocks[0].penalty == 0.02


def test_slack_elimination_equivalence():
    """Minimum over selections of the implied-slack objective equals the
    optimum of the explicit program enumerated with per-row slack search."""
    rng = np.random.default_rng(21)
    for _ in range(20):
        problem = random_problem(rng, n_max=8, m_max=4)
        explicit_opt, _ = brute_force_optimum(problem)
        implied_opt = min(
            objective_value(problem, [(code >> j) & 1 for j in range(problem.n_landmarks)])
            for code in range(1 << problem.n_landmarks)
        )
        assert implied_opt == pytest.approx(explicit_opt, abs=1e-12)


def test_objective_monotone_in_k1():
    rng = np.random.default_rng(5)
    mat = (rng.random((4, 6)) < 0.5).astype(int)
    mat[mat.sum(axis=1) == 0, 0] = 1
    prev = -1.0
    for k1 in (1, 2, 3, 5, 8):
        problem = SparsificationProblem(
            n_landmarks=6, weight=rng.uniform(0.1, 1.0, 6) * 0 + 0.5,
            blocks=[block_from_dense(BLOCK_KEYFRAME, mat, k1, 2.0)], variant="lp",
        )
        opt, _ = brute_force_optimum(problem)
        assert opt >= prev - 1e-12
        prev = opt


def test_penalty_monotonicity():
    rng = np.random.default_rng(9)
    problem_lo = random_problem(rng, n_max=6, m_max=3, variants=("ours2d",))
    blocks_hi = [
        ConstraintBlock(kind=b.kind, matrix=b.matrix, rhs=b.rhs, penalty=b.penalty * 3,
                        slack_kind=b.slack_kind, labels=b.labels)
        for b in problem_lo.blocks
    ]
    problem_hi = SparsificationProblem(n_landmarks=problem_lo.n_landmarks,
                                       weight=problem_lo.weight, blocks=blocks_hi,
                                       variant=problem_lo.variant)
    lo, _ = brute_force_optimum(problem_lo)
    hi, _ = brute_force_optimum(problem_hi)
    assert hi >= lo - 1e-12


def test_lambda2_zero_reduces_to_lp(loop_scene):
    params = SparsifyParams(k1=4, lambda2=0.0)
    lp = build_problem(loop_scene, "lp", params)
    ours2d = build_problem(loop_scene, "ours2d", params)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = (rng.random(loop_scene.n_landmarks) < 0.1).astype(int)
        assert objective_value(ours2d, x) == pytest.approx(objective_value(lp, x), abs=1e-9)


def test_lambda3_zero_reduces_to_ours2d(loop_scene):
    params = SparsifyParams(k1=4, k2=8, lambda3=0.0, grid3d_res=1.0)
    ours2d = build_problem(loop_scene, "ours2d", params)
    ours3d = build_problem(loop_scene, "ours3d", params)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = (rng.random(loop_scene.n_landmarks) < 0.1).astype(int)
        assert objective_value(ours3d, x) == pytest.approx(objective_value(ours2d, x), abs=1e-9)


def test_check_solution_accepts_consistent():
    problem = simple_problem()
    sol = Solution(x=np.array([0, 1, 0]), objective=1.0, bound=1.0, status="optimal")
    report = check_solution(problem, sol)
    assert report.ok
    assert report.slack_totals[BLOCK_KEYFRAME] == 0.0


def test_check_solution_flags_corruption():
    problem = simple_problem()
    sol = Solution(x=np.array([0, 1, 0]), objective=2.0, bound=1.0, status="optimal")
    report = check_solution(problem, sol)
    assert not report.ok
    assert "recomputed" in report.detail


def test_check_solution_reports_slack_for_heuristic_x():
    problem = simple_problem(k1=2, lam=3.0)
    x = np.array([1, 0, 0])
    sol = Solution(x=x, objective=objective_value(problem, x), bound=0.0, status="heuristic")
    report = check_solution(problem, sol)
    assert report.ok
    # row 0 covered once (slack 1), row 1 uncovered (slack 2)
    assert report.slack_totals[BLOCK_KEYFRAME] == pytest.approx(3.0)
    assert report.zero_slack_violations[BLOCK_KEYFRAME] == 2
    svals = slack_values(problem, x)
    assert svals[0].tolist() == [1.0, 2.0]
