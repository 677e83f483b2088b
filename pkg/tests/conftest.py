import numpy as np
import pytest
import scipy.sparse as sp

from mapsparse import (
    CameraModel,
    ConstraintBlock,
    Keyframe,
    Landmark,
    Map,
    Observation,
    Pose,
    SparsificationProblem,
)
from mapsparse.problem import BLOCK_CELL2D, BLOCK_CELL3D, BLOCK_KEYFRAME, SLACK_BINARY, SLACK_INTEGER


def make_camera(cam_id=0):
    return CameraModel(id=cam_id, fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480)


def make_map(obs_pairs, n_landmarks=None, n_keyframes=None, match_counts=None, positions=None):
    """Hand-built map from (keyframe, landmark) pairs; geometry is arbitrary."""
    cam = make_camera()
    if n_keyframes is None:
        n_keyframes = max(kf for kf, _ in obs_pairs) + 1 if obs_pairs else 1
    if n_landmarks is None:
        n_landmarks = max(lm for _, lm in obs_pairs) + 1 if obs_pairs else 1
    keyframes = [Keyframe(id=i, pose=Pose.identity(), camera=cam) for i in range(n_keyframes)]
    if positions is None:
        positions = [(0.1 * j, 0.05 * j, 2.0 + j) for j in range(n_landmarks)]
    counts = match_counts or {}
    observed = {lm for _, lm in obs_pairs}
    landmarks = [
        Landmark(id=j, position=np.array(positions[j]),
                 match_count=counts.get(j, 1 if j in observed else 0))
        for j in range(n_landmarks)
    ]
    observations = [
        Observation(keyframe_id=kf, landmark_id=lm, pixel=np.array([10.0 + lm, 20.0 + kf]))
        for kf, lm in obs_pairs
    ]
    return Map([cam], keyframes, landmarks, observations)


def block_from_dense(kind, rows, rhs, penalty, slack_kind=None, labels=None):
    m = sp.csr_matrix(np.asarray(rows, dtype=np.int8))
    n_rows = m.shape[0]
    rhs = np.full(n_rows, rhs, dtype=np.int64) if np.isscalar(rhs) else np.asarray(rhs)
    if slack_kind is None:
        slack_kind = SLACK_BINARY if np.all(rhs == 1) and kind == BLOCK_CELL2D else SLACK_INTEGER
    if labels is None:
        labels = list(range(n_rows))
    return ConstraintBlock(kind=kind, matrix=m, rhs=rhs, penalty=penalty,
                           slack_kind=slack_kind, labels=labels)


def simple_problem(q=(1.0, 1.0, 1.0), a=((1, 1, 0), (0, 1, 1)), k1=1, lam=10.0, variant="lp"):
    """The 3-landmark, 2-keyframe reference instance."""
    blocks = [block_from_dense(BLOCK_KEYFRAME, a, k1, lam)]
    return SparsificationProblem(n_landmarks=len(q), weight=np.array(q), blocks=blocks,
                                 variant=variant)


def random_problem(rng, n_max=12, m_max=6, variants=("lp", "ours2d", "ours3d", "di")):
    """Random small multi-block instance in the shape of one of the variants."""
    n = int(rng.integers(2, n_max + 1))
    variant = variants[int(rng.integers(0, len(variants)))]
    q = rng.uniform(0.05, 1.0, size=n)
    blocks = []

    def random_matrix(rows, density=0.5):
        mat = (rng.random((rows, n)) < density).astype(np.int8)
        for r in range(rows):
            if mat[r].sum() == 0:
                mat[r, int(rng.integers(0, n))] = 1
        return mat

    m = int(rng.integers(1, m_max + 1))
    k1 = int(rng.integers(1, 5))
    if variant == "di":
        rows = int(rng.integers(1, 2 * m_max + 1))
        blocks.append(block_from_dense("dicell", random_matrix(rows), max(1, k1 // 2),
                                       float(rng.uniform(0.01, 2.0)), SLACK_INTEGER))
    else:
        blocks.append(block_from_dense(BLOCK_KEYFRAME, random_matrix(m), k1,
                                       float(rng.uniform(0.1, 5.0))))
        if variant in ("ours2d", "ours3d"):
            rows = int(rng.integers(1, 3 * m_max + 1))
            blocks.append(block_from_dense(BLOCK_CELL2D, random_matrix(rows, 0.3), 1,
                                           float(rng.uniform(0.01, 1.0)), SLACK_BINARY))
        if variant == "ours3d":
            rows = int(rng.integers(1, 2 * m_max + 1))
            k2 = int(rng.integers(1, 4))
            blocks.append(block_from_dense(BLOCK_CELL3D, random_matrix(rows, 0.4), k2,
                                           float(rng.uniform(0.01, 2.0)), SLACK_INTEGER))
    return SparsificationProblem(n_landmarks=n, weight=q, blocks=blocks, variant=variant)


def brute_force_optimum(problem):
    """Independent exhaustive optimum: bit loops and per-row slack search,
    no shared code with the solvers."""
    n = problem.n_landmarks
    best_obj, best_x = None, None
    dense = [(np.asarray(b.matrix.todense()), b.rhs, b.penalty) for b in problem.blocks]
    for code in range(1 << n):
        x = np.array([(code >> j) & 1 for j in range(n)], dtype=float)
        obj = float(np.dot(problem.weight, x))
        for mat, rhs, penalty in dense:
            coverage = mat @ x
            for r in range(mat.shape[0]):
                s = 0
                while coverage[r] < rhs[r] - s:
                    s += 1
                obj += penalty * s
        if best_obj is None or obj < best_obj - 1e-15:
            best_obj, best_x = obj, x
    return best_obj, best_x


@pytest.fixture(scope="session")
def loop_scene():
    from mapsparse import SceneSpec, generate_map

    return generate_map(SceneSpec(n_landmarks=400, n_keyframes=15, seed=11))


@pytest.fixture(scope="session")
def corridor_scene():
    from mapsparse import SceneSpec, generate_map

    return generate_map(SceneSpec(n_landmarks=350, n_keyframes=12, trajectory="corridor", seed=5))
