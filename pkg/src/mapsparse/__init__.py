"""Landmark map sparsification with 2D image-grid and 3D visibility-grid terms."""

from .mapmodel import (
    CameraModel,
    Keyframe,
    Landmark,
    Map,
    MapFormatError,
    MapIntegrityError,
    Observation,
    Pose,
    association_matrix,
    load_map,
    project,
    project_points,
    save_map,
)
from .grid2d import CellOccupancy, Grid2DConfig, cell_index, occupancy_matrix
from .visibility3d import (
    Grid3DConfig,
    ValidCell,
    VisibilityConfig,
    VisibilityRegion,
    default_bounds,
    fit_all_regions,
    fit_visibility,
    is_visible,
    valid_cells,
)
from .problem import (
    ConfigError,
    ConstraintBlock,
    SparsificationProblem,
    SparsifyParams,
    Solution,
    build_problem,
    check_solution,
    landmark_weights,
    objective_value,
)
from .solver import (
    RelaxedSolution,
    SolveLimits,
    SolverError,
    export_lp,
    round_relaxation,
    solve_bnb,
    solve_exhaustive,
    solve_lp_relaxation,
)
from .baselines import DIReport, greedy_kcover, run_di, selected_counts_per_keyframe
from .evalharness import (
    EvalContext,
    EvalReport,
    compression_report,
    count_valid_cells,
    localization_rate,
    localize,
)
from .synthgen import QueryView, SceneSpec, generate_map, generate_queries

__version__ = "0.1.0"
