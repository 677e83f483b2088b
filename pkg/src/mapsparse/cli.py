"""Command-line driver: synth, sparsify, eval, bench, export-lp.

Exit codes: 0 success, 2 usage error, 3 input validation error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import baselines, evalharness, synthgen
from . import grid2d as g2
from . import visibility3d as v3
from .mapmodel import Map, MapFormatError, MapIntegrityError, load_map, save_map
from .problem import ConfigError, SparsifyParams, build_problem, objective_value
from .solver import SolveLimits, SolverError, export_lp, round_relaxation, solve_bnb, solve_lp_relaxation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_SOLVER = 4

METHODS = ("lp", "ours2d", "ours3d", "di", "greedy")


@dataclass
class RunConfig:
    """Everything a run depends on; embedded into every artifact we write."""

    method: str = "lp"
    k1: int = 50
    k2: int = 30
    lambda1: Optional[float] = None   # resolved per method (di gets a softer default)
    lambda2: float = 0.1
    lambda3: float = 0.5
    grid2d: str = "8x6"
    grid3d_res: Optional[float] = None
    bounds: str = "auto"
    weight_scheme: str = "inverse-match"
    mode: str = "exact"               # exact | heuristic
    time_limit: Optional[float] = None
    gap_limit: Optional[float] = None
    node_limit: Optional[int] = None
    workers: int = 1
    threshold: int = evalharness.DEFAULT_INLIER_THRESHOLD
    strata: str = "on-trajectory"
    query_count: int = 50
    seed: int = 0

    def resolved_lambda1(self) -> float:
        if self.lambda1 is not None:
            return self.lambda1
        return baselines.DI_DEFAULT_LAMBDA if self.method == "di" else 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _merge_config(args, parser) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                base = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
        unknown = set(base) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**base)
    for name in RunConfig.__dataclass_fields__:
        flag = getattr(args, name, None)
        if flag is not None:
            setattr(cfg, name, flag)
    if cfg.method not in METHODS:
        parser.error(f"unknown method {cfg.method!r}; choose from {METHODS}")
    if cfg.mode not in ("exact", "heuristic"):
        parser.error(f"unknown mode {cfg.mode!r}; choose exact or heuristic")
    if cfg.method == "ours3d" and cfg.grid3d_res is None:
        parser.error("method ours3d requires --grid3d-res")
    return cfg


def _parse_bounds(text: str):
    if text == "auto":
        return None
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 6:
        raise ConfigError("bounds must be 'auto' or x0,y0,z0,x1,y1,z1")
    return (np.array(parts[:3]), np.array(parts[3:]))


def _sparsify_params(cfg: RunConfig) -> SparsifyParams:
    return SparsifyParams(
        k1=cfg.k1, k2=cfg.k2,
        lambda1=cfg.resolved_lambda1(), lambda2=cfg.lambda2, lambda3=cfg.lambda3,
        grid2d=g2.Grid2DConfig.parse(cfg.grid2d),
        grid3d_res=cfg.grid3d_res,
        bounds=_parse_bounds(cfg.bounds),
        weight_scheme=cfg.weight_scheme,
    )


def _solve(mp: Map, cfg: RunConfig):
    """Run the configured method; returns (solution, problem-or-None, info dict)."""
    t0 = time.perf_counter()
    info = {"method": cfg.method, "n_landmarks": mp.n_landmarks, "n_keyframes": mp.n_keyframes}
    if cfg.method == "greedy":
        solution = baselines.greedy_kcover(mp, cfg.k1, _sparsify_params(cfg))
        problem = None
    else:
        params = _sparsify_params(cfg)
        problem = build_problem(mp, cfg.method, params)
        info.update(problem.size_summary())
        if cfg.mode == "heuristic":
            solution = round_relaxation(problem, solve_lp_relaxation(problem))
        else:
            limits = SolveLimits(time_limit=cfg.time_limit, gap_limit=cfg.gap_limit,
                                 node_limit=cfg.node_limit, workers=cfg.workers)
            solution = solve_bnb(problem, limits)
    info.update({
        "objective": solution.objective,
        "bound": solution.bound,
        "gap": solution.gap,
        "status": solution.status,
        "selected": solution.n_selected,
        "wall_time_s": time.perf_counter() - t0,
    })
    return solution, problem, info


def cmd_synth(args, parser) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synthgen.SceneSpec.from_dict(doc)
    mp = synthgen.generate_map(spec)
    save_map(mp, args.out)
    print(f"wrote {args.out}: {mp.n_landmarks} landmarks, {mp.n_keyframes} keyframes, "
          f"{len(mp.observations)} observations")
    return EXIT_OK


def cmd_sparsify(args, parser) -> int:
    cfg = _merge_config(args, parser)
    mp = load_map(args.map)
    solution, problem, info = _solve(mp, cfg)

    compact = mp.restrict_landmarks(solution.x)
    compact.metadata["run_config"] = cfg.to_json()
    compact.metadata["solve_status"] = solution.status
    save_map(compact, args.out)

    if args.export_lp_path and problem is not None:
        export_lp(problem, args.export_lp_path, header_comment=f"config: {cfg.to_json()}")

    log_path = args.log or (args.out + ".log.json")
    info["run_config"] = json.loads(cfg.to_json())
    with open(log_path, "w", encoding="utf-8") as f:
        json.dump(info, f, sort_keys=True, indent=2)
        f.write("\n")
    ratio, n_sel, n = evalharness.compression_report(mp, solution.x)
    print(f"{cfg.method}: selected {n_sel}/{n} landmarks (ratio {ratio:.4f}), "
          f"objective {solution.objective:.6f}, status {solution.status}")
    return EXIT_OK


def cmd_export_lp(args, parser) -> int:
    cfg = _merge_config(args, parser)
    if cfg.method == "greedy":
        parser.error("greedy has no program to export; choose lp, ours2d, ours3d, or di")
    mp = load_map(args.map)
    problem = build_problem(mp, cfg.method, _sparsify_params(cfg))
    export_lp(problem, args.out, header_comment=f"config: {cfg.to_json()}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _queries_for_eval(args, mp: Map, cfg: RunConfig):
    if args.queries:
        return synthgen.load_queries(args.queries, mp)
    queries = []
    for i, stratum in enumerate(cfg.strata.split(",")):
        queries.extend(
            synthgen.generate_queries(mp, stratum.strip(), cfg.query_count, cfg.seed + i)
        )
    return queries


def cmd_eval(args, parser) -> int:
    cfg = _merge_config(args, parser)
    original = load_map(args.map)
    compacts = []
    for item in args.compact:
        if "=" not in item:
            parser.error(f"--compact expects LABEL=PATH, got {item!r}")
        label, path = item.split("=", 1)
        compacts.append((label, load_map(path)))
    for label, cm in compacts:
        if {c.id for c in cm.cameras} != {c.id for c in original.cameras}:
            raise MapIntegrityError(f"compact map {label!r} uses different camera ids")

    queries = _queries_for_eval(args, original, cfg)
    if not queries:
        parser.error("no queries: provide --queries or a positive --query-count")
    ctx = evalharness.EvalContext(original)

    grid = None
    s_original = None
    if cfg.grid3d_res is not None:
        bounds = _parse_bounds(cfg.bounds)
        if bounds is None:
            bounds = v3.default_bounds(original, ctx.regions)
        grid = v3.Grid3DConfig(resolution=cfg.grid3d_res, bounds_min=bounds[0], bounds_max=bounds[1])
        s_original = evalharness.count_valid_cells(
            original, np.ones(original.n_landmarks, dtype=np.int8), grid, cfg.k2, regions=ctx.regions
        )

    lines = [f"# config: {cfg.to_json()}", "method,stratum,total,localized,rate,ratio,valid_cells"]
    for label, cm in compacts:
        selected = np.zeros(original.n_landmarks, dtype=np.int8)
        for lm in cm.landmarks:
            j = original.landmark_index.get(lm.id)
            if j is None:
                raise MapIntegrityError(f"compact map {label!r} has landmark id {lm.id} "
                                        f"not present in the original map")
            selected[j] = 1
        report = evalharness.localization_rate(original, selected, queries, cfg.threshold, context=ctx)
        ratio, _, _ = evalharness.compression_report(original, selected)
        cells = ""
        if grid is not None:
            cells = evalharness.count_valid_cells(original, selected, grid, cfg.k2, regions=ctx.regions)
        for stratum in sorted(report.strata):
            st = report.strata[stratum]
            lines.append(f"{label},{stratum},{st.total},{st.localized},{st.rate:.6f},{ratio:.6f},{cells}")
        summary = f"{label}: rate {report.rate:.4f} over {report.total} queries, ratio {ratio:.4f}"
        if grid is not None:
            summary += f", valid cells {cells}/{s_original}"
        print(summary)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args, parser) -> int:
    cfg = _merge_config(args, parser)
    with open(args.scenes, "r", encoding="utf-8") as f:
        scene_docs = json.load(f)
    methods = [m.strip() for m in args.methods.split(",")]
    for m in methods:
        if m not in METHODS:
            parser.error(f"unknown method {m!r} in --methods")
    lines = [f"# config: {cfg.to_json()}",
             "scene,method,n_landmarks,n_keyframes,rows,nnz,selected,objective,status,wall_time_s"]
    for doc in scene_docs:
        spec = synthgen.SceneSpec.from_dict(doc)
        mp = synthgen.generate_map(spec)
        scene_name = doc.get("name", f"seed{spec.seed}")
        for method in methods:
            run_cfg = RunConfig(**{**asdict(cfg), "method": method, "lambda1": cfg.lambda1})
            solution, problem, info = _solve(mp, run_cfg)
            rows = sum(info.get("rows_per_block", {}).values()) if problem else ""
            nnz = sum(info.get("nnz_per_block", {}).values()) if problem else ""
            lines.append(
                f"{scene_name},{method},{mp.n_landmarks},{mp.n_keyframes},{rows},{nnz},"
                f"{solution.n_selected},{solution.objective:.6f},{solution.status},"
                f"{info['wall_time_s']:.3f}"
            )
            print(lines[-1])
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return EXIT_OK


def _add_problem_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--k1", type=int, default=None)
    p.add_argument("--k2", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--grid2d", default=None, metavar="COLSxROWS")
    p.add_argument("--grid3d-res", dest="grid3d_res", type=float, default=None, metavar="METERS")
    p.add_argument("--bounds", default=None, metavar="auto|x0,y0,z0,x1,y1,z1")
    p.add_argument("--weight-scheme", dest="weight_scheme", default=None,
                   choices=("inverse-match", "uniform"))
    p.add_argument("--seed", type=int, default=None)


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=("exact", "heuristic"), default=None)
    p.add_argument("--time-limit", dest="time_limit", type=float, default=None)
    p.add_argument("--gap", dest="gap_limit", type=float, default=None)
    p.add_argument("--node-limit", dest="node_limit", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapsparse",
                                     description="Sparsify landmark maps and evaluate the result")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic map")
    p.add_argument("--spec", required=True, help="JSON scene spec file")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sparsify", help="select landmarks and write a compact map")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="solve log path (default: OUT.log.json)")
    p.add_argument("--export-lp", dest="export_lp_path", default=None,
                   help="also write the explicit program in LP format")
    _add_problem_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("eval", help="replay queries against compact maps")
    p.add_argument("--map", required=True, help="original map")
    p.add_argument("--compact", action="append", default=[], metavar="LABEL=PATH", required=True)
    p.add_argument("--queries", default=None, help="JSON query-set file")
    p.add_argument("--strata", default=None, help="comma list of on-trajectory,offset,free-space")
    p.add_argument("--query-count", dest="query_count", type=int, default=None)
    p.add_argument("--threshold", type=int, default=None, help="matched-landmark success threshold")
    p.add_argument("--out", required=True, help="CSV report path")
    _add_problem_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time methods across scenes")
    p.add_argument("--scenes", required=True, help="JSON list of scene specs")
    p.add_argument("--methods", required=True, help="comma list of methods")
    p.add_argument("--out", required=True)
    _add_problem_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-lp", help="write the explicit program without solving")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    _add_problem_flags(p)
    p.set_defaults(func=cmd_export_lp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (MapFormatError, MapIntegrityError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
