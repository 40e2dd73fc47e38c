"""Command-line experiments writing plot-ready CSV/JSON.

Every command reads an optional JSON config; flags override config keys.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, ConvergenceError, DegenerateMetricError
from .manifold import (
    ExactMetric,
    FrictionField,
    LambdaGrid,
    build_metric_field,
    geodesic_graph,
    node_path_cost,
    path_length,
    staircase_nodes,
)
from .mdp_core import GridWorldSpec, build_gridworld
from .mew_anneal import AnnealConfig, compare_schedules, run_anneal, write_rows_csv
from .protocol_eval import (
    excess_work_direct,
    excess_work_quadratic,
    linear_protocol,
    nonequilibrium_rollout,
    regret_along_protocol,
)

log = logging.getLogger("thermocurriculum")

DEFAULTS = {
    "gridworld": {"width": 7, "height": 7, "feature_corners": [[0, 0], [6, 6]]},
    "lambda_ranges": [[-1.0, 1.0], [-1.0, 1.0]],
    "grid_res": 41,
    "alpha": 0.2,
    "max_lag": 2000,
    "beta": 1.0,
    "sigma": 0.1,
    "field": {"type": "gridworld"},
    "start": [0.25, 0.85],
    "end": [0.85, 0.3],
    "n_steps": 100,
    "diagonal_moves": False,
    "path": "linear",
    "relax_steps": [20, 40, 80, 160],
    "seed": 0,
    "threads": None,
    "anneal": {
        "lambda": [1.0, 0.5],
        "speeds": [1e-7, 1e-6, 1e-5, 1e-4],
        "recency": 5000,
        "max_lag": None,
        "epsilon": 1e-8,
        "alpha_0": 0.2,
        "alpha_min": 1e-3,
        "steps_between_updates": 10,
        "total_env_steps": 20000,
        "seeds": None,
        "compare": False,
        "constant_alphas": [0.2, 0.05],
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.alpha is not None:
        cfg["alpha"] = args.alpha
    if args.grid_res is not None:
        cfg["grid_res"] = args.grid_res
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.relax_steps is not None:
        cfg["relax_steps"] = args.relax_steps
    if args.speed is not None:
        cfg["anneal"]["speeds"] = args.speed
    if args.recency is not None:
        cfg["anneal"]["recency"] = args.recency
    if args.max_lag is not None:
        if args.command == "anneal":
            cfg["anneal"]["max_lag"] = args.max_lag
        else:
            cfg["max_lag"] = args.max_lag
    return cfg


def _gridworld(cfg):
    g = cfg["gridworld"]
    spec = GridWorldSpec(int(g["width"]), int(g["height"]), tuple(map(tuple, g["feature_corners"])))
    return build_gridworld(spec)


def _lambda_grid(cfg, dim):
    ranges = cfg["lambda_ranges"]
    if len(ranges) != dim:
        ranges = [ranges[0]] * dim
    return LambdaGrid(tuple(map(tuple, ranges)), (int(cfg["grid_res"]),) * dim)


def _threads(cfg):
    return cfg["threads"] or os.cpu_count() or 1


def _field(cfg, mdp=None):
    spec = cfg["field"]
    kind = spec.get("type", "gridworld")
    if kind == "csv":
        return FrictionField.from_csv(spec["path"])
    if kind == "flat":
        grid = _lambda_grid(cfg, 2)
        scale = float(spec.get("scale", 1.0))
        return FrictionField(grid, np.broadcast_to(scale * np.eye(2), tuple(grid.resolution) + (2, 2)).copy())
    if kind == "block":
        # flat field with a high-friction block of nodes [lo, hi) per axis
        grid = _lambda_grid(cfg, 2)
        zeta = np.broadcast_to(np.eye(2), tuple(grid.resolution) + (2, 2)).copy()
        (i0, i1), (j0, j1) = spec["block"]
        zeta[i0:i1, j0:j1] *= float(spec.get("factor", 100.0))
        return FrictionField(grid, zeta)
    if kind != "gridworld":
        raise ConfigError(f"unknown field type {kind!r}")
    mdp = mdp or _gridworld(cfg)
    return build_metric_field(mdp, _lambda_grid(cfg, mdp.n_features), cfg["alpha"],
                              int(cfg["max_lag"]), cfg["beta"], _threads(cfg))


def _write_protocol_regret(path, protocol, trace):
    dim = protocol.points.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(["stage", "t"] + [f"lambda{i + 1}" for i in range(dim)]
                          + ["stage_regret", "cum_regret"]) + "\n")
        for k, (t, x) in enumerate(zip(protocol.times, protocol.points)):
            vals = [t, *x, trace.stage_regret[k], trace.cumulative[k]]
            fh.write(",".join([str(k)] + [repr(float(v)) for v in vals]) + "\n")


def _touches_positive_diagonal(field, nodes):
    return any(len(set(n)) == 1 and field.grid.point(n)[0] > 0 for n in map(tuple, nodes))


def cmd_friction_map(cfg, out: Path) -> dict:
    mdp = _gridworld(cfg)
    t0 = time.perf_counter()
    field = build_metric_field(mdp, _lambda_grid(cfg, mdp.n_features), cfg["alpha"],
                               int(cfg["max_lag"]), cfg["beta"], _threads(cfg))
    field.to_csv(out / "field.csv", sigma=cfg["sigma"])
    meta = {
        "field_build_s": time.perf_counter() - t0,
        "max_residual": float(np.max(field.residuals)),
        "residuals": field.residuals.tolist(),
        "theta": field.theta.tolist(),
    }
    (out / "field_meta.json").write_text(json.dumps(meta))
    return {"max_residual": meta["max_residual"]}


def cmd_geodesic(cfg, out: Path) -> dict:
    field = _field(cfg)
    geo = geodesic_graph(field, cfg["start"], cfg["end"], int(cfg["n_steps"]), cfg["diagonal_moves"])
    lin = linear_protocol(cfg["start"], cfg["end"], int(cfg["n_steps"]))
    geo.to_csv(out / "geodesic.csv")
    lin.to_csv(out / "linear.csv")
    stair = staircase_nodes(field.grid, field.grid.nearest(cfg["start"]), field.grid.nearest(cfg["end"]))
    summary = {
        "geodesic_length": geo.info["cost"],
        "linear_length": path_length(field, lin.points),
        "linear_staircase_cost": node_path_cost(field, stair),
        "nodes": geo.info["nodes"],
        "touches_positive_diagonal": _touches_positive_diagonal(field, geo.info["nodes"]),
    }
    (out / "geodesic_summary.json").write_text(json.dumps(summary))
    return {k: summary[k] for k in ("geodesic_length", "linear_length", "linear_staircase_cost")}


def cmd_regret(cfg, out: Path) -> dict:
    mdp = _gridworld(cfg)
    n = int(cfg["n_steps"])
    lin = linear_protocol(cfg["start"], cfg["end"], n)
    if np.allclose(cfg["start"], cfg["end"]):
        geo = lin
    else:
        geo = geodesic_graph(_field(cfg, mdp), cfg["start"], cfg["end"], n, cfg["diagonal_moves"])
    results = {}
    for name, proto in (("linear", lin), ("geodesic", geo)):
        trace = regret_along_protocol(mdp, proto, cfg["alpha"])
        _write_protocol_regret(out / f"regret_{name}.csv", proto, trace)
        results[f"{name}_cumulative_regret"] = trace.total
    lin_total = results["linear_cumulative_regret"]
    results["ratio"] = results["geodesic_cumulative_regret"] / lin_total if lin_total > 0 else float("nan")
    (out / "regret_summary.json").write_text(json.dumps(results))
    return results


def cmd_excess_work(cfg, out: Path) -> dict:
    mdp = _gridworld(cfg)
    n = int(cfg["n_steps"])
    if cfg["path"] == "geodesic":
        proto = geodesic_graph(_field(cfg, mdp), cfg["start"], cfg["end"], n, cfg["diagonal_moves"])
    elif cfg["path"] == "linear":
        proto = linear_protocol(cfg["start"], cfg["end"], n)
    else:
        raise ConfigError(f"unknown path {cfg['path']!r}")
    metric = ExactMetric(mdp, cfg["alpha"], int(cfg["max_lag"]), cfg["beta"])
    rows = []
    for m in cfg["relax_steps"]:
        m = int(m)
        if m < 1:
            raise ConfigError("relax steps must be positive")
        w_direct = excess_work_direct(nonequilibrium_rollout(mdp, proto, cfg["alpha"], m), proto)
        w_quad = excess_work_quadratic(proto.rescaled(m * (len(proto) - 1)), metric) if len(proto) > 1 else 0.0
        ratio = w_direct / w_quad if w_quad > 0 else float("nan")
        rows.append({"m": m, "W_direct": w_direct, "W_quadratic": w_quad, "ratio": ratio})
    write_rows_csv(rows, out / "excess_work.csv")
    return {"ratios": [r["ratio"] for r in rows]}


def _anneal_job(args):
    mdp, lam, acfg, total, seed = args
    return run_anneal(mdp, lam, acfg, total, seed)


def cmd_anneal(cfg, out: Path) -> dict:
    mdp = _gridworld(cfg)
    a = cfg["anneal"]
    seeds = a["seeds"] if a["seeds"] is not None else [cfg["seed"]]
    speeds = a["speeds"] if isinstance(a["speeds"], list) else [a["speeds"]]
    total = int(a["total_env_steps"])
    configs = [AnnealConfig(eta=float(eta), recency_N=int(a["recency"]), epsilon=a["epsilon"],
                            alpha_0=a["alpha_0"], max_lag_T=a["max_lag"], alpha_min=a["alpha_min"],
                            steps_between_updates=int(a["steps_between_updates"]))
               for eta in speeds]
    jobs = [(mdp, a["lambda"], c, total, s) for c in configs for s in seeds]
    threads = _threads(cfg)
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(_anneal_job, jobs))
    else:
        traces = [_anneal_job(j) for j in jobs]
    rows = []
    for (_, _, c, _, seed), tr in zip(jobs, traces):
        tr.to_csv(out / f"trace_eta{c.eta:g}_seed{seed}.csv")
        rows.append({"eta": c.eta, "seed": seed, "final_alpha": tr.final_alpha,
                     "n_updates": len(tr), "stop_reason": tr.stop_reason,
                     "reward_rate": tr.rewards_seen})
    write_rows_csv(rows, out / "anneal_summary.csv")
    if a["compare"]:
        comparison = []
        for c in configs:
            for row in compare_schedules(mdp, a["lambda"], c, total, seeds, tuple(a["constant_alphas"])):
                comparison.append({"eta": c.eta, **row})
        write_rows_csv(comparison, out / "compare.csv")
    return {"final_alpha": [r["final_alpha"] for r in rows]}


COMMANDS = {
    "friction-map": cmd_friction_map,
    "geodesic": cmd_geodesic,
    "regret": cmd_regret,
    "excess-work": cmd_excess_work,
    "anneal": cmd_anneal,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermocurriculum", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--grid-res", type=int)
        p.add_argument("--speed", type=float, nargs="+", help="MEW thermodynamic speed(s)")
        p.add_argument("--recency", type=int, help="MEW recency window N")
        p.add_argument("--max-lag", type=int)
        p.add_argument("--relax-steps", type=int, nargs="+")
        p.add_argument("--threads", type=int)
    return parser


def _canonical_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, DegenerateMetricError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    meta = {
        "command": args.command,
        "config_hash": _canonical_hash(cfg),
        "seed": cfg["seed"],
        "wall_time_s": time.perf_counter() - t0,
        "module_versions": {"thermocurriculum": __version__, "numpy": np.__version__,
                            "scipy": scipy.__version__},
        "result": result,
    }
    (out / "run_metadata.json").write_text(json.dumps(meta, indent=2))
    print(json.dumps(result))
    return 0
