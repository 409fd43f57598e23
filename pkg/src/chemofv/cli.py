"""Command-line entry point: run, verify, sweep, and report.

run     execute one scenario, write time series + snapshots + report JSON
verify  self-convergence study (space and time) plus checks at two resolutions
sweep   batch runs over parameter values, one aggregate CSV row per run
report  render a stored report and emit the plot-ready envelope CSV
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, reporting
from .config import ConfigError, ScenarioConfig, build_initial_field, load_config
from .elliptic import EllipticSolveError
from .grid import Field, Grid, write_snapshot
from .stepping import RunFailure, SchemeParams, cfl_dt, run


def _overrides_from_args(args) -> dict:
    ov = {}
    if getattr(args, "t_end", None) is not None:
        ov["scheme.t_end"] = args.t_end
    if getattr(args, "v_l1_stop", None) is not None:
        ov["scheme.v_l1_stop"] = args.v_l1_stop
    if getattr(args, "poisson_tol", None) is not None:
        ov["checks.poisson_tol"] = args.poisson_tol
    return ov


def execute_scenario(cfg: ScenarioConfig):
    """Run one scenario and evaluate every enabled check.

    Returns (run result, report dict, all enabled checks passed).
    """
    result = run(
        cfg.u_in,
        cfg.v_in,
        cfg.motility,
        cfg.scheme,
        cfg.sample_times,
        weak_modes=cfg.checks.weak_modes,
    )
    checks, decay = diagnostics.evaluate_trajectory(
        result, cfg.u_in, cfg.v_in, cfg.motility, tol_disc=cfg.checks.tol_discretization
    )
    lr, limit_checks, limit_summary, skip = diagnostics.evaluate_limit(
        result,
        cfg.u_in,
        cfg.v_in,
        cfg.motility,
        poisson_tol=cfg.checks.poisson_tol,
        tol_disc=cfg.checks.tol_discretization,
    )
    checks = checks + limit_checks

    check_dicts = []
    all_passed = True
    for c in checks:
        d = reporting.check_to_dict(c)
        d["enabled"] = c.name not in cfg.checks.disabled
        if d["enabled"] and not c.passed:
            all_passed = False
        check_dicts.append(d)
    check_dicts.sort(key=lambda d: d["name"])

    dt_nominal = min(
        cfg.scheme.dt_max,
        cfl_dt(cfg.grid, cfg.motility, float(cfg.v_in.values.max()), cfg.scheme.cfl_safety),
    )
    report = {
        "schema": 1,
        "config": cfg.raw,
        "resolved": {
            # every effective value, defaults included, for reproducibility
            "grid": {"dim": cfg.grid.dim, "extent": list(cfg.grid.extent),
                     "cells": list(cfg.grid.cells), "spacing": list(cfg.grid.spacing)},
            "scheme": {
                "dt_max": cfg.scheme.dt_max,
                "t_end": cfg.scheme.t_end,
                "cfl_safety": cfg.scheme.cfl_safety,
                "v_l1_stop": result.v_l1_stop_used,
                "linear_tol": cfg.scheme.linear_tol,
            },
            "checks": {
                "tol_discretization": cfg.checks.tol_discretization,
                "weak_modes": list(cfg.checks.weak_modes),
                "poisson_tol": cfg.checks.poisson_tol,
                "disabled": list(cfg.checks.disabled),
            },
            "sample_count": len(cfg.sample_times),
        },
        "scheme": {
            "dt_nominal": dt_nominal,
            "steps": result.state.step_count,
            "t_final": result.state.t,
            "stopped_by": result.stopped_by,
            "v_l1_stop_used": result.v_l1_stop_used,
        },
        "checks": check_dicts,
        "decay": reporting.decay_to_dict(decay),
        "limit": limit_summary if lr is not None else None,
        "limit_skipped": skip,
        "all_passed": all_passed,
    }
    return result, report, all_passed


def _write_run_artifacts(cfg: ScenarioConfig, result, report) -> None:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    reporting.write_timeseries_csv(result.samples, out / "timeseries.csv")
    reporting.write_report_json(report, out / "report.json")
    final = result.samples[-1]
    for name, f in (("u", final.u), ("v", final.v), ("A", final.A)):
        write_snapshot(f, out / f"{name}_final.csv")
    for t_snap in cfg.snapshot_times:
        for smp in result.samples:
            if abs(smp.t - t_snap) <= 1e-12 * max(1.0, t_snap):
                for name, f in (("u", smp.u), ("v", smp.v), ("A", smp.A)):
                    write_snapshot(f, out / f"{name}_t{t_snap:g}.csv")
                break


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides_from_args(args))
    try:
        result, report, all_passed = execute_scenario(cfg)
    except RunFailure as exc:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        reporting.write_timeseries_csv(exc.samples, cfg.out_dir / "timeseries.csv")
        for name, f in (("u", exc.state.u), ("v", exc.state.v), ("A", exc.state.A)):
            write_snapshot(f, cfg.out_dir / f"{name}_lastgood.csv")
        print(f"solver failure at t = {exc.state.t:.6g}: {exc}", file=sys.stderr)
        print(f"last good state dumped to {cfg.out_dir}", file=sys.stderr)
        return 3
    _write_run_artifacts(cfg, result, report)
    print(reporting.render_report(report))
    print(f"artifacts written to {cfg.out_dir}")
    return 0 if all_passed else 1


# ---------------------------------------------------------------------------
# verify: self-convergence refinement study
# ---------------------------------------------------------------------------


def _refined_config(cfg: ScenarioConfig, factor: int) -> tuple[Grid, Field, Field]:
    grid = Grid(
        cfg.grid.dim,
        cfg.grid.extent,
        tuple(n * factor for n in cfg.grid.cells),
    )
    try:
        u = build_initial_field(cfg.raw["initial"]["u"], grid, "initial.u")
        v = build_initial_field(cfg.raw["initial"]["v"], grid, "initial.v")
    except ConfigError as exc:
        raise ConfigError(
            f"verify needs initial data that can be re-evaluated on a refined grid: {exc}"
        ) from exc
    return grid, u, v


def _restrict(values: np.ndarray, factor: int) -> np.ndarray:
    """Conservative cell-average restriction by an integer factor per axis."""
    out = values
    for ax in range(values.ndim):
        n = out.shape[ax] // factor
        shape = out.shape[:ax] + (n, factor) + out.shape[ax + 1 :]
        out = out.reshape(shape).mean(axis=ax + 1)
    return out


def _l2_diff(a: np.ndarray, b: np.ndarray, cell_volume: float) -> float:
    d = a - b
    return math.sqrt(float(np.dot(d.ravel(), d.ravel())) * cell_volume)


def _order(e_coarse: float, e_fine: float, floor: float) -> float:
    """log2 contraction rate; infinite when both errors sit at round-off."""
    if e_coarse <= floor and e_fine <= floor:
        return math.inf
    if e_fine <= 0.0:
        return math.inf
    return math.log2(e_coarse / e_fine)


MIN_VERIFY_CELLS = 8


def cmd_verify(args) -> int:
    cfg = load_config(args.config, _overrides_from_args(args))
    if min(cfg.grid.cells) < MIN_VERIFY_CELLS:
        # below this the ladder is outside the asymptotic regime and measured
        # orders are not credible, whatever their value happens to be
        print(
            f"under-resolved grid {cfg.grid.cells}: the refinement study needs "
            f"at least {MIN_VERIFY_CELLS} cells per axis at the coarsest level",
            file=sys.stderr,
        )
        return 1
    t_v = cfg.verify.t_end if cfg.verify.t_end is not None else min(0.25, cfg.scheme.t_end)
    mode = cfg.checks.weak_modes[0] if cfg.checks.weak_modes else 1

    v_max = float(cfg.v_in.values.max())
    dt_raw = min(cfg.scheme.dt_max, cfl_dt(cfg.grid, cfg.motility, v_max, cfg.scheme.cfl_safety))
    if not math.isfinite(dt_raw):
        dt_raw = t_v / 16.0
    n_steps = max(4, math.ceil(t_v / dt_raw))
    dt0 = t_v / n_steps  # divides the horizon exactly at every ladder level

    def run_level(grid, u, v, dt):
        params = SchemeParams(
            dt_max=dt,
            t_end=t_v,
            cfl_safety=cfg.scheme.cfl_safety,
            v_l1_stop=0.0,
            linear_tol=cfg.scheme.linear_tol,
        )
        return run(u, v, cfg.motility, params, (t_v,), weak_modes=(mode,))

    # spatial ladder: h, h/2, h/4 with dt scaled as h^2
    spatial = []
    for level in range(3):
        factor = 2**level
        grid, u, v = (cfg.grid, cfg.u_in, cfg.v_in) if level == 0 else _refined_config(cfg, factor)
        spatial.append((grid, run_level(grid, u, v, dt0 / 4**level)))

    floor_u = 1e-12 * (1.0 + float(np.abs(spatial[0][1].state.u.values).max()))
    e_u, e_v = [], []
    for lo in range(2):
        g_lo, r_lo = spatial[lo]
        _, r_hi = spatial[lo + 1]
        e_u.append(_l2_diff(_restrict(r_hi.state.u.values, 2), r_lo.state.u.values, g_lo.cell_volume))
        e_v.append(_l2_diff(_restrict(r_hi.state.v.values, 2), r_lo.state.v.values, g_lo.cell_volume))
    order_space_u = _order(e_u[0], e_u[1], floor_u)
    order_space_v = _order(e_v[0], e_v[1], floor_u)

    # temporal ladder at fixed grid: dt, dt/2, dt/4
    temporal = [spatial[0][1]] + [
        run_level(cfg.grid, cfg.u_in, cfg.v_in, dt0 / 2**k) for k in (1, 2)
    ]
    et_u = [
        _l2_diff(temporal[k].state.u.values, temporal[k + 1].state.u.values, cfg.grid.cell_volume)
        for k in range(2)
    ]
    order_time_u = _order(et_u[0], et_u[1], floor_u)

    u_in = cfg.u_in
    wfr = [
        diagnostics.weak_form_residual_from_trace(
            r.weak_traces[mode], Field(u_in.grid, r.state.u.values), u_in, "trapezoid"
        )
        for r in temporal
    ]
    floor_w = 1e-13 * (1.0 + abs(wfr[0]))
    order_weak = _order(wfr[0], wfr[1], floor_w)
    order_weak2 = _order(wfr[1], wfr[2], floor_w)

    # full check battery at the two coarsest spatial levels
    checks_by_level = {}
    ok_checks = True
    for level in range(2):
        grid, r = spatial[level]
        if level == 0:
            u, v = cfg.u_in, cfg.v_in
        else:
            _, u, v = _refined_config(cfg, 2**level)
        checks, _ = diagnostics.evaluate_trajectory(
            r, u, v, cfg.motility, tol_disc=cfg.checks.tol_discretization
        )
        dicts = [reporting.check_to_dict(c) for c in checks]
        checks_by_level[f"level{level}"] = dicts
        ok_checks = ok_checks and all(
            d["passed"] for d in dicts if d["name"] not in cfg.checks.disabled
        )

    orders_ok = (
        order_space_u >= cfg.verify.min_order_space
        and order_time_u >= cfg.verify.min_order_time
        and min(order_weak, order_weak2) >= cfg.verify.min_order_weak
    )
    passed = orders_ok and ok_checks
    report = {
        "schema": 1,
        "config": cfg.raw,
        "horizon": t_v,
        "dt0": dt0,
        "errors": {"space_u": e_u, "space_v": e_v, "time_u": et_u, "weak_form": wfr},
        "orders": {
            "space_u": order_space_u,
            "space_v": order_space_v,
            "time_u": order_time_u,
            "weak_form": min(order_weak, order_weak2),
        },
        "thresholds": {
            "space": cfg.verify.min_order_space,
            "time": cfg.verify.min_order_time,
            "weak": cfg.verify.min_order_weak,
        },
        "checks": checks_by_level,
        "passed": passed,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_report_json(report, cfg.out_dir / "verify_report.json")
    print(
        f"orders: space_u={order_space_u:.3f} space_v={order_space_v:.3f} "
        f"time_u={order_time_u:.3f} weak={min(order_weak, order_weak2):.3f} "
        f"checks={'PASS' if ok_checks else 'FAIL'}"
    )
    print(f"verify report written to {cfg.out_dir / 'verify_report.json'}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _sweep_worker(job):
    config_path, overrides = job
    try:
        cfg = load_config(config_path, overrides)
        _, report, all_passed = execute_scenario(cfg)
        limit = report.get("limit") or {}
        return {
            "dist_dual_sq": limit.get("dist_dual_sq", math.nan),
            "product_bound": limit.get("product_bound", math.nan),
            "smallness_holds": limit.get("smallness_holds", False),
            "certified_nonconstant": limit.get("certified_nonconstant", False),
            "nonconst_dual": limit.get("nonconst_dual", math.nan),
            "status": "ok" if all_passed else "check_failed",
        }
    except Exception as exc:  # per-run failures must not kill the sweep
        return {
            "dist_dual_sq": math.nan,
            "product_bound": math.nan,
            "smallness_holds": False,
            "certified_nonconstant": False,
            "nonconst_dual": math.nan,
            "status": f"error: {exc}",
        }


def _parse_value(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def cmd_sweep(args) -> int:
    if len(args.param) != len(args.values):
        print("each --param needs a matching --values list", file=sys.stderr)
        return 2
    base_overrides = _overrides_from_args(args)
    names = list(args.param)
    value_lists = [[_parse_value(v) for v in vs.split(",") if v] for vs in args.values]

    combos: list[dict] = [{}]
    for name, values in zip(names, value_lists):
        combos = [dict(c, **{name: v}) for c in combos for v in values]
    if any(not vs for vs in value_lists):
        combos = []

    jobs = [(args.config, {**base_overrides, **combo}) for combo in combos]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]

    cfg = load_config(args.config, base_overrides)
    out_path = Path(args.out) if args.out else cfg.out_dir / "sweep.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fixed = ["dist_dual_sq", "product_bound", "smallness_holds", "certified_nonconstant",
             "nonconst_dual", "status"]
    with open(out_path, "w") as fh:
        fh.write(",".join(names + fixed) + "\n")
        for combo, row in zip(combos, rows):
            cells = [f"{combo[n]:.17g}" if isinstance(combo[n], float) else str(combo[n]) for n in names]
            for key in fixed:
                val = row[key]
                cells.append(f"{val:.17g}" if isinstance(val, float) else str(val))
            fh.write(",".join(cells) + "\n")
    print(f"sweep aggregate written to {out_path} ({len(rows)} runs)")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    directory = Path(args.directory)
    path = directory / "report.json"
    if not path.exists():
        print(f"{path}: no report found", file=sys.stderr)
        return 1
    try:
        report = reporting.read_report_json(path)
    except ValueError as exc:
        print(f"{path}: corrupt report ({exc})", file=sys.stderr)
        return 1
    print(reporting.render_report(report))
    decay = report.get("decay") or {}
    rows = decay.get("rows") or []
    if rows:
        reporting.write_envelope_csv(rows, directory / "envelope.csv")
        print(f"envelope CSV written to {directory / 'envelope.csv'}")
    return 0


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--poisson-tol", type=float, default=None, help="dual-norm solve tolerance")
    p.add_argument("--t-end", type=float, default=None, help="override scheme.t_end")
    p.add_argument("--v-l1-stop", type=float, default=None, help="override the early-stop threshold")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chemofv",
        description="Finite-volume simulator and verification harness for the "
        "degenerate chemotaxis-consumption system",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write artifacts")
    p_run.add_argument("config")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="self-convergence and check battery")
    p_ver.add_argument("config")
    _add_common(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    p_sw = sub.add_parser("sweep", help="batch runs over parameter values")
    p_sw.add_argument("config")
    p_sw.add_argument("--param", action="append", default=[], help="dotted config key to vary")
    p_sw.add_argument("--values", action="append", default=[], help="comma-separated values")
    p_sw.add_argument("--workers", type=int, default=1)
    p_sw.add_argument("--out", default=None, help="aggregate CSV path")
    _add_common(p_sw)
    p_sw.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="render a stored run report")
    p_rep.add_argument("directory")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RunFailure, EllipticSolveError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
