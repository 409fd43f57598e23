"""Artifact writers: time-series CSV, verification report JSON, rendered tables.

All numeric output uses 17 significant digits so doubles round-trip exactly,
and nothing time- or host-dependent is written: identical configs produce
byte-identical artifacts.
"""

from __future__ import annotations

import json

from .diagnostics import BoundCheck, DecayDiagnostic

TIMESERIES_COLUMNS = (
    "t",
    "mass_u",
    "v_l1",
    "v_l2",
    "v_linf",
    "uv_l1_cumulative",
    "grad_A_sq",
    "A_l1",
    "identity_residual",
    "energy_residual",
    "dt",
    "grad_v_l2",
)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_timeseries_csv(samples, path) -> None:
    """One row per diagnostic sample, columns as in TIMESERIES_COLUMNS."""
    with open(path, "w") as fh:
        fh.write(",".join(TIMESERIES_COLUMNS) + "\n")
        for s in samples:
            row = (
                s.t,
                s.mass_u,
                s.v_l1,
                s.v_l2,
                s.v_linf,
                s.uv_l1_cumulative,
                s.grad_A_sq,
                s.A_l1,
                s.identity_residual,
                s.energy_residual,
                s.dt,
                s.grad_v_l2,
            )
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def check_to_dict(c: BoundCheck) -> dict:
    d = {
        "name": c.name,
        "law": c.law,
        "lhs": c.lhs,
        "rhs": c.rhs,
        "slack": c.slack,
        "passed": c.passed,
    }
    if c.t is not None:
        d["t"] = c.t
    return d


def decay_to_dict(decay: DecayDiagnostic) -> dict:
    return {
        "c1": None if decay.skipped_reason else decay.c1,
        "M": decay.M,
        "tol": decay.tol,
        "max_ratio": decay.max_ratio,
        "passed": decay.passed,
        "skipped_reason": decay.skipped_reason,
        "rows": [[float(x) for x in row] for row in decay.rows],
    }


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_envelope_csv(decay_rows, path) -> None:
    """Plot-ready CSV of sampled |v|_1 against its decay envelope."""
    with open(path, "w") as fh:
        fh.write("t,v_l1,envelope\n")
        for t, v1, env in decay_rows:
            fh.write(f"{_fmt(t)},{_fmt(v1)},{_fmt(env)}\n")


def render_report(report: dict) -> str:
    """Human-readable summary table of a run report."""
    lines = []
    scheme = report.get("scheme", {})
    lines.append(
        "run: t_final={t} steps={n} stopped_by={s}".format(
            t=scheme.get("t_final"), n=scheme.get("steps"), s=scheme.get("stopped_by")
        )
    )
    checks = report.get("checks", [])
    if checks:
        name_w = max(len(c["name"]) for c in checks)
        lines.append(f"{'check'.ljust(name_w)}  {'lhs':>13} {'rhs':>13} {'slack':>10}  status")
        for c in checks:
            lines.append(
                f"{c['name'].ljust(name_w)}  {c['lhs']:13.6e} {c['rhs']:13.6e} "
                f"{c['slack']:10.3e}  {'PASS' if c['passed'] else 'FAIL'}"
            )
    limit = report.get("limit")
    if limit:
        lines.append(
            "limit: dist_dual={d:.6e} nonconst_dual={n:.6e} product_bound={p:.6e} "
            "smallness_condition={s} certified_nonconstant={c}".format(
                d=limit["dist_dual"],
                n=limit["nonconst_dual"],
                p=limit["product_bound"],
                s=limit["smallness_holds"],
                c=limit["certified_nonconstant"],
            )
        )
    elif report.get("limit_skipped"):
        lines.append(f"limit: skipped ({report['limit_skipped']})")
    return "\n".join(lines)
