"""Scenario configuration: TOML schema, validation, initial data construction.

Configs are plain TOML with an explicit schema version.  Validation errors
carry the offending key path; every resolved default is echoed back into the
run report so results stay reproducible from the report alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .grid import Field, Grid, cosine_field, read_snapshot
from .motility import MotilityError, MotilitySpec
from .stepping import SchemeParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration file is unreadable, malformed, or semantically invalid."""


@dataclass
class CheckOptions:
    """Which diagnostics run and with what slack."""

    tol_discretization: float = 0.05
    weak_modes: tuple = (1,)
    poisson_tol: float = 1e-10
    disabled: tuple = ()


@dataclass
class VerifyOptions:
    """Refinement-study settings for the self-convergence command."""

    t_end: float | None = None  # default: min(0.25, scheme t_end)
    min_order_space: float = 1.8
    min_order_time: float = 0.9
    min_order_weak: float = 0.9


@dataclass
class ScenarioConfig:
    """Fully resolved scenario, ready to run."""

    grid: Grid
    u_in: Field
    v_in: Field
    motility: MotilitySpec
    scheme: SchemeParams
    sample_times: tuple
    snapshot_times: tuple
    out_dir: Path
    checks: CheckOptions
    verify: VerifyOptions
    raw: dict = field(repr=False, default_factory=dict)


def _get(table: dict, key: str, path: str, required=True, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}: missing required key")
        return default
    return table[key]


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def build_initial_field(spec: dict, grid: Grid, path: str, base_dir: Path | None = None) -> Field:
    """Construct u_in or v_in from its config table and validate nonnegativity."""
    kind = _get(spec, "kind", path)
    if kind == "constant":
        value = float(_get(spec, "value", path))
        f = Field.full(grid, value)
    elif kind == "cosine":
        f = cosine_field(
            grid,
            float(_get(spec, "mean", path)),
            float(_get(spec, "amplitude", path)),
            int(_get(spec, "mode", path)),
        )
    elif kind == "snapshot":
        fname = Path(_get(spec, "file", path))
        if not fname.is_absolute() and base_dir is not None:
            fname = base_dir / fname
        try:
            f = read_snapshot(fname)
        except OSError as exc:
            raise ConfigError(f"{path}.file: cannot read snapshot ({exc})") from exc
        if f.grid != grid:
            raise ConfigError(f"{path}.file: snapshot grid {f.grid} does not match config grid")
    else:
        raise ConfigError(f"{path}.kind: unknown initial-data kind {kind!r}")
    if not np.all(np.isfinite(f.values)):
        raise ConfigError(f"{path}: initial data has non-finite entries")
    fmin = float(f.values.min())
    if fmin < 0.0:
        raise ConfigError(
            f"{path}: initial data must be nonnegative, min value is {fmin:.6g}"
        )
    return f


def build_motility(spec: dict, path: str = "gamma", base_dir: Path | None = None) -> MotilitySpec:
    kind = _get(spec, "kind", path)
    try:
        if kind == "power":
            return MotilitySpec.power(float(_get(spec, "alpha", path)))
        if kind == "power_sum":
            return MotilitySpec.power_sum(_get(spec, "terms", path))
        if kind == "table":
            fname = Path(_get(spec, "file", path))
            if not fname.is_absolute() and base_dir is not None:
                fname = base_dir / fname
            return MotilitySpec.from_table_file(fname)
    except MotilityError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}.file: cannot read table ({exc})") from exc
    raise ConfigError(f"{path}.kind: unknown motility kind {kind!r}")


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Set dotted-path keys (e.g. 'initial.v.value') in a nested config dict."""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted}: {p} is not a table")
        node[parts[-1]] = value
    return data


def parse_config(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Validate a raw config dict and build all runtime objects."""
    base_dir = Path(base_dir) if base_dir else Path.cwd()
    schema = data.get("schema", None)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: expected version {SCHEMA_VERSION}, got {schema!r}")

    g = _get(data, "grid", "config")
    dim = int(_get(g, "dim", "grid"))
    try:
        grid = Grid(dim, tuple(_as_list(_get(g, "extent", "grid"))), tuple(_as_list(_get(g, "cells", "grid"))))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    initial = _get(data, "initial", "config")
    u_in = build_initial_field(_get(initial, "u", "initial"), grid, "initial.u", base_dir)
    v_in = build_initial_field(_get(initial, "v", "initial"), grid, "initial.v", base_dir)

    motility = build_motility(_get(data, "gamma", "config"), base_dir=base_dir)
    v_max = float(v_in.values.max())
    if motility.s_max is not None and v_max > motility.s_max:
        raise ConfigError(
            f"gamma: table covers [0, {motility.s_max}] but max v_in is {v_max:.6g}; "
            "extend the table to at least the initial nutrient maximum"
        )

    sch = _get(data, "scheme", "config")
    try:
        scheme = SchemeParams(
            dt_max=float(sch.get("dt_max", math.inf)),
            t_end=float(_get(sch, "t_end", "scheme")),
            cfl_safety=float(sch.get("cfl_safety", 0.9)),
            v_l1_stop=(float(sch["v_l1_stop"]) if "v_l1_stop" in sch else None),
            linear_tol=float(sch.get("linear_tol", 1e-11)),
        )
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from exc

    sampling = data.get("sampling", {})
    if "times" in sampling:
        times = tuple(sorted({float(t) for t in sampling["times"]}))
        if any(t < 0 or t > scheme.t_end for t in times):
            raise ConfigError("sampling.times: entries must lie in [0, t_end]")
        gaps = np.diff(np.asarray((0.0,) + times))
        if len(gaps) and float(gaps.min()) < 1e-9 * max(1.0, scheme.t_end):
            raise ConfigError(
                "sampling.times: entries closer than 1e-9 * t_end would force "
                "degenerate sliver steps"
            )
    else:
        count = int(sampling.get("count", 64))
        if count < 1:
            raise ConfigError("sampling.count: must be >= 1")
        times = tuple(np.linspace(0.0, scheme.t_end, count + 1)[1:])
    snapshot_times = tuple(float(t) for t in sampling.get("snapshot_times", ()))

    out = data.get("output", {})
    out_dir = Path(out.get("directory", "out"))
    if not out_dir.is_absolute():
        import os

        root = os.environ.get("CHEMOFV_OUT_ROOT")
        out_dir = (Path(root) if root else base_dir) / out_dir

    ch = data.get("checks", {})
    checks = CheckOptions(
        tol_discretization=float(ch.get("tol_discretization", 0.05)),
        weak_modes=tuple(int(k) for k in ch.get("weak_modes", (1,))),
        poisson_tol=float(ch.get("poisson_tol", 1e-10)),
        disabled=tuple(ch.get("disabled", ())),
    )

    vf = data.get("verify", {})
    verify = VerifyOptions(
        t_end=(float(vf["t_end"]) if "t_end" in vf else None),
        min_order_space=float(vf.get("min_order_space", 1.8)),
        min_order_time=float(vf.get("min_order_time", 0.9)),
        min_order_weak=float(vf.get("min_order_weak", 0.9)),
    )

    return ScenarioConfig(
        grid=grid,
        u_in=u_in,
        v_in=v_in,
        motility=motility,
        scheme=scheme,
        sample_times=times,
        snapshot_times=snapshot_times,
        out_dir=out_dir,
        checks=checks,
        verify=verify,
        raw=data,
    )


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    """Read, override, and validate a scenario TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    if overrides:
        data = apply_overrides(data, dict(overrides))
    try:
        return parse_config(data, base_dir=path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
