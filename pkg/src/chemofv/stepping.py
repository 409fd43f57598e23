"""Time integration of the chemotaxis-consumption system.

One step advances (u, v, A) by
  1. an implicit (backward Euler) solve for the nutrient v, whose system
     matrix is an M-matrix, so positivity and the max principle are inherited
     unconditionally from the continuous comparison principle;
  2. an explicit conservative update of the cell density u under a CFL bound
     computed from sup gamma over the attainable nutrient range;
  3. accumulation of the diffusive load A by the rectangle rule dt * u * gamma(v+),
     using the same product that drives the u update.

Because u and A share one increment, u(t) - u_in - lap(A(t)) telescopes to
zero.  The u update is evaluated in the telescoped form u_in + lap(A) so the
identity also holds at round-off after ~1e5 steps; the incremental form
u + dt*lap(w) is identical in exact arithmetic but lets the 1/h^2-amplified
rounding of A leak into the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn

from .grid import Field, Grid, grad_sq_array, laplacian_array, neumann_mode
from .motility import MotilitySpec


class StepError(RuntimeError):
    """A sub-step violated its contract (CFL breach or linear-solve failure)."""


class RunFailure(RuntimeError):
    """A trajectory aborted mid-run; carries the last good state and samples."""

    def __init__(self, msg: str, state, samples):
        super().__init__(msg)
        self.state = state
        self.samples = samples


@dataclass
class SchemeParams:
    """Time-integration controls.

    v_l1_stop is an absolute threshold on |v|_1; None derives the default
    1e-8 * |v_in|_1 at run start, and 0 disables early stopping entirely
    (needed for nutrient-free runs, where |v|_1 is identically zero).
    """

    dt_max: float = math.inf
    t_end: float = 1.0
    cfl_safety: float = 0.9
    v_l1_stop: float | None = None
    linear_tol: float = 1e-11

    def __post_init__(self):
        if self.dt_max <= 0:
            raise ValueError("dt_max must be positive")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.v_l1_stop is not None and self.v_l1_stop < 0:
            raise ValueError("v_l1_stop must be >= 0")
        if self.linear_tol <= 0:
            raise ValueError("linear_tol must be positive")


@dataclass
class State:
    """The evolving tuple (t, u, v, A) plus the running absorption integral.

    u_in and v_linf0 pin the initial data the invariants refer to: the mean
    of u must match mean(u_in), |v|_inf may never exceed v_linf0, and the
    telescoped density update needs u_in itself.
    """

    t: float
    u: Field
    v: Field
    A: Field
    uv_l1_cumulative: float
    step_count: int
    u_in: Field
    v_linf0: float


@dataclass
class DiagnosticSample:
    """Snapshot of every monitored quantity at one sample time."""

    t: float
    dt: float
    u: Field
    v: Field
    A: Field
    mass_u: float
    v_l1: float
    v_l2: float
    v_linf: float
    grad_v_l2: float
    uv_l1_cumulative: float
    grad_A_sq: float
    A_l1: float
    identity_residual: float
    energy_residual: float


@dataclass
class WeakFormTrace:
    """Per-step record of g(t) = integral of u*gamma(v+)*lap(theta) for one test mode."""

    mode: int
    theta: Field
    lap_theta: np.ndarray
    times: list = field(default_factory=list)
    g: list = field(default_factory=list)
    rect_sum: float = 0.0


@dataclass
class RunResult:
    """Final state plus everything recorded along the trajectory."""

    state: State
    samples: list
    weak_traces: dict
    energy_residual_max: float
    stopped_by: str
    v_l1_stop_used: float


# ---------------------------------------------------------------------------
# CFL bound
# ---------------------------------------------------------------------------


def cfl_dt(grid: Grid, m: MotilitySpec, V: float, cfl_safety: float = 0.9) -> float:
    """Largest dt keeping the explicit density update nonnegative.

    The diffusion coefficient gamma(v) never exceeds sup gamma over [0, V]
    (max principle), so dt <= cfl_safety * h_min^2 / (2 * dim * sup gamma).
    Infinite when the motility vanishes on the whole range (v_in = 0).
    """
    g_max = m.sup_gamma(V)
    if g_max <= 0.0:
        return math.inf
    h2_min = min(h * h for h in grid.spacing)
    return cfl_safety * h2_min / (2.0 * grid.dim * g_max)


# ---------------------------------------------------------------------------
# implicit nutrient step
# ---------------------------------------------------------------------------

_lam_cache: dict[Grid, np.ndarray] = {}


def _lam_abs(grid: Grid) -> np.ndarray:
    """|eigenvalues| of the discrete Laplacian in the DCT basis (cached)."""
    lam = _lam_cache.get(grid)
    if lam is None:
        from .elliptic import dct_eigenvalues

        lam = -dct_eigenvalues(grid)
        if len(_lam_cache) > 16:
            _lam_cache.clear()
        _lam_cache[grid] = lam
    return lam


def _helmholtz_pcg(grid: Grid, u: np.ndarray, v: np.ndarray, dt: float, tol: float):
    """Solve (I - dt*lap + dt*diag(u)) x = v by preconditioned CG.

    The preconditioner inverts I - dt*lap + dt*mean(u) exactly in the DCT
    basis; what is left for CG is the O(dt * osc(u)) perturbation, so two or
    three iterations normally suffice.  tol is relative to |v|.
    """
    spacing = grid.spacing
    b_norm = math.sqrt(float(np.dot(v.ravel(), v.ravel())))
    if b_norm == 0.0:
        return np.zeros_like(v), 0
    tol_abs = tol * b_norm

    denom = 1.0 + dt * (_lam_abs(grid) + float(u.mean()))
    diag = 1.0 + dt * u  # zeroth-order part of the operator, reused every matvec

    def precond(r):
        return idctn(dctn(r, type=2, norm="ortho") / denom, type=2, norm="ortho")

    x = v.copy()  # warm start: v changes by O(dt) per step
    r = dt * (laplacian_array(x, spacing) - u * x)
    res = math.sqrt(float(np.dot(r.ravel(), r.ravel())))
    iters = 0
    max_iter = max(200, 10 * grid.n_cells)
    if res <= tol_abs:
        return x, iters
    z = precond(r)
    p = z.copy()
    rz = float(np.dot(r.ravel(), z.ravel()))
    while iters < max_iter:
        ap = diag * p - dt * laplacian_array(p, spacing)
        alpha = rz / float(np.dot(p.ravel(), ap.ravel()))
        x += alpha * p
        r -= alpha * ap
        iters += 1
        res = math.sqrt(float(np.dot(r.ravel(), r.ravel())))
        if res <= tol_abs:
            return x, iters
        z = precond(r)
        rz_new = float(np.dot(r.ravel(), z.ravel()))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise StepError(
        f"implicit nutrient solve stalled at relative residual {res / b_norm:.3e} "
        f"(tol {tol:.3e}) after {iters} iterations"
    )


def step_v(u: Field, v: Field, dt: float, tol: float = 1e-11) -> Field:
    """Backward Euler for v_t = lap(v) - u*v with absorption frozen at the current u.

    The system matrix is an M-matrix, so the exact update satisfies v+ >= 0
    and max(v+) <= max(v); both are asserted up to the linear-solve slack.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, _ = _helmholtz_pcg(u.grid, u.values, v.values, dt, tol)
    _check_nutrient_bounds(v.values, x, tol)
    return Field(u.grid, x)


def _check_nutrient_bounds(v_old: np.ndarray, v_new: np.ndarray, tol: float):
    # exact solve error is bounded by the residual (matrix eigenvalues >= 1)
    slack = max(1e-14, 4.0 * tol * math.sqrt(float(np.dot(v_old.ravel(), v_old.ravel()))))
    v_min = float(v_new.min())
    if v_min < -slack:
        raise StepError(f"implicit nutrient step lost positivity: min v+ = {v_min:.3e}")
    overshoot = float(v_new.max()) - float(v_old.max())
    if overshoot > slack:
        raise StepError(f"implicit nutrient step broke the max principle by {overshoot:.3e}")


# ---------------------------------------------------------------------------
# explicit density step
# ---------------------------------------------------------------------------


def step_u(u: Field, w: Field, dt: float) -> Field:
    """Explicit conservative update u+ = u + dt * lap(w) with w = u * gamma(v).

    Exactly mass-conserving (flux form); a negative cell beyond round-off
    means the CFL precondition was violated.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = u.values + dt * laplacian_array(w.values, u.grid.spacing)
    floor = -1e-14 * max(1.0, float(np.max(np.abs(u.values))))
    if float(out.min()) < floor:
        raise StepError(
            f"explicit density step produced min u+ = {float(out.min()):.3e}: CFL violation"
        )
    return Field(u.grid, out)


# ---------------------------------------------------------------------------
# composite step and trajectory driver
# ---------------------------------------------------------------------------


def _step_core(s: State, m: MotilitySpec, p: SchemeParams, t_cap: float):
    """One composite step; returns (new state, increment field w, dt used)."""
    grid = s.u.grid
    dt_nom = min(p.dt_max, cfl_dt(grid, m, s.v_linf0, p.cfl_safety))
    remaining = t_cap - s.t
    if remaining <= 0.0:
        raise StepError(f"step asked to advance beyond t_cap ({s.t} >= {t_cap})")
    if remaining <= dt_nom * (1.0 + 1e-9):
        # land on the cap exactly; the 1e-9 slack absorbs accumulated t drift
        dt = remaining
        t_new = t_cap
    elif remaining <= 2.0 * dt_nom:
        # split the tail evenly so no sliver step is ever taken
        dt = 0.5 * remaining
        t_new = s.t + dt
    else:
        dt = dt_nom
        t_new = s.t + dt

    v_new = step_v(s.u, s.v, dt, p.linear_tol)
    # clip solver-level negatives (~1e-20) before gamma, which rejects s < 0
    gv = m.gamma(np.maximum(v_new.values, 0.0))
    w = s.u.values * gv
    a_new = s.A.values + dt * w
    u_new = s.u_in.values + laplacian_array(a_new, grid.spacing)

    floor = -1e-12 * max(1.0, float(np.max(np.abs(s.u.values))))
    if float(u_new.min()) < floor:
        raise StepError(
            f"density update produced min u+ = {float(u_new.min()):.3e}: CFL violation"
        )

    uv_inc = dt * float(np.abs(s.u.values * v_new.values).sum()) * grid.cell_volume
    new_state = State(
        t=t_new,
        u=Field(grid, u_new),
        v=v_new,
        A=Field(grid, a_new),
        uv_l1_cumulative=s.uv_l1_cumulative + uv_inc,
        step_count=s.step_count + 1,
        u_in=s.u_in,
        v_linf0=s.v_linf0,
    )
    return new_state, w, dt


def step(s: State, m: MotilitySpec, p: SchemeParams, t_cap: float | None = None) -> State:
    """Advance one step of size min(dt_max, CFL bound, t_cap - t)."""
    new_state, _, _ = _step_core(s, m, p, p.t_end if t_cap is None else t_cap)
    return new_state


def energy_residual_arrays(
    grid: Grid, u_prev: np.ndarray, v_prev: np.ndarray, v_next: np.ndarray, dt: float
) -> float:
    """Discrete dissipation balance of one nutrient step.

    [|v+|_2^2 - |v|_2^2]/dt + 2 |grad v+|_2^2 + 2 int u (v+)^2; the backward
    Euler step makes this -|v+ - v|_2^2/dt up to the linear-solve residual,
    hence <= 0 and O(dt) on smooth data.
    """
    vol = grid.cell_volume
    n_new = float(np.dot(v_next.ravel(), v_next.ravel())) * vol
    n_old = float(np.dot(v_prev.ravel(), v_prev.ravel())) * vol
    if n_new == 0.0 and n_old == 0.0:
        return 0.0
    gsq = grad_sq_array(v_next, grid.spacing, vol)
    absorb = float((u_prev * v_next * v_next).sum()) * vol
    return (n_new - n_old) / dt + 2.0 * gsq + 2.0 * absorb


def _make_sample(s: State, dt: float, er: float) -> DiagnosticSample:
    grid = s.u.grid
    vol = grid.cell_volume
    v = s.v.values
    res = s.u.values - s.u_in.values - laplacian_array(s.A.values, grid.spacing)
    return DiagnosticSample(
        t=s.t,
        dt=dt,
        u=s.u.copy(),
        v=s.v.copy(),
        A=s.A.copy(),
        mass_u=float(s.u.values.sum()) * vol,
        v_l1=float(np.abs(v).sum()) * vol,
        v_l2=math.sqrt(float(np.dot(v.ravel(), v.ravel())) * vol),
        v_linf=float(np.max(np.abs(v))),
        grad_v_l2=math.sqrt(grad_sq_array(v, grid.spacing, vol)),
        uv_l1_cumulative=s.uv_l1_cumulative,
        grad_A_sq=grad_sq_array(s.A.values, grid.spacing, vol),
        A_l1=float(np.abs(s.A.values).sum()) * vol,
        identity_residual=math.sqrt(float(np.dot(res.ravel(), res.ravel())) * vol),
        energy_residual=er,
    )


def run(
    init_u: Field,
    init_v: Field,
    m: MotilitySpec,
    p: SchemeParams,
    sample_times=(),
    *,
    weak_modes=(),
) -> RunResult:
    """Advance from (init_u, init_v) until t_end or the nutrient is exhausted.

    Diagnostics are recorded at each requested sample time (dt is shortened
    to land on them exactly), at the stopping time, and at the end.  Each
    entry of weak_modes adds a per-step trace of the weak-form integrand for
    that cosine test mode.
    """
    grid = init_u.grid
    if init_v.grid != grid:
        raise ValueError("init_u and init_v live on different grids")
    for name, f in (("init_u", init_u), ("init_v", init_v)):
        if not np.all(np.isfinite(f.values)):
            raise ValueError(f"{name} has non-finite entries")
        if float(f.values.min()) < 0.0:
            raise ValueError(f"{name} must be nonnegative")
    if m.s_max is not None and float(init_v.values.max()) > m.s_max:
        raise ValueError(
            f"table motility covers [0, {m.s_max}] but max v_in = {float(init_v.values.max())}"
        )

    vol = grid.cell_volume
    v_l1_init = float(np.abs(init_v.values).sum()) * vol
    stop = p.v_l1_stop if p.v_l1_stop is not None else 1e-8 * v_l1_init

    state = State(
        t=0.0,
        u=init_u.copy(),
        v=init_v.copy(),
        A=Field.zeros(grid),
        uv_l1_cumulative=0.0,
        step_count=0,
        u_in=init_u.copy(),
        v_linf0=float(np.max(np.abs(init_v.values))),
    )

    times = sorted({float(t) for t in sample_times if 0.0 < float(t) <= p.t_end})
    idx = 0

    traces: dict[int, WeakFormTrace] = {}
    for mode in weak_modes:
        theta = neumann_mode(grid, mode)
        traces[mode] = WeakFormTrace(
            mode=mode, theta=theta, lap_theta=laplacian_array(theta.values, grid.spacing)
        )
        traces[mode].times.append(0.0)
        traces[mode].g.append(
            float((init_u.values * m.gamma(init_v.values) * traces[mode].lap_theta).sum()) * vol
        )

    samples = [_make_sample(state, 0.0, 0.0)]
    er_max = -math.inf if p.t_end > 0 else 0.0
    stopped_by = "t_end"
    t_edge = 1e-12 * max(1.0, p.t_end)

    while state.t < p.t_end - t_edge:
        while idx < len(times) and times[idx] <= state.t + t_edge:
            idx += 1
        t_cap = times[idx] if idx < len(times) else p.t_end

        prev = state
        try:
            state, w, dt = _step_core(state, m, p, t_cap)
        except StepError as exc:
            if samples[-1].t != state.t:
                samples.append(_make_sample(state, 0.0, 0.0))
            raise RunFailure(str(exc), state, samples) from exc
        er = energy_residual_arrays(grid, prev.u.values, prev.v.values, state.v.values, dt)
        er_max = max(er_max, er)

        for tr in traces.values():
            g = float((w * tr.lap_theta).sum()) * vol
            tr.times.append(state.t)
            tr.g.append(g)
            tr.rect_sum += dt * g

        v_l1 = float(np.abs(state.v.values).sum()) * vol
        stop_hit = stop > 0.0 and v_l1 <= stop
        landed = state.t == t_cap and idx < len(times)
        finished = state.t >= p.t_end - t_edge
        if landed or stop_hit or finished:
            samples.append(_make_sample(state, dt, er))
        if stop_hit:
            stopped_by = "v_l1_stop"
            break

    if samples[-1].t != state.t:
        samples.append(_make_sample(state, 0.0, 0.0))
    if er_max == -math.inf:
        er_max = 0.0

    return RunResult(
        state=state,
        samples=samples,
        weak_traces=traces,
        energy_residual_max=er_max,
        stopped_by=stopped_by,
        v_l1_stop_used=stop,
    )
