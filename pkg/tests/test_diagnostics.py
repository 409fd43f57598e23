import math

import numpy as np
import pytest

from chemofv import (
    Field,
    Grid,
    MotilitySpec,
    NotConvergedError,
    SchemeParams,
    cosine_field,
    extract_limit,
    h1_dual_norm,
    lp_norm,
    mean,
    run,
)
from chemofv.diagnostics import (
    check_absorption_ledger,
    check_conservation,
    check_elliptic_identity,
    check_limit_distance,
    check_load_bounds,
    check_load_convergence,
    check_v_decay,
    decay_envelope,
    energy_residual,
    evaluate_limit,
    evaluate_trajectory,
    make_check,
    weak_form_residual,
    weak_form_residual_from_trace,
)


def grid1(n=32):
    return Grid(1, (1.0,), (n,))


@pytest.fixture(scope="module")
def stationary_run():
    g = grid1(64)
    u0 = cosine_field(g, 1.0, 0.5, 1)
    res = run(
        u0,
        Field.zeros(g),
        MotilitySpec.power(1.0),
        SchemeParams(dt_max=0.05, t_end=1.0, v_l1_stop=0.0),
        sample_times=(0.25, 0.5, 1.0),
        weak_modes=(0, 1),
    )
    return g, u0, res


@pytest.fixture(scope="module")
def uniform_run():
    # dt * horizon stays small enough that the backward-Euler decay factor
    # exp(t*dt/2) remains inside the 5% envelope tolerance
    g = Grid(1, (1.0,), (2,))
    u0 = Field.full(g, 1.0)
    v0 = Field.full(g, 1.0)
    res = run(
        u0,
        v0,
        MotilitySpec.power(1.0),
        SchemeParams(dt_max=0.005, t_end=25.0, v_l1_stop=1e-6, linear_tol=1e-13),
        sample_times=tuple(np.linspace(0, 25, 51)[1:]),
    )
    return g, u0, v0, res


@pytest.fixture(scope="module")
def wavy_run():
    g = grid1(48)
    u0 = cosine_field(g, 1.0, 0.5, 1)
    v0 = Field.full(g, 0.05)
    res = run(
        u0,
        v0,
        MotilitySpec.power(1.0),
        SchemeParams(t_end=40.0, v_l1_stop=5e-10, linear_tol=1e-12),
        sample_times=tuple(np.linspace(0, 40, 81)[1:]),
        weak_modes=(1,),
    )
    return g, u0, v0, res


class TestBoundCheckArithmetic:
    def test_slack_formula(self):
        c = make_check("x", "law", 1.0, 2.0)
        assert c.slack == pytest.approx(0.5)
        assert c.passed

    def test_violated_check_fails(self):
        c = make_check("x", "law", 3.0, 2.0)
        assert c.slack == pytest.approx(-0.5)
        assert not c.passed

    def test_tolerance_allows_small_violations(self):
        c = make_check("x", "law", 2.02, 2.0, tol_rel=0.05)
        assert c.passed


class TestConservationChecks:
    def test_stationary_all_pass(self, stationary_run):
        g, u0, res = stationary_run
        for c in check_conservation(res.state, u0, Field.zeros(g)):
            assert c.passed, c

    def test_uniform_cumulative_approaches_initial_mass(self, uniform_run):
        g, u0, v0, res = uniform_run
        # scalar oracle: cumulative absorption is exactly what v lost
        expected = 1.0 - res.samples[-1].v_l1
        assert res.state.uv_l1_cumulative == pytest.approx(expected, abs=1e-9)
        for c in check_conservation(res.state, u0, v0):
            assert c.passed, c

    def test_ledger_closes(self, wavy_run):
        g, u0, v0, res = wavy_run
        for smp in res.samples:
            assert check_absorption_ledger(smp, v0).passed

    def test_mass_slack_never_negative(self, wavy_run):
        g, u0, v0, res = wavy_run
        for smp in res.samples:
            mass = next(c for c in check_conservation(smp, u0, v0) if c.name == "mass_conservation")
            assert mass.slack >= -1e-12


class TestLoadBounds:
    def test_zero_nutrient_gives_zero_lhs(self, stationary_run):
        g, u0, res = stationary_run
        checks = check_load_bounds(res.state, u0, Field.zeros(g), MotilitySpec.power(1.0))
        assert all(c.lhs == 0.0 for c in checks)

    def test_bounds_hold_at_every_sample(self, wavy_run):
        g, u0, v0, res = wavy_run
        m = MotilitySpec.power(1.0)
        for smp in res.samples:
            for c in check_load_bounds(smp, u0, v0, m):
                assert c.slack >= 0.0, c

    def test_uniform_l1_matches_absorbed_mass(self, uniform_run):
        g, u0, v0, res = uniform_run
        # with gamma(s) = s, the load integral equals the absorbed nutrient
        checks = check_load_bounds(res.state, u0, v0, MotilitySpec.power(1.0))
        l1 = next(c for c in checks if c.name == "load_l1_bound")
        assert l1.lhs == pytest.approx(res.state.uv_l1_cumulative, rel=1e-12)
        assert l1.rhs == 1.0


class TestEllipticIdentity:
    def test_zero_steps(self, stationary_run):
        g, u0, res = stationary_run
        first = res.samples[0]
        assert check_elliptic_identity(first, u0).lhs == 0.0

    def test_round_off_along_trajectory(self, wavy_run):
        g, u0, v0, res = wavy_run
        for smp in res.samples:
            assert check_elliptic_identity(smp, u0).passed


class TestEnergyResidual:
    def test_zero_nutrient_gives_zero(self, stationary_run):
        g, u0, res = stationary_run
        assert res.energy_residual_max == 0.0

    def test_uniform_scalar_oracle(self):
        from chemofv import State, step

        # two cells keep the CFL bound above dt = 0.1 so the step is not clipped
        g = Grid(1, (1.0,), (2,))
        s = State(
            t=0.0,
            u=Field.full(g, 2.0),
            v=Field.full(g, 1.0),
            A=Field.zeros(g),
            uv_l1_cumulative=0.0,
            step_count=0,
            u_in=Field.full(g, 2.0),
            v_linf0=1.0,
        )
        p = SchemeParams(dt_max=0.1, t_end=0.1, linear_tol=1e-13)
        s1 = step(s, MotilitySpec.power(1.0), p)
        assert s1.t == 0.1
        vp = 1.0 / 1.2
        oracle = (vp * vp - 1.0) / 0.1 + 2.0 * 2.0 * vp * vp
        assert oracle == pytest.approx(-0.27778, abs=5e-6)
        assert energy_residual(s, s1) == pytest.approx(oracle, abs=1e-9)

    def test_residual_halves_with_dt(self):
        g = grid1(32)
        u0 = cosine_field(g, 1.0, 0.5, 1)
        v0 = Field.full(g, 0.1)
        m = MotilitySpec.power(1.0)
        ers = []
        for dt in (4e-4, 2e-4):
            res = run(
                u0, v0, m,
                SchemeParams(dt_max=dt, t_end=0.2, v_l1_stop=0.0, linear_tol=1e-12),
                sample_times=(0.1, 0.2),
            )
            ers.append(res.samples[1].energy_residual)
        ratio = abs(ers[1]) / abs(ers[0])
        assert 0.4 <= ratio <= 0.6


class TestDecayEnvelope:
    def test_zero_nutrient_rows_trivial(self, stationary_run):
        g, u0, res = stationary_run
        dec = decay_envelope(res.samples, u0, Field.zeros(g), MotilitySpec.power(1.0))
        assert dec.passed
        assert np.all(dec.rows[:, 1] == 0.0)

    def test_uniform_rows_within_tolerance(self, uniform_run):
        g, u0, v0, res = uniform_run
        dec = decay_envelope(res.samples, u0, v0, MotilitySpec.power(1.0), tol=0.05)
        assert dec.M == pytest.approx(1.0)
        assert dec.passed
        # uniform fields keep the gradient term silent: envelope is pure e^{-t}
        assert dec.rows[-1, 2] == pytest.approx(math.exp(-res.samples[-1].t), rel=1e-9)

    def test_zero_mean_density_is_skipped(self):
        g = grid1(16)
        u0 = Field.zeros(g)
        v0 = Field.full(g, 0.1)
        res = run(
            u0, v0, MotilitySpec.power(1.0),
            SchemeParams(dt_max=0.01, t_end=0.1, v_l1_stop=0.0),
            sample_times=(0.1,),
        )
        dec = decay_envelope(res.samples, u0, v0, MotilitySpec.power(1.0))
        assert dec.skipped_reason is not None

    def test_wavy_rows_pass(self, wavy_run):
        g, u0, v0, res = wavy_run
        dec = decay_envelope(res.samples, u0, v0, MotilitySpec.power(1.0), tol=0.05)
        assert dec.passed
        assert dec.c1 == pytest.approx(
            lp_norm(u0, 2) + math.sqrt(lp_norm(u0, math.inf) * lp_norm(v0, 1)), rel=1e-12
        )


class TestLimitExtraction:
    def test_stationary_limit_is_initial_density(self, stationary_run):
        g, u0, res = stationary_run
        lr = extract_limit(res.state, u0, 1e-12, v_l1_stop=res.v_l1_stop_used)
        assert np.array_equal(lr.u_inf.values, u0.values)
        assert np.all(lr.A_inf.values == 0.0)
        assert lr.dist_dual == 0.0

    def test_uniform_limit_is_flat(self, uniform_run):
        g, u0, v0, res = uniform_run
        lr = extract_limit(res.state, u0, 1e-12, v_l1_stop=res.v_l1_stop_used)
        np.testing.assert_allclose(lr.u_inf.values, 1.0, rtol=1e-11)
        assert lr.nonconst_dual <= 1e-9

    def test_unconverged_run_refuses_extraction(self):
        g = grid1(16)
        res = run(
            Field.full(g, 1.0),
            Field.full(g, 0.1),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=0.5, v_l1_stop=1e-9),
            sample_times=(0.5,),
        )
        assert res.stopped_by == "t_end"
        with pytest.raises(NotConvergedError, match="t_end"):
            extract_limit(res.state, Field.full(g, 1.0), 1e-10, v_l1_stop=res.v_l1_stop_used)

    def test_distance_checks_on_wavy_run(self, wavy_run):
        g, u0, v0, res = wavy_run
        lr = extract_limit(res.state, u0, 1e-11, v_l1_stop=res.v_l1_stop_used)
        c_dist, c_small, certified = check_limit_distance(lr, u0, v0, MotilitySpec.power(1.0))
        assert c_dist.passed
        assert c_dist.rhs == pytest.approx(lp_norm(u0, math.inf) * 0.05, rel=1e-12)
        # v_in = 0.05: product bound 0.075 exceeds |u0 - <u0>|^2 ~ 0.0127
        assert not c_small.passed
        assert not certified

    def test_zero_nutrient_certificate_is_trivial(self, stationary_run):
        g, u0, res = stationary_run
        lr = extract_limit(res.state, u0, 1e-12, v_l1_stop=res.v_l1_stop_used)
        c_dist, c_small, certified = check_limit_distance(lr, u0, Field.zeros(g), MotilitySpec.power(1.0))
        assert c_dist.lhs == 0.0 and c_dist.rhs == 0.0 and c_dist.passed
        assert c_small.passed  # 0 < |u0 - <u0>|^2
        assert certified
        assert lr.certified_nonconstant
        assert lr.nonconst_dual == pytest.approx(
            h1_dual_norm(Field(g, u0.values - mean(u0)), 1e-12), abs=1e-10
        )


class TestWeakForm:
    def test_mode_zero_is_mass_defect(self, wavy_run):
        g, u0, v0, res = wavy_run
        r = weak_form_residual(res.samples, u0, MotilitySpec.power(1.0), 0)
        assert r <= 1e-13

    def test_stationary_residual_vanishes(self, stationary_run):
        g, u0, res = stationary_run
        r = weak_form_residual(res.samples, u0, MotilitySpec.power(1.0), 1)
        assert r == 0.0
        tr = res.weak_traces[1]
        assert weak_form_residual_from_trace(tr, res.state.u, u0, "rectangle") == 0.0

    def test_scheme_quadrature_closes_at_round_off(self, wavy_run):
        g, u0, v0, res = wavy_run
        tr = res.weak_traces[1]
        r = weak_form_residual_from_trace(tr, res.state.u, u0, "rectangle")
        assert r <= 1e-12

    def test_trapezoid_residual_shrinks_first_order_in_dt(self):
        g = grid1(32)
        u0 = cosine_field(g, 1.0, 0.5, 1)
        v0 = Field.full(g, 0.1)
        m = MotilitySpec.power(1.0)
        rs = []
        for k in range(3):
            res = run(
                u0, v0, m,
                SchemeParams(dt_max=5e-4 / 2**k, t_end=0.2, v_l1_stop=0.0, linear_tol=1e-12),
                sample_times=(0.2,),
                weak_modes=(1,),
            )
            rs.append(weak_form_residual_from_trace(res.weak_traces[1], res.state.u, u0, "trapezoid"))
        assert math.log2(rs[0] / rs[1]) >= 0.9
        assert math.log2(rs[1] / rs[2]) >= 0.9


class TestTrajectoryAggregation:
    def test_wavy_run_all_checks_pass(self, wavy_run):
        g, u0, v0, res = wavy_run
        checks, decay = evaluate_trajectory(res, u0, v0, MotilitySpec.power(1.0))
        for c in checks:
            assert c.passed, (c.name, c.lhs, c.rhs)
        assert decay.passed

    def test_v_decay_thresholds(self, wavy_run):
        g, u0, v0, res = wavy_run
        for c in check_v_decay(res.samples, res.v_l1_stop_used, v0):
            assert c.passed, c

    def test_load_convergence_monotone(self, wavy_run):
        g, u0, v0, res = wavy_run
        for c in check_load_convergence(res.samples):
            assert c.passed, c

    def test_load_convergence_uniform_tail_oracle(self, uniform_run):
        g, u0, v0, res = uniform_run
        # uniform case: A(t) - A(final) is the scalar tail sum of absorbed nutrient
        a_fin = float(res.samples[-1].A.values[0])
        for smp in res.samples[5:10]:
            tail = a_fin - float(smp.A.values[0])
            oracle = smp.v_l1 - res.samples[-1].v_l1
            assert tail == pytest.approx(oracle, abs=1e-9)

    def test_limit_evaluation_summary(self, wavy_run):
        g, u0, v0, res = wavy_run
        lr, checks, summary, skip = evaluate_limit(res, u0, v0, MotilitySpec.power(1.0))
        assert skip is None
        assert summary["dist_dual_sq"] == pytest.approx(lr.dist_dual**2)
        assert not summary["smallness_holds"]
        for c in checks:
            assert c.passed, c

    def test_dual_convergence_trace_decreases(self, wavy_run):
        g, u0, v0, res = wavy_run
        _, _, summary, _ = evaluate_limit(res, u0, v0, MotilitySpec.power(1.0))
        trace = summary["dual_convergence_trace"]
        assert trace[0][1] > trace[-1][1]
        assert trace[-1][1] <= 1e-9  # final sample is the limit itself
        assert summary["dual_convergence_decreasing"]
