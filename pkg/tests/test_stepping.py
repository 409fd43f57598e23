import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chemofv import (
    Field,
    Grid,
    MotilitySpec,
    SchemeParams,
    State,
    StepError,
    cfl_dt,
    cosine_field,
    integrate,
    lp_norm,
    run,
    step,
    step_u,
    step_v,
)


def grid1(n=32):
    return Grid(1, (1.0,), (n,))


def make_state(u, v, m=None):
    return State(
        t=0.0,
        u=u.copy(),
        v=v.copy(),
        A=Field.zeros(u.grid),
        uv_l1_cumulative=0.0,
        step_count=0,
        u_in=u.copy(),
        v_linf0=float(np.max(np.abs(v.values))),
    )


def nonneg_field(n, hi=2.0):
    return arrays(np.float64, (n,), elements=st.floats(0, hi, allow_nan=False))


class TestNutrientStep:
    def test_zero_nutrient_stays_zero(self):
        g = grid1()
        out = step_v(Field.full(g, 1.0), Field.zeros(g), 0.1)
        assert np.all(out.values == 0.0)

    def test_uniform_reduces_to_scalar_backward_euler(self):
        g = grid1()
        out = step_v(Field.full(g, 2.0), Field.full(g, 1.0), 0.1, tol=1e-13)
        np.testing.assert_allclose(out.values, 1.0 / 1.2, rtol=1e-12)

    @given(nonneg_field(16), nonneg_field(16), st.floats(1e-3, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_max_principle_and_positivity(self, uv, vv, dt):
        g = grid1(16)
        out = step_v(Field(g, uv), Field(g, vv), dt, tol=1e-13)
        vmax = float(vv.max())
        assert float(out.values.max()) <= vmax + 1e-11 * max(1.0, vmax)
        assert float(out.values.min()) >= -1e-11 * max(1.0, vmax)

    def test_decay_under_absorption(self):
        g = grid1()
        out = step_v(Field.full(g, 1.0), Field.full(g, 0.5), 0.2, tol=1e-13)
        assert float(out.values.max()) < 0.5


class TestDensityStep:
    def test_constant_flux_leaves_u_unchanged(self):
        g = grid1()
        u = cosine_field(g, 1.0, 0.2, 1)
        out = step_u(u, Field.full(g, 3.0), 0.01)
        assert np.array_equal(out.values, u.values)

    def test_zero_flux_leaves_u_bitwise(self):
        g = grid1()
        u = cosine_field(g, 1.0, 0.3, 2)
        out = step_u(u, Field.zeros(g), 0.5)
        assert np.array_equal(out.values, u.values)

    @given(nonneg_field(24, hi=1.0), nonneg_field(24, hi=0.3))
    @settings(max_examples=40, deadline=None)
    def test_exact_mass_conservation(self, uv, vv):
        g = grid1(24)
        m = MotilitySpec.power(1.0)
        u = Field(g, uv + 0.1)
        dt = 0.5 * cfl_dt(g, m, 0.3, cfl_safety=1.0)
        w = Field(g, u.values * m.gamma(vv))
        out = step_u(u, w, dt)
        assert abs(integrate(out) - integrate(u)) <= 1e-13 * max(1.0, integrate(u))

    def test_cfl_violation_raises(self):
        g = grid1(16)
        u = Field(g, np.r_[1.0, np.zeros(15)])
        w = u.copy()
        with pytest.raises(StepError, match="CFL"):
            step_u(u, w, 1.0)  # dt far beyond h^2/2


class TestCompositeStep:
    def test_nutrient_free_state_is_stationary(self):
        g = grid1(64)
        u = cosine_field(g, 1.0, 0.5, 1)
        s = make_state(u, Field.zeros(g))
        m = MotilitySpec.power(1.0)
        p = SchemeParams(dt_max=0.05, t_end=1.0)
        s1 = step(s, m, p)
        assert s1.t == pytest.approx(0.05)
        assert np.array_equal(s1.u.values, u.values)
        assert np.all(s1.v.values == 0.0)
        assert np.all(s1.A.values == 0.0)

    def test_uniform_state_follows_scalar_recursion(self):
        g = Grid(1, (1.0,), (2,))
        m = MotilitySpec.power(1.0)
        s = make_state(Field.full(g, 3.0), Field.full(g, 1.0))
        p = SchemeParams(dt_max=0.1, t_end=10.0)
        v = 1.0
        for _ in range(5):
            s = step(s, m, p)
            v = v / (1.0 + 0.1 * 3.0)
            np.testing.assert_allclose(s.u.values, 3.0, rtol=1e-13)
            np.testing.assert_allclose(s.v.values, v, rtol=1e-12)

    def test_load_increments_are_nonnegative(self):
        g = grid1(24)
        m = MotilitySpec.power(1.5)
        s = make_state(cosine_field(g, 1.0, 0.4, 1), cosine_field(g, 0.2, 0.1, 2))
        p = SchemeParams(t_end=1.0)
        for _ in range(4):
            s_next = step(s, m, p)
            assert np.all(s_next.A.values >= s.A.values)
            s = s_next

    def test_dt_respects_cfl_invariant(self):
        g = grid1(32)
        m = MotilitySpec.power(1.0)
        V = 0.25
        s = make_state(Field.full(g, 1.0), Field.full(g, V))
        p = SchemeParams(dt_max=1.0, t_end=5.0, cfl_safety=0.9)
        s1 = step(s, m, p)
        bound = 0.9 * g.spacing[0] ** 2 / (2.0 * 1 * m.sup_gamma(V))
        assert s1.t <= bound * (1 + 1e-12)


class TestRun:
    def test_stationary_trajectory_is_bitwise_frozen(self):
        g = grid1(64)
        u0 = cosine_field(g, 1.0, 0.5, 1)
        res = run(
            u0,
            Field.zeros(g),
            MotilitySpec.power(1.0),
            SchemeParams(dt_max=0.02, t_end=1.0, v_l1_stop=0.0),
            sample_times=(0.5, 1.0),
        )
        assert res.state.step_count == 50
        assert np.array_equal(res.state.u.values, u0.values)
        assert np.all(res.state.v.values == 0.0)
        assert res.state.uv_l1_cumulative == 0.0
        assert res.stopped_by == "t_end"

    def test_uniform_run_matches_scalar_recursion_at_samples(self):
        g = Grid(1, (1.0,), (2,))
        res = run(
            Field.full(g, 1.0),
            Field.full(g, 1.0),
            MotilitySpec.power(1.0),
            SchemeParams(dt_max=0.1, t_end=3.0, v_l1_stop=0.0, linear_tol=1e-13),
            sample_times=(1.0, 2.0, 3.0),
        )
        for smp in res.samples[1:]:
            k = round(smp.t / 0.1)
            oracle = (1.0 / 1.1) ** k
            assert smp.v_l1 == pytest.approx(oracle, rel=1e-10)
        # geometric decay beats the continuous-rate envelope only slightly
        assert res.samples[-1].v_l1 <= math.exp(-3.0) * (1.0 + 0.1 * 3.0 / 2 * 1.1)

    def test_absorption_stays_under_initial_nutrient_mass(self):
        g = grid1(32)
        res = run(
            cosine_field(g, 1.0, 0.5, 1),
            Field.full(g, 0.05),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=30.0, v_l1_stop=5e-9, linear_tol=1e-12),
            sample_times=np.linspace(0, 30, 31)[1:],
        )
        assert res.stopped_by == "v_l1_stop"
        assert res.state.uv_l1_cumulative <= 0.05 + 1e-8

    def test_elliptic_identity_residual_at_samples(self):
        g = grid1(48)
        u0 = cosine_field(g, 1.0, 0.4, 1)
        res = run(
            u0,
            Field.full(g, 0.1),
            MotilitySpec.power(2.0),
            SchemeParams(t_end=0.5, v_l1_stop=0.0, linear_tol=1e-12),
            sample_times=(0.1, 0.25, 0.5),
        )
        budget = 1e-10 * (1.0 + lp_norm(u0, 2))
        for smp in res.samples:
            assert smp.identity_residual <= budget

    def test_mass_and_max_principle_along_trajectory(self):
        g = grid1(48)
        u0 = cosine_field(g, 1.0, 0.4, 1)
        res = run(
            u0,
            cosine_field(g, 0.08, 0.02, 1),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=1.0, v_l1_stop=0.0, linear_tol=1e-12),
            sample_times=(0.25, 0.5, 1.0),
        )
        m0 = integrate(u0)
        for smp in res.samples:
            assert abs(smp.mass_u - m0) <= 1e-12 * abs(m0)
            assert smp.v_linf <= 0.1 + 1e-14

    def test_nutrient_ledger_closes(self):
        g = grid1(32)
        v0 = Field.full(g, 0.1)
        res = run(
            cosine_field(g, 1.0, 0.5, 1),
            v0,
            MotilitySpec.power(1.0),
            SchemeParams(t_end=2.0, v_l1_stop=0.0, linear_tol=1e-12),
            sample_times=(1.0, 2.0),
        )
        for smp in res.samples:
            assert abs(smp.v_l1 + smp.uv_l1_cumulative - 0.1) <= 1e-10

    def test_dissipation_residual_never_positive(self):
        g = grid1(32)
        res = run(
            cosine_field(g, 1.0, 0.5, 1),
            Field.full(g, 0.1),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=1.0, v_l1_stop=0.0, linear_tol=1e-12),
            sample_times=(0.5, 1.0),
        )
        assert res.energy_residual_max <= 0.0

    def test_samples_land_exactly_on_requested_times(self):
        g = grid1(24)
        times = (0.1, 0.2, 0.35, 0.5)
        res = run(
            Field.full(g, 1.0),
            Field.full(g, 0.1),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=0.5, v_l1_stop=0.0),
            sample_times=times,
        )
        assert [s.t for s in res.samples] == [0.0, *times]

    def test_early_stop_on_nutrient_exhaustion(self):
        g = grid1(24)
        res = run(
            Field.full(g, 2.0),
            Field.full(g, 0.1),
            MotilitySpec.power(1.0),
            SchemeParams(t_end=50.0, v_l1_stop=1e-6),
            sample_times=(25.0, 50.0),
        )
        assert res.stopped_by == "v_l1_stop"
        assert res.samples[-1].v_l1 <= 1e-6
        assert res.state.t < 50.0

    def test_rejects_negative_initial_data(self):
        g = grid1(8)
        with pytest.raises(ValueError, match="nonnegative"):
            run(
                Field(g, -np.ones(8)),
                Field.zeros(g),
                MotilitySpec.power(1.0),
                SchemeParams(t_end=1.0),
            )

    def test_rejects_mismatched_grids(self):
        with pytest.raises(ValueError, match="grids"):
            run(
                Field.full(grid1(8), 1.0),
                Field.full(grid1(16), 1.0),
                MotilitySpec.power(1.0),
                SchemeParams(t_end=1.0),
            )

    def test_rejects_table_not_covering_initial_nutrient(self):
        s = np.linspace(0.0, 0.05, 51)
        m = MotilitySpec.table(s, s, np.ones_like(s))
        g = grid1(8)
        with pytest.raises(ValueError, match="table"):
            run(Field.full(g, 1.0), Field.full(g, 0.1), m, SchemeParams(t_end=1.0))

    def test_self_convergence_in_space(self):
        # dt scaled as h^2: differences between consecutive grids contract at 2nd order
        m = MotilitySpec.power(1.0)
        t_v = 0.1
        sols = []
        for n in (16, 32, 64):
            g = grid1(n)
            dt = t_v / math.ceil(t_v / (0.9 * g.spacing[0] ** 2 / (2 * 0.1)))
            res = run(
                cosine_field(g, 1.0, 0.5, 1),
                Field.full(g, 0.1),
                m,
                SchemeParams(dt_max=dt, t_end=t_v, v_l1_stop=0.0, linear_tol=1e-12),
                sample_times=(t_v,),
            )
            sols.append((g, res.state.u.values))
        errs = []
        for k in range(2):
            g, coarse = sols[k]
            fine = sols[k + 1][1].reshape(-1, 2).mean(axis=1)
            errs.append(math.sqrt(float(((fine - coarse) ** 2).sum()) * g.cell_volume))
        assert math.log2(errs[0] / errs[1]) >= 1.8
