import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import pin_tables
from rgflow.cov_decomp import Decomposition, mass_scale
from rgflow.flow_engine import (
    LD, CouplingState, FlowDivergence, FlowTables, Jet, RemainderModel, TangentState,
    TransformedState, barpt_step, flow_above, flow_below, hat_vars, inverse_transform,
    p_product, pt_step, run_flow, tangent_flow, tangent_states, transform, u_second_flow,
    u_second_terms, write_trajectory,
)
from rgflow.critical_tuner import shoot_mu0
from rgflow.lattice_kernels import ModelSpec
from rgflow.pipeline import massless_context, tune_point


@pytest.fixture(scope="module")
def tuned(ctx):
    return tune_point(ctx, 1e-4)


@pytest.fixture(scope="module")
def ctx0():
    return massless_context(ModelSpec(n=0))


def fresh_tables(ctx, m2=1e-4):
    dec = Decomposition(ctx.spec, m2, mass_scale(ctx.spec, m2) + 14)
    return FlowTables(ctx.spec, m2, dec, ctx.sbar)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_jet_product_rule(a, b, c, d):
    x, y = Jet(a, b, c), Jet(c, d, a)
    p = x * y
    assert float(p.d1) == pytest.approx(b * c + a * d, abs=1e-12)
    assert float(p.d2) == pytest.approx(c * c + 2 * b * d + a * a, abs=1e-12)
    q = (x - 3.0) * 2.0 + y / 4.0
    assert float(q.v) == pytest.approx(2 * (a - 3) + c / 4, abs=1e-12)
    with pytest.raises(TypeError):
        x / y


def test_pt_step_zero_coupling(ctx):
    t = ctx.tables
    for j in (0, 3, 7):
        nu = LD(0.01)
        out = pt_step(CouplingState(LD(0), nu, LD(0)), t, j)
        assert out.g == 0
        assert out.nu == nu - (nu * nu * t.w1n[j] - nu * nu * t.w1[j])


def test_pt_step_n0_leaves_u(ctx0):
    t = ctx0.tables
    st_ = CouplingState(LD(ctx0.sbar), LD(1e-4), LD(0.25))
    for j in range(6):
        st_ = pt_step(st_, t, j)
        assert st_.u == LD(0.25)


def test_pt_step_hand_expanded(ctx):
    # one step from (g, nu) = (1e-3, 0) at j = 0 where w_0 = 0
    t = ctx.tables
    rc = t.raw
    g = 1e-3
    wn = ctx.dec.hat0[1]
    eta, beta, xi = rc.eta_p[0], rc.beta_p[0], rc.xi_p[0]
    g_ref = g - beta * g * g - 4 * g * (eta * g) * wn
    nu_ref = eta * g - xi * g * g - (eta * g) ** 2 * wn
    n = ctx.spec.n
    u_ref = rc.kappa_g_p[0] * g - rc.kappa_gg_p[0] * g * g
    out = pt_step(CouplingState(LD(g), LD(0), LD(0)), t, 0)
    assert float(out.g) == pytest.approx(g_ref, rel=1e-14)
    assert float(out.nu) == pytest.approx(nu_ref, rel=1e-13)
    assert float(out.u) == pytest.approx(u_ref, rel=1e-13)
    with pytest.raises(IndexError):
        pt_step(CouplingState(LD(g), LD(0)), t, t.depth)


def test_transform_trivial_cases(ctx):
    t = ctx.tables
    ts = transform(0, LD(0.003), LD(2e-5), t)
    assert ts.s == LD(0.003)
    assert ts.mu == LD(2e-5) + t.eta_geq_p[0] * LD(0.003)
    z = transform(5, LD(0), LD(0), t)
    assert z.s == 0 and z.mu == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 15), st.floats(-0.01, 0.01), st.floats(-1e-4, 1e-4))
def test_inverse_transform_round_trip(ctx, j, s, mu):
    t = ctx.tables
    g, m = inverse_transform(j, LD(s), LD(mu), t)
    back = transform(j, g, m, t)
    assert abs(float(back.s) - s) < 1e-12 and abs(float(back.mu) - mu) < 1e-12


def test_inverse_transform_guard(ctx):
    with pytest.raises(ValueError):
        inverse_transform(1, LD(0.5), LD(0), ctx.tables)


def test_barpt_fixed_point_and_linear_part(ctx):
    t = pin_tables(fresh_tables(ctx))
    sb = LD(t.sbar)
    out = barpt_step(TransformedState(sb, LD(0), t.sbar), t, 2)
    assert abs(float(out.s - sb)) < 1e-17 and out.mu == 0
    out = barpt_step(TransformedState(LD(0), LD(1e-6), t.sbar), t, 2)
    assert out.mu == LD(t.spec.L) ** LD(t.spec.alpha) * LD(1e-6)
    with pytest.raises(ValueError):
        barpt_step(TransformedState(sb, LD(0)), t, t.j_m)


def test_conjugacy_error_constant(ctx):
    t = ctx.tables
    sb, eps = t.sbar, t.spec.epsilon
    C = []
    for j in (1, 4, 8):
        for d in (1.0, 0.5, 0.25, 0.125, 1 / 64):
            s, mu = LD(d * sb), LD(0.3 * (d * sb) ** 2)
            gh, mh = inverse_transform(j, s, mu, t)
            fg, fa = t.scale_factors(j)
            nxt = pt_step(CouplingState(gh / fg, mh / fa, LD(0)), t, j)
            ts = transform(j + 1, *hat_vars(nxt, t, j + 1), t)
            bp = barpt_step(TransformedState(s, mu, sb), t, j)
            err = max(abs(float(ts.s - bp.s)), abs(float(ts.mu - bp.mu)))
            S, M = float(s), float(mu)
            C.append(err / (S ** 3 + S * S * eps + abs(M) ** 3))
    assert max(C) < 50 and max(C) / min(C) < 5


def test_pinned_flow_stays_at_fixed_point(ctx):
    t = pin_tables(fresh_tables(ctx))
    rec = flow_below(t, 0.0, 0.0)
    assert np.all(np.abs(rec.col("s") - t.sbar) < 1e-17)
    assert np.all(rec.col("mu") == 0)


def test_untuned_flow_diverges(ctx, tuned):
    t = fresh_tables(ctx)
    with pytest.raises(FlowDivergence) as ei:
        run_flow(t, 0.1, 0.0, j_stop=t.depth - 1)
    assert ei.value.scale <= 6
    rec = run_flow(t, 0.1, 0.0, j_stop=t.depth - 1, on_box="stop")
    assert rec.stopped.startswith("box")
    # a small offset from the tuned value is expanded by about L^alpha per scale
    mu0 = tuned.tune.mu0_c_ld
    d = LD(1e-3) * LD(t.sbar) ** 2
    a = run_flow(t, mu0 + d, j_stop=t.j_m).col("mu")
    b = run_flow(t, mu0, j_stop=t.j_m).col("mu")
    growth = np.diff(np.log(np.abs(a - b)[: t.j_m - 1])) / np.log(t.spec.L ** t.spec.alpha)
    assert np.all((growth > 0.8) & (growth < 1.2))


def test_flow_above_zero_coefficients_freezes_nu(ctx):
    t = fresh_tables(ctx)
    for name in ("eta_p", "beta_p", "xi_p", "w1", "w1n", "eta_geq_p"):
        setattr(t, name, np.zeros(t.depth, dtype=LD))
    rec, nu_inf = flow_above(t, 1e-6, 0.0)
    assert float(nu_inf.v) == float(rec.states[t.j_m].nu.v) == pytest.approx(1e-6, rel=1e-15)


def test_flow_above_requires_mass(ctx):
    with pytest.raises(ValueError):
        run_flow(ctx.tables, 0.0, above=True)


def test_nu_inf_scale_and_increments(tuned):
    t, rec = tuned.tables, tuned.record
    jm = t.j_m
    scale = t.sbar * t.spec.L ** (-t.spec.alpha * jm)
    assert rec.converged
    assert abs(float(rec.nu_inf.v)) < 10 * scale
    inc = np.abs(np.diff(rec.col("nu")[jm:]))
    assert np.all(inc[2:] < inc[1:-1])


def test_tangent_initial_condition(tuned):
    ts = tangent_states(tuned.record)
    assert isinstance(ts[0], TangentState)
    assert (ts[0].s1, ts[0].mu1, ts[0].nu1, ts[0].g1) == (0.0, 1.0, 1.0, 0.0)
    assert all(x.mu1 > 0 for x in ts[: tuned.j_m + 1])


def test_mu_prime_tracks_P(tuned):
    rec, t = tuned.record, tuned.tables
    jm = t.j_m
    j = np.arange(jm + 1)
    r = rec.col("mu", 1)[j] / (t.spec.L ** (t.spec.alpha * j) * rec.P()[j])
    assert np.all((r > 0.5) & (r < 2))


def test_tangent_order_guard(tuned):
    with pytest.raises(ValueError):
        tangent_flow(tuned.tables, tuned.tune.mu0_c_ld, order=3)


def test_nu_prime_central_difference(tuned):
    t = tuned.tables
    mu0 = tuned.tune.mu0_c_ld
    N = t.j_m + 4
    rec = run_flow(t, mu0, 0.0, order=1, j_stop=N)
    h = LD(1e-6) * LD(t.sbar) ** 2
    nu = lambda m: float(run_flow(t, m, 0.0, j_stop=N).states[-1].nu)
    fd = (nu(mu0 + h) - nu(mu0 - h)) / (2 * float(h))
    an = float(rec.states[-1].nu.d1)
    assert abs(fd / an - 1) < 1e-4


def test_u_second_n0_vanishes(ctx0):
    tp = tune_point(ctx0, 1e-4)
    assert tp.u2 == 0.0 and tp.heat.c_H == 0.0


def test_u_second_cancelled_vs_plain(tuned):
    rec = tuned.record
    a = u_second_terms(rec, True)
    b = u_second_terms(rec, False)
    for j in (1, 3, 5):
        pa, pb = float(a[j][0]), float(b[j][0])
        assert pa == pytest.approx(pb, rel=1e-8)
    assert float(u_second_flow(rec, True)) == pytest.approx(float(u_second_flow(rec, False)), rel=1e-6)


def test_u_second_cancellation_ratio(tuned):
    rec, t = tuned.record, tuned.tables
    st_ = rec.states
    # kappa_nu nu'' is dominated by -n C w1 nu'^2; the remainder is O(sbar)
    for j in range(2, t.j_m - 1):
        n1, n2 = st_[j].nu.d1, st_[j].nu.d2
        assert abs(float(n2 + 2 * t.w1[j] * n1 * n1)) / abs(float(n2)) < 3 * t.sbar


def test_u_second_needs_jets(ctx):
    rec = run_flow(fresh_tables(ctx), 0.0, j_stop=3)
    with pytest.raises(ValueError):
        u_second_terms(rec)


def test_p_product(tuned, ctx):
    rec, t = tuned.record, tuned.tables
    assert p_product(rec, 0) == 1.0
    jm = t.j_m
    P = rec.P()
    assert np.all(P[jm:] == P[jm])
    g = rec.col("g")
    assert P[jm] / (g[jm] / g[0]) ** t.spec.gamma_bar == pytest.approx(1.0, abs=0.5)
    t0 = fresh_tables(ctx)
    t0.res.beta = np.zeros(t0.depth)
    assert p_product(run_flow(t0, 0.0, j_stop=6, on_box="stop"), 6) == 1.0


def test_remainder_model_bounded_and_seeded(ctx):
    t = fresh_tables(ctx)
    r1, r2 = RemainderModel(True, 1.0, 3), RemainderModel(True, 1.0, 3)
    for j in range(t.depth):
        rg, rn = r1.terms(t, j)
        assert (rg, rn) == r2.terms(t, j)
        assert abs(float(rg)) <= t.sbar ** 3 and abs(float(rn)) <= t.sbar ** 3
        if j >= t.j_m:
            assert rg == 0
    assert RemainderModel().terms(t, 0) == (0.0, 0.0)


def test_write_trajectory(tmp_path, tuned):
    p = write_trajectory(tuned.record, tmp_path / "traj.csv", {"config_hash": "x"})
    lines = open(p).read().splitlines()
    assert lines[0] == "# config_hash = x"
    assert lines[1].split(",")[:4] == ["j", "g", "nu", "u"]
    assert len(lines) == 2 + tuned.record.j_stop + 1
