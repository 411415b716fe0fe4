import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from rgflow.lattice_kernels import (
    ModelSpec, QuadratureSpec, bubble, bubble_scaling, frac_laplacian_entry, frac_resolvent_entry,
    generator_check, green_diag_tau, kernel_window, resolvent_via_rho, rho_integral,
    rho_weight, stieltjes_check, symbol_lambda, torus_resolvent,
)

# reference values from 30-digit mpmath quadrature of the Fourier integrals
TAU_051 = 1.19096672193914990489
TAU_06 = 1.31645606213000465828
BUBBLE_051 = {1e-2: 2.89144193488872864007, 1e-4: 6.52160196684431285234,
              1e-6: 10.8758633172567151080}
RES_06_01 = {0: 1.01945191411747659646, 1: 0.321739470953796776552,
             5: 0.111407986543985572989, 20: 0.0349644813362340297057}
FRACLAP_03 = {0: 1.10933180137624413959, 1: -0.255999646471440955289,
              3: -0.0401369669698306636093, 10: -0.00578577489887386470432}


def test_model_spec_alpha_and_validation():
    s = ModelSpec()
    assert s.alpha == pytest.approx(0.51)
    assert s.gamma_bar == pytest.approx(1 / 3)
    assert ModelSpec.from_alpha(1, 0.6).epsilon == pytest.approx(0.2)
    for bad in ({"d": 4}, {"L": 1}, {"epsilon": -0.1}, {"n": -1}, {"g": 0.0}, {"d": 1, "epsilon": 1.5}):
        with pytest.raises(ValueError):
            ModelSpec(**bad)
    with pytest.raises(ValueError):
        QuadratureSpec(rel_tol=2.0)


def test_symbol_lambda_examples():
    assert symbol_lambda(np.array([0.0])) == 0.0
    assert symbol_lambda(np.array([math.pi])) == pytest.approx(4.0)
    assert symbol_lambda(np.array([math.pi, math.pi])) == pytest.approx(8.0)


@given(st.lists(st.floats(-math.pi, math.pi), min_size=1, max_size=3))
def test_symbol_lambda_range(k):
    v = symbol_lambda(np.array(k))
    assert -1e-15 <= v <= 4 * len(k) + 1e-12


@pytest.mark.parametrize("x", [0, 1, 2, 5, 17, 100])
def test_half_power_closed_form(x):
    # int_0^pi 2 sin(k/2) cos(kx) dk / pi = (4/pi) / (1 - 4x^2)
    assert frac_laplacian_entry(0.5, x) == pytest.approx((4 / math.pi) / (1 - 4 * x * x), rel=1e-10)


@pytest.mark.parametrize("x,ref", sorted(FRACLAP_03.items()))
def test_frac_laplacian_against_mpmath(x, ref):
    assert frac_laplacian_entry(0.3, x) == pytest.approx(ref, rel=1e-9)


def test_frac_laplacian_signs_and_domain():
    v = frac_laplacian_entry(0.4, np.arange(30))
    assert v[0] > 0 and np.all(v[1:] < 0)
    with pytest.raises(ValueError):
        frac_laplacian_entry(1.0, 0)


@pytest.mark.parametrize("x,ref", sorted(RES_06_01.items()))
def test_resolvent_against_mpmath(x, ref):
    sp = ModelSpec.from_alpha(1, 0.6)
    assert frac_resolvent_entry(sp, 0.1, x) == pytest.approx(ref, rel=1e-9)
    assert frac_resolvent_entry(sp, 0.1, -x) == frac_resolvent_entry(sp, 0.1, x)


def test_resolvent_total_mass_and_domain():
    sp = ModelSpec.from_alpha(1, 0.6)
    # k = 0 Fourier value of the resolvent
    assert 1.0 / (symbol_lambda(np.array([0.0])) ** sp.beta + 0.25) == pytest.approx(4.0)
    assert torus_resolvent(sp, 0.25, 3, np.arange(16 ** 3)).sum() == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(ValueError):
        frac_resolvent_entry(ModelSpec(d=1, epsilon=0.02), -1.0, 0)


def test_rho_weight_examples():
    s = np.array([0.01, 1.0, 7.0])
    assert np.allclose(rho_weight(0.5, s, 0.0), s ** -0.5 / math.pi, rtol=1e-14)
    with pytest.raises(ValueError):
        rho_weight(0.5, 0.0, 1.0)
    val, _ = rho_integral(lambda s: 1.0 / s, 0.3, 2.0)
    assert val == pytest.approx(0.5, rel=1e-8)
    assert stieltjes_check(0.3, 1.0, 0.5) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(1e-6, 1e3), st.floats(0.0, 10.0))
def test_stieltjes_identity_property(beta, t, a):
    assert stieltjes_check(beta, t, a) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(1e-8, 1e8), st.floats(0.0, 1e3))
def test_rho_nonnegative(beta, s, a):
    assert rho_weight(beta, s, a) >= 0


def test_resolvent_via_rho_matches_fourier():
    sp = ModelSpec.from_alpha(1, 0.6)
    xs = [0, 1, 5, 20]
    got = resolvent_via_rho(sp, 0.1, xs)
    assert np.allclose(got, [RES_06_01[x] for x in xs], rtol=1e-8)


def test_green_diag_tau():
    assert green_diag_tau(ModelSpec()) == pytest.approx(TAU_051, rel=1e-9)
    assert green_diag_tau(ModelSpec.from_alpha(1, 0.6)) == pytest.approx(TAU_06, rel=1e-9)
    class Crit3:  # d = 3, alpha = 3/2 sits at eps = 0, outside ModelSpec
        d, alpha, beta = 3, 1.5, 0.75
    assert green_diag_tau(Crit3()) > 0
    class Flat:  # alpha = d is not a valid ModelSpec, so use a stand-in
        d, alpha, beta = 1, 1.0, 0.5
    with pytest.raises(ValueError):
        green_diag_tau(Flat())


@pytest.mark.parametrize("m2,ref", sorted(BUBBLE_051.items()))
def test_bubble_against_mpmath(m2, ref):
    assert bubble(ModelSpec(), m2) == pytest.approx(ref, rel=1e-8)


def test_bubble_limits_and_slope():
    sp = ModelSpec()
    assert bubble(sp, 1e4) * 1e8 == pytest.approx(1.0, rel=1e-3)
    rep = bubble_scaling(sp, np.logspace(-6, -2, 9))
    assert abs(rep["derivative"] / rep["target"] - 1) < 0.02
    # the O(1) constant in B steepens the plain slope well beyond -eps/alpha
    assert rep["plain"] < 3 * rep["target"]
    assert np.all(np.diff(rep["B"]) < 0)
    with pytest.raises(ValueError):
        bubble(sp, 0.0)


def test_bubble_parseval():
    sp = ModelSpec.from_alpha(1, 0.6)
    m2 = 0.1
    x = np.arange(1, 200001)
    # the far tail is summed by the integral of the power-law decay
    r = frac_resolvent_entry(sp, m2, np.concatenate([[0], x[:2000]]))
    s = r[0] ** 2 + 2 * np.sum(r[1:] ** 2)
    c = r[-1] * 2000 ** (1 + sp.alpha)
    tail = 2 * c * c * 2000.5 ** (-1 - 2 * sp.alpha) / (1 + 2 * sp.alpha)
    assert s + tail == pytest.approx(bubble(sp, m2), rel=1e-4)


def test_torus_resolvent_dense_oracle():
    sp = ModelSpec.from_alpha(1, 0.6)
    P = 16
    k = 2 * np.pi * np.arange(P) / P
    lam = 4 * np.sin(k / 2) ** 2
    U = np.exp(1j * np.outer(np.arange(P), k)) / np.sqrt(P)
    A = (U @ np.diag(lam ** sp.beta + 0.5) @ U.conj().T).real
    ref = np.linalg.inv(A)[0, 3]
    assert torus_resolvent(sp.with_(L=4), 0.5, 2, 3) == pytest.approx(ref, rel=1e-12)
    assert torus_resolvent(sp.with_(L=4), 0.5, 2, 3, method="images") == pytest.approx(ref, rel=1e-8)
    with pytest.raises(ValueError):
        torus_resolvent(sp, 0.0, 2, 0)


def test_torus_resolvent_large_volume_limit():
    sp = ModelSpec.from_alpha(1, 0.6).with_(L=4)
    err = [torus_resolvent(sp, 0.1, N, 5) - RES_06_01[5] for N in range(3, 8)]
    # image sums decay like the |x|^{-(1+alpha)} kernel tail
    assert all(e > 0 for e in err)
    assert all(a / b > 4 for a, b in zip(err[:-1], err[1:]))
    assert err[-1] / RES_06_01[5] < 2e-4


@pytest.mark.parametrize("beta", [0.255, 0.3, 0.5, 0.8])
def test_generator_check(beta):
    rep = generator_check(beta, 200)
    assert rep["max_abs_row_sum"] < 1e-8
    assert rep["min_offdiag_violation"] < 0
    assert rep["decay_ratio_range"] <= 4
    assert rep["passed"] and rep["certified"]


def test_generator_check_radius_guard():
    with pytest.raises(ValueError):
        generator_check(0.3, 5)


def test_kernel_window_symmetry_and_csv(tmp_path):
    w = kernel_window(lambda lam: lam ** 0.3, 4, d=2, tail_bound=1e-3, name="test")
    assert w((1, 2)) == w((-1, 2)) == w((1, -2))
    assert w((2, 1)) == pytest.approx(w((1, 2)), rel=1e-12)
    assert w.full().shape == (9, 9)
    p = tmp_path / "k.csv"
    w.to_csv(p, {"d": 2})
    text = p.read_text()
    assert "# tail_bound = 0.001" in text and "offset_1,offset_2,value" in text
    assert "\r" not in text
