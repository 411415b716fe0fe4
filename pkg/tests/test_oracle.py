import math

import numpy as np
import pytest

from rgflow.lattice_kernels import ModelSpec
from rgflow.oracle import (
    OracleError, OracleResult, TinyTorus, covint_identity_check, fd_derivative_check,
    flow_fd_closures, g0_chi_check, report, richardson_derivative, run_oracles,
    split_invariance_check, tiny_torus_chi_quadrature, walk_representation_check,
)
from rgflow.lattice_kernels import torus_resolvent


@pytest.mark.parametrize("side,nu,exp", [(4, 0.5, 2.0), (8, 0.25, 4.0), (3, 1.0, 1.0), (7, 1.0, 1.0)])
def test_g0_chi(side, nu, exp):
    chi, e = g0_chi_check(TinyTorus(side, 0.6), nu)
    assert e == exp and abs(chi - exp) < 1e-12 * exp


def test_tiny_torus_invariants():
    tt = TinyTorus(5, 0.6, m2=0.3)
    M = tt.operator
    assert np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(M) > 0)
    assert np.allclose(M.sum(axis=1), 0.3, atol=1e-13)
    with pytest.raises(ValueError):
        TinyTorus(9, 0.6)
    with pytest.raises(Exception):
        g0_chi_check(TinyTorus(4, 0.6), 0.0)


def test_walk_representation():
    dev, k = walk_representation_check(TinyTorus(5, 0.6), np.random.default_rng(1).uniform(0.5, 2, 5))
    assert dev < 1e-10
    # mass-only diagonal reproduces the torus resolvent
    tt = TinyTorus(4, 0.6)
    dev, _ = walk_representation_check(tt, 0.5)
    assert dev < 1e-10
    ref = torus_resolvent(ModelSpec.from_alpha(1, 0.6).with_(L=4), 0.5, 1, 1)
    assert np.linalg.inv(tt.operator + 0.5 * np.eye(4))[0, 1] == pytest.approx(ref, rel=1e-12)


def test_walk_dominant_diagonal_one_term():
    tt = TinyTorus(4, 0.6)
    D = 1e4
    U = np.diag(np.diag(tt.operator) + D)
    exact = np.linalg.inv(tt.operator + D * np.eye(4))
    assert np.max(np.abs(np.linalg.inv(U) - exact)) / np.max(np.abs(exact)) < 1e-3


def test_walk_guards():
    with pytest.raises(OracleError, match="not converged"):
        walk_representation_check(TinyTorus(6, 0.6), 1e-12, max_terms=10)
    with pytest.raises(ValueError):
        walk_representation_check(TinyTorus(6, 0.6), 0.0)


def test_quadrature_gaussian_limit():
    tt = TinyTorus(3, 0.6)
    chi = tiny_torus_chi_quadrature(tt, 0.0, 0.5)
    assert chi == pytest.approx(2.0, rel=1e-10)


def test_quadrature_split_invariance_and_monotone():
    tt = TinyTorus(3, 0.6)
    spread, vals = split_invariance_check(tt, 1e-4, 0.7)
    assert spread < 1e-8
    assert tiny_torus_chi_quadrature(tt, 1e-4, 0.9) < tiny_torus_chi_quadrature(tt, 1e-4, 0.7)
    ident = tiny_torus_chi_quadrature(tt, 1e-4, 0.7, route="identity")
    assert ident == pytest.approx(vals[0], rel=1e-8)


def test_quadrature_cap():
    with pytest.raises(Exception):
        tiny_torus_chi_quadrature(TinyTorus(3, 0.6, n=3), 1e-4, 0.7)


@pytest.mark.parametrize("m2", [0.1, 0.0])
def test_covint_identity(m2):
    dev, _ = covint_identity_check(ModelSpec.from_alpha(1, 0.6), m2)
    assert dev < 1e-6


def test_covint_absolute_floor():
    dev, rows = covint_identity_check(ModelSpec.from_alpha(1, 0.6), 5.0, xs=(0, 2000))
    assert dev < 1e-6


def test_richardson_on_polynomials():
    f = lambda x: 3 * x ** 3 - 2 * x + 1
    assert richardson_derivative(f, 0.7, 1e-2, 1) == pytest.approx(9 * 0.49 - 2, rel=1e-12)
    assert richardson_derivative(f, 0.7, 1e-2, 2) == pytest.approx(18 * 0.7, rel=1e-10)


def test_fd_check_linear_synthetic():
    out = fd_derivative_check({"lin": (lambda x: 2.5 * x - 1, 1)}, 0.3, {"lin": 2.5}, h=1e-3)
    fd, an, rel = out["lin"]
    assert rel < 1e-12


def test_flow_fd_closures(ctx):
    from rgflow.pipeline import tune_point
    tp = tune_point(ctx, 1e-4)
    cl, an, _ = flow_fd_closures(tp.tables, tp.tune.mu0_c_ld, 0.0)
    s2 = ctx.sbar ** 2
    out = fd_derivative_check(cl, 0.0, an, h={"nu'": 1e-3 * s2, "nu''": 1e-3 * s2, "u''": 1e-2 * s2})
    assert out["nu'"][2] < 1e-4 and out["nu''"][2] < 1e-4 and out["u''"][2] < 1e-3


def test_report_format(tmp_path):
    res = [OracleResult("a", 1e-13, 1e-12, True), OracleResult("b", 1.0, 1e-12, False, "why")]
    text = report(res, tmp_path / "ledger.txt")
    lines = (tmp_path / "ledger.txt").read_text().splitlines()
    assert lines[0].startswith("PASS") and lines[1].startswith("FAIL") and "why" in lines[1]


def test_run_oracles_quick():
    res = run_oracles(quick=True)
    assert all(r.passed for r in res), [r.line() for r in res if not r.passed]
