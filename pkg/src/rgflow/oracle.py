"""Brute-force cross-checks that share no code with the main path.

* dense linear algebra on tiny one-dimensional tori,
* Gauss-Hermite quadrature of the tiny-torus spin integral (n = 1),
* the resolvent-integral identity with its own quadrature,
* finite differences of the flow against its forward-mode derivatives.
"""
from dataclasses import dataclass, field
from itertools import product
import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.special import comb

__all__ = [
    "TinyTorus", "OracleError", "OracleResult", "g0_chi_check", "walk_representation_check",
    "tiny_torus_chi_quadrature", "split_invariance_check", "covint_identity_check",
    "fd_derivative_check", "richardson_derivative", "report", "run_oracles",
]


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<34s} dev={self.value:.3e}  tol={self.tol:.1e}  {self.detail}".rstrip()


@dataclass
class TinyTorus:
    """``(-Delta)^{alpha/2} + m2`` on the cycle of `side` sites, built densely.

    The fractional power comes from an eigendecomposition of the dense
    nearest-neighbour Laplacian, not from Fourier sums.
    """

    side: int
    alpha: float = 0.6
    m2: float = 0.0
    n: int = 1
    M: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 2 <= self.side <= 8:
            raise ValueError("side must lie in [2, 8]")
        N = self.side
        lap = np.zeros((N, N))
        for x in range(N):
            lap[x, x] += 2.0
            lap[x, (x + 1) % N] -= 1.0
            lap[x, (x - 1) % N] -= 1.0
        ev, U = np.linalg.eigh(lap)
        ev = np.clip(ev, 0.0, None)
        M = (U * ev ** (self.alpha / 2)) @ U.T
        self.M = 0.5 * (M + M.T)

    @property
    def operator(self):
        return self.M + self.m2 * np.eye(self.side)

    def generator(self):
        """Markov generator ``Q = -(-Delta)^{alpha/2}``."""
        return -self.M


def g0_chi_check(tiny, nu):
    """``sum_x [(M + nu)^{-1}]_{0x}`` against ``1/nu``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    A = tiny.M + nu * np.eye(tiny.side)
    try:
        G = np.linalg.inv(A)
    except np.linalg.LinAlgError as e:
        raise OracleError("singular operator") from e
    chi = float(G[0].sum())
    return chi, 1.0 / nu


def walk_representation_check(tiny, D, tol=1e-10, max_terms=100000):
    """Neumann series ``sum_k (U^{-1} J)^k U^{-1}`` against ``(-Q + D)^{-1}``.

    ``U`` is the diagonal of ``-Q + D`` and ``J`` the (non-negative)
    off-diagonal jump rates.  Returns ``(max deviation, terms used)``.
    """
    D = np.broadcast_to(np.asarray(D, dtype=complex if np.iscomplexobj(D) else float), (tiny.side,))
    if np.any(np.real(D) <= 0):
        raise ValueError("Re d_u must be positive")
    Q = tiny.generator()
    J = Q - np.diag(np.diag(Q))
    U = np.diag(-np.diag(Q) + D)
    Ui = np.diag(1.0 / np.diag(U))
    P = Ui @ J
    rad = float(np.max(np.abs(np.linalg.eigvals(P))))
    if rad >= 1.0:
        raise OracleError(f"spectral radius {rad:.4f} >= 1; series diverges")
    exact = np.linalg.inv(-Q + np.diag(D))
    term, acc = Ui.copy(), Ui.copy()
    k = 1
    while k < max_terms:
        term = P @ term
        acc = acc + term
        k += 1
        if np.max(np.abs(term)) < tol * 1e-3:
            break
    else:
        raise OracleError(f"Neumann series not converged after {k} terms (spectral radius {rad:.12f})")
    return float(np.max(np.abs(acc - exact))), k


def _sparse_rule(dim, level):
    """Smolyak combination of Gauss-Hermite rules (probabilists'), ``2^l - 1`` nodes."""
    rules = {}
    for l in range(1, level + 1):
        x, w = hermegauss(2 ** l - 1)
        rules[l] = (x, w / w.sum())
    q = dim + level - 1
    pts, wts = [], []
    for ls in product(range(1, level + 1), repeat=dim):
        s = sum(ls)
        if not (max(dim, q - dim + 1) <= s <= q):
            continue
        c = (-1) ** (q - s) * comb(dim - 1, q - s)
        grids = np.meshgrid(*[rules[l][0] for l in ls], indexing="ij")
        wgrid = np.ones_like(grids[0])
        for i, l in enumerate(ls):
            shape = [1] * dim
            shape[i] = -1
            wgrid = wgrid * rules[l][1].reshape(shape)
        pts.append(np.stack([g.ravel() for g in grids], axis=1))
        wts.append(c * wgrid.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _expect(dim, fn, nodes, chunk=400000, sparse_level=None):
    """``E[fn(z)]`` for a standard Gaussian ``z`` in `dim` dimensions.

    `fn` maps an ``(m, dim)`` array to a tuple of ``(m,)`` arrays.
    """
    if sparse_level:
        z, w = _sparse_rule(dim, sparse_level)
        return tuple(float(np.dot(w, f)) for f in fn(z))
    x, w = hermegauss(nodes)
    w = w / w.sum()
    total = None
    idx = np.indices((nodes,) * dim).reshape(dim, -1).T
    for a in range(0, idx.shape[0], chunk):
        ii = idx[a:a + chunk]
        z = x[ii]
        ww = np.prod(w[ii], axis=1)
        vals = tuple(float(np.dot(ww, f)) for f in fn(z))
        total = vals if total is None else tuple(s + v for s, v in zip(total, vals))
    return total


def _tensor_ok(dim, nodes):
    return nodes ** dim <= 40 ** 5


def tiny_torus_chi_quadrature(tiny, g, nu, m2_split=None, nodes=40, route="moment",
                              check=True, rtol=1e-9):
    """``chi_N = |Lambda|^{-1} <(sum_x phi_x)^2>`` for the n = 1 spin model.

    The Gaussian factor ``exp(-phi.(M + m2)phi/2)`` is sampled exactly via
    ``phi = C^{1/2} z``; the rest ``exp(-sum g phi^4/4 + (nu - m2) phi^2/2)``
    is integrated by Gauss-Hermite quadrature (tensor rule up to 40^5 points,
    Smolyak level 5 above).

    Parameters
    ----------
    m2_split : float, optional
        Mass moved into the Gaussian part (default ``max(nu, 0.5)``).
    route : {"moment", "identity"}
        ``"moment"`` averages ``(sum phi)^2``; ``"identity"`` uses
        ``1/m2 + (m2^2 |Lambda|)^{-1} D^2 Z(0; 1, 1) / Z(0)`` with the
        second derivative of the convolved weight along the constant field.
    """
    if tiny.n != 1:
        raise ValueError("quadrature oracle is for n = 1")
    N = tiny.side
    m2 = max(nu, 0.5) if m2_split is None else m2_split
    if not m2 > 0:
        raise ValueError("m2_split must be positive")
    C = np.linalg.inv(tiny.M + m2 * np.eye(N))
    ev, U = np.linalg.eigh(C)
    S = (U * np.sqrt(ev)) @ U.T
    nu0 = nu - m2

    def fn(z):
        phi = z @ S.T
        V0 = np.sum(0.25 * g * phi ** 4 + 0.5 * nu0 * phi ** 2, axis=1)
        wgt = np.exp(-V0)
        if route == "moment":
            return wgt, wgt * phi.sum(axis=1) ** 2
        d1 = np.sum(g * phi ** 3 + nu0 * phi, axis=1)
        d2 = np.sum(3 * g * phi ** 2 + nu0, axis=1)
        return wgt, wgt * (d1 * d1 - d2)

    def evaluate(k, level):
        Z, F = _expect(N, fn, k, sparse_level=level)
        if route == "moment":
            return F / Z / N
        return 1.0 / m2 + F / Z / (m2 * m2 * N)

    if _tensor_ok(N, nodes):
        val = evaluate(nodes, None)
        if check:
            other = evaluate(max(nodes // 2, 4), None)
            if abs(other - val) > 1e3 * rtol * abs(val):
                raise OracleError(f"node doubling changed chi by {abs(other - val):.2e}")
    else:
        val = evaluate(None, 5)
        if check:
            other = evaluate(None, 4)
            if abs(other - val) > 1e3 * rtol * abs(val):
                raise OracleError(f"sparse level 4 -> 5 changed chi by {abs(other - val):.2e}")
    return float(val)


def split_invariance_check(tiny, g, nu, splits=(0.5, 1.0), nodes=40):
    """Both routes at two mass splits; returns (max relative spread, values)."""
    vals = [tiny_torus_chi_quadrature(tiny, g, nu, s, nodes, route=r)
            for s in splits for r in ("moment", "identity")]
    v = np.array(vals)
    return float(np.max(np.abs(v - v[0])) / abs(v[0])), vals


# --------------------------------------------------------------------------
# resolvent identity with its own quadrature
# --------------------------------------------------------------------------

def _nn_resolvent_1d(s, x):
    """``(-Delta + s)^{-1}_{0x}`` on Z: ``r^|x| / sqrt(s (s + 4))``."""
    r = 1.0 / (1.0 + 0.5 * s + math.sqrt(s + 0.25 * s * s))
    return r ** abs(x) / math.sqrt(s * (s + 4.0))


def _weight(beta, s, a):
    sb = s ** beta
    c = math.cos(math.pi * beta)
    return math.sin(math.pi * beta) / math.pi * sb / (sb * sb + 2 * a * sb * c + a * a)


def covint_identity_check(spec, m2, xs=(0, 1, 5, 20), q=None, abs_floor=1e-14):
    """``int_0^inf (-Delta + s)^{-1}_{0x} rho(s, m2) ds`` against the main path.

    The left side uses the closed-form one-dimensional resolvent and adaptive
    quadrature in ``u = ln s``.  Entries below `abs_floor` are compared in
    absolute terms.  Returns ``(max deviation, rows)``.
    """
    from .lattice_kernels import frac_resolvent_entry, DEFAULT_Q
    if spec.d != 1:
        raise ValueError("the closed-form resolvent oracle is one-dimensional")
    q = q or DEFAULT_Q
    b = spec.beta
    rows, worst = [], 0.0
    for x in xs:
        f = lambda u: _nn_resolvent_1d(math.exp(u), x) * _weight(b, math.exp(u), m2) * math.exp(u)
        brk = [-400.0, -200.0, -120.0, -80.0, -40.0, -20.0, -10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0, 20.0, 60.0]
        if x:
            brk += [2 * math.log(1.0 / x) + k for k in (-4.0, -2.0, 0.0, 2.0)]
        brk = sorted(set(brk))
        tot = 0.0
        for a_, b_ in zip(brk[:-1], brk[1:]):
            v, _ = integrate.quad(f, a_, b_, epsabs=0.0, epsrel=1e-12, limit=200)
            tot += v
        ref = frac_resolvent_entry(spec, m2, x, q)
        dev = abs(tot - ref) if abs(ref) < abs_floor else abs(tot - ref) / abs(ref)
        worst = max(worst, dev)
        rows.append((x, tot, ref, dev))
    return worst, rows


# --------------------------------------------------------------------------
# finite-difference derivative oracle
# --------------------------------------------------------------------------

def richardson_derivative(f, x0, h, order=1, levels=3):
    """Central differences at ``h, h/2, ...`` combined by Richardson extrapolation."""
    tab = []
    for k in range(levels):
        hk = h / 2 ** k
        if order == 1:
            d = (f(x0 + hk) - f(x0 - hk)) / (2 * hk)
        else:
            d = (f(x0 + hk) - 2 * f(x0) + f(x0 - hk)) / (hk * hk)
        tab.append(d)
    for m in range(1, levels):
        fac = 4.0 ** m
        tab = [(fac * tab[i + 1] - tab[i]) / (fac - 1) for i in range(len(tab) - 1)]
    return tab[0]


def fd_derivative_check(closure, x0, analytic, h=1e-6, levels=3):
    """Compare analytic derivatives with Richardson central differences.

    Parameters
    ----------
    closure : dict
        ``name -> (f, order)``: a scalar function of ``x0`` and the
        derivative order to test.
    analytic : dict
        ``name -> value`` of the corresponding analytic derivative.
    h : float or dict
        Base step (optionally per name).

    Returns
    -------
    dict ``name -> (fd, analytic, relative deviation)``
    """
    out = {}
    for name, (f, order) in closure.items():
        hh = h[name] if isinstance(h, dict) else h
        fd = richardson_derivative(f, x0, hh, order, levels)
        an = analytic[name]
        out[name] = (float(fd), float(an), float(abs(fd - an) / max(abs(an), 1e-300)))
    return out


def flow_fd_closures(tables, mu0, y0=0.0, j_stop=None):
    """Closures over ``nu_0`` for ``nu_N``, ``nu'_N`` and ``u_N`` at a fixed final scale.

    ``nu_0`` moves with ``mu_0`` at fixed ``g``, so ``d/d nu_0 = d/d mu_0``.
    The final scale is frozen to keep the functions smooth.
    """
    from .flow_engine import LD, run_flow, tangent_flow, u_second_flow
    base = tangent_flow(tables, LD(mu0), y0, order=2)
    J = base.j_stop if j_stop is None else j_stop

    def state(dm):
        return run_flow(tables, LD(mu0) + LD(dm), y0, order=1, j_stop=J, record_t=True).states[-1]

    f_nu = lambda dm: float(state(dm).nu.v)
    f_nu1 = lambda dm: float(state(dm).nu.d1)
    f_u = lambda dm: float(state(dm).u.v)
    rec = run_flow(tables, LD(mu0), y0, order=2, j_stop=J)
    last = rec.states[-1]
    analytic = {"nu'": float(last.nu.d1), "nu''": float(last.nu.d2),
                "u''": float(u_second_flow(rec))}
    closures = {"nu'": (f_nu, 1), "nu''": (f_nu1, 1), "u''": (f_u, 2)}
    return closures, analytic, base


def report(results, path=None):
    """Plain-text pass/fail ledger; returns the text."""
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    lines.append(f"{'ALL PASS' if ok else 'FAILURES'}  {sum(r.passed for r in results)}/{len(results)}")
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def run_oracles(spec=None, tables=None, mu0=None, y0=0.0, quick=False):
    """Default oracle suite.  Flow-derivative checks run when `tables` is given."""
    from .lattice_kernels import ModelSpec
    spec = spec or ModelSpec()
    res = []
    for side, nu in ((4, 0.5), (8, 0.25), (5, 1.0)):
        chi, exp = g0_chi_check(TinyTorus(side, 0.6), nu)
        res.append(OracleResult(f"g0_chi side={side} nu={nu}", abs(chi - exp) / exp, 1e-12,
                                abs(chi - exp) / exp < 1e-12))
    rng = np.random.default_rng(7)
    tt = TinyTorus(5, 0.6)
    dev, k = walk_representation_check(tt, rng.uniform(0.5, 2.0, 5))
    res.append(OracleResult("walk_representation random D", dev, 1e-10, dev < 1e-10, f"terms={k}"))
    dev, k = walk_representation_check(TinyTorus(6, 0.6), 0.3)
    res.append(OracleResult("walk_representation D=m2", dev, 1e-10, dev < 1e-10, f"terms={k}"))
    side = 3 if quick else 4
    spread, vals = split_invariance_check(TinyTorus(side, 0.6), 1e-4, 0.7)
    res.append(OracleResult(f"tiny_torus split side={side}", spread, 1e-8, spread < 1e-8,
                            f"chi={vals[0]:.12g}"))
    c_lo = tiny_torus_chi_quadrature(TinyTorus(side, 0.6), 1e-4, 0.9)
    c_hi = tiny_torus_chi_quadrature(TinyTorus(side, 0.6), 1e-4, 0.7)
    res.append(OracleResult("tiny_torus monotone in nu", 0.0, 0.0, c_lo < c_hi,
                            f"chi(0.9)={c_lo:.6g} < chi(0.7)={c_hi:.6g}"))
    sp1 = ModelSpec.from_alpha(1, 0.6)
    for m2 in (0.1, 0.0):
        dev, _ = covint_identity_check(sp1, m2)
        res.append(OracleResult(f"covint identity m2={m2}", dev, 1e-6, dev < 1e-6))
    if tables is not None:
        cl, an, _ = flow_fd_closures(tables, mu0, y0)
        s2 = tables.sbar ** 2
        out = fd_derivative_check(cl, 0.0, an, h={"nu'": 1e-3 * s2, "nu''": 1e-3 * s2, "u''": 1e-2 * s2})
        for name, (fd, a, rel) in out.items():
            tol = 1e-3 if name == "u''" else 1e-4
            res.append(OracleResult(f"fd {name}", rel, tol, rel < tol, f"fd={fd:.10g} an={a:.10g}"))
    return res
