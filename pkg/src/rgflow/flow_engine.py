"""Second-order flow of ``(g, nu, u)`` and its transformed form ``(s, mu)``.

The step map is an explicit polynomial in ``(g, nu)`` with scale-dependent
coefficients, so exact derivatives with respect to the initial ``nu_0``
are obtained by running the same code on :class:`Jet` numbers
(value, first and second derivative).  The state is carried in
``np.longdouble``: shooting for the critical trajectory amplifies the
relevant direction by ``L^{alpha j_m}`` and double precision would cap the
attainable final residual.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np

from .cov_decomp import mass_scale
from .flow_coeffs import coefficients_for, theta as theta_fn

__all__ = [
    "Jet", "CouplingState", "TransformedState", "TangentState", "RemainderModel", "FlowTables",
    "FlowRecord", "FlowDivergence", "pt_step", "transform", "inverse_transform",
    "barpt_step", "run_flow", "flow_below", "flow_above", "tangent_flow",
    "u_second_flow", "u_second_terms", "p_product", "write_trajectory", "tangent_states",
]

LD = np.longdouble


class FlowDivergence(RuntimeError):
    """State left the stability box; `scale` holds the offending scale."""

    def __init__(self, msg, scale=None, record=None):
        super().__init__(msg)
        self.scale, self.record = scale, record


class Jet:
    """Truncated Taylor number ``v + d1 h + d2 h^2 / 2``."""

    __slots__ = ("v", "d1", "d2")
    __array_ufunc__ = None   # make numpy scalars defer to the reflected operators

    def __init__(self, v, d1=0, d2=0):
        self.v, self.d1, self.d2 = LD(v), LD(d1), LD(d2)

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
        return Jet(self.v + o, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v * o.v, self.d1 * o.v + self.v * o.d1,
                       self.d2 * o.v + 2 * self.d1 * o.d1 + self.v * o.d2)
        return Jet(self.v * o, self.d1 * o, self.d2 * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet):
            raise TypeError("division by a Jet is not needed by the step maps")
        return Jet(self.v / o, self.d1 / o, self.d2 / o)

    def __repr__(self):
        return f"Jet({float(self.v)!r}, {float(self.d1)!r}, {float(self.d2)!r})"


def _val(x):
    return x.v if isinstance(x, Jet) else x


@dataclass
class CouplingState:
    g: object
    nu: object
    u: object = 0.0


@dataclass
class TransformedState:
    s: object
    mu: object
    sbar: float = math.nan

    @property
    def y(self):
        return self.sbar - self.s


@dataclass
class TangentState:
    """First and second ``nu_0``-derivatives at one scale (NaN when not carried)."""

    g1: float
    nu1: float
    u1: float
    g2: float
    nu2: float
    u2: float
    s1: float
    mu1: float
    s2: float
    mu2: float


@dataclass
class RemainderModel:
    """Bounded pseudo-random remainder injection.

    ``r_nu,j = A sbar^3 theta_{j+1} L^{-alpha (j ^ j_m)} sign_j`` and
    ``r_g,j = A sbar^3 L^{-eps j} sign'_j`` below the mass scale (zero
    above).  Signs come from `seed` and do not depend on ``nu_0``, so the
    derivative flows are unaffected.
    """

    enabled: bool = False
    amplitude: float = 0.0
    seed: int = 0
    _signs: dict = field(default_factory=dict, repr=False)

    def signs(self, j):
        if j not in self._signs:
            rng = np.random.default_rng([self.seed, j])
            self._signs[j] = tuple(rng.choice([-1.0, 1.0], size=2))
        return self._signs[j]

    def terms(self, tables, j):
        if not (self.enabled and self.amplitude):
            return 0.0, 0.0
        sp, jm = tables.spec, tables.j_m
        A = self.amplitude * tables.sbar ** 3
        jj = min(j, jm)
        sg, sn = self.signs(j)
        rn = A * theta_fn(sp, j + 1, jm) * float(sp.L) ** (-sp.alpha * jj) * sn
        rg = A * float(sp.L) ** (-sp.epsilon * j) * sg if j < jm else 0.0
        return LD(rg), LD(rn)


class FlowTables:
    """Coefficient tables for one ``(spec, m2)`` in long double.

    Parameters
    ----------
    spec : ModelSpec
    m2 : float
    decomposition : Decomposition
        Depth ``J``; flows can run to scale ``J - 1``.
    sbar : float
        Fixed point from the massless run.
    """

    def __init__(self, spec, m2, decomposition, sbar, alpha_prime=None, C_D=4.0, box=10.0):
        self.spec, self.m2, self.sbar = spec, float(m2), float(sbar)
        rc, rs, jm = coefficients_for(spec, m2, decomposition, alpha_prime)
        self.raw, self.res, self.j_m = rc, rs, jm
        self.depth = len(rc)
        hat0 = decomposition.hat0
        T = lambda a: np.asarray(a, dtype=LD)
        self.eta_p, self.beta_p, self.xi_p = T(rc.eta_p), T(rc.beta_p), T(rc.xi_p)
        self.w1 = T(rc.w1)
        self.w1n = T(rc.w1 + hat0[1:self.depth + 1])
        self.kg, self.kn = T(rc.kappa_g_p), T(rc.kappa_nu_p)
        self.kgn, self.kgg, self.knn = T(rc.kappa_gnu_p), T(rc.kappa_gg_p), T(rc.kappa_nunu_p)
        self.c0, self.dw2 = T(rc.c0), T(rc.dw2)
        self.eta_geq_p = T(rc.eta_geq_p)
        self.gb = LD(spec.n + 2) / LD(spec.n + 8)
        self.alpha_prime = alpha_prime
        below = np.arange(self.depth) < (jm if math.isfinite(jm) else self.depth)
        below &= np.isfinite(rs.pi)
        self.Pi = float(np.max(np.abs(rs.pi[below]))) if below.any() else float(np.nanmax(np.abs(rs.pi)))
        self.sigma = 5.0 * self.Pi
        self.omega = 1.0 / 32.0
        self.C_D, self.box = C_D, box

    def jj(self, j):
        return min(j, self.j_m)

    def scale_factors(self, j):
        """``(L^{eps (j^jm)}, L^{alpha (j^jm)})`` as long doubles."""
        L, sp, jj = LD(self.spec.L), self.spec, self.jj(j)
        return L ** LD(sp.epsilon * jj), L ** LD(sp.alpha * jj)


# --------------------------------------------------------------------------
# single steps
# --------------------------------------------------------------------------

def pt_step(state, tables, j, remainder=None):
    """One step ``V_j -> V_{j+1}`` of the perturbative map (plus remainder)."""
    t = tables
    if j >= t.depth:
        raise IndexError(f"coefficients end at scale {t.depth - 1}")
    g, nu, u = state.g, state.nu, state.u
    eta, beta, xi = t.eta_p[j], t.beta_p[j], t.xi_p[j]
    w, wn = t.w1[j], t.w1n[j]
    nup = nu + eta * g
    if j < t.j_m:
        g_new = g - beta * g * g - 4 * g * (nup * wn - nu * w)
    else:
        g_new = g
    nu_new = (nu + eta * (g + 4 * g * nu * w) - xi * g * g - t.gb * beta * nu * g
              - (nup * nup * wn - nu * nu * w))
    du = t.kg[j] * g + t.kn[j] * nu - t.kgn[j] * g * nu - t.kgg[j] * g * g - t.knn[j] * nu * nu
    if remainder is not None:
        rg, rn = remainder.terms(t, j)
        g_new = g_new + rg
        nu_new = nu_new + rn
    return CouplingState(g_new, nu_new, u + du)


def _eta_eff(t, j):
    # L^{(alpha - eps)(j ^ j_m)} eta'_{>=j}; equals L^{(d - alpha) j} eta'_{>=j} below j_m
    return LD(t.spec.L) ** LD((t.spec.alpha - t.spec.epsilon) * t.jj(j)) * t.eta_geq_p[j]


def hat_vars(state, tables, j):
    fg, fa = tables.scale_factors(j)
    return state.g * fg, state.nu * fa


def transform(j, g_hat, mu_hat, tables):
    """``T_j``: ``s = g + 4 g (mu + eta g) w``, ``mu = mu + eta (g + 4 g mu w) + mu^2 w``
    with ``eta = eta_{>=j}`` and ``w = wbar_j`` (hatted inputs)."""
    t = tables
    eta = _eta_eff(t, j)
    wb = t.w1[j] / t.scale_factors(j)[1]
    s = g_hat + 4 * g_hat * (mu_hat + eta * g_hat) * wb
    mu = mu_hat + eta * (g_hat + 4 * g_hat * mu_hat * wb) + mu_hat * mu_hat * wb
    return TransformedState(s, mu, t.sbar)


def inverse_transform(j, s, mu, tables, tol=1e-13, maxit=60, radius=0.1):
    """Damped Newton inverse of :func:`transform`."""
    t = tables
    if abs(s) > radius or abs(mu) > radius:
        raise ValueError("input outside the invertibility ball")
    eta = _eta_eff(t, j)
    wb = t.w1[j] / t.scale_factors(j)[1]
    x = np.array([s, mu - eta * s], dtype=LD)
    target = np.array([s, mu], dtype=LD)
    for _ in range(maxit):
        g, m = x
        F = np.array([g + 4 * g * (m + eta * g) * wb - target[0],
                      m + eta * (g + 4 * g * m * wb) + m * m * wb - target[1]])
        if np.max(np.abs(F)) < tol * max(1.0, float(np.max(np.abs(target)))):
            return LD(x[0]), LD(x[1])
        Jm = np.array([[1 + 4 * (m + 2 * eta * g) * wb, 4 * g * wb],
                       [eta * (1 + 4 * m * wb), 1 + 4 * eta * g * wb + 2 * m * wb]], dtype=float)
        dx = np.linalg.solve(Jm, F.astype(float)).astype(LD)
        lam = LD(1)
        while lam > 1e-4:
            xn = x - lam * dx
            g2, m2 = xn
            F2 = np.array([g2 + 4 * g2 * (m2 + eta * g2) * wb - target[0],
                           m2 + eta * (g2 + 4 * g2 * m2 * wb) + m2 * m2 * wb - target[1]])
            if np.max(np.abs(F2)) < np.max(np.abs(F)):
                break
            lam /= 2
        x = xn
    raise RuntimeError("Newton inverse did not converge (input outside the ball?)")


def barpt_step(ts, tables, j):
    """``s+ = L^eps s (1 - beta_colon s)``, ``mu+ = L^alpha (mu - gamma_bar beta mu s - pi s^2)``."""
    t = tables
    if j >= t.j_m:
        raise ValueError("the bar map is defined below the mass scale")
    r = t.res
    L = LD(t.spec.L)
    s, mu = ts.s, ts.mu
    bc, b, pi = LD(r.beta_colon[j]), LD(r.beta[j]), LD(r.pi[j])
    return TransformedState(L ** LD(t.spec.epsilon) * s * (1 - bc * s),
                            L ** LD(t.spec.alpha) * (mu - t.gb * b * mu * s - pi * s * s), ts.sbar)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

_REC_COLS = ("j", "g", "nu", "u", "s", "mu", "y", "g1", "nu1", "nu2", "u2", "P_j",
             "beta", "beta_colon", "pi", "theta")


@dataclass
class FlowRecord:
    """Trajectory with per-scale couplings, transformed state and tangents."""

    tables: FlowTables
    mu0: float
    y0: float
    states: list = field(default_factory=list)        # CouplingState per scale
    tstates: list = field(default_factory=list)       # TransformedState per scale (value part)
    u2_terms: list = field(default_factory=list)
    order: int = 0
    stopped: str = ""
    domain_exit: int = None
    nu_inf: object = None
    converged: bool = False

    @property
    def j_stop(self):
        return len(self.states) - 1

    def col(self, name, order=0):
        if name in ("g", "nu", "u"):
            vals = [getattr(st, name) for st in self.states]
        elif name in ("s", "mu"):
            vals = [getattr(ts, name) for ts in self.tstates]
        else:
            raise KeyError(name)
        out = []
        for v in vals:
            if isinstance(v, Jet):
                out.append(float((v.v, v.d1, v.d2)[order]))
            else:
                out.append(float(v) if order == 0 else math.nan)
        return np.array(out)

    def P(self):
        return np.array([p_product(self, j) for j in range(self.j_stop + 1)])

    def rows(self):
        t = self.tables
        r = t.res
        n = self.j_stop + 1
        pad = lambda a: np.concatenate([a, np.full(max(0, n - a.size), np.nan)])[:n]
        u2 = self.col("u", 2) if self.order >= 2 else np.full(n, np.nan)
        cols = {
            "j": np.arange(n), "g": self.col("g"), "nu": self.col("nu"), "u": self.col("u"),
            "s": self.col("s"), "mu": self.col("mu"), "y": t.sbar - self.col("s"),
            "g1": self.col("g", 1), "nu1": self.col("nu", 1), "nu2": self.col("nu", 2),
            "u2": u2, "P_j": self.P(), "beta": pad(r.beta), "beta_colon": pad(r.beta_colon),
            "pi": pad(r.pi), "theta": theta_fn(t.spec, np.arange(n), t.j_m, t.alpha_prime),
        }
        return cols


def tangent_states(rec):
    """Per-scale :class:`TangentState` list read off a jet-valued record."""
    cols = {f"{k}{o}": rec.col(k, o) for k in ("g", "nu", "u", "s", "mu") for o in (1, 2)}
    return [TangentState(**{k: float(v[j]) for k, v in cols.items()})
            for j in range(rec.j_stop + 1)]


def run_flow(tables, mu0, y0=0.0, order=0, j_stop=None, remainder=None, above=False,
             on_box="raise", tol_above=1e-4, floor_above=1e-6, jmax_above=60, record_t=True):
    """Iterate the raw map from ``(g0, nu0) = T_0^{-1}(sbar - y0, mu0)``.

    Parameters
    ----------
    order : {0, 1, 2}
        0 runs on plain long doubles, 1 and 2 on :class:`Jet` (second
        derivatives are always carried on jets).
    j_stop : int, optional
        Last scale of the record (default ``j_m + 1``).  Ignored when `above`.
    above : bool
        Continue past the mass scale until the nu increments satisfy the
        convergence test; sets ``record.nu_inf``.
    on_box : {"raise", "stop"}
        Stability-box violation handling.
    """
    t = tables
    jm = t.j_m
    if j_stop is None:
        j_stop = (jm + 1) if math.isfinite(jm) else t.depth - 1
    if above and not math.isfinite(jm):
        raise ValueError("the flow past the mass scale needs m2 > 0")
    g0 = LD(t.sbar) - LD(y0)
    nu0 = LD(mu0) - t.eta_geq_p[0] * g0
    if order:
        st = CouplingState(Jet(g0), Jet(nu0, 1, 0), Jet(0))
    else:
        st = CouplingState(g0, nu0, LD(0))
    rec = FlowRecord(t, float(mu0), float(y0), order=order)
    lim = t.box * t.C_D * t.sbar
    hist = []

    def push(st, j):
        rec.states.append(st)
        if record_t:
            gh, mh = hat_vars(st, t, j)
            rec.tstates.append(transform(j, gh, mh, t))
        gh, mh = (_val(v) for v in hat_vars(st, t, j))
        if not (abs(gh) <= lim and abs(mh) <= lim):
            rec.stopped = f"box at scale {j}"
            if on_box == "raise":
                raise FlowDivergence(f"state left the stability box at scale {j}", j, rec)
            return False
        return True

    if not push(st, 0):
        return rec
    j = 0
    last = j_stop if not above else t.depth - 1
    while j < last:
        if j >= t.depth:
            break
        st = pt_step(st, t, j, remainder)
        j += 1
        if not push(st, j):
            return rec
        if above and j > jm:
            nu_now, nu_prev = _val(st.nu), _val(rec.states[-2].nu)
            inc = abs(nu_now - nu_prev)
            hist.append(float(inc))
            scale = t.sbar * float(t.spec.L) ** (-t.spec.alpha * jm)
            if inc < tol_above * abs(nu_now) + floor_above * scale and j - jm >= 2:
                rec.converged = True
                break
            if j - jm > jmax_above:
                break
    if above:
        rec.nu_inf = st.nu
        if not rec.converged:
            raise FlowDivergence(f"nu did not converge past j_m (depth {t.depth}); "
                                 f"increments {hist[-5:]}", j, rec)
    _domain_scan(rec)
    return rec


def _domain_scan(rec):
    t = rec.tables
    top = min(rec.j_stop, t.j_m) if math.isfinite(t.j_m) else rec.j_stop
    for j in range(top + 1):
        ts = rec.tstates[j] if rec.tstates else None
        if ts is None:
            return
        y, mu = t.sbar - float(_val(ts.s)), float(_val(ts.mu))
        if abs(y) > t.omega * t.sbar or abs(mu) > t.sigma * t.sbar ** 2:
            rec.domain_exit = j
            return


def flow_below(tables, mu0, y0=0.0, remainder=None, order=0):
    """Trajectory up to ``j_m`` (massless: to the table depth)."""
    jm = tables.j_m
    return run_flow(tables, mu0, y0, order, jm if math.isfinite(jm) else None, remainder)


def flow_above(tables, mu0, y0=0.0, remainder=None, order=1, **kw):
    """Full trajectory past the mass scale; returns ``(record, nu_inf)``."""
    rec = run_flow(tables, mu0, y0, order, remainder=remainder, above=True, **kw)
    return rec, rec.nu_inf


def tangent_flow(tables, mu0, y0=0.0, order=1, remainder=None, above=True, **kw):
    """Record carrying derivatives with respect to ``nu_0`` up to `order`."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return run_flow(tables, mu0, y0, order=2, remainder=remainder, above=above, **kw)


def u_second_terms(rec, cancelled=True):
    """Per-scale contributions to ``u''`` (derivatives in ``nu_0``).

    With ``cancelled=True`` the pair ``kappa'_nu nu'' - 2 kappa'_nunu nu'^2``
    is evaluated as ``-n/2 dw2 nu'^2 + n/2 C (nu'' + 2 w1 nu'^2)``.
    """
    t = rec.tables
    n = t.spec.n
    out = []
    for j, st in enumerate(rec.states[:-1]):
        g, nu = st.g, st.nu
        if not isinstance(nu, Jet):
            raise ValueError("u'' needs a record run with order=2")
        g0, g1, g2 = g.v, g.d1, g.d2
        n0, n1, n2 = nu.v, nu.d1, nu.d2
        rest = (t.kg[j] * g2 - t.kgn[j] * (g2 * n0 + 2 * g1 * n1 + g0 * n2)
                - 2 * t.kgg[j] * (g0 * g2 + g1 * g1) - 2 * t.knn[j] * n0 * n2)
        if cancelled:
            pair = (-LD(0.5) * n * t.dw2[j] * n1 * n1
                    + LD(0.5) * n * t.c0[j] * (n2 + 2 * t.w1[j] * n1 * n1))
        else:
            pair = t.kn[j] * n2 - 2 * t.knn[j] * n1 * n1
        out.append((pair, rest))
    return out


def u_second_flow(rec, cancelled=True):
    """``u''_N`` summed over the record's scales."""
    return LD(sum(p + r for p, r in u_second_terms(rec, cancelled)))


def p_product(rec, j):
    """``P_j = prod_{k < j ^ j_m} (1 - gamma_bar beta_k s_k)`` (frozen past j_m)."""
    t = rec.tables
    top = min(j, t.j_m) if math.isfinite(t.j_m) else j
    top = min(int(top), len(rec.tstates))
    p = 1.0
    for k in range(top):
        p *= 1.0 - float(t.gb) * float(t.res.beta[k]) * float(_val(rec.tstates[k].s))
    return p


def write_trajectory(rec, path, header=None):
    cols = rec.rows()
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k} = {v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_REC_COLS)
        for i in range(cols["j"].size):
            wr.writerow([int(cols["j"][i])] + [f"{float(cols[c][i]):.17g}" for c in _REC_COLS[1:]])
    return path
