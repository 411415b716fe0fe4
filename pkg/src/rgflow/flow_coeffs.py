"""Coefficients of the second-order flow equations.

Raw (primed) coefficients come straight from the moment sums of a
:class:`~rgflow.cov_decomp.Decomposition`; rescaled ones absorb the
natural powers of ``L`` so that they stay bounded below the mass scale.
All tables are numpy arrays indexed by the scale ``j = 0 .. J-1``.
"""
from dataclasses import dataclass, fields
import csv
import math

import numpy as np

from .cov_decomp import mass_scale

__all__ = [
    "RawCoefficients", "RescaledCoefficients", "FixedPointData", "PlateauError",
    "raw", "rescale", "unrescale", "eta_geq", "beta_colon_and_pi", "extract_a",
    "monomial_dimension", "coefficient_table", "coefficients_for", "sbar_from_a", "M_weight", "theta",
]


class PlateauError(RuntimeError):
    """The beta_j(0) sequence did not settle within the available depth."""


@dataclass
class RawCoefficients:
    j: np.ndarray
    eta_p: np.ndarray
    beta_p: np.ndarray
    xi_p: np.ndarray
    kappa_g_p: np.ndarray
    kappa_nu_p: np.ndarray
    kappa_gnu_p: np.ndarray
    kappa_gg_p: np.ndarray
    kappa_nunu_p: np.ndarray
    w1: np.ndarray
    c0: np.ndarray          # C_{j+1}(0)
    dw2: np.ndarray         # delta[w^(2)] at j
    eta_geq_p: np.ndarray   # sum_{k >= j} eta'_k
    n: int = 1

    def __len__(self):
        return self.j.size


@dataclass
class RescaledCoefficients:
    j: np.ndarray
    j_m: float
    beta: np.ndarray
    eta: np.ndarray
    eta_geq: np.ndarray
    xi: np.ndarray
    wbar1: np.ndarray
    beta_colon: np.ndarray
    pi: np.ndarray
    kappa_g: np.ndarray
    kappa_nu: np.ndarray
    kappa_gnu: np.ndarray
    kappa_gg: np.ndarray
    kappa_nunu: np.ndarray
    M: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class FixedPointData:
    a: float
    plateau_window: tuple
    plateau_residual: float
    sbar: float
    L: int = 16
    epsilon: float = 0.02

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")

    def fixed_point_residual(self):
        """``|L^eps s (1 - a s) - s|`` at ``s = sbar``, relative to sbar."""
        s = self.sbar
        return abs(self.L ** self.epsilon * s * (1.0 - self.a * s) - s) / s


def sbar_from_a(a, L, epsilon):
    """Nonzero fixed point ``(1 - L^-eps) / a`` of ``s -> L^eps s (1 - a s)``."""
    return -math.expm1(-epsilon * math.log(L)) / a


def M_weight(spec, m2, j):
    """``M_j = (1 + m2 L^{alpha (j-1)})^-2``."""
    j = np.asarray(j, dtype=float)
    return (1.0 + m2 * float(spec.L) ** (spec.alpha * (j - 1))) ** -2


def theta(spec, j, j_m, alpha_prime=None):
    """``L^{-alpha' (j - j_m)_+}`` with ``alpha'`` defaulting to ``alpha / 4``."""
    ap = spec.alpha / 4 if alpha_prime is None else alpha_prime
    j = np.asarray(j, dtype=float)
    excess = np.maximum(j - j_m, 0.0) if math.isfinite(j_m) else np.zeros_like(j)
    return float(spec.L) ** (-ap * excess)


def raw(moment_cache, spec, decomposition=None, j=None):
    """Primed coefficients for every available scale (or one scale `j`).

    ``eta_geq_p`` needs the remainder diagonals of `decomposition`; without
    it the column is NaN.
    """
    M = moment_cache
    n = spec.n
    gb = spec.gamma_bar
    idx = np.arange(M.depth)
    eta_p = (n + 2) * M.c0
    beta_p = (n + 8) * M.dw2
    xi_p = 2 * (n + 2) * M.xi + gb * beta_p * eta_p
    c0 = M.c0
    out = RawCoefficients(
        j=idx, eta_p=eta_p, beta_p=beta_p, xi_p=xi_p,
        kappa_g_p=0.25 * n * (n + 2) * c0 ** 2,
        kappa_nu_p=0.5 * n * c0,
        kappa_gnu_p=0.5 * n * (n + 2) * c0 * M.knu,
        kappa_gg_p=0.25 * n * (n + 2) * (M.kgg + (n + 2) * c0 ** 2 * M.dw2),
        kappa_nunu_p=0.25 * n * M.knu,
        w1=M.w1.copy(), c0=c0.copy(), dw2=M.dw2.copy(),
        eta_geq_p=((n + 2) * decomposition.tail_diag[:M.depth] if decomposition is not None
                   else np.full(M.depth, np.nan)),
        n=n,
    )
    if j is None:
        return out
    if not 0 <= j < M.depth:
        raise IndexError(f"moments available for j in [0, {M.depth - 1}]")
    return {f.name: (getattr(out, f.name)[j] if isinstance(getattr(out, f.name), np.ndarray)
                     else getattr(out, f.name)) for f in fields(out)}


def _scales(spec, j, j_m):
    jm = np.minimum(j, j_m) if math.isfinite(j_m) else j.astype(float)
    return float(spec.L), jm


def eta_geq(decomposition, spec, j):
    """``eta_{>=j} = L^{(d-alpha) j} (n+2) R_j(0)`` with ``R_j`` the remainder
    beyond scale ``j``; exact tail sum of ``L^{-(d-alpha)(k-j)} eta_k``."""
    if j > decomposition.J:
        raise IndexError(f"depth {decomposition.J} too shallow for eta_geq at j = {j}")
    return float(spec.L) ** ((spec.d - spec.alpha) * j) * (spec.n + 2) * decomposition.tail_diag[j]


def rescale(rc, spec, j_m, alpha_prime=None, m2=None):
    """Rescaled coefficients, including ``beta_colon`` and ``pi``.

    The last scale of the table has no successor; its ``beta_colon`` and
    ``pi`` are NaN.
    """
    j = rc.j.astype(float)
    L, jm = _scales(spec, j, j_m)
    d, al, ep = spec.d, spec.alpha, spec.epsilon
    beta = L ** (-ep * jm) * rc.beta_p
    eta = L ** ((d - al) * j) * rc.eta_p
    eg = L ** ((d - al) * j) * rc.eta_geq_p
    xi = L ** ((al - 2 * ep) * j) * rc.xi_p
    wbar1 = L ** (-al * jm) * rc.w1
    bc, pi = beta_colon_and_pi(beta, eg, wbar1, xi, spec)
    if m2 is None:
        m2 = 0.0 if not math.isfinite(j_m) else L ** (-al * (j_m - 1))
    return RescaledCoefficients(
        j=rc.j, j_m=j_m, beta=beta, eta=eta, eta_geq=eg, xi=xi, wbar1=wbar1,
        beta_colon=bc, pi=pi,
        kappa_g=L ** (-ep * jm) * rc.kappa_g_p,
        kappa_nu=L ** (-al * j) * rc.kappa_nu_p,
        kappa_gnu=L ** (-al * j - ep * jm) * rc.kappa_gnu_p,
        kappa_gg=L ** (-2 * ep * j) * rc.kappa_gg_p,
        kappa_nunu=L ** (-2 * al * jm) * rc.kappa_nunu_p,
        M=M_weight(spec, m2, j), theta=theta(spec, j, j_m, alpha_prime),
    )


def unrescale(rs, spec):
    """Invert :func:`rescale` for the primed quantities (identity test helper)."""
    j = rs.j.astype(float)
    L, jm = _scales(spec, j, rs.j_m)
    d, al, ep = spec.d, spec.alpha, spec.epsilon
    return {
        "beta_p": L ** (ep * jm) * rs.beta, "eta_p": L ** (-(d - al) * j) * rs.eta,
        "xi_p": L ** (-(al - 2 * ep) * j) * rs.xi, "w1": L ** (al * jm) * rs.wbar1,
        "kappa_g_p": L ** (ep * jm) * rs.kappa_g, "kappa_nu_p": L ** (al * j) * rs.kappa_nu,
        "kappa_gnu_p": L ** (al * j + ep * jm) * rs.kappa_gnu,
        "kappa_gg_p": L ** (2 * ep * j) * rs.kappa_gg,
        "kappa_nunu_p": L ** (2 * al * jm) * rs.kappa_nunu,
    }


def beta_colon_and_pi(beta, eta_geq_, wbar1, xi, spec):
    """``beta_colon_j`` and ``pi_j`` from neighbouring scales (arrays over j).

    ``beta_colon_j = beta_j + 4 (eta_{>=j} wbar_j - eta_{>=j+1} wbar_{j+1})``,
    ``pi_j = xi_j - gamma_bar beta_j eta_{>=j} + L^{-(d-alpha)} eta_{>=j+1} beta_j``.
    """
    beta, eg, wb, xi = (np.asarray(v, dtype=float) for v in (beta, eta_geq_, wbar1, xi))
    nxt = lambda v: np.append(v[1:], np.nan)
    bc = beta + 4.0 * (eg * wb - nxt(eg) * nxt(wb))
    pi = xi - spec.gamma_bar * beta * eg + float(spec.L) ** (-(spec.d - spec.alpha)) * nxt(eg) * beta
    return bc, pi


def extract_a(beta0, spec, rel_tol=1e-3, run=5):
    """Plateau value ``a`` of the massless ``beta_j(0)`` sequence.

    Parameters
    ----------
    beta0 : array_like
        ``beta_j`` at ``m2 = 0`` for ``j = 0, 1, ...``.
    rel_tol, run : float, int
        The plateau starts at the first scale followed by `run` consecutive
        increments ``|beta_{j+1} - beta_j| < rel_tol * beta_j``.

    Raises
    ------
    PlateauError
        When no such run exists; the message carries a geometric decay fit
        of the increments.
    """
    b = np.asarray(beta0, dtype=float)
    inc = np.abs(np.diff(b)) / np.abs(b[:-1])
    ok = inc < rel_tol
    for j1 in range(ok.size - run + 1):
        if ok[j1:j1 + run].all():
            j2 = j1 + run
            a = float(b[j1:j2 + 1].mean())
            resid = float(np.max(np.abs(b[j1:j2 + 1] - a)) / a)
            return FixedPointData(a, (j1, j2), resid, sbar_from_a(a, spec.L, spec.epsilon),
                                  spec.L, spec.epsilon)
    tail = inc[inc > 0][-6:]
    rate = float(np.exp(np.polyfit(np.arange(tail.size), np.log(tail), 1)[0])) if tail.size > 2 else math.nan
    raise PlateauError(f"no plateau in {b.size} scales; last increments {tail.tolist()}, "
                       f"geometric ratio ~ {rate:.3g}")


def monomial_dimension(p_fields, n_gradients, j, j_m, spec, alpha_prime=None):
    """Scaling dimension of a monomial with `p_fields` fields and
    `n_gradients` gradients, and its class relative to ``d``."""
    if p_fields < 0 or n_gradients < 0:
        raise ValueError("counts must be non-negative")
    ap = spec.alpha / 4 if alpha_prime is None else alpha_prime
    if not 0 < ap < spec.alpha / 2:
        raise ValueError("alpha_prime must lie in (0, alpha/2)")
    phi = 0.5 * (spec.d - spec.alpha) if j <= j_m else 0.5 * (spec.d + ap)
    dim = p_fields * phi + n_gradients
    tol = 1e-12
    cls = "relevant" if dim < spec.d - tol else ("marginal" if dim <= spec.d + tol else "irrelevant")
    return dim, cls


_TABLE_COLS = ("j", "beta_p", "beta", "beta_colon", "eta", "eta_geq", "xi", "pi", "wbar1",
               "kappa_g", "kappa_nu", "kappa_gnu", "kappa_gg", "kappa_nunu", "M", "theta")


def coefficient_table(rc, rs, path=None, header=None):
    """Rows of the coefficient CSV; written to `path` when given."""
    cols = {"j": rc.j, "beta_p": rc.beta_p}
    for c in _TABLE_COLS[2:]:
        cols[c] = getattr(rs, c)
    rows = [[int(cols["j"][i])] + [float(cols[c][i]) for c in _TABLE_COLS[1:]] for i in range(rc.j.size)]
    if path is not None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k} = {v}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(_TABLE_COLS)
            for r in rows:
                wr.writerow([r[0]] + [f"{v:.17g}" for v in r[1:]])
    return rows


def coefficients_for(spec, m2, decomposition, alpha_prime=None):
    """Convenience: ``(raw, rescaled, j_m)`` from a decomposition."""
    jm = mass_scale(spec, m2)
    rc = raw(decomposition.moments(), spec, decomposition)
    return rc, rescale(rc, spec, jm, alpha_prime, m2), jm
