"""Critical tuning of the initial ``mu_0`` by shooting.

The shooting functional ``mu_0 -> mu_{j_m + 1}`` is strictly increasing
(the relevant direction is expanded by ``L^alpha`` per scale), so plain
bisection on a sign change locates the critical value.  Probes that leave
the stability box early are classified by the sign of the rescaled
``nu`` at the exit scale.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy.optimize import curve_fit

from .flow_engine import LD, FlowDivergence, _val, hat_vars, run_flow, transform

__all__ = [
    "TuneResult", "CriticalPoint", "TuningError", "shoot_mu0", "nu0_critical",
    "nu_c_extrapolate", "c00_shift", "write_tuning",
]


class TuningError(RuntimeError):
    """Bracketing failed or the shooting functional is not monotone."""


@dataclass
class TuneResult:
    m2: float
    mu0_c: float
    nu0_c: float
    nu_star: float
    bracket: tuple
    iterations: int
    residual: float
    j_m: float = math.nan
    target_scale: int = 0
    mu0_c_ld: object = None
    g: float = math.nan
    y0: float = 0.0
    probes: list = field(default_factory=list, repr=False)


@dataclass
class CriticalPoint:
    nu_c: float
    m2_sequence: list
    model: str
    params: dict
    residuals: list
    alternatives: dict
    tau_alpha: float = math.nan
    warning: str = ""


def _probe(tables, mu0, y0, target, remainder):
    """``(value, exact)``: signed final ``mu`` (or signed box exit)."""
    rec = run_flow(tables, mu0, y0, 0, j_stop=target, remainder=remainder, on_box="stop", record_t=False)
    j = rec.j_stop
    st = rec.states[-1]
    if rec.stopped:
        _, mh = hat_vars(st, tables, j)
        return (math.inf if mh > 0 else -math.inf), False
    gh, mh = hat_vars(st, tables, j)
    return transform(j, gh, mh, tables).mu, True


def shoot_mu0(tables, y0=0.0, tol_mu=1e-8, remainder=None, target=None, J_L=2, max_doublings=5,
              massless_target=12):
    """Bisection for ``mu_{target}(mu_0) = 0``.

    Parameters
    ----------
    tables : FlowTables
    y0 : float
        Offset of the initial coupling, ``g = sbar - y0``.
    tol_mu : float
        Stop when ``|mu_target| < tol_mu * sbar^2``.
    target : {None, "buffer"} or int
        Default scale ``j_m + 1``; for ``m2 = 0`` the scale
        ``min(massless_target, depth - 1)``.  ``"buffer"`` uses
        ``j_m - (J_L + 2)``.
    massless_target : int
        The relevant direction grows like ``L^{alpha j}``, so deeper
        massless targets only add rounding noise; the truncation error of
        a finite target is ``O(L^{-alpha j} sbar^2)``.
    """
    t = tables
    sb = t.sbar
    if abs(y0) > t.omega * sb * (1 + 1e-12):
        raise ValueError("|y0| must not exceed omega * sbar")
    if target is None:
        target = int(t.j_m) + 1 if math.isfinite(t.j_m) else min(massless_target, t.depth - 1)
    elif target == "buffer":
        target = max(1, int(t.j_m) - (J_L + 2))
    if target > t.depth - 1:
        raise ValueError(f"target scale {target} beyond table depth {t.depth}")
    probes = []

    def F(mu0):
        v, exact = _probe(t, mu0, y0, target, remainder)
        probes.append((LD(mu0), v))
        return v

    def check_monotone():
        # signs must switch once; values must increase near the root, where
        # the transformed mu is a valid coordinate
        ps = sorted(probes, key=lambda p: p[0])
        sg = [np.sign(p[1]) for p in ps if p[1] != 0]
        if any(a > b for a, b in zip(sg[:-1], sg[1:])):
            raise TuningError("shooting functional changes sign more than once")
        ulp = 64 * np.finfo(LD).eps * max(abs(p[0]) for p in ps)
        noise = 10 * tol_mu * sb * sb
        near = 2 * t.sigma * sb * sb * float(t.spec.L) ** t.spec.alpha
        ps = [p for p in ps if abs(p[1]) <= near]
        for (xa, a), (xb, b) in zip(ps[:-1], ps[1:]):
            if xb - xa < ulp:
                continue
            if a > b + noise:
                raise TuningError("shooting functional is not monotone in mu0")

    half = LD(2 * max(t.sigma, 1e-300) * sb * sb)
    lo, hi = -half, half
    flo, fhi = F(lo), F(hi)
    k = 0
    while not (flo < 0 < fhi):
        if k >= max_doublings:
            raise TuningError(f"no sign change within +-{float(hi):.3e}")
        if flo >= 0:
            lo *= 2
            flo = F(lo)
        if fhi <= 0:
            hi *= 2
            fhi = F(hi)
        k += 1
    it = 0
    best = (math.inf, None)
    while True:
        mid = (lo + hi) / 2
        if mid == lo or mid == hi:
            break
        fm = F(mid)
        it += 1
        if np.isfinite(fm) and abs(fm) < best[0]:
            best = (abs(fm), mid)
        if np.isfinite(fm) and abs(fm) < tol_mu * sb * sb:
            break
        if fm < 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if it > 400:
            break
    check_monotone()
    mu0c = best[1] if best[1] is not None else (lo + hi) / 2
    res = best[0]
    nu0c = float(mu0c - t.eta_geq_p[0] * (LD(sb) - LD(y0)))
    return TuneResult(t.m2, float(mu0c), nu0c, nu0c + t.m2, (float(lo), float(hi)), it,
                      float(res), t.j_m, target, mu0c, float(sb - y0), float(y0), probes)


def nu0_critical(tune, spec, c00, g=None):
    """``nu_0^c = mu_0^c - (n+2) C_00(m2) g``."""
    g = tune.g if g is None else g
    return tune.mu0_c - (spec.n + 2) * c00 * g


def c00_shift(spec, m2, q=None):
    """``C_00(m2) - C_00(0) = -m2 (2 pi)^-1 int lambda^-b (lambda^b + m2)^-1 dk``
    without the cancellation of the direct difference (d = 1, 2, 3)."""
    from .lattice_kernels import DEFAULT_Q, fourier_entry
    q = q or DEFAULT_Q
    b = spec.beta
    return -m2 * fourier_entry(lambda lam: 1.0 / (lam ** b * (lam ** b + m2)), 0, spec.d, q)


def _power_model(m2, nu_c, A, theta):
    return nu_c + A * m2 ** theta


def nu_c_extrapolate(results, tau_alpha=math.nan, rel_warn=1e-3):
    """Fit ``nu*(m2) = nu_c + A m2^theta`` to tuned results.

    Plain last value and a two-point Richardson estimate (with the fitted
    theta) are reported as alternatives.
    """
    pts = sorted(((r.m2, r.nu_star) if hasattr(r, "m2") else tuple(r) for r in results))
    if len(pts) < 4:
        raise ValueError("need at least four tuned points")
    m2 = np.array([p[0] for p in pts])
    ns = np.array([p[1] for p in pts])
    if math.log10(m2.max() / m2.min()) < 3 - 1e-9:
        raise ValueError("m2 values must span at least three decades")
    # initial guess from a theta = 1 linear fit
    A0, c0 = np.polyfit(m2, ns, 1)
    try:
        popt, _ = curve_fit(_power_model, m2, ns, p0=(c0, A0 if A0 else 1.0, 1.0), maxfev=20000,
                            ftol=1e-14, xtol=1e-14, gtol=1e-14,
                            bounds=([-np.inf, -np.inf, 0.05], [np.inf, np.inf, 4.0]))
    except RuntimeError:
        popt = np.array([c0, A0, 1.0])
    resid = ns - _power_model(m2, *popt)
    scale = max(np.max(np.abs(ns - popt[0])), 1e-300)
    warn = ""
    if np.max(np.abs(resid)) > rel_warn * scale:
        warn = f"fit residual {np.max(np.abs(resid)):.3e} above {rel_warn:g} of the variation"
    th = popt[2]
    r = (m2[1] / m2[0]) ** th
    rich = (r * ns[0] - ns[1]) / (r - 1)
    return CriticalPoint(float(popt[0]), m2.tolist(), "nu_c + A m2^theta",
                         {"nu_c": float(popt[0]), "A": float(popt[1]), "theta": float(th)},
                         resid.tolist(), {"last_value": float(ns[0]), "richardson": float(rich)},
                         tau_alpha, warn)


def write_tuning(results, path, header=None):
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k} = {v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["m2", "j_m", "mu0_c", "nu0_c", "nu_star", "residual", "iterations"])
        for r in results:
            wr.writerow([f"{r.m2:.17g}", r.j_m, f"{r.mu0_c:.17g}", f"{r.nu0_c:.17g}",
                         f"{r.nu_star:.17g}", f"{r.residual:.17g}", r.iterations])
    return path
