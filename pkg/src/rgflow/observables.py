"""Susceptibility, specific heat and exponent fits along the tuned branch.

Along the branch ``nu = nu*(m2)`` the infinite-volume limits are

    chi  = 1/m2 - nu_inf / m2^2,     chi' = -nu_inf' / m2^2,
    c_H  = -u''_inf,

with derivatives taken in ``nu_0``.  Exponents come from log-log fits.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np

__all__ = [
    "SusceptibilityPoint", "HeatPoint", "ExponentFit", "FitError",
    "susceptibility", "specific_heat", "fit_gamma", "fit_gamma_nu_slope",
    "fit_alpha_H", "fit_alpha_H_plain", "gamma_target", "alpha_H_target",
    "gamma_bar", "n_dependence_report", "inequality_band", "write_results",
    "write_plot_files",
]


class FitError(ValueError):
    """Too few points or too short a window for an exponent fit."""


def gamma_bar(n):
    return (n + 2) / (n + 8)


def gamma_target(n, epsilon, alpha):
    """``1 + (n+2)/(n+8) eps/alpha``."""
    return 1.0 + gamma_bar(n) * epsilon / alpha


def alpha_H_target(n, epsilon, alpha):
    """``(4-n)/(n+8) eps/alpha``."""
    return (4 - n) / (n + 8) * epsilon / alpha


@dataclass
class SusceptibilityPoint:
    m2: float
    nu_star: float
    t: float
    chi: float
    chi_prime: float
    nu_inf: float
    nu_inf_prime: float


@dataclass
class HeatPoint:
    m2: float
    t: float
    c_H: float


@dataclass
class ExponentFit:
    """Log-log regression summary.

    ``value`` is the exponent estimate derived from ``slope``; ``target``
    and ``deviation = value - target`` compare it with the leading-order
    prediction.
    """

    slope: float
    intercept: float
    stderr: float
    window: tuple
    decades: float
    value: float
    target: float = math.nan
    deviation: float = math.nan
    method: str = ""
    npoints: int = 0
    extra: dict = field(default_factory=dict)

    def relative_deviation(self, reference=1.0):
        """``|value - target| / |target - reference|``."""
        return abs(self.value - self.target) / abs(self.target - reference)


def susceptibility(tune, nu_inf, nu_inf_prime, t):
    """Point on the branch from the converged ``nu_inf`` and its derivative.

    Parameters
    ----------
    tune : TuneResult
    nu_inf, nu_inf_prime : float
        Limits of ``nu_j`` and ``d nu_j / d nu_0`` past the mass scale.
    t : float
        ``nu* - nu_c``.
    """
    m2 = tune.m2
    if not m2 > 0:
        raise ValueError("susceptibility along the branch needs m2 > 0")
    chi = 1.0 / m2 - nu_inf / m2 ** 2
    chip = -nu_inf_prime / m2 ** 2
    return SusceptibilityPoint(m2, tune.nu_star, t, chi, chip, float(nu_inf), float(nu_inf_prime))


def specific_heat(tune, u2_inf, t):
    return HeatPoint(tune.m2, t, -float(u2_inf) + 0.0)


def _linfit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    dof = max(x.size - 2, 1)
    s2 = float(r @ r) / dof
    sxx = float(((x - x.mean()) ** 2).sum())
    se = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    return float(coef[0]), float(coef[1]), se


def _check(xs, min_points, min_decades, what):
    xs = np.asarray(xs, float)
    if xs.size < min_points:
        raise FitError(f"{what}: need at least {min_points} points, got {xs.size}")
    if np.any(xs <= 0):
        raise FitError(f"{what}: all abscissae must be positive")
    dec = math.log10(xs.max() / xs.min())
    if dec < min_decades - 1e-9:
        raise FitError(f"{what}: window spans {dec:.2f} decades, need {min_decades}")
    return dec


def fit_gamma(points, target=math.nan, min_points=6, min_decades=2.0):
    """``gamma`` from ``log chi = -gamma log t + c``."""
    t = np.array([p.t for p in points])
    chi = np.array([p.chi for p in points])
    dec = _check(t, min_points, min_decades, "fit_gamma")
    if np.any(chi <= 0):
        raise FitError("fit_gamma: chi must be positive")
    s, c, se = _linfit(np.log(t), np.log(chi))
    return ExponentFit(s, c, se, (float(t.min()), float(t.max())), dec, -s, target,
                       -s - target, "chi vs t", t.size)


def fit_gamma_nu_slope(points, target=math.nan, min_points=6, min_decades=2.0):
    """``gamma = 1 + slope`` of ``log nu'_inf`` against ``log m2``.

    ``nu'_inf`` behaves like ``m^{2 gamma_bar eps/alpha}`` and the slope is
    ``gamma - 1`` to leading order.
    """
    m2 = np.array([p.m2 for p in points])
    d1 = np.array([p.nu_inf_prime for p in points])
    dec = _check(m2, min_points, min_decades, "fit_gamma_nu_slope")
    if np.any(d1 <= 0):
        raise FitError("fit_gamma_nu_slope: nu'_inf must be positive")
    s, c, se = _linfit(np.log(m2), np.log(d1))
    return ExponentFit(s, c, se, (float(m2.min()), float(m2.max())), dec, 1.0 + s, target,
                       1.0 + s - target, "nu'_inf vs m2", m2.size)


def fit_alpha_H(points, target=math.nan, min_points=6, min_decades=2.0):
    """``alpha_H`` from the growth rate of ``c_H`` in ``log t``.

    With ``c_H = A + B t^{-alpha_H}`` the constant ``A`` hides a small
    exponent in a plain log-log fit; the derivative
    ``d c_H / d log(1/t) = alpha_H B t^{-alpha_H}`` does not carry it.
    Differences between neighbouring points are placed at the geometric
    midpoint in ``t``.
    """
    pts = sorted(points, key=lambda p: -p.t)
    t = np.array([p.t for p in pts])
    c = np.array([p.c_H for p in pts])
    dec = _check(t, min_points, min_decades, "fit_alpha_H")
    lt = np.log(t)
    rate = -np.diff(c) / np.diff(lt)
    tm = np.sqrt(t[1:] * t[:-1])
    if np.any(rate <= 0):
        raise FitError("fit_alpha_H: c_H is not increasing as t decreases")
    s, ic, se = _linfit(np.log(tm), np.log(rate))
    plain = fit_alpha_H_plain(points, target, min_points, min_decades)
    return ExponentFit(s, ic, se, (float(t.min()), float(t.max())), dec, -s, target, -s - target,
                       "d c_H / d log t vs t", t.size, {"plain": plain.value})


def fit_alpha_H_plain(points, target=math.nan, min_points=6, min_decades=2.0):
    """Plain slope of ``log c_H`` against ``log t`` (reported alongside)."""
    t = np.array([p.t for p in points])
    c = np.array([p.c_H for p in points])
    dec = _check(t, min_points, min_decades, "fit_alpha_H_plain")
    if np.any(c <= 0):
        raise FitError("fit_alpha_H_plain: c_H must be positive")
    s, ic, se = _linfit(np.log(t), np.log(c))
    return ExponentFit(s, ic, se, (float(t.min()), float(t.max())), dec, -s, target, -s - target,
                       "c_H vs t", t.size)


def inequality_band(points, n, epsilon, alpha):
    """``-chi^{-2 + eps gamma_bar/alpha} chi'`` at each point, plus max/min."""
    e = -2.0 + epsilon * gamma_bar(n) / alpha
    v = np.array([-(p.chi ** e) * p.chi_prime for p in points])
    return v, float(v.max() / v.min())


def n_dependence_report(fits, epsilon, alpha, reference_n=1):
    """Table of ``gamma_est - 1`` across ``n`` and ratios to ``reference_n``.

    Parameters
    ----------
    fits : dict
        ``n -> ExponentFit`` (gamma fits).
    """
    if reference_n not in fits:
        raise KeyError(f"reference n={reference_n} missing")
    ref = fits[reference_n].value - 1.0
    rows = []
    for n in sorted(fits):
        g1 = fits[n].value - 1.0
        tr = gamma_bar(n) / gamma_bar(reference_n)
        ratio = g1 / ref
        rows.append({"n": n, "gamma_minus_1": g1, "target_minus_1": gamma_target(n, epsilon, alpha) - 1,
                     "ratio": ratio, "target_ratio": tr, "rel_dev": abs(ratio / tr - 1.0)})
    return rows


def write_results(sus, heat, path, summary=None, header=None):
    """Results CSV (``m2, t, chi, chi_prime, c_H``) with a trailing summary block."""
    hmap = {round(math.log(h.m2), 9): h for h in heat}
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k} = {v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["m2", "t", "chi", "chi_prime", "c_H"])
        for p in sorted(sus, key=lambda p: -p.m2):
            h = hmap.get(round(math.log(p.m2), 9))
            wr.writerow([f"{x:.17g}" for x in (p.m2, p.t, p.chi, p.chi_prime,
                                               h.c_H if h else math.nan)])
    if summary:
        with open(str(path)[:-4] + "_summary.txt" if str(path).endswith(".csv") else str(path) + ".summary",
                  "w", newline="") as fh:
            for k, v in summary.items():
                fh.write(f"{k} = {v:.17g}\n" if isinstance(v, float) else f"{k} = {v}\n")
    return path


def write_plot_files(sus, heat, outdir, header=None):
    """Two-column files ``log t, log chi`` and ``log t, c_H``."""
    import os
    paths = []
    for name, rows in (("plot_log_chi.dat", [(math.log(p.t), math.log(p.chi)) for p in sus]),
                       ("plot_c_H.dat", [(math.log(h.t), h.c_H) for h in heat])):
        p = os.path.join(outdir, name)
        with open(p, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k} = {v}\n")
            for a, b in sorted(rows):
                fh.write(f"{a:.17g} {b:.17g}\n")
        paths.append(p)
    return paths
