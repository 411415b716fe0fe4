"""End-to-end driver: massless setup, tuned sweep over m2, exponent fits.

Nothing here is new numerics; the functions wire the modules together
with the bookkeeping needed for ``t = nu* - nu_c`` without cancellation:

    t = (mu_0(m2) - mu_0(0)) - (n+2) g (C_00(m2) - C_00(0)) + m2,

where the covariance shift is a single convergent integral.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np

from .cov_decomp import BACKENDS, Decomposition, mass_scale
from .critical_tuner import c00_shift, nu_c_extrapolate, shoot_mu0
from .flow_coeffs import coefficients_for, extract_a
from .flow_engine import FlowDivergence, FlowTables, RemainderModel, tangent_flow, u_second_flow
from .lattice_kernels import DEFAULT_Q, ModelSpec
from . import observables as obs

__all__ = ["FlowConfig", "MasslessContext", "TunedPoint", "Sweep", "massless_context",
           "tune_point", "run_sweep", "exponent_fits", "default_m2_grid", "domain_report"]


@dataclass
class FlowConfig:
    """Knobs shared by every flow of a sweep."""

    tol_mu: float = 1e-8
    target: object = None          # None, "buffer" or an int
    J_L: int = 2
    y0_frac: float = 0.0           # y0 / sbar; ignored when spec.g is set
    remainder_amplitude: float = 0.0
    seed: int = 0
    alpha_prime: float = None
    extra_scales: int = 14
    massless_depth: int = 20
    massless_target: int = 12
    tol_above: float = 1e-4
    floor_above: float = 1e-6
    jmax_above: int = 60
    C_D: float = 4.0
    box: float = 10.0

    def remainder(self):
        if self.remainder_amplitude:
            return RemainderModel(True, self.remainder_amplitude, self.seed)
        return None


def default_m2_grid(lo=1e-8, hi=1e-3, per_decade=2):
    """Geometric grid from `hi` down to `lo`."""
    k = int(round(math.log10(hi / lo) * per_decade))
    return [float(hi * 10.0 ** (-i / per_decade)) for i in range(k + 1)]


@dataclass
class MasslessContext:
    spec: ModelSpec
    q: object
    backend: str
    cfg: FlowConfig
    dec: Decomposition
    fp: object               # FixedPointData
    tables: FlowTables
    tune: object             # massless TuneResult
    y0: float
    g: float
    c00: float
    tau_alpha: float

    @property
    def sbar(self):
        return self.fp.sbar

    @property
    def mu0_0(self):
        return self.tune.mu0_c

    @property
    def nu_c(self):
        """``mu_0(0) - (n+2) C_00(0) g``."""
        return self.tune.mu0_c - (self.spec.n + 2) * self.c00 * self.g


def massless_context(spec, q=DEFAULT_Q, backend=BACKENDS[0], cfg=None):
    """Massless decomposition, plateau ``a``, ``sbar`` and ``mu_0(0)``."""
    cfg = cfg or FlowConfig()
    dec = Decomposition(spec, 0.0, cfg.massless_depth, backend, q)
    rc, rs, _ = coefficients_for(spec, 0.0, dec, cfg.alpha_prime)
    fp = extract_a(rs.beta, spec)
    y0 = fp.sbar - spec.g if spec.g is not None else cfg.y0_frac * fp.sbar
    t = FlowTables(spec, 0.0, dec, fp.sbar, cfg.alpha_prime, cfg.C_D, cfg.box)
    tune = shoot_mu0(t, y0=y0, tol_mu=cfg.tol_mu, remainder=cfg.remainder(),
                     massless_target=cfg.massless_target)
    c00 = float(dec.tail_diag[0])
    return MasslessContext(spec, q, backend, cfg, dec, fp, t, tune, y0, fp.sbar - y0, c00, c00)


@dataclass
class TunedPoint:
    m2: float
    j_m: int
    tune: object
    tables: FlowTables = field(repr=False)
    record: object = field(repr=False)
    t: float
    sus: obs.SusceptibilityPoint
    heat: obs.HeatPoint
    u2: float
    domain: dict


def domain_report(record, J_L=2):
    """Largest ``|y|/(omega sbar)`` and ``|mu|/(sigma sbar^2)`` below ``j_m``.

    ``ball_buffer`` covers ``1 <= j <= j_m - J_L`` and ``ball_full`` covers
    ``1 <= j <= j_m``; ``mu_prime_min`` is the smallest ``d mu_j/d nu_0``.
    """
    t = record.tables
    jm = int(t.j_m)
    sb = t.sbar
    y = (sb - record.col("s"))[:jm + 1] / (t.omega * sb)
    mu = record.col("mu")[:jm + 1] / (t.sigma * sb * sb)
    mup = record.col("mu", 1)[:jm + 1]
    kb = max(1, jm - J_L)
    return {
        "y_buffer": float(np.max(np.abs(y[1:kb + 1]))),
        "y_full": float(np.max(np.abs(y[1:]))),
        "mu_full": float(np.max(np.abs(mu))),
        "ball_buffer": bool(np.max(np.abs(y[1:kb + 1])) <= 1 and np.max(np.abs(mu[:kb + 1])) <= 1),
        "ball_full": bool(np.max(np.abs(y[1:])) <= 1 and np.max(np.abs(mu)) <= 1),
        "mu_prime_min": float(np.min(mup)),
        "y0": float(y[0]),
    }


def tune_point(ctx, m2, tol_mu=None):
    """Tune at ``m2``, run the order-2 flow past ``j_m`` and assemble observables."""
    cfg, spec = ctx.cfg, ctx.spec
    jm = mass_scale(spec, m2)
    extra = cfg.extra_scales
    rem = cfg.remainder()
    tol = cfg.tol_mu if tol_mu is None else tol_mu
    for attempt in range(3):
        dec = Decomposition(spec, m2, jm + extra, ctx.backend, ctx.q)
        tab = FlowTables(spec, m2, dec, ctx.sbar, cfg.alpha_prime, cfg.C_D, cfg.box)
        tune = shoot_mu0(tab, y0=ctx.y0, tol_mu=tol, remainder=rem, target=cfg.target, J_L=cfg.J_L)
        try:
            rec = tangent_flow(tab, tune.mu0_c_ld, ctx.y0, order=2, remainder=rem,
                               tol_above=cfg.tol_above, floor_above=cfg.floor_above,
                               jmax_above=cfg.jmax_above)
            break
        except FlowDivergence:
            if attempt == 2:
                raise
            extra *= 2
    nu = rec.nu_inf
    u2 = float(u_second_flow(rec))
    t = ((tune.mu0_c - ctx.mu0_0) - (spec.n + 2) * ctx.g * c00_shift(spec, m2, ctx.q) + m2)
    sus = obs.susceptibility(tune, float(nu.v), float(nu.d1), t)
    heat = obs.specific_heat(tune, u2, t)
    return TunedPoint(m2, jm, tune, tab, rec, t, sus, heat, u2, domain_report(rec, cfg.J_L))


@dataclass
class Sweep:
    ctx: MasslessContext
    points: list
    critical: object = None

    @property
    def sus(self):
        return [p.sus for p in self.points]

    @property
    def heat(self):
        return [p.heat for p in self.points]

    @property
    def tunes(self):
        return [p.tune for p in self.points]


def _tune_job(args):
    ctx, m2, tol_mu = args
    return tune_point(ctx, m2, tol_mu)


def run_sweep(spec, m2_grid=None, cfg=None, q=DEFAULT_Q, backend=BACKENDS[0], ctx=None, tol_mu=None,
              workers=1):
    """Tuned points over `m2_grid` (default 1e-3 .. 1e-8, two per decade).

    Points are independent; ``workers > 1`` (or 0 for all cores) runs them
    in a process pool.  Results keep the grid order either way.
    """
    cfg = cfg or FlowConfig()
    ctx = ctx or massless_context(spec, q, backend, cfg)
    grid = default_m2_grid() if m2_grid is None else list(m2_grid)
    nw = (os.cpu_count() or 1) if not workers else workers
    if nw > 1 and len(grid) > 1:
        with ProcessPoolExecutor(min(nw, len(grid))) as ex:
            pts = list(ex.map(_tune_job, [(ctx, m2, tol_mu) for m2 in grid]))
    else:
        pts = [tune_point(ctx, m2, tol_mu) for m2 in grid]
    crit = None
    if len(pts) >= 4:
        crit = nu_c_extrapolate([p.tune for p in pts], ctx.tau_alpha)
    return Sweep(ctx, pts, crit)


def exponent_fits(sweep, skip_largest_decade=True):
    """gamma (two estimators) and alpha_H on the fit window.

    The window drops the largest decade of ``m2`` where lattice transients
    near scale 0 still matter.
    """
    spec = sweep.ctx.spec
    pts = sorted(sweep.points, key=lambda p: -p.m2)
    if skip_largest_decade and pts:
        top = pts[0].m2
        pts = [p for p in pts if p.m2 < top / 10 * (1 + 1e-9)] or pts
    sus = [p.sus for p in pts]
    heat = [p.heat for p in pts]
    n, eps, a = spec.n, spec.epsilon, spec.alpha
    gt = obs.gamma_target(n, eps, a)
    out = {
        "gamma_chi": obs.fit_gamma(sus, gt),
        "gamma_nu": obs.fit_gamma_nu_slope(sus, gt),
        "window": (pts[-1].m2, pts[0].m2),
    }
    if n > 0:
        out["alpha_H"] = obs.fit_alpha_H(heat, obs.alpha_H_target(n, eps, a))
    return out
