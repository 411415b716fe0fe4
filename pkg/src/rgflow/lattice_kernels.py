"""Lattice kernels of the fractional Laplacian on Z^d and on the torus.

The symbol of the nearest-neighbour Laplacian is
``lambda(k) = 2 sum_j (1 - cos k_j)``.  Matrix entries of functions of
``-Delta`` are Fourier integrals

    F_{0x} = (2 pi)^{-d} int_{[-pi, pi]^d} F(lambda(k)) cos(k.x) dk,

which we evaluate on ``[0, pi]^d`` with composite Gauss-Legendre panels that
are geometrically graded towards ``k = 0``.

In one dimension there is a second, independent route.  Rotating the
contour ``[0, pi]`` onto the imaginary axis gives, for integer ``x >= 1``
and any ``F`` analytic off the negative real axis,

    F_{0x} = int_0^inf exp(-t x) sigma(t) dt,
    sigma(t) = -Im F(lambda_+(t)) / pi,   lambda_+(t) = 4 sinh(t/2)^2 e^{i pi},

a Laplace transform that converges fast for large ``|x|``.  For the
resolvent ``sigma`` is exactly the rho-weight, so this is the Stieltjes
representation written with the explicit 1-d nearest-neighbour resolvent.
"""
from dataclasses import dataclass, field, replace
import csv
import math

import numpy as np
from scipy.special import gammaln

from .quadrature import graded_rule, log_integral, log_panels

__all__ = [
    "ModelSpec", "QuadratureSpec", "KernelWindow", "symbol_lambda",
    "fourier_entry", "laplace_entry", "frac_laplacian_entry",
    "frac_resolvent_entry", "rho_weight", "rho_integral", "stieltjes_check",
    "resolvent_via_rho", "green_diag_tau", "bubble", "bubble_scaling", "torus_resolvent",
    "generator_check", "kernel_window",
]


@dataclass(frozen=True)
class ModelSpec:
    """Global model parameters.

    ``alpha = (d + epsilon) / 2`` is derived, so the model sits a distance
    ``epsilon`` below the upper critical dimension ``2 alpha``.
    """

    d: int = 1
    L: int = 16
    epsilon: float = 0.02
    n: int = 1
    g: float = None

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha < min(2, self.d):
            raise ValueError(f"alpha = {self.alpha} outside (0, 2 ^ d)")
        if self.n < 0 or int(self.n) != self.n:
            raise ValueError("n must be a non-negative integer")
        if self.g is not None and not self.g > 0:
            raise ValueError("g must be positive")

    @classmethod
    def from_alpha(cls, d, alpha, **kw):
        return cls(d=d, epsilon=2.0 * alpha - d, **kw)

    @property
    def alpha(self):
        return 0.5 * (self.d + self.epsilon)

    @property
    def beta(self):
        """Exponent of ``-Delta`` in the kinetic term, ``alpha / 2``."""
        return 0.5 * self.alpha

    @property
    def gamma_bar(self):
        return (self.n + 2) / (self.n + 8)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution knobs for the Fourier and rho-weight integrals.

    Attributes
    ----------
    panels_per_octave, panel_order : int
        Geometric grading of the k-panels and Gauss-Legendre nodes per panel.
    k_min : float or None
        Innermost panel edge; ``None`` picks a dimension-dependent default.
    s_log_range : (float, float)
        ``(u_min, u_max)`` for the rho-integrals in ``u = ln s``.
    s_step : float
        Trapezoid step in ``u``.
    fft_points : int
        Grid size for periodic (FFT) evaluations in d = 1.
    rel_tol : float
        Target relative accuracy, used by callers for pass/fail decisions.
    """

    panels_per_octave: int = 3
    panel_order: int = 10
    k_min: float = None
    s_log_range: tuple = (-90.0, 160.0)
    s_step: float = 0.25
    fft_points: int = 8192
    rel_tol: float = 1e-8

    def __post_init__(self):
        if min(self.panels_per_octave, self.panel_order, self.fft_points) <= 0:
            raise ValueError("quadrature counts must be positive")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")

    def kmin(self, d):
        if self.k_min is not None:
            return self.k_min
        return {1: 1e-30, 2: 1e-10, 3: 1e-6}[d]

    def refined(self, factor=2):
        """Same rule with the node density multiplied by `factor`."""
        return replace(self, panels_per_octave=self.panels_per_octave * factor,
                       s_step=self.s_step / factor,
                       fft_points=self.fft_points * factor)


DEFAULT_Q = QuadratureSpec()


def symbol_lambda(k):
    """Symbol ``2 sum_j (1 - cos k_j)`` of ``-Delta``; last axis of `k` is j."""
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return 4.0 * np.sin(0.5 * k) ** 2
    return 4.0 * np.sum(np.sin(0.5 * k) ** 2, axis=-1)


def _lam1(k):
    return 4.0 * np.sin(0.5 * k) ** 2


def _offsets(x, d):
    x = np.asarray(x)
    if d > 1 and x.ndim == 0:
        x = np.array([x] + [0] * (d - 1))
    scalar = x.ndim == 0 or (d > 1 and x.ndim == 1)
    x = np.abs(np.atleast_1d(x).astype(float))
    if d == 1:
        x = x.reshape(-1, 1) if x.ndim == 1 else x
    else:
        x = x.reshape(-1, d)
    return x, scalar


def _axis_rule(d, q, xmax):
    hmax = min(0.5, 4.0 / xmax) if xmax > 0 else None
    order = q.panel_order if d < 3 else max(6, q.panel_order - 4)
    per_oct = q.panels_per_octave if d == 1 else max(1, q.panels_per_octave - 1)
    return graded_rule(q.kmin(d), np.pi, per_oct, order, hmax)


def fourier_entry(f_of_lambda, x, d=1, q=DEFAULT_Q):
    """``(2 pi)^-d int F(lambda(k)) cos(k.x) dk`` for one or many offsets.

    Parameters
    ----------
    f_of_lambda : callable
        Vectorised function of the symbol ``lambda``.
    x : int, (d,) or (m, d) array_like
        Offset(s).
    d : int
    q : QuadratureSpec

    Returns
    -------
    float or (m,) np.ndarray
    """
    xs, scalar = _offsets(x, d)
    k, w = _axis_rule(d, q, xs.max())
    w = w / np.pi
    if d == 1:
        vals = (np.cos(np.outer(xs[:, 0], k)) * (w * f_of_lambda(_lam1(k)))).sum(axis=1)
    else:
        lam1 = _lam1(k)
        cs = [np.cos(np.outer(xs[:, a], k)) for a in range(d)]
        if d == 2:
            fw = f_of_lambda(lam1[:, None] + lam1[None, :]) * np.outer(w, w)
            vals = np.einsum("mi,ij,mj->m", cs[0], fw, cs[1])
        else:
            vals = np.zeros(xs.shape[0])
            ww = np.outer(w, w)
            base = lam1[:, None] + lam1[None, :]
            # chunk over the first axis to bound memory
            for i in range(k.size):
                fw = f_of_lambda(lam1[i] + base) * ww
                vals += w[i] * cs[0][:, i] * np.einsum("mj,jl,ml->m", cs[1], fw, cs[2])
    return float(vals[0]) if scalar else vals


def laplace_entry(sigma, x, t_min=1e-40, width=0.2, order=10):
    """Entries ``int_0^inf exp(-t x) sigma(t) dt`` for integer ``x >= 1``.

    This is the rotated-contour representation of a 1-d lattice kernel
    (see the module docstring); `sigma` is the spectral density along the
    rotated path.
    """
    x = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
    if np.any(x < 1):
        raise ValueError("laplace_entry needs |x| >= 1")
    t, w = log_panels(t_min, 80.0 / x.min(), width, order)
    ws = w * sigma(t)
    return np.exp(-np.outer(x, t)) @ ws


def _vt(t):
    return 4.0 * np.sinh(0.5 * t) ** 2


def frac_laplacian_entry(beta, x, d=1, q=DEFAULT_Q):
    """Entry ``(-Delta)^beta_{0x}`` on Z^d, ``0 < beta < 1``.

    Diagonal entries are positive and off-diagonal ones negative; the
    row sums vanish because ``lambda(0) = 0``.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return fourier_entry(lambda lam: lam ** beta, x, d, q)


def _check_resolvent_domain(d, alpha, m2):
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    if m2 == 0 and not d > alpha:
        raise ValueError("massless resolvent diverges unless d > alpha")


def frac_resolvent_entry(spec, m2, x, q=DEFAULT_Q):
    """Entry of ``((-Delta)^{alpha/2} + m2)^{-1}`` on Z^d."""
    _check_resolvent_domain(spec.d, spec.alpha, m2)
    b = spec.beta
    return fourier_entry(lambda lam: 1.0 / (lam ** b + m2), x, spec.d, q)


def rho_weight(beta, s, a):
    """Stieltjes weight of ``1 / (t^beta + a)``.

    ``rho(s, a) = (sin pi beta / pi) s^beta / (s^{2 beta} + a^2 + 2 a s^beta cos pi beta)``,
    so that ``1 / (t^beta + a) = int_0^inf rho(s, a) / (s + t) ds``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("rho_weight needs s > 0")
    sb = s ** beta
    val = math.sin(math.pi * beta) / math.pi * sb / (sb * sb + a * a + 2.0 * a * sb * math.cos(math.pi * beta))
    return val if val.ndim else float(val)


def _rho_range(beta, a, q):
    lo, hi = q.s_log_range
    # stretch the upper end for slow s^-beta tails, short of overflow
    hi = min(700.0, max(hi, math.log(1e18) / max(beta, 1e-3) + 10.0))
    # the poles of rho sit pi (1 - beta) / beta off the real u-axis, which
    # sets the trapezoid step for ~1e-16 aliasing error
    strip = min(math.pi, math.pi * (1.0 - beta) / beta)
    return lo, hi, min(q.s_step, 0.17 * strip)


def rho_integral(f, beta, a, q=DEFAULT_Q):
    """``int_0^inf f(s) rho(s, a) ds`` with certified truncation.

    Returns ``(value, tail)``; see :func:`rgflow.quadrature.log_integral`.
    """
    lo, hi, h = _rho_range(beta, a, q)
    def integrand(s):
        r = rho_weight(beta, s, a)
        fs = np.asarray(f(s), dtype=float)
        return fs * r.reshape((-1,) + (1,) * (fs.ndim - 1))
    return log_integral(integrand, lo, hi, h)


def stieltjes_check(beta, t, a, q=DEFAULT_Q):
    """Relative error of ``int rho(s, a)/(s + t) ds`` against ``1/(t^beta + a)``."""
    val, _ = rho_integral(lambda s: 1.0 / (s + t), beta, a, q)
    exact = 1.0 / (t ** beta + a)
    return abs(val - exact) / exact


def resolvent_via_rho(spec, m2, x, q=DEFAULT_Q):
    """``int (-Delta + s)^{-1}_{0x} rho(s, m2) ds`` (d = 1, closed-form inner resolvent).

    The nearest-neighbour resolvent in one dimension is
    ``r^|x| / sqrt(s (s + 4))`` with ``r = (s + 2 - sqrt(s (s + 4))) / 2``; it
    is evaluated through ``t = arccosh(1 + s/2)`` to stay accurate for small s.
    """
    if spec.d != 1:
        raise NotImplementedError("closed-form inner resolvent only in d = 1")
    _check_resolvent_domain(spec.d, spec.alpha, m2)
    xs = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))

    def inner(s):
        t = 2.0 * np.arcsinh(0.5 * np.sqrt(s))
        return np.exp(-np.outer(t, xs)) / (2.0 * np.sinh(t))[:, None]

    val, _ = rho_integral(inner, spec.beta, m2, q)
    return float(val[0]) if np.ndim(x) == 0 else val


def green_diag_tau(spec, q=DEFAULT_Q):
    """Massless Green function diagonal ``((-Delta)^{alpha/2})^{-1}_{00}``."""
    if not spec.alpha < spec.d:
        raise ValueError("Green function diverges for alpha >= d")
    return frac_resolvent_entry(spec, 0.0, 0, q)


def bubble(spec, m2, q=DEFAULT_Q):
    """Bubble diagram ``(2 pi)^-d int (lambda^{alpha/2} + m2)^{-2} dk``."""
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    if m2 == 0 and not spec.d > 2 * spec.alpha:
        raise ValueError("massless bubble diverges unless d > 2 alpha")
    b = spec.beta
    return fourier_entry(lambda lam: (lam ** b + m2) ** -2.0, 0, spec.d, q)


def bubble_scaling(spec, m2s, q=DEFAULT_Q):
    """Log-log slopes of the bubble against ``m2``.

    ``plain`` is the regression slope of ``log B``; ``derivative`` regresses
    ``log |dB / d log m2|`` instead, with ``dB/dm2 = -2 (2 pi)^-d int
    (lambda^b + m2)^-3 dk``.  Since ``B = b m^{-2 eps/alpha} + O(1)`` with
    ``b`` of order ``1/eps``, only the second is free of the constant.
    """
    m2s = np.asarray(sorted(m2s), dtype=float)
    b = spec.beta
    B = np.array([bubble(spec, m, q) for m in m2s])
    dB = np.array([2.0 * m * fourier_entry(lambda lam: (lam ** b + m) ** -3.0, 0, spec.d, q)
                   for m in m2s])
    lm = np.log(m2s)
    return {"m2": m2s, "B": B, "dB_dlog": -dB,
            "plain": float(np.polyfit(lm, np.log(B), 1)[0]),
            "derivative": float(np.polyfit(lm, np.log(dB), 1)[0]),
            "target": -spec.epsilon / spec.alpha}


def torus_resolvent(spec, m2, N, x, method="dft", q=DEFAULT_Q):
    """Resolvent entry on the torus of side ``L^N``.

    ``method="dft"`` sums over torus momenta ``2 pi n / L^N``;
    ``method="images"`` (d = 1) sums the Z resolvent over periodic images
    in closed form through the Laplace representation.
    """
    if not m2 > 0:
        raise ValueError("torus resolvent needs m2 > 0 (zero mode)")
    P = int(spec.L) ** int(N)
    d = spec.d
    xs = np.mod(np.atleast_1d(np.asarray(x)).reshape(-1, d) if d > 1
                else np.atleast_1d(np.asarray(x)).reshape(-1, 1), P)
    scalar = np.ndim(x) == 0 or (d > 1 and np.ndim(x) == 1)
    if method == "dft":
        k = 2.0 * np.pi * np.arange(P) / P
        lam1 = _lam1(k)
        lam = lam1
        for _ in range(d - 1):
            lam = np.add.outer(lam, lam1)
        table = np.fft.ifftn(1.0 / (lam ** spec.beta + m2)).real
        vals = table[tuple(xs.T.astype(int))]
    elif method == "images":
        if d != 1:
            raise NotImplementedError("closed-form image sum only in d = 1")
        b = spec.beta
        sigma_base = lambda t: rho_weight(b, _vt(t), m2)
        x0 = xs[:, 0]
        vals = np.empty(x0.size)
        g0 = frac_resolvent_entry(spec, m2, 0, q)
        t, w = log_panels(1e-40, 80.0, 0.2, 10)
        ws = w * sigma_base(t)
        for i, xi in enumerate(x0):
            if xi == 0:
                vals[i] = g0 + 2.0 * np.sum(ws * np.exp(-t * P) / -np.expm1(-t * P))
            else:
                vals[i] = np.sum(ws * (np.exp(-t * xi) + np.exp(-t * (P - xi))) / -np.expm1(-t * P))
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(vals[0]) if scalar else vals


@dataclass
class KernelWindow:
    """Symmetric lattice kernel tabulated on ``[0, R]^d``.

    Values for other offsets follow from sign-flip symmetry; `tail_bound`
    bounds the omitted mass ``sum_{|x|_inf > R} |K(x)|``.
    """

    d: int
    radius: int
    values: np.ndarray
    tail_bound: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tail_bound < 0:
            raise ValueError("tail_bound must be non-negative")
        if self.values.shape != (self.radius + 1,) * self.d:
            raise ValueError("values must cover [0, R]^d")

    def __call__(self, offset):
        idx = tuple(np.abs(np.atleast_1d(offset)).astype(int))
        if max(idx) > self.radius:
            return 0.0
        return float(self.values[idx])

    def full(self):
        """Values on ``[-R, R]^d``."""
        v = self.values
        for ax in range(self.d):
            v = np.concatenate([np.flip(np.delete(v, 0, axis=ax), axis=ax), v], axis=ax)
        return v

    def total(self):
        return float(self.full().sum())

    def to_csv(self, path, header=None):
        """Write ``offset_1..offset_d, value`` rows; `header` goes in comment lines."""
        with open(path, "w", newline="") as fh:
            for key, val in {**self.meta, **(header or {}), "tail_bound": self.tail_bound}.items():
                fh.write(f"# {key} = {val}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow([f"offset_{i + 1}" for i in range(self.d)] + ["value"])
            for idx in np.ndindex(*self.values.shape):
                wr.writerow(list(idx) + [f"{self.values[idx]:.17g}"])


def kernel_window(f_of_lambda, radius, d=1, q=DEFAULT_Q, tail_bound=0.0, **meta):
    """Tabulate a symmetric kernel on its fundamental window."""
    grid = np.stack(np.meshgrid(*[np.arange(radius + 1)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    vals = fourier_entry(f_of_lambda, grid if d > 1 else grid[:, 0], d, q)
    return KernelWindow(d, radius, np.asarray(vals).reshape((radius + 1,) * d), tail_bound, meta)


def _stable_tail_const(d, beta):
    # continuum constant of -(-Delta)^beta_{0x} ~ c |x|^{-d-2 beta}
    return math.exp(2 * beta * math.log(2) + gammaln(0.5 * d + beta) - 0.5 * d * math.log(math.pi)
                    - gammaln(-beta + 1) + math.log(beta))


def generator_check(beta, window_radius, d=1, q=DEFAULT_Q, band=4.0, tol=1e-8):
    """Row-sum, sign and decay diagnostics for ``(-Delta)^beta``.

    In d = 1 the omitted tail ``2 sum_{x > R} K(x)`` is computed exactly
    from the Laplace representation, independent of the window entries,
    so ``|window sum + tail|`` tests the entries themselves.  In d > 1 the
    tail is estimated from the continuum decay constant and the report is
    marked uncertified.

    Returns
    -------
    dict
        ``max_abs_row_sum``, ``min_offdiag_violation`` (largest off-diagonal
        entry, negative when the sign pattern holds), ``decay_ratio_range``
        (max/min of ``-K(x) |x|^{d + 2 beta}`` over ``10 <= |x| <= R``) and
        pass flags.
    """
    if window_radius < 10:
        raise ValueError("window_radius must be >= 10")
    R = int(window_radius)
    rep = {"d": d, "beta": beta, "radius": R}
    if d == 1:
        xs = np.arange(R + 1)
        K = frac_laplacian_entry(beta, xs, 1, q)
        c = math.sin(math.pi * beta) / math.pi
        t, w = log_panels(1e-40, 80.0, 0.1, 12)
        tail = -2.0 * c * np.sum(w * _vt(t) ** beta * np.exp(-t * (R + 1)) / -np.expm1(-t))
        row = K[0] + 2.0 * K[1:].sum() + tail
        off = K[1:]
        r = np.arange(10, R + 1)
        ratio = -K[r] * r ** (1 + 2 * beta)
        rep["certified"] = True
    else:
        Rw = min(R, 16)
        win = kernel_window(lambda lam: lam ** beta, Rw, d, q)
        full = win.full()
        cst = _stable_tail_const(d, beta)
        # shell-sum estimate of the omitted mass beyond the window
        tail_mag = cst * (2 * d) * (2 * Rw + 1) ** (d - 1) * Rw ** (-2 * beta - d + 1) / (2 * beta + d - 1) * 2 ** (d - 1)
        row = full.sum() - tail_mag
        off = np.delete(full.ravel(), full.size // 2)
        r = np.arange(min(10, Rw // 2), Rw + 1)
        axis = np.array([win((ri,) + (0,) * (d - 1)) for ri in r])
        ratio = -axis * r ** (d + 2 * beta)
        rep["certified"] = False
    rep["max_abs_row_sum"] = float(abs(row))
    rep["min_offdiag_violation"] = float(off.max())
    rep["decay_ratio_range"] = float(ratio.max() / ratio.min()) if np.all(ratio > 0) else math.inf
    rep["row_sum_ok"] = rep["max_abs_row_sum"] < tol
    rep["sign_ok"] = rep["min_offdiag_violation"] < 0
    rep["decay_ok"] = rep["decay_ratio_range"] <= band
    rep["passed"] = rep["row_sum_ok"] and rep["sign_ok"] and rep["decay_ok"]
    return rep
