"""Multiscale decomposition of the fractional resolvent.

``((-Delta)^{alpha/2} + m2)^{-1} = sum_{j >= 1} C_j`` with slices obtained by
telescoping a heat semigroup at times ``tau_0 = 0 < tau_1 < tau_2 < ...``.
Two backends are provided:

``rho_over_heat_slices``
    ``C_j = int rho(s, m2) Gamma_j(s) ds`` where ``Gamma_j(s)`` slices the
    nearest-neighbour resolvent ``(-Delta + s)^{-1}`` at ``tau_j = L^{2j}``.
    Each slice has Gaussian decay beyond ``L^j``.
``direct_fractional_slicing``
    the same telescoping applied to ``mu(k) = lambda^{alpha/2} + m2`` with
    ``tau_j = L^{alpha j}``.  Slices have power-law tails.

In Fourier space a slice on ``[a, b]`` has symbol
``(e^{-z a} - e^{-z b}) / z`` with ``z = lambda + s`` or ``z = mu``; the
telescoping is therefore exact and only the quadratures carry error.

The d = 1 engine evaluates real-space slices on a hybrid offset grid
(integers near the origin, log-spaced panels far out, glued by a smooth
erfc partition of unity) so that lattice sums over Z of products of slices
cost O(10^4) evaluations at every scale.  Bilinear sums use Parseval on a
graded k-grid; trilinear and quartic sums use the real-space grid.

For d >= 2 a periodic FFT box is used instead; it is exact for scales much
smaller than the box and is meant for small ``L`` and shallow depths.
"""
from dataclasses import dataclass, field
import math
import os

import numpy as np
from scipy.special import erfc

from .lattice_kernels import (DEFAULT_Q, KernelWindow, _lam1, _vt, fourier_entry,
                              frac_resolvent_entry, rho_weight, torus_resolvent)
from .quadrature import graded_rule, log_panels, log_trapezoid

__all__ = [
    "BACKENDS", "ScaleCovariance", "MomentCache", "Decomposition", "DecompositionError",
    "decompose", "last_scale_torus", "moments", "self_similarity_check", "mass_scale",
    "slice_backend",
]

BACKENDS = ("rho_over_heat_slices", "direct_fractional_slicing")


class DecompositionError(RuntimeError):
    """Reconstruction or truncation check failed."""


def mass_scale(spec, m2):
    """Mass scale ``j_m = ceil(1 + log_L(m^-2) / alpha)``, at least 1.

    Returns ``math.inf`` for ``m2 == 0``.
    """
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    if m2 == 0:
        return math.inf
    f = 1.0 + math.log(1.0 / m2) / (spec.alpha * math.log(spec.L))
    # absorb rounding so that m2 = L^{-alpha (j-1)} gives exactly j
    fr = round(f)
    if abs(f - fr) < 1e-9:
        f = fr
    return max(1, int(math.ceil(f)))


# --------------------------------------------------------------------------
# backends: Fourier symbols and real-space slices
# --------------------------------------------------------------------------

class _Backend:
    name = None
    power = None

    def __init__(self, spec, m2, q):
        self.spec, self.m2, self.q = spec, float(m2), q
        self.beta = spec.beta
        self.L = float(spec.L)

    def tau(self, j):
        return 0.0 if j <= 0 else self.L ** (self.power * j)

    def slice_symbol(self, j, lam):
        return self.symbol(lam, self.tau(j - 1), self.tau(j))

    def cum_symbol(self, j, lam):
        return self.symbol(lam, 0.0, self.tau(j))

    def tail_symbol(self, j, lam):
        return self.symbol(lam, self.tau(j), math.inf)

    def kcut(self, j):
        """Momentum beyond which slice ``j`` is below ``e^-45`` of its peak."""
        a = self.tau(j - 1)
        if a == 0:
            return math.pi
        lam = self._lam_cut(45.0 / a)
        return 2.0 * math.asin(min(1.0, 0.5 * math.sqrt(lam)))


class _RhoBackend(_Backend):
    name = "rho_over_heat_slices"
    power = 2

    def _lam_cut(self, x):
        return x

    def _s_nodes(self, lam, a, b):
        beta = self.beta
        h = min(self.q.s_step, 0.17 * min(0.5 * math.pi, math.pi * (1 - beta) / beta))
        if a > 0:
            u_hi = math.log(60.0 / a)
        else:
            u_hi = min(700.0, math.log(1e18) / beta + 10.0)
        small = 40.0 / min(beta, 1.0 - beta)
        if math.isfinite(b):
            u_lo = -math.log(b) - small
        else:
            pos = lam[lam > 0]
            ref = [pos.min()] if pos.size else []
            if self.m2 > 0:
                ref.append(self.m2 ** (1.0 / beta))
            if not ref:
                raise ValueError("massless tail symbol diverges at lambda = 0")
            u_lo = math.log(min(ref)) - small
        u_lo = max(u_lo, -700.0)
        s, w = log_trapezoid(u_lo, max(u_hi, u_lo + 10 * h), h)
        return s, w * rho_weight(beta, s, self.m2)

    def symbol(self, lam, a, b):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        s, ws = self._s_nodes(lam, a, b)
        out = np.empty(lam.size)
        for i0 in range(0, lam.size, 512):
            z = lam[i0:i0 + 512, None] + s[None, :]
            if math.isfinite(b):
                G = np.exp(-z * a) * -np.expm1(-z * (b - a)) / z
            else:
                G = np.exp(-z * a) / z
            out[i0:i0 + 512] = G @ ws
        return out

    def slice_real(self, j, x):
        """``C_j(x)`` for offsets ``x >= 0``.

        A trapezoid rule in k with spacing ``2 pi / (40 L^j)``.  When the
        symbol still matters at ``k = pi`` the rule is periodic and only
        integer offsets are valid; values beyond the slice's support
        (``> 20 L^j``) are set to zero.
        """
        x = np.asarray(x, dtype=float)
        span = self.L ** j
        out = np.zeros(x.shape)
        inside = x <= 20.0 * span
        kc = self.kcut(j)
        if kc < math.pi:
            dk = 2.0 * math.pi / (40.0 * span)
            nk = int(math.ceil(kc / dk)) + 1
            k = dk * np.arange(nk)
            wk = np.full(nk, dk)
            wk[0] *= 0.5
        else:
            P = max(self.q.fft_points, 2 * int(math.ceil(20.0 * span)))
            P += P % 2
            k = 2.0 * np.pi * np.arange(P // 2 + 1) / P
            wk = np.full(k.size, 2.0 * np.pi / P)
            wk[0] *= 0.5
            wk[-1] *= 0.5
            xi = x[inside]
            if np.any(xi != np.round(xi)):
                # periodic rule: integer offsets only, far nodes outside support
                inside &= x == np.round(x)
        sym = self.slice_symbol(j, _lam1(k)) * wk / np.pi
        xi = x[inside]
        vals = np.empty(xi.size)
        for i0 in range(0, xi.size, 1024):
            vals[i0:i0 + 1024] = np.cos(np.outer(xi[i0:i0 + 1024], k)) @ sym
        out[inside] = vals
        return out


class _DirectBackend(_Backend):
    name = "direct_fractional_slicing"

    @property
    def power(self):
        return self.spec.alpha

    def _lam_cut(self, x):
        return max(x - self.m2, 0.0) ** (1.0 / self.beta) if x > self.m2 else 0.0

    @staticmethod
    def _gamma(mu, a, b):
        if math.isfinite(b):
            with np.errstate(invalid="ignore", divide="ignore"):
                G = np.exp(-mu * a) * -np.expm1(-mu * (b - a)) / mu
            return np.where(mu == 0, b - a, G)
        with np.errstate(divide="ignore"):
            return np.exp(-mu * a) / mu

    def symbol(self, lam, a, b):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return self._gamma(lam ** self.beta + self.m2, a, b)

    def _sigma(self, t, a, b):
        mu = _vt(t) ** self.beta * np.exp(1j * math.pi * self.beta) + self.m2
        return -np.imag(self._gamma(mu, a, b)) / math.pi

    def slice_real(self, j, x):
        """``C_j(x)`` from the rotated-contour Laplace representation (``x >= 1``)
        and the graded Fourier rule at ``x = 0``; valid for real offsets."""
        a, b = self.tau(j - 1), self.tau(j)
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        zero = x < 0.5
        if np.any(zero):
            out[zero] = self._diag(a, b)
        pos = np.nonzero(~zero)[0]
        if pos.size:
            xp = x[pos]
            order = np.argsort(xp)
            xs = xp[order]
            vals = np.empty(xs.size)
            edges = [0]
            # blocks spanning at most a factor e^2 in x
            while edges[-1] < xs.size:
                lo = xs[edges[-1]]
                edges.append(int(np.searchsorted(xs, lo * math.e ** 2, side="right")))
            for i0, i1 in zip(edges[:-1], edges[1:]):
                blk = xs[i0:i1]
                t_lo = 1e-8 * min(1.0 / blk[-1], b ** (-1.0 / self.power))
                t, w = log_panels(t_lo, 80.0 / blk[0], 0.5, 12)
                vals[i0:i1] = np.exp(-np.outer(blk, t)) @ (w * self._sigma(t, a, b))
            res = np.empty(xs.size)
            res[order] = vals
            out[pos] = res
        return out

    def _diag(self, a, b):
        k, w = graded_rule(_kmin_for(self.L, b, self.power), np.pi,
                           self.q.panels_per_octave, self.q.panel_order)
        return float(np.sum(w * self.symbol(_lam1(k), a, b)) / np.pi)


def _kmin_for(L, tau, power):
    # far inside the scale where a slice ending at tau varies; the first
    # panel then carries a negligible share of a k^-alpha singularity
    if not math.isfinite(tau) or tau <= 0:
        return 1e-30
    return max(1e-300, 1e-24 * tau ** (-1.0 / power))


def slice_backend(spec, m2, backend="rho_over_heat_slices", q=DEFAULT_Q):
    """Backend object exposing ``symbol``, ``slice_symbol`` and ``slice_real``."""
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    if backend == BACKENDS[0]:
        return _RhoBackend(spec, m2, q)
    if backend == BACKENDS[1]:
        return _DirectBackend(spec, m2, q)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


# --------------------------------------------------------------------------
# data records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleCovariance:
    """One slice ``C_j(m2)`` with its window, diagonal and PSD witness."""

    j: int
    m2: float
    window: KernelWindow
    diag: float
    backend: str
    min_symbol: float = 0.0

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("scale index starts at 1")
        if not self.diag > 0:
            raise DecompositionError(f"non-positive diagonal at scale {self.j}")
        if self.min_symbol < -1e-10:
            raise DecompositionError(f"slice {self.j} fails the positivity witness")

    def __call__(self, x):
        return self.window(x)


@dataclass
class MomentCache:
    """Lattice sums of the cumulative covariance ``w_j = sum_{i<=j} C_i``.

    Arrays are indexed by ``j = 0 .. J-1``; entries combining ``w_j`` with
    the next slice ``c = C_{j+1}`` (and ``c0 = C_{j+1}(0)``) are stored in
    the cancellation-free forms the flow coefficients need.
    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    c0: np.ndarray
    wc: np.ndarray        # sum w c
    cc: np.ndarray        # sum c^2
    dw2: np.ndarray       # w_{j+1}^(2) - w_j^(2)
    knu: np.ndarray       # dw2 - 2 c0 w1
    xi: np.ndarray        # dw3 - 3 c0 w2
    kgg: np.ndarray       # dw4 - 4 c0 w3 - 6 c0^2 w2
    w2_real: np.ndarray = None  # real-space recomputation of w2 (diagnostic)

    @property
    def depth(self):
        return self.w1.size

    @property
    def dw3(self):
        return self.xi + 3.0 * self.c0 * self.w2

    @property
    def dw4(self):
        return self.kgg + 4.0 * self.c0 * self.w3 + 6.0 * self.c0 ** 2 * self.w2

    def entry(self, j):
        if not 0 <= j < self.depth:
            raise IndexError(f"moments available for j in [0, {self.depth - 1}]")
        return {k: float(getattr(self, k)[j]) for k in
                ("w1", "w2", "w3", "w4", "c0", "wc", "cc", "dw2", "knu", "xi", "kgg", "dw3", "dw4")}


# --------------------------------------------------------------------------
# the decomposition
# --------------------------------------------------------------------------

def _partition(Xc):
    W = Xc / 8.0
    xn = np.arange(0, 2 * int(Xc) + 1, dtype=float)
    wn = 0.5 * erfc((xn - Xc) / W) * np.where(xn == 0, 1.0, 2.0)
    return xn, wn, W


class Decomposition:
    """Slices ``C_1 .. C_J`` of the resolvent at mass ``m2``.

    Indexing ``dec[j]`` (``1 <= j <= J``) returns a :class:`ScaleCovariance`.

    Parameters
    ----------
    spec : ModelSpec
    m2 : float
    j_max : int
        Deepest slice ``J``.
    backend : str
        One of :data:`BACKENDS`.
    q : QuadratureSpec
    window_cap : int
        Largest window radius tabulated per slice.
    """

    def __init__(self, spec, m2, j_max, backend=BACKENDS[0], q=DEFAULT_Q, window_cap=4096):
        if j_max < 1:
            raise ValueError("j_max must be >= 1")
        if m2 == 0 and not spec.alpha < spec.d:
            raise ValueError("massless decomposition needs alpha < d")
        self.spec, self.m2, self.J, self.q = spec, float(m2), int(j_max), q
        self.be = slice_backend(spec, m2, backend, q)
        self.backend = self.be.name
        self.window_cap = int(window_cap)
        self.taus = np.array([self.be.tau(j) for j in range(self.J + 1)])
        self._slices = {}
        self._moments = None
        self._real = {}
        if spec.d == 1:
            self._build_fourier_1d()
        else:
            self._build_box()

    # -- Fourier-side tables -------------------------------------------
    def _build_fourier_1d(self):
        be, J = self.be, self.J
        kmin = _kmin_for(self.spec.L, self.taus[J], be.power)
        k, w = graded_rule(kmin, np.pi, self.q.panels_per_octave, self.q.panel_order)
        lam = _lam1(k)
        self._k, self._wk = k, w / np.pi
        hats = np.zeros((J + 1, k.size))
        for j in range(1, J + 1):
            kc = be.kcut(j)
            sel = k <= kc
            hats[j, sel] = be.slice_symbol(j, lam[sel])
        self._hats = hats
        self.hat0 = np.array([0.0] + [float(be.slice_symbol(j, 0.0)[0]) for j in range(1, J + 1)])
        self.diag = hats @ self._wk
        self.diag[0] = np.nan
        tailJ = be.tail_symbol(J, lam)
        self._tailJ = tailJ
        cum_tail = np.cumsum(hats[::-1], axis=0)[::-1]      # sum_{i >= j} hat_i
        # R_j = sum_{i > j} C_i + tail beyond J
        tails = np.vstack([cum_tail[1:], np.zeros((1, k.size))]) + tailJ
        self.tail_diag = tails @ self._wk
        self.G00 = float(self.tail_diag[0])

    def _build_box(self):
        spec, be = self.spec, self.be
        P = int(max(32, 16 * spec.L ** self.J))
        P = min(P, {2: 256, 3: 48}[spec.d])
        if 5 * spec.L ** self.J > P // 2:
            raise ValueError(f"d={spec.d}: depth {self.J} needs box > {P}; use smaller L or j_max")
        self._P = P
        k1 = 2.0 * np.pi * np.arange(P) / P
        lam1 = _lam1(k1)
        lam = lam1
        for _ in range(spec.d - 1):
            lam = np.add.outer(lam, lam1)
        key = np.round(lam, 13)
        uniq, inv = np.unique(key, return_inverse=True)
        self._box_lam_inv = inv.reshape(lam.shape)
        self._box = {}
        for j in range(1, self.J + 1):
            sym = be.slice_symbol(j, uniq)[self._box_lam_inv]
            self._box[j] = np.fft.ifftn(sym).real
        self._box_uniq = uniq
        self.hat0 = np.array([0.0] + [float(be.slice_symbol(j, 0.0)[0]) for j in range(1, self.J + 1)])
        self.diag = np.array([np.nan] + [self._box[j].flat[0] for j in range(1, self.J + 1)])
        # tail and full diagonal from independent Fourier integrals
        tJ = fourier_entry(lambda l: be.tail_symbol(self.J, l), 0, spec.d, self.q)
        self.tail_diag = np.array([tJ + np.sum(self.diag[j + 1:]) for j in range(self.J + 1)])
        self.tail_diag[self.J] = tJ
        self.G00 = float(self.tail_diag[0])

    # -- sequence protocol ---------------------------------------------
    def __len__(self):
        return self.J

    def __iter__(self):
        return (self[j] for j in range(1, self.J + 1))

    def __getitem__(self, j):
        if not 1 <= j <= self.J:
            raise IndexError(f"scale {j} outside [1, {self.J}]")
        if j not in self._slices:
            self._slices[j] = self._make_slice(j)
        return self._slices[j]

    # -- real space ----------------------------------------------------
    def values(self, j, x):
        """Real-space ``C_j(x)``; offsets are ``|x|`` in d = 1 or (m, d) in the box."""
        if self.spec.d == 1:
            return self.be.slice_real(j, np.abs(np.asarray(x, dtype=float)))
        x = np.mod(np.asarray(x, dtype=int).reshape(-1, self.spec.d), self._P)
        return self._box[j][tuple(x.T)]

    def cumulative(self, j, x):
        """``w_j(x) = sum_{i <= j} C_i(x)``."""
        out = np.zeros(np.shape(x)[:1] if self.spec.d > 1 else np.shape(x))
        for i in range(1, j + 1):
            out = out + self.values(i, x)
        return out

    def remainder(self, x):
        """``R_J(x) = sum_{i > J} C_i(x)`` by a graded Fourier integral (d = 1)."""
        if self.spec.d != 1:
            return fourier_entry(lambda l: self.be.tail_symbol(self.J, l), x, self.spec.d, self.q)
        xs = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
        vals = np.cos(np.outer(xs, self._k)) @ (self._wk * self._tailJ)
        return vals if np.ndim(x) else float(vals[0])

    def _make_slice(self, j):
        d = self.spec.d
        if d == 1:
            R = int(min(5 * self.spec.L ** j, self.window_cap))
            vals = self.values(j, np.arange(R + 1))
            tail = self._tail_mass(j, R)
            k = np.linspace(0, math.pi, 513)
            min_sym = float(np.min(self.be.slice_symbol(j, _lam1(k))))
            win = KernelWindow(1, R, vals, tail, {"scale": j, "backend": self.backend, "m2": self.m2})
        else:
            R = int(min(5 * self.spec.L ** j, self._P // 2 - 1))
            idx = np.stack(np.meshgrid(*[np.arange(R + 1)] * d, indexing="ij"), -1).reshape(-1, d)
            vals = self._box[j][tuple(idx.T)].reshape((R + 1,) * d)
            full = np.abs(self._box[j]).sum()
            inner = np.abs(KernelWindow(d, R, vals).full()).sum()
            min_sym = float(np.min(np.fft.fftn(self._box[j]).real))
            win = KernelWindow(d, R, vals, max(full - inner, 0.0),
                               {"scale": j, "backend": self.backend, "m2": self.m2})
        return ScaleCovariance(j, self.m2, win, float(self.diag[j]), self.backend, min_sym)

    def _tail_mass(self, j, R):
        """``2 int_R^inf |C_j(x)| dx`` on log panels, bounding the omitted sum."""
        hi = 1e8 * self.spec.L ** (j + 1)
        x, w = log_panels(R + 0.5, hi, 0.5, 12)
        return float(2.0 * np.sum(w * np.abs(self.values(j, x))))

    # -- lattice sums --------------------------------------------------
    def lattice_grid(self):
        """Nodes and weights with ``sum_{x in Z} F(x) ~ sum_i W_i F(X_i)``."""
        if "grid" in self._real:
            return self._real["grid"]
        L = self.spec.L
        Xc = float(max(1024, 64 * L))
        xn, wn, W = _partition(Xc)
        far = 20.0 * L ** (self.J + 1) if self.backend == BACKENDS[0] else 1e6 * L ** (self.J + 1)
        xf, wf = log_panels(Xc - 6 * W, max(far, 4 * Xc), 0.5, 12)
        wf = 2.0 * wf * 0.5 * erfc(-(xf - Xc) / W)
        self._real["grid"] = (np.concatenate([xn, xf]), np.concatenate([wn, wf]))
        return self._real["grid"]

    def lattice_sum(self, F):
        """``sum_{x in Z} F(x)`` for F sampled on :meth:`lattice_grid` nodes."""
        return float(np.dot(self.lattice_grid()[1], F))

    def moments(self):
        """:class:`MomentCache` for ``j = 0 .. J-1``."""
        if self._moments is None:
            self._moments = self._moments_1d() if self.spec.d == 1 else self._moments_box()
        return self._moments

    def _moments_1d(self):
        J = self.J
        X, W = self.lattice_grid()
        wk = self._wk
        cum = np.cumsum(self._hats, axis=0)     # cum[j] = hat w_j
        w1 = np.cumsum(self.hat0)[:J]
        w2 = (cum[:J] ** 2) @ wk
        wc = (cum[:J] * self._hats[1:J + 1]) @ wk
        cc = (self._hats[1:J + 1] ** 2) @ wk
        c0 = self.diag[1:J + 1].copy()
        w3, w4, xi, kgg, w2r = (np.zeros(J) for _ in range(5))
        wreal = np.zeros(X.size)
        for j in range(J):
            c = self.values(j + 1, X)
            dc = c - c0[j]
            w = wreal
            w2r[j] = W @ (w * w)
            w3[j] = W @ (w ** 3)
            w4[j] = W @ (w ** 4)
            xi[j] = W @ (3 * w * w * dc + 3 * w * c * c + c ** 3)
            kgg[j] = W @ (4 * w ** 3 * dc + 6 * w * w * (c - c0[j]) * (c + c0[j]) + 4 * w * c ** 3 + c ** 4)
            wreal = w + c
        return MomentCache(w1, w2, w3, w4, c0, wc, cc, 2 * wc + cc, 2 * (wc - c0 * w1) + cc,
                           xi, kgg, w2r)

    def _moments_box(self):
        J = self.J
        w = np.zeros_like(self._box[1])
        out = {k: np.zeros(J) for k in ("w1", "w2", "w3", "w4", "c0", "wc", "cc", "xi", "kgg")}
        for j in range(J):
            c = self._box[j + 1]
            c0 = c.flat[0]
            out["w1"][j], out["w2"][j] = w.sum(), (w * w).sum()
            out["w3"][j], out["w4"][j] = (w ** 3).sum(), (w ** 4).sum()
            out["c0"][j], out["wc"][j], out["cc"][j] = c0, (w * c).sum(), (c * c).sum()
            out["xi"][j] = (3 * w * w * (c - c0) + 3 * w * c * c + c ** 3).sum()
            out["kgg"][j] = (4 * w ** 3 * (c - c0) + 6 * w * w * (c * c - c0 * c0) + 4 * w * c ** 3 + c ** 4).sum()
            w = w + c
        o = out
        return MomentCache(o["w1"], o["w2"], o["w3"], o["w4"], o["c0"], o["wc"], o["cc"],
                           2 * o["wc"] + o["cc"], 2 * (o["wc"] - o["c0"] * o["w1"]) + o["cc"],
                           o["xi"], o["kgg"], o["w2"].copy())

    # -- checks --------------------------------------------------------
    def reconstruction_check(self, xs=(0, 1, 5, 20), tol=1e-6, q_ref=None):
        """Max relative residual of ``sum_j C_j(x) + R_J(x)`` against an
        independent resolvent evaluation.  Raises when above `tol`."""
        xs = np.atleast_1d(np.asarray(xs))
        q_ref = q_ref or self.q.refined(2)
        if self.spec.d == 1:
            ref = np.atleast_1d(frac_resolvent_entry(self.spec, self.m2, xs, q_ref))
            got = self.cumulative(self.J, xs.astype(float)) + np.atleast_1d(self.remainder(xs))
        else:
            pts = np.array([[x] + [0] * (self.spec.d - 1) for x in xs])
            ref = np.atleast_1d(frac_resolvent_entry(self.spec, self.m2, pts, q_ref))
            got = self.cumulative(self.J, pts) + np.atleast_1d(self.remainder(pts))
        res = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-14)
        worst = int(np.argmax(res))
        rep = {"max_rel_residual": float(res.max()), "worst_offset": int(xs[worst]),
               "residuals": res.tolist()}
        if res.max() > tol:
            raise DecompositionError(f"reconstruction residual {res.max():.3e} at x = {xs[worst]}")
        return rep

    def manifest(self):
        return {"backend": self.backend, "m2": repr(self.m2), "j_max": self.J,
                "taus": " ".join(f"{t:.17g}" for t in self.taus),
                "rel_tol": self.q.rel_tol, "L": self.spec.L, "alpha": repr(self.spec.alpha)}

    def dump(self, outdir, header=None):
        """One CSV per scale plus ``manifest.txt``; returns written paths."""
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for sc in self:
            p = os.path.join(outdir, f"slice_{sc.j:03d}.csv")
            sc.window.to_csv(p, {**(header or {}), "diag": f"{sc.diag:.17g}"})
            paths.append(p)
        p = os.path.join(outdir, "manifest.txt")
        with open(p, "w", newline="\n") as fh:
            for k, v in {**(header or {}), **self.manifest()}.items():
                fh.write(f"{k} = {v}\n")
        paths.append(p)
        return paths


def decompose(spec, m2, j_max, backend=BACKENDS[0], q=DEFAULT_Q, check=True, **kw):
    """Build the decomposition and (optionally) verify its completeness.

    Returns a :class:`Decomposition`, a sequence of :class:`ScaleCovariance`.
    """
    dec = Decomposition(spec, m2, j_max, backend, q, **kw)
    if check:
        dec.completeness = dec.reconstruction_check(tol=max(1e-6, 10 * q.rel_tol))
    return dec


def moments(decomposition, j):
    """Moment entry at scale ``j`` (needs slices up to ``j + 1``)."""
    if j >= decomposition.J:
        raise IndexError(f"moments at j = {j} need C_{j + 1}; depth is {decomposition.J}")
    return decomposition.moments().entry(j)


def last_scale_torus(spec, m2, N, q=DEFAULT_Q, backend=BACKENDS[0]):
    """Final covariance ``C_{N,N}`` on the torus of side ``L^N``.

    On the torus the slices ``j < N`` are periodisations of the Z^d slices,
    so ``C_{N,N}`` has the torus-momentum symbol of ``sum_{i >= N} C_i``.
    Returns a :class:`ScaleCovariance` whose window covers the whole torus
    (``radius = L^N // 2``).
    """
    if not m2 > 0:
        raise ValueError("the last torus scale needs m2 > 0")
    if N < 1:
        raise ValueError("N must be >= 1")
    be = slice_backend(spec, m2, backend, q)
    P = int(spec.L) ** int(N)
    k1 = 2.0 * np.pi * np.arange(P) / P
    lam1 = _lam1(k1)
    lam = lam1
    for _ in range(spec.d - 1):
        lam = np.add.outer(lam, lam1)
    uniq, inv = np.unique(np.round(lam, 13), return_inverse=True)
    sym = be.tail_symbol(N - 1, uniq)[inv].reshape(lam.shape)
    table = np.fft.ifftn(sym).real
    R = P // 2
    win = KernelWindow(spec.d, R, table[(slice(0, R + 1),) * spec.d].copy(), 0.0,
                       {"scale": "N,N", "N": N, "m2": m2, "backend": be.name, "side": P})
    return ScaleCovariance(N, m2, win, float(table.flat[0]), be.name, float(sym.min()))


def torus_slice_sum_check(spec, m2, N, q=DEFAULT_Q, backend=BACKENDS[0]):
    """Relative deviation of ``sum_{j<N} C_j^torus + C_{N,N}`` from the torus
    resolvent, and of its torus row sum from ``1/m2``."""
    be = slice_backend(spec, m2, backend, q)
    P = int(spec.L) ** int(N)
    k1 = 2.0 * np.pi * np.arange(P) / P
    lam = _lam1(k1)
    for _ in range(spec.d - 1):
        lam = np.add.outer(lam, _lam1(k1))
    parts = sum(be.slice_symbol(j, lam.ravel()).reshape(lam.shape) for j in range(1, N))
    full = parts + be.tail_symbol(N - 1, lam.ravel()).reshape(lam.shape)
    table = np.fft.ifftn(full).real
    ref = np.fft.ifftn(1.0 / (lam ** spec.beta + m2)).real
    return {"max_rel": float(np.abs(table - ref).max() / np.abs(ref).max()),
            "row_sum": float(table.sum()), "inverse_mass": 1.0 / m2}


def self_similarity_check(decomposition, ys=(0.0, 0.25, 0.5, 1.0, 2.0), js=None):
    """Rescaled profiles ``L^{(d-alpha) j} C_j(floor(y L^j))`` across scales.

    Returns a dict with the profile table, successive sup-norm discrepancies
    (relative to the ``y = 0`` value) and successive diagonal ratios.
    """
    dec = decomposition
    spec = dec.spec
    if dec.m2 != 0:
        raise ValueError("self-similarity is a massless statement")
    if spec.d != 1:
        raise NotImplementedError("profile collapse is checked in d = 1")
    js = list(js or range(2, dec.J + 1))
    if len(js) < 3:
        raise ValueError("need at least three scales")
    ys = np.asarray(ys, dtype=float)
    prof = np.array([spec.L ** ((spec.d - spec.alpha) * j) * dec.values(j, np.floor(ys * spec.L ** j))
                     for j in js])
    disc = np.max(np.abs(np.diff(prof, axis=0)), axis=1) / prof[:-1, 0]
    return {"js": js, "ys": ys.tolist(), "profiles": prof, "discrepancy": disc,
            "diag_ratio": prof[1:, 0] / prof[:-1, 0],
            "decreasing": bool(np.all(np.diff(disc) <= 1e-12 + 0.0 * disc[1:]))}
