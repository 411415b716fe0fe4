"""Quadrature rules shared by the kernel and decomposition code.

Everything here is plain numpy.  Two families of rules are used:

* composite Gauss-Legendre on geometrically graded panels, for Fourier
  integrals over ``[0, pi]`` whose integrands have a cusp or an integrable
  singularity at ``k = 0`` and structure on many length scales;
* the trapezoid rule after a logarithmic substitution ``s = exp(u)``, for
  integrals over ``(0, inf)`` with power-law ends (the rho-weight integrals).
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _leggauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(edges, order):
    """Composite Gauss-Legendre rule on consecutive panels.

    Parameters
    ----------
    edges : (P+1,) array_like
        Increasing panel boundaries.
    order : int
        Nodes per panel.

    Returns
    -------
    nodes, weights : (P*order,) np.ndarray
    """
    edges = np.asarray(edges, dtype=float)
    x, w = _leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + half * (x + 1.0)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def graded_edges(kmin, kmax, per_octave=3, hmax=None):
    """Panel edges ``0, kmin, ..., kmax`` growing geometrically.

    Panels wider than `hmax` are split uniformly, which keeps oscillatory
    factors such as ``cos(k x)`` resolved for large ``x``.
    """
    n_oct = max(1, int(np.ceil(np.log2(kmax / kmin) * per_octave)))
    edges = np.geomspace(kmin, kmax, n_oct + 1)
    if hmax is not None:
        pieces = [edges[:1]]
        for a, b in zip(edges[:-1], edges[1:]):
            m = max(1, int(np.ceil((b - a) / hmax)))
            pieces.append(np.linspace(a, b, m + 1)[1:])
        edges = np.concatenate(pieces)
    return np.concatenate([[0.0], edges])


def graded_rule(kmin=1e-30, kmax=np.pi, per_octave=3, order=10, hmax=None):
    """Nodes and weights for ``int_0^kmax f(k) dk`` with grading at 0."""
    return panel_rule(graded_edges(kmin, kmax, per_octave, hmax), order)


def log_trapezoid(u_min, u_max, h):
    """Trapezoid nodes for ``int f(s) ds`` after ``s = exp(u)``.

    The returned weights already contain the Jacobian ``s``.
    """
    n = int(np.ceil((u_max - u_min) / h))
    u = np.linspace(u_min, u_max, n + 1)
    w = np.full(u.size, (u_max - u_min) / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    s = np.exp(u)
    return s, w * s


def log_panels(x_min, x_max, width=0.5, order=12):
    """Gauss-Legendre rule for ``int_{x_min}^{x_max} f(x) dx`` in ``ln x``."""
    v0, v1 = np.log(x_min), np.log(x_max)
    n = max(1, int(np.ceil((v1 - v0) / width)))
    v, w = panel_rule(np.linspace(v0, v1, n + 1), order)
    x = np.exp(v)
    return x, w * x


def log_integral(func, u_min, u_max, h=0.25):
    """``int_0^inf func(s) ds`` by the trapezoid rule in ``u = ln s``.

    `func` must accept an array of ``s`` values (extra trailing axes in
    the result are allowed and integrated independently).  The integrand
    in ``u`` is assumed to decay exponentially beyond both ends; the
    omitted mass ``F_end / r`` is added with the rate ``r`` read off the
    last two samples.  Returns ``(value, tail)`` where `tail` is the size
    of the added end corrections, a proxy for the truncation error.
    """
    n = int(np.ceil((u_max - u_min) / h))
    u = np.linspace(u_min, u_max, n + 1)
    h = u[1] - u[0]
    s = np.exp(u)
    F = np.asarray(func(s), dtype=float)
    F = F * s.reshape((-1,) + (1,) * (F.ndim - 1))
    total = h * (F.sum(axis=0) - 0.5 * (F[0] + F[-1]))
    tail = np.zeros_like(total)
    for a, b in ((F[0], F[1]), (F[-1], F[-2])):
        ok = (a * b > 0) & (np.abs(a) < np.abs(b))
        with np.errstate(divide="ignore"):
            r = np.log(np.abs(b) / np.where(ok, np.abs(a), 1.0)) / h
        t = np.where(ok, a / np.where(ok, r, 1.0), 0.0)
        tail = tail + np.abs(t)
        total = total + t
    return total, tail
