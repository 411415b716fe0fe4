import math

import numpy as np
import pytest

from rgflow.lattice_kernels import ModelSpec
from rgflow.pipeline import massless_context


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end sweeps (tens of seconds)")


@pytest.fixture(scope="session")
def spec():
    return ModelSpec()


@pytest.fixture(scope="session")
def ctx(spec):
    """Massless context for the default d=1, L=16, eps=0.02, n=1 model."""
    return massless_context(spec)


def pin_tables(t, a=None):
    """Overwrite coefficient tables so that the transformed map is exactly
    ``s -> L^eps s (1 - a s)``, ``mu -> L^alpha mu (1 - gb a s)``."""
    a = t.sbar and (1 - t.spec.L ** -t.spec.epsilon) / t.sbar if a is None else a
    L, eps = t.spec.L, t.spec.epsilon
    j = np.arange(t.depth)
    jj = np.minimum(j, t.j_m) if math.isfinite(t.j_m) else j
    LD = np.longdouble
    t.beta_p = (a * float(L) ** (eps * jj)).astype(LD)
    for name in ("eta_p", "xi_p", "w1", "w1n", "eta_geq_p", "kg", "kn", "kgn", "kgg", "knn"):
        setattr(t, name, np.zeros(t.depth, dtype=LD))
    t.res.beta = np.full(t.depth, a)
    t.res.beta_colon = np.full(t.depth, a)
    t.res.pi = np.zeros(t.depth)
    return t
