"""Fractional Laplacian entries, the Stieltjes weight and a scale decomposition.

Run:  python demos/kernels_and_decomposition.py
"""
import numpy as np

from rgflow.cov_decomp import decompose, mass_scale
from rgflow.lattice_kernels import (ModelSpec, bubble_scaling, frac_laplacian_entry,
                                    frac_resolvent_entry, resolvent_via_rho)

spec = ModelSpec()                       # d=1, n=1, eps=0.02, L=16
print(f"alpha = {spec.alpha:.3f}, beta = alpha/2 = {spec.beta:.4f}")

x = np.arange(0, 6)
print("(-Delta)^(1/2) row:", np.round(frac_laplacian_entry(0.5, x), 6))
print("closed form       :", np.round((4 / np.pi) / (1 - 4 * x * x), 6))

m2 = 1e-3
direct = frac_resolvent_entry(spec, m2, x)
via_rho = np.array([resolvent_via_rho(spec, m2, int(k)) for k in x])
print("resolvent, Fourier vs Stieltjes route, max rel dev:",
      f"{np.max(np.abs(direct / via_rho - 1)):.2e}")

dec = decompose(spec, m2, 10)
print(f"mass scale j_m(m2={m2:g}) = {mass_scale(spec, m2)}")
print(f"reconstruction residual = {dec.completeness['max_rel_residual']:.2e}")
for j in range(1, 8):
    print(f"  j={j}  C_j(0) = {dec.diag[j]:.6e}  rescaled = "
          f"{dec.diag[j] * spec.L ** ((spec.d - spec.alpha) * (j - 1)):.6f}")

rep = bubble_scaling(spec, np.logspace(-6, -2, 9))
print(f"bubble slopes: plain {rep['plain']:.4f}, derivative {rep['derivative']:.4f}, "
      f"-eps/alpha {rep['target']:.4f}")
