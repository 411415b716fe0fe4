"""gamma and alpha_H from a tuned sweep, for n = 0 and n = 1.

Run:  python demos/exponents.py     (about half a minute)
"""
from rgflow.lattice_kernels import ModelSpec
from rgflow.pipeline import exponent_fits, run_sweep

for n in (1, 0):
    sw = run_sweep(ModelSpec(n=n))
    f = exponent_fits(sw)
    g, gn = f["gamma_chi"], f["gamma_nu"]
    print(f"n={n}: gamma chi-fit {g.value:.6f}, nu'-slope {gn.value:.6f}, target {g.target:.6f}"
          f"  window m2 in [{f['window'][0]:.0e}, {f['window'][1]:.0e}]")
    if "alpha_H" in f:
        a = f["alpha_H"]
        print(f"      alpha_H {a.value:.6f}, target {a.target:.6f}")
    c = sw.critical
    print(f"      nu* -> nu_c fit: nu_c {c.nu_c:.10e}, theta {c.params['theta']:.4f}; "
          f"massless-tuned nu_c {sw.ctx.nu_c:.10e}")
