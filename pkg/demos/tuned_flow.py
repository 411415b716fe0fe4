"""Fixed point, critical tuning and one tuned flow with its tangents.

Run:  python demos/tuned_flow.py
"""
from rgflow.lattice_kernels import ModelSpec
from rgflow.pipeline import massless_context, tune_point

spec = ModelSpec()
ctx = massless_context(spec)
print(f"plateau a = {ctx.fp.a:.8f}, sbar = {ctx.sbar:.8f}, "
      f"fixed-point residual {ctx.fp.fixed_point_residual():.1e}")
print(f"mu_0(0) = {ctx.mu0_0:.10e}, nu_c = {ctx.nu_c:.10e}, "
      f"nu_c/(-(n+2) tau g) = {ctx.nu_c / (-(spec.n + 2) * ctx.tau_alpha * ctx.g):.4f}")

p = tune_point(ctx, 1e-5)
rec = p.record
print(f"m2 = 1e-5: j_m = {p.j_m}, mu_0 = {p.tune.mu0_c:.12e} after {p.tune.iterations} bisections")
print(" j        s_j            mu_j          dmu_j/dnu0")
for j in range(0, int(p.tables.j_m) + 3):
    print(f"{j:2d}  {float(rec.col('s')[j]): .6e}  {float(rec.col('mu')[j]): .6e}  "
          f"{float(rec.col('mu', 1)[j]): .6e}")
print(f"t = {p.t:.6e}, chi = {p.sus.chi:.6e}, chi' = {p.sus.chi_prime:.6e}, c_H = {p.heat.c_H:.6e}")
print("domain:", {k: round(v, 4) if isinstance(v, float) else v for k, v in p.domain.items()})
