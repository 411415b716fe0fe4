"""Command-line driver.

Usage::

    rgflow <subcommand> [--config FILE] [--out DIR] [--set section.key=value ...]

Subcommands: kernels, decompose, coeffs, tune, exponents, heat, oracle, all,
validate_config.  Configuration is an INI file (sections below); flags beat
the file, which beats the defaults.  ``RGFLOW_OUT`` overrides the output
directory.  Exit status: 0 success, 2 configuration error, 3 numerical
failure (a ``diagnostics.txt`` is written).
"""
import argparse
import configparser
import hashlib
import math
import os
import sys
import traceback

import numpy as np

__all__ = ["DEFAULTS", "ConfigError", "load_config", "validate_config", "config_hash", "run", "main"]


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalFailure(RuntimeError):
    pass


# section -> key -> (type, default)
DEFAULTS = {
    "model": {"d": (int, 1), "L": (int, 16), "epsilon": (float, 0.02), "alpha": (float, None),
              "n": (int, 1), "g": (float, None)},
    "quadrature": {"panels_per_octave": (int, 3), "panel_order": (int, 10), "k_min": (float, None),
                   "s_log_min": (float, -90.0), "s_log_max": (float, 160.0), "s_step": (float, 0.25),
                   "fft_points": (int, 8192), "rel_tol": (float, 1e-8)},
    "decomposition": {"backend": (str, "rho_over_heat_slices"), "m2": (float, 0.0),
                      "j_max": (int, 12), "massless_depth": (int, 20), "window_cap": (int, 4096)},
    "flow": {"tol_mu": (float, 1e-8), "target": (str, "default"), "J_L": (int, 2),
             "y0_frac": (float, 0.0), "alpha_prime": (float, None), "extra_scales": (int, 14),
             "massless_target": (int, 12), "tol_above": (float, 1e-4), "floor_above": (float, 1e-6),
             "jmax_above": (int, 60), "C_D": (float, 4.0), "box": (float, 10.0),
             "smoothing": (bool, False)},
    "remainder": {"enabled": (bool, False), "amplitude": (float, 1.0), "seed": (int, 0)},
    "sweep": {"m2_min": (float, 1e-8), "m2_max": (float, 1e-3), "per_decade": (int, 2),
              "m2_list": (str, ""), "n_values": (str, "0,1,2,3"), "workers": (int, 0)},
    "kernels": {"window_radius": (int, 200), "beta_values": (str, "0.255,0.3,0.5")},
    "oracle": {"quick": (bool, False)},
    "output": {"dir": (str, "rgflow_out")},
}

SUBCOMMANDS = ("kernels", "decompose", "coeffs", "tune", "exponents", "heat", "oracle", "all",
               "validate_config")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(typ, raw):
    raw = raw.strip()
    if raw.lower() in ("", "none") and typ is not str:
        return None
    if typ is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


def load_config(path=None, overrides=()):
    """Resolved config ``{section: {key: value}}``; raises :class:`ConfigError`.

    `overrides` are ``"section.key=value"`` strings applied after the file.
    """
    cfg = {s: {k: v[1] for k, v in keys.items()} for s, keys in DEFAULTS.items()}
    errors = []
    raw = []
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise ConfigError([f"cannot read {path}: {e}"])
        for sec in cp.sections():
            for key, val in cp.items(sec):
                raw.append((sec, key, val))
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            errors.append(f"override {ov!r} is not section.key=value")
            continue
        lhs, val = ov.split("=", 1)
        sec, key = lhs.split(".", 1)
        raw.append((sec.strip(), key.strip(), val))
    for sec, key, val in raw:
        if sec not in DEFAULTS:
            errors.append(f"[{sec}]: unknown section")
            continue
        if key not in DEFAULTS[sec]:
            errors.append(f"[{sec}] {key}: unknown key")
            continue
        try:
            cfg[sec][key] = _parse(DEFAULTS[sec][key][0], val)
        except ValueError as e:
            errors.append(f"[{sec}] {key}: {e}")
    errors += _constraints(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _constraints(cfg):
    e = []
    m = cfg["model"]
    if m["alpha"] is not None and abs(m["alpha"] - 0.5 * (m["d"] + m["epsilon"])) > 1e-12:
        e.append(f"[model] alpha={m['alpha']} inconsistent with d={m['d']}, epsilon={m['epsilon']} "
                 f"(alpha must equal (d + epsilon)/2)")
    if m["d"] not in (1, 2, 3):
        e.append("[model] d: must be 1, 2 or 3")
    if m["L"] < 2:
        e.append("[model] L: must be >= 2")
    if not m["epsilon"] > 0 or not 0.5 * (m["d"] + m["epsilon"]) < min(2, m["d"]):
        e.append("[model] epsilon: need 0 < epsilon and alpha = (d + epsilon)/2 < min(2, d)")
    if m["n"] < 0:
        e.append("[model] n: must be >= 0")
    if m["g"] is not None and not m["g"] > 0:
        e.append("[model] g: must be positive")
    from .cov_decomp import BACKENDS
    if cfg["decomposition"]["backend"] not in BACKENDS:
        e.append(f"[decomposition] backend: one of {', '.join(BACKENDS)}")
    if cfg["decomposition"]["m2"] < 0:
        e.append("[decomposition] m2: must be >= 0")
    t = cfg["flow"]["target"]
    if t not in ("default", "buffer") and not t.lstrip("-").isdigit():
        e.append("[flow] target: 'default', 'buffer' or an integer scale")
    if not 0 < cfg["flow"]["tol_mu"] < 1:
        e.append("[flow] tol_mu: must lie in (0, 1)")
    if abs(cfg["flow"]["y0_frac"]) > 1 / 32:
        e.append("[flow] y0_frac: |y0| must not exceed sbar/32")
    q = cfg["quadrature"]
    if not 0 < q["rel_tol"] < 1:
        e.append("[quadrature] rel_tol: must lie in (0, 1)")
    s = cfg["sweep"]
    if not 0 < s["m2_min"] < s["m2_max"]:
        e.append("[sweep] m2_min/m2_max: need 0 < m2_min < m2_max")
    try:
        _floats(s["m2_list"])
        _ints(s["n_values"])
        _floats(cfg["kernels"]["beta_values"])
    except ValueError as ex:
        e.append(f"list value: {ex}")
    return e


def _floats(s):
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in s.replace(";", ",").split(",") if x.strip()]


def format_config(cfg):
    out = []
    for sec in DEFAULTS:
        out.append(f"[{sec}]")
        for key in DEFAULTS[sec]:
            v = cfg[sec][key]
            out.append(f"{key} = {'' if v is None else (repr(v) if isinstance(v, float) else v)}")
        out.append("")
    return "\n".join(out)


_UNHASHED = {("sweep", "workers"), ("output", "dir")}


def config_hash(cfg):
    """Hash of the resolved config, ignoring keys that cannot change results."""
    c = {s: {k: (None if (s, k) in _UNHASHED else v) for k, v in kv.items()} for s, kv in cfg.items()}
    return hashlib.sha256(format_config(c).encode()).hexdigest()[:16]


def validate_config(path=None, overrides=()):
    """``(normalized text, [])`` or ``(None, errors)``."""
    try:
        cfg = load_config(path, overrides)
    except ConfigError as e:
        return None, e.errors
    return format_config(cfg), []


# --------------------------------------------------------------------------
# builders from config
# --------------------------------------------------------------------------

def _spec(cfg, n=None):
    from .lattice_kernels import ModelSpec
    m = cfg["model"]
    return ModelSpec(d=m["d"], L=m["L"], epsilon=m["epsilon"], n=m["n"] if n is None else n, g=m["g"])


def _quad(cfg):
    from .lattice_kernels import QuadratureSpec
    q = cfg["quadrature"]
    return QuadratureSpec(q["panels_per_octave"], q["panel_order"], q["k_min"],
                          (q["s_log_min"], q["s_log_max"]), q["s_step"], q["fft_points"], q["rel_tol"])


def _flowcfg(cfg):
    from .pipeline import FlowConfig
    f, r = cfg["flow"], cfg["remainder"]
    if f["smoothing"]:
        raise ConfigError(["[flow] smoothing: the smoothed final condition is not available "
                           "in this build"])
    t = f["target"]
    target = None if t == "default" else ("buffer" if t == "buffer" else int(t))
    return FlowConfig(tol_mu=f["tol_mu"], target=target, J_L=f["J_L"], y0_frac=f["y0_frac"],
                      remainder_amplitude=r["amplitude"] if r["enabled"] else 0.0, seed=r["seed"],
                      alpha_prime=f["alpha_prime"], extra_scales=f["extra_scales"],
                      massless_depth=cfg["decomposition"]["massless_depth"],
                      massless_target=f["massless_target"], tol_above=f["tol_above"],
                      floor_above=f["floor_above"], jmax_above=f["jmax_above"], C_D=f["C_D"], box=f["box"])


def _grid(cfg):
    from .pipeline import default_m2_grid
    s = cfg["sweep"]
    lst = _floats(s["m2_list"])
    return sorted(lst, reverse=True) if lst else default_m2_grid(s["m2_min"], s["m2_max"], s["per_decade"])


def _header(cfg, **extra):
    return {"rgflow_config_hash": config_hash(cfg), **extra}


class _Ctx:
    def __init__(self, cfg, outdir, log):
        self.cfg, self.out, self.log = cfg, outdir, log
        self.hdr = _header(cfg)
        self._sweeps = {}

    def path(self, name):
        return os.path.join(self.out, name)

    def sweep(self, n):
        if n not in self._sweeps:
            from .pipeline import run_sweep
            self._sweeps[n] = run_sweep(_spec(self.cfg, n), _grid(self.cfg), _flowcfg(self.cfg),
                                        _quad(self.cfg), self.cfg["decomposition"]["backend"],
                                        workers=self.cfg["sweep"]["workers"])
        return self._sweeps[n]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_kernels(c):
    from .lattice_kernels import generator_check, frac_laplacian_entry
    cfg = c.cfg
    q = _quad(cfg)
    R = cfg["kernels"]["window_radius"]
    ok = True
    lines = []
    for b in _floats(cfg["kernels"]["beta_values"]):
        rep = generator_check(b, R, cfg["model"]["d"], q)
        ok &= rep["passed"]
        lines.append(f"beta={b!r} row_sum={rep['max_abs_row_sum']:.3e} "
                     f"max_offdiag={rep['min_offdiag_violation']:.3e} "
                     f"decay_ratio={rep['decay_ratio_range']:.4f} "
                     f"certified={rep['certified']} {'PASS' if rep['passed'] else 'FAIL'}")
        if cfg["model"]["d"] == 1:
            xs = np.arange(R + 1)
            vals = frac_laplacian_entry(b, xs, 1, q)
            with open(c.path(f"kernel_beta_{b:g}.csv"), "w", newline="") as fh:
                for k, v in {**c.hdr, "beta": repr(b)}.items():
                    fh.write(f"# {k} = {v}\n")
                fh.write("x,value\n")
                for x, v in zip(xs, vals):
                    fh.write(f"{x},{v:.17g}\n")
    _write_text(c, "kernels_report.txt", lines)
    if not ok:
        raise NumericalFailure("generator check failed:\n" + "\n".join(lines))


def cmd_decompose(c):
    from .cov_decomp import decompose, DecompositionError
    cfg = c.cfg
    spec, q = _spec(cfg), _quad(cfg)
    d = cfg["decomposition"]
    try:
        dec = decompose(spec, d["m2"], d["j_max"], d["backend"], q, window_cap=d["window_cap"])
    except DecompositionError as e:
        raise NumericalFailure(str(e))
    dec.dump(c.path("decomposition"), c.hdr)
    lines = [f"backend = {d['backend']}", f"m2 = {d['m2']!r}", f"j_max = {d['j_max']}",
             f"completeness_residual = {dec.completeness['max_rel_residual']:.3e}"]
    lines += [f"diag[{j}] = {dec.diag[j]:.17g}" for j in range(1, dec.J + 1)]
    _write_text(c, "decomposition_report.txt", lines)


def cmd_coeffs(c):
    from .cov_decomp import Decomposition
    from .flow_coeffs import coefficients_for, coefficient_table, extract_a, PlateauError
    cfg = c.cfg
    spec, q = _spec(cfg), _quad(cfg)
    d = cfg["decomposition"]
    dec0 = Decomposition(spec, 0.0, d["massless_depth"], d["backend"], q)
    rc0, rs0, _ = coefficients_for(spec, 0.0, dec0, cfg["flow"]["alpha_prime"])
    try:
        fp = extract_a(rs0.beta, spec)
    except PlateauError as e:
        raise NumericalFailure(str(e))
    coefficient_table(rc0, rs0, c.path("coefficients_m2_0.csv"), c.hdr)
    if d["m2"] > 0:
        from .cov_decomp import mass_scale
        dec = Decomposition(spec, d["m2"], mass_scale(spec, d["m2"]) + cfg["flow"]["extra_scales"],
                            d["backend"], q)
        rc, rs, _ = coefficients_for(spec, d["m2"], dec, cfg["flow"]["alpha_prime"])
        coefficient_table(rc, rs, c.path(f"coefficients_m2_{d['m2']:g}.csv"), c.hdr)
    _write_text(c, "fixed_point.txt", [
        f"a = {fp.a:.17g}", f"sbar = {fp.sbar:.17g}", f"plateau_window = {fp.plateau_window}",
        f"plateau_residual = {fp.plateau_residual:.3e}",
        f"fixed_point_residual = {fp.fixed_point_residual():.3e}"])


def cmd_tune(c):
    from .critical_tuner import write_tuning
    sw = c.sweep(c.cfg["model"]["n"])
    write_tuning(sw.tunes, c.path("tuning.csv"), {**c.hdr, "nu_c": f"{sw.ctx.nu_c:.17g}",
                                                   "mu0_massless": f"{sw.ctx.mu0_0:.17g}",
                                                   "sbar": f"{sw.ctx.sbar:.17g}"})
    lines = [f"nu_c = {sw.ctx.nu_c:.17g}", f"mu0(0) = {sw.ctx.mu0_0:.17g}"]
    if sw.critical is not None:
        cp = sw.critical
        lines += [f"nu_c_fit = {cp.nu_c:.17g}", f"fit_theta = {cp.params['theta']:.6g}",
                  f"nu_c_last_value = {cp.alternatives['last_value']:.17g}",
                  f"nu_c_richardson = {cp.alternatives['richardson']:.17g}"]
        if cp.warning:
            lines.append(f"warning = {cp.warning}")
    for p in sw.points:
        dm = p.domain
        lines.append(f"m2={p.m2:.3e} j_m={p.j_m} residual/sbar^2={p.tune.residual / sw.ctx.sbar ** 2:.2e} "
                     f"max|y|/(omega sbar)={dm['y_buffer']:.3f} (to j_m: {dm['y_full']:.3f}) "
                     f"max|mu|/(sigma sbar^2)={dm['mu_full']:.3f}")
    _write_text(c, "tuning_report.txt", lines)


def _summary(c, n):
    from . import observables as obs
    from .pipeline import exponent_fits
    sw = c.sweep(n)
    fits = exponent_fits(sw)
    spec = sw.ctx.spec
    summ = {
        "n": n, "gamma_est": fits["gamma_chi"].value, "gamma_est_nu_slope": fits["gamma_nu"].value,
        "gamma_target": obs.gamma_target(n, spec.epsilon, spec.alpha),
        "gamma_deviation": fits["gamma_chi"].deviation,
        "gamma_nu_slope_deviation": fits["gamma_nu"].deviation,
        "gamma_stderr": fits["gamma_chi"].stderr,
        "fit_window_m2": f"{fits['window'][0]:.3e}..{fits['window'][1]:.3e}",
        "fit_window_t_decades": fits["gamma_chi"].decades,
        "nu_c": sw.ctx.nu_c,
    }
    if "alpha_H" in fits:
        a = fits["alpha_H"]
        summ.update({"alpha_H_est": a.value, "alpha_H_target": a.target, "alpha_H_deviation": a.deviation,
                     "alpha_H_plain": a.extra["plain"]})
    else:
        summ.update({"alpha_H_est": math.nan, "alpha_H_target": obs.alpha_H_target(n, spec.epsilon, spec.alpha)})
    return sw, fits, summ


def cmd_exponents(c):
    from . import observables as obs
    n = c.cfg["model"]["n"]
    sw, fits, summ = _summary(c, n)
    obs.write_results(sw.sus, sw.heat, c.path("results.csv"), summ, c.hdr)
    obs.write_plot_files(sw.sus, sw.heat, c.out, c.hdr)


def cmd_heat(c):
    from . import observables as obs
    n = c.cfg["model"]["n"]
    sw = c.sweep(n)
    lines = [f"{h.m2:.17g},{h.t:.17g},{h.c_H:.17g}" for h in sorted(sw.heat, key=lambda h: -h.m2)]
    with open(c.path("heat.csv"), "w", newline="") as fh:
        for k, v in c.hdr.items():
            fh.write(f"# {k} = {v}\n")
        fh.write("m2,t,c_H\n" + "\n".join(lines) + "\n")
    if n > 0:
        from .pipeline import exponent_fits
        a = exponent_fits(sw)["alpha_H"]
        _write_text(c, "heat_summary.txt", [f"alpha_H_est = {a.value:.17g}", f"alpha_H_target = {a.target:.17g}",
                                            f"alpha_H_plain = {a.extra['plain']:.17g}",
                                            f"stderr = {a.stderr:.3e}"])


def cmd_oracle(c):
    from .oracle import run_oracles, report
    from .pipeline import massless_context
    from .cov_decomp import Decomposition, mass_scale
    from .flow_engine import FlowTables
    from .critical_tuner import shoot_mu0
    cfg = c.cfg
    spec, q = _spec(cfg), _quad(cfg)
    fc = _flowcfg(cfg)
    ctx = massless_context(spec, q, cfg["decomposition"]["backend"], fc)
    m2 = 1e-4
    dec = Decomposition(spec, m2, mass_scale(spec, m2) + fc.extra_scales, cfg["decomposition"]["backend"], q)
    tab = FlowTables(spec, m2, dec, ctx.sbar)
    tr = shoot_mu0(tab, y0=ctx.y0, tol_mu=fc.tol_mu)
    res = run_oracles(spec, tab, tr.mu0_c_ld, y0=ctx.y0, quick=cfg["oracle"]["quick"])
    text = report(res, c.path("oracle_ledger.txt"))
    c.log(text)
    if not all(r.passed for r in res):
        raise NumericalFailure("oracle failures:\n" + text)


def cmd_all(c):
    for f in (cmd_kernels, cmd_decompose, cmd_coeffs, cmd_tune, cmd_exponents, cmd_heat, cmd_oracle):
        f(c)
    from . import observables as obs
    ns = _ints(c.cfg["sweep"]["n_values"])
    fits = {}
    for n in ns:
        _, f, _ = _summary(c, n)
        fits[n] = f["gamma_chi"]
    if 1 in fits:
        rows = obs.n_dependence_report(fits, c.cfg["model"]["epsilon"], 0.5 * (c.cfg["model"]["d"] + c.cfg["model"]["epsilon"]))
        lines = ["n,gamma_minus_1,target_minus_1,ratio,target_ratio,rel_dev"]
        lines += [f"{r['n']},{r['gamma_minus_1']:.17g},{r['target_minus_1']:.17g},{r['ratio']:.17g},"
                  f"{r['target_ratio']:.17g},{r['rel_dev']:.17g}" for r in rows]
        _write_text(c, "n_dependence.csv", lines)


def _write_text(c, name, lines):
    with open(c.path(name), "w", newline="") as fh:
        for k, v in c.hdr.items():
            fh.write(f"# {k} = {v}\n")
        fh.write("\n".join(lines) + "\n")


COMMANDS = {"kernels": cmd_kernels, "decompose": cmd_decompose, "coeffs": cmd_coeffs, "tune": cmd_tune,
            "exponents": cmd_exponents, "heat": cmd_heat, "oracle": cmd_oracle, "all": cmd_all}


def run(subcommand, config=None, overrides=(), outdir=None, stream=None):
    """Run one subcommand; returns the exit status."""
    stream = stream or sys.stdout
    log = lambda s: print(s, file=stream)
    if subcommand not in SUBCOMMANDS:
        log(f"unknown subcommand {subcommand!r}")
        return 2
    try:
        cfg = load_config(config, overrides)
        if subcommand != "validate_config":
            _flowcfg(cfg)
    except ConfigError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    if subcommand == "validate_config":
        log(format_config(cfg))
        return 0
    out = os.environ.get("RGFLOW_OUT") or outdir or cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    c = _Ctx(cfg, out, log)
    try:
        COMMANDS[subcommand](c)
    except Exception as e:
        with open(os.path.join(out, "diagnostics.txt"), "w", newline="") as fh:
            fh.write(f"# rgflow_config_hash = {config_hash(cfg)}\n")
            fh.write(f"subcommand = {subcommand}\nerror = {type(e).__name__}: {e}\n\n")
            fh.write(traceback.format_exc())
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    log(f"{subcommand}: ok (config {config_hash(cfg)}) -> {out}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="rgflow", description="RG flow pipeline for long-range O(n) models")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("config_path", nargs="?", help="config file (validate_config)")
    ap.add_argument("--config", "-c")
    ap.add_argument("--out", "-o")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    for flag, key in (("--n", "model.n"), ("--d", "model.d"), ("--L", "model.L"),
                      ("--epsilon", "model.epsilon"), ("--backend", "decomposition.backend"),
                      ("--m2", "decomposition.m2"), ("--tol-mu", "flow.tol_mu"),
                      ("--workers", "sweep.workers")):
        ap.add_argument(flag, dest=key.replace(".", "__"))
    a = ap.parse_args(argv)
    overrides = list(a.set)
    for dest, val in vars(a).items():
        if "__" in dest and val is not None:
            overrides.append(f"{dest.replace('__', '.')}={val}")
    return run(a.subcommand, a.config or a.config_path, overrides, a.out)


if __name__ == "__main__":
    sys.exit(main())
