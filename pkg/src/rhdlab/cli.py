"""Command-line runner for the experiment suites.

Usage: ``rhdlab <command> [--config FILE] [--out DIR] [--kappa K] [--seed S]
[--samples N] [--k ORDER] [--tol TOL]``.

Exit codes: 0 all criteria pass, 1 a criterion fails, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ParamError, RHDError
from .model import FluidParams, ValidatedParams, validate_params

COMMANDS = ("dispersion", "semigroup-check", "linear-decay", "lower-bound",
            "nonlinear-run", "energy-audit", "all")
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    command: str = "all"
    R: float = 1.0
    C_v: float = 1.5
    mu: float = 1.0
    mu_prime: float = 1.0 / 3.0
    kappa: float = 1.0
    seed: int = 7
    samples: int = 100
    k: int | None = None
    tol: float | None = None
    out: str = "rhd_out"
    radial_nodes: int = 4097
    width: float = 2.0
    t_min: float = 10.0
    t_max: float = 1000.0
    n_times: int = 60
    lb_t_min: float = 1.0
    lb_eps: float = 1e-2
    lb_K: float = 1e2
    box_N: int = 32
    box_L: float = 16.0 * np.pi
    dt: float = 0.1
    t_final: float = 50.0
    snapshot_every: float = 5.0
    amplitude: float = 1e-2
    audit_N: int = 16
    audit_dt: float = 0.05
    audit_t_final: float = 5.0
    delta: float = 0.05
    plot: bool = False
    params: ValidatedParams = field(default=None, repr=False, compare=False)

    def resolved(self):
        d = dataclasses.asdict(self)
        d.pop("params")
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name not in ("params", "command")}
_POSITIVE = ("tol", "width", "t_min", "t_max", "lb_t_min", "lb_eps", "lb_K", "box_L", "dt",
             "t_final", "snapshot_every", "amplitude", "audit_dt", "audit_t_final", "delta")


def _coerce(key, raw, line=None):
    kind = _FIELDS[key].type
    try:
        if "bool" in kind:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(key, line, f"cannot parse {raw!r}") from None


def read_config_file(path):
    """Flat key=value lines; '#' starts a comment. Returns {key: (value, line)}."""
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, lineno, "expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(key, lineno, "unknown key")
        out[key] = (_coerce(key, raw, lineno), lineno)
    return out


def parse_config(path=None, flags: dict | None = None, command: str = "all") -> ExperimentConfig:
    """Build a config from an optional file, then apply flag overrides."""
    if command not in COMMANDS:
        raise ConfigError(command, None, "unknown command")
    values, lines = {}, {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError("config", None, f"no such file {path}")
        for key, (v, ln) in read_config_file(path).items():
            values[key], lines[key] = v, ln
    for key, v in (flags or {}).items():
        if v is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(key, None, "unknown key")
        values[key] = v
        lines.pop(key, None)
    cfg = ExperimentConfig(command=command, **values)
    for key in _POSITIVE:
        v = getattr(cfg, key)
        if v is not None and not v > 0:
            raise ConfigError(key, lines.get(key), "must be positive")
    for key in ("samples", "radial_nodes", "n_times"):
        if getattr(cfg, key) < 1:
            raise ConfigError(key, lines.get(key), "must be positive")
    if cfg.k is not None and not 0 <= cfg.k <= 4:
        raise ConfigError("k", lines.get("k"), "must be in 0..4")
    if cfg.box_N not in (16, 32, 64, 128) or cfg.audit_N not in (16, 32, 64, 128):
        key = "box_N" if cfg.box_N not in (16, 32, 64, 128) else "audit_N"
        raise ConfigError(key, lines.get(key), "must be 16, 32, 64 or 128")
    try:
        cfg.params = validate_params(FluidParams(R=cfg.R, C_v=cfg.C_v, mu=cfg.mu,
                                                 mu_prime=cfg.mu_prime, kappa=cfg.kappa))
    except ParamError as e:
        raise ConfigError(e.field, lines.get(e.field), str(e)) from None
    return cfg


# ---------------------------------------------------------------- outputs

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


class Writer:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def json(self, name, payload):
        doc = {"version": __version__, "config": self.cfg.resolved(), "result": payload}
        path = self.dir / f"{name}.json"
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        self.files.append(path.name)

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        path = self.dir / f"{name}.csv"
        path.write_text(buf.getvalue())
        self.files.append(path.name)

    def svg(self, name, series, xlabel, ylabel, loglog=True):
        if not self.cfg.plot:
            return
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        for label, (x, y) in series.items():
            ax.plot(x, y, label=label)
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = self.dir / f"{name}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        self.files.append(path.name)

    def metadata(self, command, status):
        meta = {"command": command, "status": status, "files": self.files,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}
        (self.dir / f"{command}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")


# ---------------------------------------------------------------- suites
# Each suite returns a list of (criterion name, passed) pairs.

def run_dispersion(cfg, out: Writer):
    from .spectral.analysis import asymptotic_fit, pointwise_bound_fit, spectral_gap_scan

    p = cfg.params
    tol = cfg.tol or 0.01
    low = asymptotic_fit(p, "low", tol=tol)
    high = asymptotic_fit(p, "high", tol=tol)
    gap = spectral_gap_scan(p)
    bound = pointwise_bound_fit(p, np.concatenate([np.geomspace(1e-3, 1e-2, 8), np.geomspace(1e-2, 1e3, 24)]),
                                np.geomspace(1e-2, 1e2, 24), eps=1e-2)
    lead = low.coefficients[0]
    out.json("dispersion", {
        "a1_lead": {"fitted": lead.fitted, "target": lead.target, "rel_err": lead.rel_err},
        "low": low.to_dict(), "high": high.to_dict(), "gap": gap.to_dict(),
        "pointwise_bound": bound.to_dict(),
    })
    return [("dispersion.low", low.passed), ("dispersion.high", high.passed),
            ("dispersion.gap", gap.passed), ("dispersion.pointwise", bound.passed)]


def run_semigroup_check(cfg, out: Writer):
    from .spectral.analysis import semigroup_oracle_sweep

    sweep = semigroup_oracle_sweep(cfg.params, cfg.samples, cfg.seed)
    tol = cfg.tol or 1e-8
    out.json("semigroup-check", sweep.to_dict() | {"tol": tol})
    return [("semigroup-check", sweep.passed(tol=tol))]


def _decay_setup(cfg):
    from .linear import RadialPropagator, radial_grid

    grid = radial_grid(cfg.radial_nodes)
    return grid, RadialPropagator(grid, cfg.params)


def run_linear_decay(cfg, out: Writer):
    from .linear import decay_curve, decay_target, envelope_constant, fit_decay_exponent, gaussian_profile

    p = cfg.params
    tol = cfg.tol or 0.05
    grid, prop = _decay_setup(cfg)
    times = np.geomspace(cfg.t_min / 10.0, cfg.t_max, cfg.n_times)
    window = (cfg.t_min, cfg.t_max)
    amps = (1.0, 0.5, 0.5, 0.5)
    prof = gaussian_profile(amps, cfg.width, grid)
    ks = [cfg.k] if cfg.k is not None else [0, 1, 2]
    results, checks, series = {}, [], {}
    for k in ks:
        curve = decay_curve(prof, k, times, p, prop)
        fit = fit_decay_exponent(curve, window, tol=tol)
        data_norm = prof.meta["l1"] + _sobolev(prof, k)
        results[f"k{k}"] = fit.to_dict() | {
            "envelope_constant": envelope_constant(curve, decay_target(k), data_norm)}
        out.csv(f"linear-decay_k{k}", ["t", "norm"], curve.rows())
        series[f"k={k}"] = (curve.times, curve.norms)
        checks.append((f"linear-decay.k{k}", fit.passed))
    vprof = gaussian_profile(amps, cfg.width, grid, density_order=3.0)
    vcurve = decay_curve(vprof, 0, times, p, prop)
    vfit = fit_decay_exponent(vcurve, window, target=decay_target(0, 3.0), tol=tol)
    results["vanishing_order3"] = vfit.to_dict() | {
        "envelope_constant": envelope_constant(vcurve, -1.5, _sobolev(vprof, 0))}
    out.csv("linear-decay_vanishing", ["t", "norm"], vcurve.rows())
    checks.append(("linear-decay.vanishing", vfit.passed))
    out.json("linear-decay", results)
    out.svg("linear-decay", series, "t", "norm")
    return checks


def _sobolev(prof, k):
    from .linear import sobolev_norm

    return sobolev_norm(prof, k)


def run_lower_bound(cfg, out: Writer):
    from .linear import gaussian_profile, lower_bound_scan

    grid, prop = _decay_setup(cfg)
    prof = gaussian_profile((1.0, 0.05, 0.05, 0.05), cfg.width, grid)
    times = np.geomspace(cfg.lb_t_min, cfg.t_max, cfg.n_times)
    rep = lower_bound_scan(prof, times, cfg.params, cfg.lb_eps, cfg.lb_K, prop, degeneracy_search=True)
    out.csv("lower-bound", ["t", "norm", "ratio", "F"],
            [(t, r * (1 + t) ** -0.75, r, f) for t, r, f in zip(rep.times, rep.ratio_series, rep.F_values)])
    out.json("lower-bound", rep.summary() | {
        "T_terms_min": {k: float(v.min()) for k, v in rep.T_terms.items()}})
    return [("lower-bound", rep.passed)]


def _solver_config(cfg, **over):
    from .solver import GridSpec, SolverConfig

    base = dict(grid=GridSpec(cfg.box_N, cfg.box_L), params=cfg.params, dt=cfg.dt,
                t_final=cfg.t_final, snapshot_every=cfg.snapshot_every,
                amplitude=cfg.amplitude, seed=cfg.seed)
    base.update(over)
    return SolverConfig(**base)


def run_nonlinear(cfg, out: Writer):
    from .solver import flux_residual, init_grid, recover_flux_q, run, write_snapshot

    scfg = _solver_config(cfg)
    traj = run(scfg)
    ctx = init_grid(scfg.grid, scfg.params, scfg.dt)
    m = ctx.ifft(traj.final[4])
    q, _ = recover_flux_q(m, ctx)
    res = flux_residual(m, q, ctx)
    d = traj.diagnostics
    drift = float(np.max(np.abs(d["mean_n"] - d["mean_n"][0])))
    mass_scale = max(abs(float(d["mean_n"][0])), float(np.max(np.abs(traj.snapshots[0][0]))), 1e-300)
    out.csv("nonlinear-run", ["t", "max_n", "max_m", "cfl"],
            list(zip(d["t"], d["max_n"], d["max_m"], d["cfl"])))
    write_snapshot(out.dir / "nonlinear-run_final.rhd", ctx, traj.final, with_q=True)
    out.files.append("nonlinear-run_final.rhd")
    out.json("nonlinear-run", {
        "bounded": traj.bounded(), "halvings": traj.halvings, "q_residual": res,
        "mass_drift_relative": drift / mass_scale,
        "final_max_n": float(d["max_n"][-1]), "final_max_m": float(d["max_m"][-1]),
        "note": "periodic box; boundedness and consistency only, decay rates come from the radial propagator",
    })
    return [("nonlinear-run.bounded", traj.bounded()), ("nonlinear-run.q_residual", res < 1e-10),
            ("nonlinear-run.mass", drift <= 1e-12 * mass_scale)]


def run_energy_audit(cfg, out: Writer):
    from .energy import F_from_curves, audit_apriori, bootstrap_G
    from .linear import decay_curve, gaussian_profile
    from .solver import GridSpec, run

    scfg = _solver_config(cfg, grid=GridSpec(cfg.audit_N, cfg.box_L), dt=cfg.audit_dt,
                          t_final=cfg.audit_t_final, snapshot_every=0.1)
    rep = audit_apriori(run(scfg), delta=cfg.delta)
    grid, prop = _decay_setup(cfg)
    prof = gaussian_profile((1.0, 0.5, 0.5, 0.5), cfg.width, grid)
    times = np.geomspace(1.0, cfg.t_max, cfg.n_times)
    curves = {k: decay_curve(prof, k, times, cfg.params, prop) for k in range(3)}
    t, F = F_from_curves(curves)
    G = bootstrap_G(t, F, 2)
    slowed = {i: F[i] * (1.0 + t) ** 2 for i in F}
    G_slow = bootstrap_G(t, slowed, 2)
    out.json("energy-audit", {"audit": rep.to_dict(), "bootstrap": G.to_dict(),
                              "bootstrap_slowed": G_slow.to_dict()})
    out.csv("energy-audit_G", ["t", "G", "G_slowed"], list(zip(t, G.G, G_slow.G)))
    return [("energy-audit.margin", rep.passed),
            ("energy-audit.bootstrap", G.verdict == "bounded"),
            ("energy-audit.bootstrap_slowed", G_slow.verdict == "unbounded")]


SUITES = {
    "dispersion": run_dispersion,
    "semigroup-check": run_semigroup_check,
    "linear-decay": run_linear_decay,
    "lower-bound": run_lower_bound,
    "nonlinear-run": run_nonlinear,
    "energy-audit": run_energy_audit,
}


def dispatch(cfg: ExperimentConfig, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    names = list(SUITES) if cfg.command == "all" else [cfg.command]
    out = Writer(cfg)
    first_fail = None
    try:
        for name in names:
            for crit, ok in SUITES[name](cfg, out):
                print(f"{'PASS' if ok else 'FAIL'} {crit}", file=stream)
                if not ok and first_fail is None:
                    first_fail = crit
    except RHDError as e:
        print(f"NUMERICAL FAILURE {type(e).__name__}: {e}", file=stream)
        out.metadata(cfg.command, "numerical-failure")
        return EXIT_NUMERIC
    if first_fail is not None:
        print(f"first failing criterion: {first_fail}", file=stream)
        out.metadata(cfg.command, "fail")
        return EXIT_FAIL
    out.metadata(cfg.command, "pass")
    return EXIT_PASS


def build_parser():
    ap = argparse.ArgumentParser(prog="rhdlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config")
    ap.add_argument("--out")
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--k", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--plot", action="store_const", const=True, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = parse_config(args.config, flags, args.command)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
