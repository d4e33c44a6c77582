"""Command-line entry point: ``euler-maxwell <subcommand> [--config F] [--seed N] [--check] [--out D]``.

Each run writes its CSV/JSON artifacts, a plotting script where a CSV holds a
time series or a curve, and ``manifest.json`` (config hash, versions, wall
time, file digests).  Files are staged in a temporary directory and moved
into place only after the run and its checks finish, so a failed run leaves
no partial output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load_config


def fmt(x) -> str:
    """17 significant digits, '.' decimal separator."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class RunOutput:
    files: dict = field(default_factory=dict)  # name -> text
    checks: list = field(default_factory=list)


PLOT_TEMPLATE = '''"""Plot {csv_name}. Generated file; needs pandas and matplotlib."""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("{csv_name}")
fig, ax = plt.subplots()
for col in {ycols!r}:
    ax.plot(df["{xcol}"], df[col].abs(), label=col)
ax.set_xscale("{xscale}")
ax.set_yscale("log")
ax.set_xlabel("{xcol}")
ax.legend()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{stem}.png", dpi=150)
'''


def plot_script(csv_name, xcol, ycols, xscale="log") -> str:
    return PLOT_TEMPLATE.format(csv_name=csv_name, xcol=xcol, ycols=list(ycols), xscale=xscale,
                                stem=Path(csv_name).stem)


# ---------------------------------------------------------------------------
# subcommands


def run_roots(cfg: ExperimentConfig) -> RunOutput:
    from .roots import reconstruct_coefficients, solve_characteristic

    p = cfg.params
    kmag = np.geomspace(p["kmin"], p["kmax"], p["n"])
    sigma, beta, omega = solve_characteristic(kmag)
    resid = np.abs(sigma**3 + sigma**2 + (1 + kmag**2) * sigma + kmag**2) / (1 + kmag**2)
    a2, a1, a0 = reconstruct_coefficients(sigma, beta, omega)
    coef = np.maximum.reduce([np.abs(a2 - 1), np.abs(a1 - (1 + kmag**2)) / (1 + kmag**2),
                              np.abs(a0 - kmag**2) / kmag**2])
    header = ["kmag", "sigma", "beta", "omega", "residual", "coef_rel_error"]
    out = RunOutput()
    out.files["roots.csv"] = csv_text(header, zip(kmag, sigma, beta, omega, resid, coef))
    out.files["plot_roots.py"] = plot_script("roots.csv", "kmag", ["sigma", "beta", "omega"])
    out.checks = [
        Check("sigma in (-1, 0)", bool(np.all((sigma > -1) & (sigma < 0))),
              f"range [{sigma.min():.3e}, {sigma.max():.3e}]"),
        Check("beta in (-1/2, 0)", bool(np.all((beta > -0.5) & (beta < 0))),
              f"range [{beta.min():.3e}, {beta.max():.3e}]"),
        Check("omega > sqrt(6)/3", bool(np.all(omega > math.sqrt(6) / 3)),
              f"min {omega.min():.6f}"),
        Check("sigma strictly decreasing", bool(np.all(np.diff(sigma) < 0)),
              f"max diff {np.diff(sigma).max():.3e}"),
        Check("cubic residual < 1e-12", bool(resid.max() < 1e-12), f"max {resid.max():.3e}"),
        Check("coefficient reconstruction < 1e-10", bool(coef.max() < 1e-10),
              f"max {coef.max():.3e}"),
    ]
    return out


def _parse_state(spec, k, rng):
    from .propagator import NCOMP, random_compatible

    if spec == "random":
        return random_compatible(rng, np.asarray(k))
    pairs = np.asarray(spec, dtype=float)
    if pairs.shape != (NCOMP, 2):
        raise ConfigError("propagate.state: expected 10 [re, im] pairs")
    return pairs[:, 0] + 1j * pairs[:, 1]


def run_propagate(cfg: ExperimentConfig) -> RunOutput:
    from .propagator import SpectralState, check_compatible, propagate

    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    k = np.asarray(p["k"], dtype=float)
    y0 = _parse_state(p["state"], k, rng)
    s0 = SpectralState.from_array(k, y0)
    check_compatible(s0)
    names = ["rho", "u_x", "u_y", "u_z", "E_x", "E_y", "E_z", "B_x", "B_y", "B_z"]
    header = (["t"] + [f"{n}_{part}" for n in names for part in ("re", "im")]
              + ["norm", "gauss_residual", "divB_residual"])
    rows = []
    for t in p["times"]:
        st = propagate(float(t), s0, cfg.gamma)
        y = st.to_array()
        rows.append([t, *np.column_stack([y.real, y.imag]).ravel(), np.linalg.norm(y),
                     *st.constraint_residual()])
    out = RunOutput()
    out.files["propagate.csv"] = csv_text(header, rows)
    out.files["plot_propagate.py"] = plot_script("propagate.csv", "t", ["norm"], "linear")
    return out


def run_verify_linear(cfg: ExperimentConfig) -> RunOutput:
    from .oracle import compare_with_propagator

    p = cfg.params
    t0 = time.perf_counter()
    cases = compare_with_propagator(p["n_cases"], cfg.seed, p["kmin"], p["kmax"], p["t_max"],
                                    tuple(p["gammas"]), p["tol"])
    elapsed = time.perf_counter() - t0
    header = ["case", "kmag", "t", "gamma", "rel_error", "identity_error"]
    rows = [(i, np.linalg.norm(c.k), c.t, c.gamma, c.rel_error, c.identity_error)
            for i, c in enumerate(cases)]
    worst = max(c.rel_error for c in cases)
    ident = max(c.identity_error for c in cases)
    out = RunOutput()
    out.files["verify_linear.csv"] = csv_text(header, rows)
    out.files["verify_linear.json"] = json_text(
        {"n_cases": len(cases), "max_rel_error": worst, "max_identity_error": ident})
    out.checks = [
        Check("propagator vs oracle <= 1e-8", worst <= 1e-8, f"max {worst:.3e}"),
        Check("t=0 identity <= 1e-10", ident <= 1e-10, f"max {ident:.3e}"),
        Check("runtime < 10 s", elapsed < 10, f"{elapsed:.2f} s"),
    ]
    return out


def run_lyapunov(cfg: ExperimentConfig) -> RunOutput:
    from .lyapunov import (KappaWeights, bound_violation, equivalence_constants,
                           fit_pointwise_bound, linear_trajectories, sample_wavevectors,
                           verify_dissipation)

    p = cfg.params
    kappa = KappaWeights(*p["kappa"])
    eq = equivalence_constants(kappa, cfg.gamma, p["n_equivalence"], cfg.seed, p["kmin"],
                               p["kmax"])
    rng = np.random.default_rng(cfg.seed + 1)
    ks = sample_wavevectors(rng, p["n_modes"], max(p["kmin"], 1e-3), min(p["kmax"], 1e2))
    lam, rep = verify_dissipation(kappa, ks, cfg.gamma, seed=cfg.seed + 2)
    train = linear_trajectories(p["n_train"], seed=cfg.seed + 3, gamma=cfg.gamma)
    valid = linear_trajectories(p["n_validate"], seed=cfg.seed + 4, gamma=cfg.gamma)
    fit = fit_pointwise_bound(train, cfg.gamma)
    viol = bound_violation(fit, valid)
    summary = {
        "kappa": list(kappa.as_tuple()),
        "admissible_kappa": kappa.is_admissible(),
        "equivalence": eq,
        "lambda_fitted": lam,
        "dissipation_report": rep,
        "pointwise_bound": {"C": fit.C, "lambda": fit.lambda_,
                            "train_max_violation": fit.max_violation,
                            "validation_max_violation": viol, **fit.details},
    }
    out = RunOutput()
    out.files["lyapunov.json"] = json_text(summary)
    out.checks = [
        Check("equivalence c_low > 0", eq["c_low"] > 0, f"c_low {eq['c_low']:.6f}"),
        Check("dissipation lambda > 0", lam > 0, f"lambda {lam:.6e}"),
        Check("pointwise bound holds on validation set", viol <= 0,
              f"C {fit.C:.6f}, lambda {fit.lambda_:.6f}, worst log-excess {viol:.3e}"),
    ]
    return out


def run_decay_fit(cfg: ExperimentConfig) -> RunOutput:
    from .decay import (DECAY_INDEX_CASES, EXPECTED_EXPONENTS, decay_index, default_times,
                        run_decay_benchmark)

    p = cfg.params
    times = default_times(tuple(p["window"]), p["n_times"])
    bench = run_decay_benchmark(p["width"], cfg.seed, times, tuple(p["window"]), p["magnetic"],
                                cfg.gamma, p["n_radial"])
    keys = sorted(bench.series)
    header = ["t"] + [f"{kind}_{comp}" for kind, comp in keys]
    rows = [[t] + [bench.series[key][i] for key in keys] for i, t in enumerate(times)]
    fits = {f"{kind}_{comp}": {"exponent": f.exponent, "r2": f.r2, "window": list(f.window),
                               "classification": f.classification,
                               "early_exponent": f.early_exponent,
                               "late_exponent": f.late_exponent,
                               "expected": EXPECTED_EXPONENTS.get((kind, comp))}
            for (kind, comp), f in bench.fits.items()}
    out = RunOutput()
    out.files["decay.csv"] = csv_text(header, rows)
    out.files["decay_fits.json"] = json_text({"fits": fits, "data": list(bench.data_names),
                                              "max_refinement_change": bench.max_refinement_change})
    out.files["plot_decay.py"] = plot_script("decay.csv", "t", header[1:])
    checks = [Check("quadrature converged (< 1e-4)", bench.max_refinement_change < 1e-4,
                    f"max change {bench.max_refinement_change:.3e}")]
    for key, target in EXPECTED_EXPONENTS.items():
        tol = 0.10 if key[0] == "l2" else 0.15
        e = bench.fits[key].exponent
        checks.append(Check(f"{key[0]} exponent of {key[1]} = {target} +/- {tol}",
                            abs(e - target) <= tol, f"fitted {e:.4f}"))
    cls = bench.fits[("l2", "rho")].classification
    checks.append(Check("rho super-polynomial", cls == "super-polynomial", cls))
    bad = [(a, decay_index(*a), want) for a, want in DECAY_INDEX_CASES if decay_index(*a) != want]
    checks.append(Check(f"decay_index table ({len(DECAY_INDEX_CASES)} cases)", not bad,
                        f"mismatches {bad}"))
    out.checks = checks
    return out


def run_simulate(cfg: ExperimentConfig, staging: Path) -> RunOutput:
    from .lyapunov import KappaWeights
    from .nonlinear import (SERIES_COLUMNS, convergence_order, evolve, propagate_linear,
                            random_initial_field, simulate, stable_dt, symmetric_residual)

    p = cfg.params
    f0 = random_initial_field(p["n_grid"], p["box_len"], p["amplitude"], cfg.seed, cfg.gamma)
    dt = stable_dt(p["n_grid"], p["box_len"], cfg.gamma, p["cfl"])
    snap_dir = None
    if p["snapshot_every"]:
        snap_dir = staging / "snapshots"
        snap_dir.mkdir()
    res = simulate(f0, p["n_steps"], dt, N=p["N"], kappa=KappaWeights(*p["kappa"]),
                   every=p["every"], cfl=p["cfl"], snapshot_dir=snap_dir,
                   snapshot_every=p["snapshot_every"])
    lin0 = random_initial_field(p["n_grid"], p["box_len"], p["linear_amplitude"], cfg.seed,
                                cfg.gamma)
    a = evolve(lin0, dt, p["linear_steps"]).stacked()
    b = propagate_linear(lin0, p["linear_steps"] * dt).stacked()
    lin_err = float(np.sqrt(np.sum((a - b) ** 2) / np.sum(b**2)))
    order = convergence_order(f0, p["order_steps"] * dt, dt, 4)
    sym = max(symmetric_residual(f0), symmetric_residual(res.final))
    sym_full = max(symmetric_residual(f0, projected=False),
                   symmetric_residual(res.final, projected=False))
    summary = {
        "dt": dt,
        "n_steps": p["n_steps"],
        "max_energy_increase_relative": res.max_energy_increase(),
        "constraint_growth": res.constraint_growth(),
        "lambda_fit": res.fitted_lambda(),
        "linear_regime_rel_error": lin_err,
        "dt_halving_order": order,
        "symmetric_residual": sym,
        "symmetric_residual_unprojected": sym_full,
        "E_N_initial": res.energy0,
        "E_N_final": res.rows[-1][2],
    }
    out = RunOutput()
    out.files["simulate.csv"] = csv_text(SERIES_COLUMNS, res.rows)
    out.files["simulate.json"] = json_text(summary)
    out.files["plot_simulate.py"] = plot_script("simulate.csv", "t", ["E_N", "D_N", "E_N_h",
                                                                      "D_N_h"], "linear")
    out.checks = [
        Check("constraint growth <= 1e-8", summary["constraint_growth"] <= 1e-8,
              f"{summary['constraint_growth']:.3e}"),
        Check("E_N non-increasing within 1e-10 E_N(0) per step",
              summary["max_energy_increase_relative"] <= 1e-10,
              f"max relative step increase {summary['max_energy_increase_relative']:.3e}"),
        Check("linear regime matches propagator to 1e-10", lin_err <= 1e-10, f"{lin_err:.3e}"),
        Check("dt-halving order >= 2", order >= 2, f"{order:.4f}"),
        Check("symmetric-variable residual <= 1e-6", sym <= 1e-6,
              f"{sym:.3e} on retained modes, {sym_full:.3e} with discarded modes"),
        Check("lambda_fit > 0", summary["lambda_fit"] > 0, f"{summary['lambda_fit']:.4f}"),
    ]
    return out


RUNNERS = {
    "roots": run_roots,
    "propagate": run_propagate,
    "verify-linear": run_verify_linear,
    "lyapunov": run_lyapunov,
    "decay-fit": run_decay_fit,
}


# ---------------------------------------------------------------------------
# driver


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(cfg, files, wall, checks, argv):
    return {
        "subcommand": cfg.subcommand,
        "argv": argv,
        "config": cfg.resolved(),
        "config_sha256": cfg.digest(),
        "versions": {"euler_maxwell": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": wall,
        "files": files,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
    }


def execute(cfg: ExperimentConfig, check: bool = False, argv=None, stream=sys.stdout) -> int:
    """Run one experiment and publish its files atomically; returns the exit status."""
    out_dir = cfg.output_dir
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir.parent))
    try:
        t0 = time.perf_counter()
        if cfg.subcommand == "simulate":
            result = run_simulate(cfg, staging)
        else:
            result = RUNNERS[cfg.subcommand](cfg)
        wall = time.perf_counter() - t0
        for name, text in result.files.items():
            (staging / name).write_text(text, newline="")
        digests = {str(p.relative_to(staging)): _sha256(p)
                   for p in sorted(staging.rglob("*")) if p.is_file()}
        (staging / "manifest.json").write_text(
            json_text(_manifest(cfg, digests, wall, result.checks, argv or [])))
        failed = [c for c in result.checks if not c.passed]
        if check:
            for c in result.checks:
                print(c.line(), file=stream)
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in sorted(staging.rglob("*")):
            target = out_dir / p.relative_to(staging)
            if p.is_dir():
                target.mkdir(exist_ok=True)
            else:
                os.replace(p, target)
        return 1 if check and failed else 0
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="euler-maxwell", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="YAML configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--check", action="store_true",
                        help="evaluate acceptance checks; exit 1 if any fails")
        sp.add_argument("--out", type=str, default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.subcommand, seed=args.seed, output_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return execute(cfg, check=args.check, argv=argv)


if __name__ == "__main__":
    sys.exit(main())
