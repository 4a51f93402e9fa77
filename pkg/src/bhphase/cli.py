"""Command-line runner: ``bhphase simulate|verify|sweep --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure. Every run writes ``manifest.json`` into the output
directory, including failed runs.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .coherent import sample_husimi_coherent, sample_measure
from .config import RunConfig, parse_config, with_overrides
from .dynamics import GeneratorSpec, TrajectoryEnsemble, evolve_pde, integrate_gpe
from .errors import ConfigError, NumericalError, VerificationError
from .expectation import expect_fock, expect_from_ensemble, expect_from_Q
from .fock import HamiltonianParams, expectation_fock, random_density
from .grid import PhaseGrid2, l2_norm, mass
from .io import write_ensemble, write_grid, write_json, write_table
from .oracle import FockOracle, realtime_residual, relative_residual
from .thermo import BlochSpec, apply_bloch_Q, classical_gibbs_grid, evolve_bloch

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4
THREADS_ENV = "BHPHASE_THREADS"
SIMULATE_TASKS = ("exact", "pde", "ensemble", "thermo")
VERIFY_TASKS = ("verify-residual", "verify-scaling", "verify-identity")
SCALING_WINDOW = (-1.3, -0.7)


def _pairs(M):
    return [(j, k) for j in range(M) for k in range(j, M)]


def _observable_columns(values, M):
    """values: callable (j, k) -> array over time."""
    cols = {}
    for j, k in _pairs(M):
        v = np.asarray(values(j, k))
        cols[f"re_E{j}{k}"] = v.real
        cols[f"im_E{j}{k}"] = v.imag
    return cols


class _Writer:
    def __init__(self, cfg: RunConfig, out: Path):
        self.csv = "csv" in cfg.output.formats
        self.json = "json" in cfg.output.formats
        self.out = out
        self.files = []

    def table(self, name, cols):
        if self.csv:
            self.files.append(write_table(self.out / f"{name}.csv", cols).name)

    def grid(self, name, grid, header=None):
        if self.csv:
            write_grid(self.out / f"{name}.csv", grid, header)
            self.files += [f"{name}.csv", f"{name}.json"]

    def ensemble(self, name, ens, header=None):
        if self.csv:
            write_ensemble(self.out / f"{name}.csv", ens, header)
            self.files += [f"{name}.csv", f"{name}.json"]

    def rows(self, name, rows):
        if self.json:
            (self.out / f"{name}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
            self.files.append(f"{name}.jsonl")


def task_exact(cfg, w):
    params, N = cfg.model.params(), cfg.model.N
    orc = FockOracle(params, N)
    v0 = orc.coherent_density(cfg.x0_complex())[:, 0]
    v0 = v0 / np.linalg.norm(v0)
    times = np.linspace(0, cfg.numerics.t_final, cfg.numerics.n_out + 1)
    states = [orc.prop.evolve(v0, t) for t in times]
    rhos = [np.outer(s, s.conj()) for s in states]
    E = {(j, k): np.array([expectation_fock(r, j, k, orc.basis) for r in rhos]) for j, k in _pairs(params.M)}
    norm = np.array([np.linalg.norm(s) for s in states])
    energy = np.array([np.vdot(s, orc.H @ s).real for s in states])
    w.table("observables", {"t": times, **_observable_columns(lambda j, k: E[j, k], params.M),
                            "energy": energy, "norm": norm})
    w.rows("reports", [expect_fock(r, jk, orc.basis, t).to_row()
                       for t, r in zip(times[-1:], rhos[-1:]) for jk in _pairs(params.M)])
    e0 = energy[0]
    return {"norm_drift": float(np.abs(norm - 1).max()),
            "energy_drift": float(np.abs(energy - e0).max() / max(abs(e0), 1.0)),
            "basis_size": orc.basis.size}


def task_pde(cfg, w):
    params, N, num = cfg.model.params(), cfg.model.N, cfg.numerics
    spec = GeneratorSpec(num.kind, params, N, num.order)
    orc = FockOracle(params, N)
    rho0 = orc.coherent_density(cfg.x0_complex())
    g0 = orc.husimi_grid(rho0, num.n_p, num.n_q, time=0.0)
    g1 = evolve_pde(g0, spec, num.t_final, num.dt, num.cfl)
    header = {"kind": num.kind, "order": num.order, "N": N}
    w.grid("grid_initial", g0, header)
    w.grid("grid_final", g1, header)
    m0 = mass(g0)
    metrics = {"mass_drift": abs(mass(g1) - m0) / abs(m0), "steps": g1.meta.get("steps", 0)}
    if num.kind == "Q":
        ref = orc.husimi_grid(orc.rho_t(rho0, num.t_final), num.n_p, num.n_q)
        metrics["l2_error_vs_fock"] = l2_norm(g1.values - ref.values) / l2_norm(ref.values)
    return metrics


def _ensemble_run(params, N, x0, t_final, n_out, samples, seed):
    xs = sample_husimi_coherent(x0, N, samples, seed)
    times, traj = integrate_gpe(xs, params, N, t_final, t_final / n_out if t_final else 1.0)
    return times, traj


def task_ensemble(cfg, w):
    params, N, num = cfg.model.params(), cfg.model.N, cfg.numerics
    M = params.M
    x0 = cfg.x0_complex()
    times, traj = _ensemble_run(params, N, x0, num.t_final, num.n_out, num.samples, num.seed)
    orc = FockOracle(params, N)
    rho0 = orc.coherent_density(x0)
    rows, err = [], []
    cols = {"t": times}
    est = {jk: [] for jk in _pairs(M)}
    ref = {jk: [] for jk in _pairs(M)}
    for t, x in zip(times, traj):
        ens = TrajectoryEnsemble.uniform(x, time=float(t))
        r = orc.rho_t(rho0, t)
        diff = 0.0
        for jk in _pairs(M):
            e = expect_from_ensemble(ens, jk, N, identity="Q")
            f = expectation_fock(r, *jk, orc.basis)
            est[jk].append(e.value)
            ref[jk].append(f)
            diff = max(diff, abs(e.value - f))
            if t == times[-1]:
                rows.append(e.to_row())
        err.append(diff / N)
    cols.update(_observable_columns(lambda j, k: est[j, k], M))
    cols.update({f"fock_{k}": v for k, v in _observable_columns(lambda j, k: ref[j, k], M).items()})
    cols["max_error_over_N"] = err
    w.table("observables", cols)
    w.ensemble("ensemble_final", TrajectoryEnsemble.uniform(traj[-1], time=float(times[-1])))
    w.rows("reports", rows)
    return {"max_error_over_N": float(max(err)), "final_error_over_N": float(err[-1]),
            "samples": num.samples}


def task_thermo(cfg, w):
    params, N, num = cfg.model.params(), cfg.model.N, cfg.numerics
    spec = BlochSpec(num.kind, params, N)
    g0 = PhaseGrid2(np.ones((num.n_p, num.n_q)), {"beta": 0.0})
    g1 = evolve_bloch(g0, spec, num.beta_final, num.dt, num.cfl)
    w.grid("grid_final", g1, {"kind": num.kind, "N": N})
    metrics = {"min_value": float(g1.values.min()), "max_value": float(g1.values.max()),
               "steps": g1.meta.get("steps", 0)}
    if num.kind == "Q":
        orc = FockOracle(params, N)
        ref = orc.husimi_grid(orc.gibbs(num.beta_final), num.n_p, num.n_q)
        metrics["l2_error_vs_fock"] = l2_norm(g1.values - ref.values) / l2_norm(ref.values)
    elif num.kind == "classical":
        ref = classical_gibbs_grid(num.beta_final, params, N, num.n_p, num.n_q)
        metrics["l2_error_vs_exact"] = l2_norm(g1.values - ref.values) / l2_norm(ref.values)
    return metrics


def task_verify_residual(cfg, w):
    params, N, num = cfg.model.params(), cfg.model.N, cfg.numerics
    tol = num.tolerance or 1e-3
    shape = (num.n_p, num.n_q)
    orc = FockOracle(params, N)
    rho0 = orc.coherent_density(cfg.x0_complex())
    r_rt = realtime_residual(GeneratorSpec("Q", params, N), rho0, num.t_final, num.fd_step, shape)
    b, h = num.beta_final, num.fd_step
    if b < h:
        raise ConfigError([f"numerics.beta_final: must be at least fd_step={h} for the residual"])
    Qs = [orc.husimi_grid(orc.gibbs(b + s * h), *shape) for s in (-1, 0, 1)]
    dQ = (Qs[2].values - Qs[0].values) / (2 * h)
    r_b = relative_residual(dQ, apply_bloch_Q(Qs[1], BlochSpec("Q", params, N)).values)
    w.table("residuals", {"realtime": [r_rt], "bloch": [r_b]})
    metrics = {"residual_realtime": r_rt, "residual_bloch": r_b, "tolerance": tol}
    if max(r_rt, r_b) >= tol:
        raise VerificationError(f"generator residual {max(r_rt, r_b):.3e} >= {tol:.1e}", metrics)
    return metrics


def scaling_errors(n_values, UN, delta, eps, x0, t, samples, seed, periodic=False):
    """Ensemble-vs-Fock error / N at time t for each N at fixed UN."""
    out = []
    for N in n_values:
        params = HamiltonianParams(tuple(eps), delta, UN / N, periodic)
        _, traj = _ensemble_run(params, N, x0, t, 1, samples, seed)
        ens = TrajectoryEnsemble.uniform(traj[-1], time=t)
        orc = FockOracle(params, N)
        r = orc.rho_t(orc.coherent_density(x0), t)
        M = params.M
        diff = np.array([[expect_from_ensemble(ens, (j, k), N, identity="Q").value
                          - expectation_fock(r, j, k, orc.basis) for k in range(M)] for j in range(M)])
        out.append(np.linalg.norm(diff) / N)
    return np.array(out)


def task_verify_scaling(cfg, w):
    m, num = cfg.model, cfg.numerics
    Ns = np.array(num.n_values)
    errs = scaling_errors(Ns, num.UN, m.delta, m.eps, cfg.x0_complex(), num.t_final,
                          num.samples, num.seed, m.periodic)
    slope = float(np.polyfit(np.log(Ns), np.log(errs), 1)[0])
    w.table("scaling", {"N": Ns, "error_over_N": errs})
    lo, hi = SCALING_WINDOW
    metrics = {"slope": slope, "window": [lo, hi], "errors": errs.tolist(), "N": Ns.tolist()}
    if not lo <= slope <= hi:
        raise VerificationError(f"scaling slope {slope:.3f} outside [{lo}, {hi}]", metrics)
    return metrics


def task_verify_identity(cfg, w):
    m, num = cfg.model, cfg.numerics
    orc = FockOracle(m.params(), m.N)
    rho = random_density(orc.basis.size, np.random.default_rng([num.seed, 1]))
    sample = sample_measure(m.M, m.N, num.samples, num.seed)
    rows, dev = [], []
    for jk in _pairs(m.M):
        rep = expect_from_Q(rho, jk, sample, orc.basis)
        ref = expectation_fock(rho, *jk, orc.basis)
        dev.append(abs(rep.value - ref) / (3 * rep.mc_stderr))
        rows.append({**rep.to_row(), "fock_re": ref.real, "fock_im": ref.imag})
    w.rows("identity", rows)
    metrics = {"max_deviation_3sigma": float(max(dev)), "samples": num.samples}
    if max(dev) >= 1:
        raise VerificationError(f"identity deviation {max(dev):.2f} x 3 sigma", metrics)
    return metrics


TASK_FUNCS = {
    "exact": task_exact, "pde": task_pde, "ensemble": task_ensemble, "thermo": task_thermo,
    "verify-residual": task_verify_residual, "verify-scaling": task_verify_scaling,
    "verify-identity": task_verify_identity,
}


def _versions():
    return {"bhphase": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg: RunConfig, out_dir=None) -> dict:
    """Execute one task, write artifacts and the manifest; returns the manifest.

    Failures still produce a manifest (status "failed") before the exception
    propagates.
    """
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    writer = _Writer(cfg, out)
    manifest = {"task": cfg.task, "config": cfg.to_dict(), "config_hash": cfg.hash(),
                "versions": _versions(), "started": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    t0 = time.perf_counter()
    try:
        manifest["metrics"] = TASK_FUNCS[cfg.task](cfg, writer)
        manifest["status"] = "ok"
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = _error_report(exc)
        if isinstance(exc, VerificationError) and len(exc.args) > 1:
            manifest["metrics"] = exc.args[1]
        raise
    finally:
        manifest["wall_time_s"] = time.perf_counter() - t0
        manifest["outputs"] = writer.files
        write_json(out / "manifest.json", manifest)
    return manifest


def _error_report(exc):
    kind = {ConfigError: "config", NumericalError: "numerical", VerificationError: "verification"}
    name = next((v for k, v in kind.items() if isinstance(exc, k)),
                "input" if isinstance(exc, ValueError) else "internal")
    rep = {"type": name, "exception": type(exc).__name__, "message": str(exc.args[0]) if exc.args else ""}
    if isinstance(exc, ConfigError):
        rep["errors"] = exc.errors
    return rep


def sweep(cfg: RunConfig, out_dir=None) -> dict:
    sw = cfg.numerics.sweep
    if not sw:
        raise ConfigError(["numerics.sweep: required for the sweep command"])
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    param, runs = sw["parameter"], []
    int_params = ("N", "samples", "n_p")
    for i, value in enumerate(sw["values"]):
        value = int(value) if param in int_params else float(value)
        sub = out / f"{param}_{i:03d}"
        child = with_overrides(cfg, **{param: value, "sweep": None, "directory": str(sub)})
        man = run(child, sub)
        runs.append({"value": value, "directory": sub.name, "metrics": man.get("metrics")})
    summary = {"parameter": param, "runs": runs, "config_hash": cfg.hash(), "versions": _versions()}
    write_json(out / "sweep_manifest.json", summary)
    return summary


def build_parser():
    ap = argparse.ArgumentParser(prog="bhphase", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=("simulate", "verify", "sweep"))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--threads", type=int, help=f"BLAS threads (default: ${THREADS_ENV})")
    ap.add_argument("--seed", type=int, help="overrides numerics.seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        return _fail(EXIT_CONFIG, ConfigError([f"--config: {exc.strerror}"]))
    try:
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(["--seed: must be non-negative"])
            cfg = with_overrides(cfg, seed=args.seed)
        allowed = {"simulate": SIMULATE_TASKS, "verify": VERIFY_TASKS,
                   "sweep": SIMULATE_TASKS}[args.command]
        if cfg.task not in allowed:
            raise ConfigError([f"task: {args.command} runs {list(allowed)}, got {cfg.task}"])
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)

    threads = args.threads or (int(os.environ[THREADS_ENV]) if os.environ.get(THREADS_ENV) else None)
    try:
        with threadpool_limits(limits=threads):
            if args.command == "sweep":
                result = sweep(cfg, args.out)
            else:
                result = run(cfg, args.out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except VerificationError as exc:
        return _fail(EXIT_VERIFY, exc)
    except ValueError as exc:  # inputs rejected by a module, e.g. dt above the stability bound
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:
        return _fail(EXIT_NUMERICAL, exc)
    print(json.dumps({"status": "ok", "metrics": result.get("metrics", result.get("runs"))},
                     default=float))
    return EXIT_OK


def _fail(code, exc):
    print(json.dumps({"status": "failed", "exit_code": code, "error": _error_report(exc)}),
          file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
