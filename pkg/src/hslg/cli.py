"""Experiment runner: ``hslg verify <experiment>`` and ``hslg run --config PATH``.

Parameters resolve in the order defaults < config file < HSLG_* environment
variables < command-line flags.  Each run writes ``report.json`` (the resolved
parameters, results and verdict; no timestamps), ``timing.json`` and the
experiment's CSV tables into the output directory.

Exit status: 0 pass, 1 fail, 2 usage or config error, 3 inconclusive,
4 IO or runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from functools import partial
from pathlib import Path

import numpy as np

from .environment import RngState, build_full_perturbed_env, build_half_env
from .gibbs import ResampleConfig, SoftBarrierSpec, coupled_glauber_softbarrier, gibbs_resample_invariance
from .limit_laws import (
    MultipathConfig,
    WconvConfig,
    bridge_tail_mc,
    kernel_suite,
    verify_multipath_limit,
    verify_wconv,
)
from .polymer import (
    brute_force_agreement,
    sample_bw_identity_pair,
    sym_identity_discrepancy,
    verify_row_decomposition,
)
from .stats import KSReport, ks_two_sample

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE, EXIT_IO = 0, 1, 2, 3, 4
ENV_PREFIX = "HSLG_"


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# parameter handling


def _parse_value(text: str, like):
    """Convert ``text`` to the type of the default ``like``."""
    text = text.strip()
    try:
        if isinstance(like, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(float(text)) if float(text).is_integer() else int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"cannot read {text!r} as {type(like).__name__}") from exc
    return text


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def write_config(params: dict, path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k} = {_format_value(v)}\n" for k, v in params.items()))
    return path


def resolve_params(experiment: str, file_values: dict, flag_values: dict, environ=None) -> dict:
    """Typed parameter set for ``experiment`` after applying every override layer."""
    if experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {experiment!r}; known: {', '.join(EXPERIMENTS)}")
    defaults = dict(EXPERIMENTS[experiment].defaults)
    environ = os.environ if environ is None else environ
    # HSLG_<key> with the key spelled exactly, or upper-cased when that is unambiguous
    uppers = [k.upper() for k in defaults]
    env_values = {}
    for key in defaults:
        names = [ENV_PREFIX + key]
        if uppers.count(key.upper()) == 1:
            names.append(ENV_PREFIX + key.upper())
        for name in names:
            if name in environ:
                env_values[key] = environ[name]
    params = dict(defaults)
    for layer in (file_values, env_values, flag_values):
        for key, val in layer.items():
            if key == "experiment":
                continue
            if key not in defaults:
                raise UsageError(f"experiment {experiment!r} has no parameter {key!r}")
            params[key] = _parse_value(str(val), defaults[key])
    return params


# --------------------------------------------------------------------------
# JSON and CSV output


def jsonable(obj):
    if isinstance(obj, KSReport):
        return jsonable(dataclasses.asdict(obj))
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


@contextmanager
def _mapper(workers: int):
    """Order-preserving map over a process pool; plain ``map`` for one worker."""
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield partial(pool.map, chunksize=64)


# --------------------------------------------------------------------------
# experiments; each returns (results with a "verdict", {csv name: (header, rows)})


@dataclasses.dataclass(frozen=True)
class Experiment:
    defaults: dict
    runner: object
    summary: str


def _sym_one(seed_rng, n, theta, alpha, i):
    return sym_identity_discrepancy(build_half_env(seed_rng.child(i), n, theta, alpha))


def _row_one(seed_rng, m, n, theta, alpha, i):
    return verify_row_decomposition(build_full_perturbed_env(seed_rng.child(i), m, n, theta, alpha), m, n)


def _bw_one(seed_rng, theta, alpha, m, n, i):
    return sample_bw_identity_pair(seed_rng.child(i), theta, alpha, m, n)


def _exp_sym_identity(p, rng, mapper):
    d = np.array(list(mapper(partial(_sym_one, rng, p["n"], p["theta"], p["alpha"]), range(p["envs"]))))
    worst = float(d.max())
    res = {"max_discrepancy": worst, "verdict": "pass" if worst < p["tol"] else "fail"}
    return res, {"discrepancy": (["env", "max_discrepancy"], list(enumerate(d)))}


def _exp_row_decomposition(p, rng, mapper):
    d = np.array(list(mapper(partial(_row_one, rng, p["m"], p["n"], p["theta"], p["alpha"]), range(p["envs"]))))
    worst = float(d.max())
    res = {"max_discrepancy": worst, "verdict": "pass" if worst < p["tol"] else "fail"}
    return res, {"discrepancy": (["env", "discrepancy"], list(enumerate(d)))}


def _exp_bw_identity(p, rng, mapper):
    pairs = np.array(list(mapper(partial(_bw_one, rng, p["theta"], p["alpha"], p["m"], p["n"]),
                                 range(p["replicas"]))))
    rep = ks_two_sample(pairs[:, 0], pairs[:, 1], level=p["level"])
    res = {"ks": rep, "mean_full": float(pairs[:, 0].mean()), "mean_half": float(pairs[:, 1].mean()),
           "verdict": rep.verdict}
    rows = [(i, a, b) for i, (a, b) in enumerate(pairs)]
    return res, {"samples": (["replica", "log_Z_full", "log_sum_Z_half"], rows)}


def _exp_oracle(p, rng, mapper):
    r = brute_force_agreement(rng, envs=p["envs"], max_steps=p["max_steps"], theta=p["theta"],
                              alpha=p["alpha"])
    r["verdict"] = "pass" if r["max_error_all"] < p["tol"] else "fail"
    rows = [(k, v, r["comparisons"][k]) for k, v in r["max_error"].items()]
    return r, {"max_error": (["family", "max_error", "comparisons"], rows)}


def _coupling_one(rng, p, case_index):
    base = dict(beta=p["beta"], L=p["L"], a=p["a"], A=p["A"])
    if case_index == 0:
        s1, s2 = SoftBarrierSpec(**base), SoftBarrierSpec(**{**base, "a": p["a_low"]})
    elif case_index == 1:
        s1, s2 = SoftBarrierSpec(**base), SoftBarrierSpec(**{**base, "beta": p["beta_high"]})
    else:
        soft = {**base, "epsilon": p["epsilon"]}
        s1, s2 = SoftBarrierSpec(**soft), SoftBarrierSpec(**{**soft, "kappa": p["kappa_high"]})
    r = coupled_glauber_softbarrier(rng.child(case_index), s1, s2, steps=p["steps"], N=p["N"])
    return r


def _exp_coupling(p, rng, mapper):
    cases = list(mapper(partial(_coupling_one, rng, p), range(3)))
    ok = all(c["violations"] == 0 for c in cases)
    res = {"cases": cases, "verdict": "pass" if ok else "fail"}
    rows = [(c["case"], c["steps"], c["violations"], c["acceptance"][0], c["acceptance"][1]) for c in cases]
    return res, {"violations": (["case", "steps", "violations", "acceptance_1", "acceptance_2"], rows)}


def _resample_config(p, wrong_floor):
    return ResampleConfig(n=p["n"], N=p["N"], k=p["k"], window=(p["window_left"], 0.0),
                          replicas=p["replicas"], proposals=p["proposals"], alpha=p["alpha"],
                          gibbs_steps=p["gibbs_steps"], wrong_floor=wrong_floor, level=p["level"],
                          ess_floor=p["ess_floor"])


def _exp_resample(p, rng, mapper):
    main = gibbs_resample_invariance(rng.child(0), _resample_config(p, False), return_samples=True,
                                     mapper=mapper)
    res = {"ks": main["ks"], "median_ess": main["median_ess"], "midpoint": main["midpoint"]}
    verdict = main["ks"].verdict
    tables = {"samples": (["replica", "original", "redrawn"],
                          [(i, a, b) for i, (a, b) in enumerate(zip(main["original"], main["redrawn"]))])}
    if p["control"]:
        ctrl = gibbs_resample_invariance(rng.child(1), _resample_config(p, True), mapper=mapper)
        res["control_ks"] = ctrl["ks"]
        res["control_rejected"] = ctrl["ks"].verdict == "fail"
        if verdict == "pass" and not res["control_rejected"]:
            verdict = "fail"
    res["verdict"] = verdict
    return res, tables


def _exp_soft_barrier(p, rng, mapper):
    cfg = WconvConfig(A=p["A"], a=p["a"], alpha=p["alpha"], L_list=p["L_list"], n_grid=p["n_grid"],
                      samples=p["samples"], thin=p["thin"], burn=p["burn"], ks_threshold=p["ks_threshold"],
                      mean_threshold=p["mean_threshold"])
    r = verify_wconv(rng, cfg, mapper=mapper)
    rows = [(L, k, m) for L, k, m in zip(r["L"], r["ks_statistics"], r["mean_B0"])]
    return r, {"ks_by_L": (["L", "ks_statistic", "mean_B0"], rows)}


def _exp_multipath(regime):
    def run(p, rng, mapper):
        cfg = MultipathConfig(regime=regime, m=1, A=p["A"], a_vec=p["a_vec"], alpha=p["alpha"], mu=p["mu"],
                              L_list=p["L_list"], n_grid=p["n_grid"], samples=p["samples"], thin=p["thin"],
                              burn=p["burn"], level=p["level"], gap_floor=p["gap_floor"])
        r = verify_multipath_limit(rng, cfg, mapper=mapper)
        rows = [(L, g) for L, g in zip(r["L"], r["median_terminal_gap"])]
        return r, {"terminal_gap": (["L", "median_terminal_gap"], rows)}
    return run


def _bridge_one(rng, p, idx):
    return bridge_tail_mc(rng.child(idx), p["T_list"][idx], p["M_list"][idx], n_paths=p["n_paths"],
                          n_grid=p["n_grid"])


def _exp_bridge(p, rng, mapper):
    if len(p["T_list"]) != len(p["M_list"]):
        raise UsageError("T_list and M_list need the same length")
    cases = list(mapper(partial(_bridge_one, rng, p), range(len(p["T_list"]))))
    ok = all(c["verdict"] == "pass" for c in cases)
    rows = [(c["T"], c["M"], c["frequency"], c["formula"], c["se"], c["allowance"]) for c in cases]
    return {"cases": cases, "verdict": "pass" if ok else "fail"}, {
        "tail": (["T", "M", "frequency", "formula", "se", "allowance"], rows)}


def _exp_kernels(p, rng, mapper):
    r = kernel_suite(fd_step=p["fd_step"])
    rows = [(c["check"], c["error"], c["tol"], c["pass"]) for c in r["checks"]]
    return r, {"checks": (["check", "error", "tol", "pass"], rows)}


_MC_CHAIN = {"n_grid": 512, "thin": 2000, "burn": 200_000}

EXPERIMENTS = {
    "sym-identity": Experiment(
        {"seed": 0, "n": 8, "theta": 2.0, "alpha": 0.5, "envs": 100, "tol": 1e-10},
        _exp_sym_identity, "ln 2 + log Z_sym^(1) = log Z over the octant"),
    "row-decomposition": Experiment(
        {"seed": 0, "m": 5, "n": 4, "theta": 2.0, "alpha": 0.5, "envs": 100, "tol": 1e-9},
        _exp_row_decomposition, "first-row split of the quadrant partition function"),
    "bw-identity": Experiment(
        {"seed": 0, "m": 4, "n": 3, "theta": 2.0, "alpha": 0.5, "replicas": 10_000, "level": 0.01},
        _exp_bw_identity, "full-space vs half-space partition functions in law"),
    "oracle-equivalence": Experiment(
        {"seed": 0, "envs": 50, "max_steps": 7, "theta": 2.0, "alpha": 0.5, "tol": 1e-10},
        _exp_oracle, "every partition-function DP against exhaustive enumeration"),
    "gibbs-resample": Experiment(
        {"seed": 0, "n": 5, "N": 4, "k": 1, "window_left": -1.0, "replicas": 10_000, "proposals": 1000,
         "alpha": 0.5, "gibbs_steps": 1, "level": 0.01, "ess_floor": 100.0, "control": True},
        _exp_resample, "Gibbs redraw of the scaled ensemble leaves its law unchanged"),
    "monotone-coupling": Experiment(
        {"seed": 0, "steps": 100_000, "N": 100, "L": 4.0, "A": -1.0, "a": 1.0, "beta": 1.0, "a_low": 0.5,
         "beta_high": 2.0, "epsilon": 0.1, "kappa_high": 0.5},
        _exp_coupling, "ordered Glauber chains stay ordered"),
    "soft-barrier-limit": Experiment(
        {"seed": 0, "A": -1.0, "a": 1.0, "alpha": 1.0, "L_list": (25.0, 100.0, 400.0), "samples": 10_000,
         "ks_threshold": 0.1, "mean_threshold": 0.1, **_MC_CHAIN},
        _exp_soft_barrier, "soft-barrier law converges to Lambda+"),
    "multipath-limit-supercritical": Experiment(
        {"seed": 0, "A": -1.0, "a_vec": (1.0, 0.0), "alpha": 1.0, "mu": 0.0, "L_list": (25.0, 100.0, 400.0),
         "samples": 5000, "level": 0.01, "gap_floor": 0.25, **_MC_CHAIN},
        _exp_multipath("supercritical"), "two curves at fixed alpha against the pinned pair"),
    "multipath-limit-critical": Experiment(
        {"seed": 0, "A": -1.0, "a_vec": (1.0, 0.0), "alpha": 0.0, "mu": 0.0, "L_list": (25.0, 400.0),
         "samples": 5000, "level": 0.01, "gap_floor": 0.25, **_MC_CHAIN},
        _exp_multipath("critical"), "two curves at alpha = mu / sqrt(L) against non-intersecting BMs"),
    "kernels-suite": Experiment(
        {"seed": 0, "fd_step": 1e-4}, _exp_kernels, "kernel normalisations and identities"),
    "bridge-tail": Experiment(
        {"seed": 0, "T_list": (1.0, 1.0, 2.0), "M_list": (0.5, 1.0, 1.0), "n_paths": 100_000, "n_grid": 1024},
        _exp_bridge, "bridge minimum tail against the reflection formula"),
}


# --------------------------------------------------------------------------
# running


def run_experiment(experiment: str, params: dict, out_dir, workers: int = 1) -> dict:
    """Run one experiment and write its report, timing and CSV files."""
    exp = EXPERIMENTS[experiment]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngState(params["seed"])
    t0 = time.perf_counter()
    with _mapper(workers) as mapper:
        results, tables = exp.runner(params, rng, mapper)
    elapsed = time.perf_counter() - t0
    report = {"experiment": experiment, "params": params, "results": results,
              "verdict": results["verdict"]}
    report = jsonable(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"experiment": experiment, "workers": workers,
                                                 "seconds": elapsed}, indent=2) + "\n")
    for name, (header, rows) in tables.items():
        _write_csv(out / f"{name}.csv", header, rows)
    write_config({"experiment": experiment, **params}, out / "resolved.cfg")
    return report


def _exit_code(verdict: str) -> int:
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}.get(verdict, EXIT_FAIL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hslg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    keys = sorted({k for e in EXPERIMENTS.values() for k in e.defaults})

    def common(p):
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--workers", type=int, default=1, help="process pool size")
        p.add_argument("--out", help="output directory (default hslg-out/<experiment>)")
        for k in keys:
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, default=argparse.SUPPRESS, metavar="V")

    v = sub.add_parser("verify", help="run a named experiment")
    v.add_argument("experiment", choices=list(EXPERIMENTS))
    common(v)
    r = sub.add_parser("run", help="run the experiment named in a config file")
    common(r)
    sub.add_parser("list", help="list experiments")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.command == "list":
        for name, e in EXPERIMENTS.items():
            print(f"{name:32s} {e.summary}")
        return EXIT_PASS
    try:
        file_values = read_config(args.config) if args.config else {}
        if args.command == "run":
            if not args.config:
                raise UsageError("run needs --config")
            if "experiment" not in file_values:
                raise UsageError(f"{args.config}: no 'experiment' key")
            experiment = file_values["experiment"]
        else:
            experiment = args.experiment
        fixed = {"command", "experiment", "config", "workers", "out"}
        flags = {k: v for k, v in vars(args).items() if k not in fixed}
        params = resolve_params(experiment, file_values, flags)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
    except UsageError as exc:
        print(f"hslg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hslg: error: {exc}", file=sys.stderr)
        return EXIT_IO
    out_dir = Path(args.out) if args.out else Path("hslg-out") / experiment
    try:
        report = run_experiment(experiment, params, out_dir, workers=args.workers)
    except UsageError as exc:
        print(f"hslg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hslg: error writing to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # surfaced with the experiment name, not a traceback
        print(f"hslg: {experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{experiment}: {report['verdict']} (report: {out_dir / 'report.json'})")
    return _exit_code(report["verdict"])


if __name__ == "__main__":
    sys.exit(main())
