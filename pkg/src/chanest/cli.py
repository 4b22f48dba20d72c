"""Command line entry point: ``chanest <command> [options]``.

Exit status: 0 on success, 2 for configuration or input errors, 3 when a
numerical routine fails.
"""
import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .dictionary import block_norms, uniform_grid
from .harness import (
    ESTIMATORS,
    ConfigError,
    load_config,
    run_benchmark,
    run_convergence,
    write_path_report,
)
from .numerics import make_rng
from .recovery import PathEstimate, PathEstimates, estimate_paths
from .signal_model import synthesize
from .solver import SolverConfig, bcd_solve, mu_max, stela_solve

MEASUREMENTS_SCHEMA = "chanest.measurements/v1"
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def bundled_config_path():
    return resources.files("chanest") / "configs" / "paper_scenario.json"


def _config(args):
    cfg = load_config(args.config) if args.config else load_config(bundled_config_path())
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(base_seed=args.seed)
    if getattr(args, "estimators", None):
        cfg = cfg.replace(estimators=tuple(s.strip() for s in args.estimators.split(",")))
    if getattr(args, "runs", None) is not None:
        cfg = cfg.replace(runs=args.runs)
    return cfg


def _out(args, cfg):
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snr(args, cfg):
    return args.snr_db if args.snr_db is not None else cfg.snr_db[-1]


def write_measurements(Y, path):
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {MEASUREMENTS_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["row", "snapshot", "re", "im"])
        for (i, l), v in np.ndenumerate(Y):
            w.writerow([i, l, repr(float(v.real)), repr(float(v.imag))])


def read_measurements(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"measurement file not found: {p}")
    try:
        raw = np.loadtxt(p, delimiter=",", comments="#", skiprows=2, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    rows, cols = raw[:, 0].astype(int), raw[:, 1].astype(int)
    Y = np.zeros((rows.max() + 1, cols.max() + 1), dtype=complex)
    Y[rows, cols] = raw[:, 2] + 1j * raw[:, 3]
    return Y


def _data(args, cfg):
    sc = cfg.scenario.with_snr_db(_snr(args, cfg))
    if getattr(args, "data", None):
        Y = read_measurements(args.data)
        if Y.shape[0] != sc.M * sc.N:
            raise ConfigError(f"{args.data}: {Y.shape[0]} rows, scenario needs {sc.M * sc.N}")
        return sc, Y, None
    data, H = synthesize(sc, make_rng(np.random.SeedSequence(cfg.base_seed)))
    return sc, data.Y, H


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    sc, Y, H = _data(args, cfg)
    write_measurements(Y, out / "measurements.csv")
    truth = PathEstimates(tuple(PathEstimate(p.tau, p.theta, H[i])
                                for i, p in enumerate(sc.paths)))
    truth.to_csv(out / "truth.csv", sc.ofdm.T_s)
    (out / "scenario.json").write_text(json.dumps(sc.to_dict(), indent=2) + "\n")
    print(f"wrote {sc.M * sc.N} x {sc.L} measurements at {sc.snr_db} dB to {out}")
    return 0


def cmd_solve(args):
    cfg = _config(args)
    out = _out(args, cfg)
    sc, Y, _ = _data(args, cfg)
    dictionary = uniform_grid(cfg.nucnorm.Q, sc.ofdm, sc.M)
    mu = args.mu if args.mu is not None else args.mu_fraction * mu_max(Y, dictionary)
    solver = stela_solve if args.method == "stela" else bcd_solve
    G, trace = solver(Y, dictionary, SolverConfig(mu, args.max_iters, args.tol))
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("solver produced non-finite blocks")
    trace.to_csv(out / "solve_trace.csv")
    norms = block_norms(G)
    with open(out / "support.csv", "w", newline="") as f:
        f.write("# schema: chanest.support/v1\n")
        w = csv.writer(f)
        w.writerow(["q", "tau_over_Ts", "block_norm"])
        for q in np.flatnonzero(norms > 0):
            w.writerow([int(q), repr(float(dictionary.grid[q])), repr(float(norms[q]))])
    print(f"{args.method}: mu={mu:.6g} iterations={trace.iterations} "
          f"converged={trace.converged} objective={trace.objective[-1]:.10g} "
          f"nonzero_blocks={int(np.sum(norms > 0))}")
    return 0


def cmd_path(args):
    cfg = _config(args)
    out = _out(args, cfg)
    sc, Y, _ = _data(args, cfg)
    est = estimate_paths(Y, sc.geometry, sc.ofdm, sc.P, cfg.nucnorm)
    write_path_report(est.info.get("path", []), out / "path_report.csv")
    est.to_csv(out / "estimates.csv", sc.ofdm.T_s)
    print(f"selected kappa={est.info.get('kappa', -1) + 1} mu={est.info.get('mu', float('nan')):.6g}"
          f" P_hat={est.P_hat} exact={not est.flagged}")
    for e in est:
        print(f"  tau={e.tau:.4f} theta={e.theta:.3f}")
    return 0


def cmd_benchmark(args):
    cfg = _config(args)
    out = _out(args, cfg)
    total = len(cfg.snr_db) * cfg.runs

    def progress(done, n):
        if not args.quiet and (done % max(1, n // 20) == 0 or done == n):
            print(f"  {done}/{n} runs", file=sys.stderr)

    report = run_benchmark(cfg, out, progress)
    print(f"{total} runs x {len(cfg.estimators)} estimators -> {out / 'rmse.csv'}")
    for r in report.rows:
        print(f"  {r.estimator:8s} {r.snr_db:6.1f} dB  rmse_tau={r.rmse_tau:.5f} "
              f"rmse_theta={r.rmse_theta_deg:.4f} detect={r.detect_rate:.2f}")
    return 0


def cmd_convergence(args):
    cfg = _config(args)
    out = _out(args, cfg)
    res = run_convergence(cfg, out)
    level = cfg.convergence.threshold
    s, b = res.first_below("stela", level), res.first_below("bcd", level)
    print(f"mu={res.mu:.6g} |G_hat|={res.reference_norm:.6g} "
          f"(reference: {res.reference_iterations} sweeps)")
    print(f"iterations to {level:g} |G_hat|: stela={s} bcd={b if b is not None else '> ' + str(len(res.bcd_error) - 1)}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="chanest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="experiment config (JSON); default: bundled scenario")
        sp.add_argument("--seed", type=int, help="base seed (non-negative integer)")
        sp.add_argument("--out", help="output directory (default: config out_dir)")
        if data:
            sp.add_argument("--snr-db", type=float, help="SNR in dB (default: last config entry)")

    sp = sub.add_parser("simulate", help="draw measurements and ground truth")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("solve", help="single solve at a fixed mu")
    common(sp)
    sp.add_argument("--data", help="measurements.csv from `simulate`")
    sp.add_argument("--mu", type=float, help="regularization (absolute)")
    sp.add_argument("--mu-fraction", type=float, default=0.25, help="mu as a fraction of mu_1")
    sp.add_argument("--method", choices=("stela", "bcd"), default="stela")
    sp.add_argument("--max-iters", type=int, default=None)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("path", help="solution path and model selection")
    common(sp)
    sp.add_argument("--data", help="measurements.csv from `simulate`")
    sp.set_defaults(func=cmd_path)

    sp = sub.add_parser("benchmark", help="Monte-Carlo RMSE sweep")
    common(sp, data=False)
    sp.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    sp.add_argument("--runs", type=int, help="override the run count")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("convergence", help="STELA vs BCD distance-to-solution traces")
    common(sp, data=False)
    sp.set_defaults(func=cmd_convergence)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
