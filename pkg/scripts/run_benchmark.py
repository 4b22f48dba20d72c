"""Monte-Carlo RMSE sweep over the bundled scenario.

    python scripts/run_benchmark.py --runs 100 --out results/benchmark

Set CHANEST_WORKERS to spread runs over processes.
"""
import argparse
import sys

from chanest.cli import bundled_config_path
from chanest.harness import load_config, run_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--snr-db", type=float, nargs="+", default=None)
    p.add_argument("--estimators", default=None, help="comma-separated")
    p.add_argument("--out", default="results/benchmark")
    args = p.parse_args()

    cfg = load_config(args.config or bundled_config_path())
    changes = {"record_timing": False}
    if args.runs:
        changes["runs"] = args.runs
    if args.snr_db:
        changes["snr_db"] = tuple(args.snr_db)
    if args.estimators:
        changes["estimators"] = tuple(args.estimators.split(","))
    cfg = cfg.replace(**changes)

    def progress(done, total):
        if done % 25 == 0 or done == total:
            print(f"{done}/{total}", file=sys.stderr)

    report = run_benchmark(cfg, args.out, progress)
    print(f"{'estimator':10s} {'SNR':>6s} {'tau':>9s} {'theta':>8s} {'detect':>7s}")
    for r in sorted(report.rows, key=lambda r: (r.estimator, r.snr_db)):
        print(f"{r.estimator:10s} {r.snr_db:6.1f} {r.rmse_tau:9.5f} {r.rmse_theta_deg:8.4f} "
              f"{r.detect_rate:7.2f}")


if __name__ == "__main__":
    main()
