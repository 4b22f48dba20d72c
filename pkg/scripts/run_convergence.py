"""STELA against block coordinate descent: distance to the solution per iteration.

    python scripts/run_convergence.py --out results/convergence

Prints the iteration counts needed to reach a few relative error levels.
"""
import argparse

from chanest.cli import bundled_config_path
from chanest.harness import load_config, run_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="results/convergence")
    args = p.parse_args()

    cfg = load_config(args.config or bundled_config_path())
    res = run_convergence(cfg, args.out)
    print(f"mu = {res.mu:.5g}, |G_hat| = {res.reference_norm:.5g}, "
          f"reference: {res.reference_iterations} sweeps")
    budget = len(res.bcd_error) - 1
    for level in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        s = res.first_below("stela", level)
        b = res.first_below("bcd", level)
        b_txt = b if b is not None else f"> {budget}"
        print(f"  {level:7.0e}: stela {s}, bcd {b_txt}")


if __name__ == "__main__":
    main()
