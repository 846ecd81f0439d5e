"""Periodic cylinder: dual-norm and L2 errors of the final state.

    python3 scripts/dual_norm_study.py --degree 1 --levels 40 80 160 320
"""
import argparse

from cipfem.scenarios import run_convergence_study

from _common import outdir, print_report


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--degree", type=int, nargs="+", default=[1])
    p.add_argument("--levels", type=int, nargs="+", default=[40, 80, 160, 320])
    p.add_argument("--gamma", type=float, nargs="+", default=[0.01, 0.0])
    p.add_argument("--out", default="results/periodic")
    args = p.parse_args()
    out = outdir(args.out)
    for k in args.degree:
        for gamma in args.gamma:
            rep = run_convergence_study("periodic_cylinder", k, gamma=gamma, neles=args.levels,
                                        errors=("global_L2", "dual_norm"))
            print(f"\n== periodic cylinder P{k} gamma={gamma:g}")
            print_report(rep, ["global_L2", "dual_norm"])
            rep.to_csv(out / f"periodic_P{k}_g{gamma:g}.csv")


if __name__ == "__main__":
    main()
