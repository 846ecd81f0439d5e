"""Rotating-disc refinement studies, stabilized against plain Galerkin.

Writes one CSV per (data, degree, method) to the output directory and
prints errors, pairwise rates and least-squares rates.

    python3 scripts/disc_studies.py --degree 1 --levels 40 80 160
"""
import argparse

from cipfem.scenarios import run_convergence_study

from _common import outdir, print_report

DATA = {
    "smooth": ("rotating_disc_smooth", ("global_L2", "matderiv", "stab_seminorm_int", "estimator")),
    "combined": ("rotating_disc_combined", ("global_L2", "local_L2")),
    "rough": ("rotating_disc_rough", ("global_L2", "local_L2")),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--degree", type=int, nargs="+", default=[1, 2])
    p.add_argument("--levels", type=int, nargs="+", default=[40, 80, 160])
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--data", nargs="+", default=["smooth", "combined"], choices=sorted(DATA))
    p.add_argument("--variant", default="abs_beta")
    p.add_argument("--out", default="results/disc")
    args = p.parse_args()
    out = outdir(args.out)
    for data in args.data:
        name, errors = DATA[data]
        for k in args.degree:
            for tag, gamma in (("stab", args.gamma), ("gal", 0.0)):
                rep = run_convergence_study(name, k, gamma=gamma, neles=args.levels,
                                            errors=errors, variant=args.variant, label=tag)
                print(f"\n== {data} P{k} {tag} (gamma={gamma:g})")
                print_report(rep, list(errors))
                rep.to_csv(out / f"{data}_P{k}_{tag}.csv")


if __name__ == "__main__":
    main()
