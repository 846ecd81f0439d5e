"""Square transport to T=1 and the long-term run to T=3.

    python3 scripts/square_studies.py convergence --degree 1 --levels 40 80 160 320
    python3 scripts/square_studies.py longterm --levels 40 80

The long-term mode writes the per-step global L2 error trace as
``longterm_<nele>_<method>.csv`` (columns ``t,err_global_L2``).
"""
import argparse
import csv

import numpy as np

from cipfem.scenarios import run_convergence_study, simulate

from _common import outdir, print_report


def convergence(args, out):
    for k in args.degree:
        for tag, gamma in (("stab", args.gamma), ("gal", 0.0)):
            rep = run_convergence_study("square_transport", k, gamma=gamma, neles=args.levels,
                                        errors=("global_L2", "matderiv"), label=tag)
            print(f"\n== square P{k} {tag} (gamma={gamma:g})")
            print_report(rep, ["global_L2", "matderiv"])
            rep.to_csv(out / f"square_P{k}_{tag}.csv")


def longterm(args, out):
    for nele in args.levels:
        for tag, gamma in (("stab", args.gamma), ("gal", 0.0)):
            res = simulate("square_longterm", 1, nele, gamma=gamma, errors=(), trace=True)
            t, e = np.array(res.trace.times), np.array(res.trace.values)
            with open(out / f"longterm_{nele}_{tag}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "err_global_L2"])
                w.writerows(zip(map(repr, t.tolist()), map(repr, e.tolist())))
            at = {s: e[np.argmin(abs(t - s))] for s in (0.5, 1.0, 2.0, 3.0)}
            print(f"nele={nele} {tag}: " + " ".join(f"e({s:g})={v:.3e}" for s, v in at.items())
                  + f"  e(3)/e(0.5)={at[3.0] / at[0.5]:.3e}")


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("mode", choices=("convergence", "longterm"))
    p.add_argument("--degree", type=int, nargs="+", default=[1, 2])
    p.add_argument("--levels", type=int, nargs="+", default=None)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--out", default="results/square")
    args = p.parse_args()
    if args.levels is None:
        args.levels = [40, 80, 160, 320] if args.mode == "convergence" else [40, 80]
    out = outdir(args.out)
    (convergence if args.mode == "convergence" else longterm)(args, out)


if __name__ == "__main__":
    main()
