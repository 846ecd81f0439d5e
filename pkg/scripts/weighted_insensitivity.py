"""Weighted error around the smooth bump: combined data against smooth data alone.

A ratio close to 1 means the cylinder on the far side of the disc does
not pollute the error near the bump.

    python3 scripts/weighted_insensitivity.py --nele 160 --r0 0.05 0.1 0.2 --gamma 0.01 0
"""
import argparse

from cipfem import analysis
from cipfem.scenarios import BUMP_CENTER, get_scenario, simulate


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--nele", type=int, default=160)
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--K", type=float, default=2.0)
    p.add_argument("--r0", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    p.add_argument("--gamma", type=float, nargs="+", default=[0.01, 0.0])
    p.add_argument("--variant", default="abs_beta")
    args = p.parse_args()
    comb, smooth = get_scenario("rotating_disc_combined"), get_scenario("rotating_disc_smooth")
    T, h = comb.final_time, comb.mesh_size(args.nele)
    for gamma in args.gamma:
        kw = dict(gamma=gamma, variant=args.variant, errors=())
        uc = simulate(comb, args.degree, args.nele, **kw).trajectory.final
        us = simulate(smooth, args.degree, args.nele, **kw).trajectory.final
        for r0 in args.r0:
            w = analysis.WeightFunction(center=BUMP_CENTER, r0=r0, K=args.K, h=h,
                                        velocity=comb.velocity)
            ec = analysis.weighted_l2_error(uc, comb.exact, w, T)
            es = analysis.weighted_l2_error(us, smooth.exact, w, T)
            print(f"gamma={gamma:g} r0={r0:g}: combined {ec:.3e} smooth {es:.3e} ratio {ec / es:.2f}")


if __name__ == "__main__":
    main()
