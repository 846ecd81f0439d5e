"""Small helpers shared by the experiment scripts."""
import math
from pathlib import Path

import numpy as np


def fitted_rate(h, e):
    h, e = np.asarray(h, float), np.asarray(e, float)
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        return math.nan
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def print_report(report, names=None):
    names = names or sorted({n for lv in report.levels for n in lv.errors})
    print(f"{'nele':>6} " + " ".join(f"{n:>18}" for n in names))
    for lv in report.levels:
        print(f"{lv.nele:>6} " + " ".join(f"{lv.errors.get(n, math.nan):>18.6e}" for n in names))
    pair = report.rates()
    for n in names:
        r = ", ".join(f"{x:.3f}" for x in pair.get(n, []))
        print(f"  {n}: pairwise [{r}]  fit {fitted_rate(report.h, report.series(n)):.3f}")


def outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
