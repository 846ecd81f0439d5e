"""Command line front-end: ``cipfem run|convergence|verify|mesh``.

Runs are described by flat ``key = value`` files::

    scenario = rotating_disc_smooth
    degree = 1
    nele = 40, 80, 160
    gamma = 0.01            # optional, default 0.01
    compare_unstabilized = true

All output is CSV or plain text in the ``output`` directory.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import analysis, mesh as meshmod
from .operators import CIP_VARIANTS, DEFAULT_GAMMA
from .scenarios import BUMP_CENTER, SCENARIOS, run_convergence_study, simulate
from .timestepper import StepFailure

log = logging.getLogger("cipfem")

MANDATORY = ("scenario", "degree", "nele")


class ConfigError(ValueError):
    """Invalid run configuration; ``lineno`` is set for per-line problems."""

    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno else msg)


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    degree: int
    nele: tuple
    gamma: float = DEFAULT_GAMMA
    theta: float = 0.5
    variant: str = "abs_beta"
    K: float = None
    r0: float = None
    x0: tuple = None
    output: str = "results"
    errors: tuple = None
    stride: int = None
    compare_unstabilized: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if not self.nele or any(n <= 0 for n in self.nele):
            raise ConfigError("nele values must be positive")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be >= 0")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [1/2, 1]")
        if self.variant not in CIP_VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(CIP_VARIANTS)}")
        if self.K is not None and self.K <= 1:
            raise ConfigError("K must exceed 1")
        if self.r0 is not None and self.r0 <= 0:
            raise ConfigError("r0 must be positive")
        if self.stride is not None and self.stride <= 0:
            raise ConfigError("stride must be positive")
        for e in self.errors or ():
            if e not in analysis.ERROR_COLUMNS:
                raise ConfigError(f"unknown error measure {e!r}")

    @property
    def weight(self):
        if self.K is None or self.r0 is None:
            return None
        x0 = self.x0
        if x0 is None:
            if not self.scenario.startswith("rotating_disc"):
                raise ConfigError("x0 is required for weighted errors on this scenario")
            x0 = BUMP_CENTER
        return dict(center=tuple(x0), r0=self.r0, K=self.K)

    def error_selection(self):
        if self.errors is not None:
            errs = list(self.errors)
        else:
            errs = list(DEFAULT_ERRORS[self.scenario])
            if self.weight is not None:
                errs.append("weighted_L2")
        if "weighted_L2" in errs and self.weight is None:
            raise ConfigError("weighted_L2 needs K and r0")
        return tuple(errs)


DEFAULT_ERRORS = {
    "rotating_disc_smooth": ("global_L2", "matderiv", "stab_seminorm_int", "estimator"),
    "rotating_disc_rough": ("global_L2", "local_L2"),
    "rotating_disc_combined": ("global_L2", "local_L2"),
    "square_transport": ("global_L2", "matderiv"),
    "square_longterm": ("global_L2",),
    "periodic_cylinder": ("global_L2", "dual_norm"),
    "zero": ("global_L2", "matderiv", "estimator"),
}


def _ints(v):
    return tuple(int(x) for x in v.replace(",", " ").split())


def _floats(v):
    return tuple(float(x) for x in v.replace(",", " ").split())


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _names(v):
    return tuple(x for x in v.replace(",", " ").split())


def _point(v):
    p = _floats(v)
    if len(p) != 2:
        raise ValueError("expected two coordinates")
    return p


PARSERS = {
    "scenario": str, "degree": int, "nele": _ints, "gamma": float, "theta": float,
    "variant": str, "K": float, "r0": float, "x0": _point, "output": str,
    "errors": _names, "stride": int, "compare_unstabilized": _bool,
}


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno)
        try:
            values[key] = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {key!r}: {exc}", lineno) from None
        try:
            _validate_one(key, values[key])
        except ConfigError as exc:
            raise ConfigError(str(exc), lineno) from None
    for key in MANDATORY:
        if key not in values:
            raise ConfigError(f"missing mandatory key {key!r}")
    return RunConfig(**values)


def _validate_one(key, value):
    """Range checks that can be reported against the offending line."""
    if key == "gamma" and not value >= 0:
        raise ConfigError("gamma must be >= 0")
    if key == "theta" and not 0.5 <= value <= 1.0:
        raise ConfigError("theta must lie in [1/2, 1]")
    if key == "nele" and (not value or min(value) <= 0):
        raise ConfigError("nele values must be positive")
    if key == "degree" and value not in (1, 2):
        raise ConfigError("degree must be 1 or 2")


def parse_config(path):
    return parse_config_text(Path(path).read_text())


# ----------------------------------------------------------------------
# commands

def cmd_run(cfg):
    if len(cfg.nele) != 1:
        raise ConfigError("run takes a single nele value; use convergence for sweeps")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    errors = cfg.error_selection()
    trace = cfg.scenario == "square_longterm"
    res = simulate(cfg.scenario, cfg.degree, cfg.nele[0], gamma=cfg.gamma, theta=cfg.theta,
                   variant=cfg.variant, errors=errors, weight=cfg.weight,
                   stride=cfg.stride, trace=trace)
    traj = res.trajectory
    meshmod.export_mesh(traj.space.mesh, out / "mesh.txt")
    traj.write_diagnostics(out / "diagnostics.csv")
    traj.write_snapshots(out / "snapshots", mesh_ref="../mesh.txt")
    rec = res.record
    with open(out / "summary.txt", "w") as fh:
        for key in ("scenario", "degree", "gamma", "theta", "variant"):
            fh.write(f"{key} = {getattr(cfg, key)}\n")
        fh.write(f"nele = {rec.nele}\nh = {rec.h!r}\ndt = {rec.dt!r}\n")
        fh.write(f"n_steps = {traj.config.n_steps}\n")
        fh.write(f"max_residual = {float(traj.residual.max())!r}\n")
        for name, v in rec.errors.items():
            fh.write(f"{analysis.ERROR_COLUMNS[name]} = {v!r}\n")
    for name, v in rec.errors.items():
        print(f"{analysis.ERROR_COLUMNS[name]} = {v:.6e}")
    return 0


def cmd_convergence(cfg):
    if len(cfg.nele) < 2:
        raise ConfigError("convergence needs at least two nele values")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    errors = cfg.error_selection()
    runs = [("stab", cfg.gamma)]
    if cfg.compare_unstabilized:
        runs.append(("gal", 0.0))
    reports = []
    for tag, gamma in runs:
        rep = run_convergence_study(cfg.scenario, cfg.degree, gamma=gamma, theta=cfg.theta,
                                    neles=cfg.nele, errors=errors, variant=cfg.variant,
                                    weight=cfg.weight, label=tag)
        name = f"convergence_{tag}.csv" if cfg.compare_unstabilized else "convergence.csv"
        rep.to_csv(out / name)
        reports.append(rep)
    _write_rate_table(reports, out / "rates.csv")
    for rep in reports:
        for name, rates in rep.rates().items():
            shown = ", ".join(f"{r:.3f}" for r in rates)
            print(f"{rep.label} {analysis.ERROR_COLUMNS[name]} rates: {shown}")
    failed = [(rep.label, lv.nele, lv.failure) for rep in reports for lv in rep.levels
              if lv.failure]
    for label, n, msg in failed:
        print(f"level failed ({label}, nele={n}): {msg}", file=sys.stderr)
    return 1 if failed else 0


def _write_rate_table(reports, path):
    names = list(analysis.ERROR_COLUMNS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "nele_coarse", "nele_fine"]
                   + [analysis.ERROR_COLUMNS[n] for n in names])
        for rep in reports:
            rates = rep.rates()
            for i in range(len(rep.levels) - 1):
                w.writerow([rep.label, rep.levels[i].nele, rep.levels[i + 1].nele]
                           + [analysis._fmt(rates[n][i]) if n in rates else "" for n in names])


def cmd_verify(full=False, config=None):
    from .verify import run_suite
    results = run_suite("full" if full else "fast", config)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} invariants passed")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
    return 1 if failed else 0


def cmd_mesh(args):
    if args.mesh_cmd == "gen":
        if args.domain == "disc":
            m = meshmod.generate_disc(args.nele)
        else:
            m = meshmod.generate_square(args.nele, periodic=args.domain == "periodic_square")
        meshmod.export_mesh(m, args.output)
    elif args.mesh_cmd == "import":
        m = meshmod.import_mesh(args.path)
    else:
        m = meshmod.import_mesh(args.input)
        meshmod.export_mesh(m, args.output)
    print(f"vertices {len(m.vertices)} triangles {m.n_triangles} edges {m.n_edges} "
          f"boundary_edges {len(m.boundary_edges)} h {m.h:.6g} "
          f"area {m.area:.12g} max_shape_ratio {m.shape_ratios().max():.3f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="cipfem", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="single simulation")
    r.add_argument("config")
    c = sub.add_parser("convergence", help="refinement study")
    c.add_argument("config")
    v = sub.add_parser("verify", help="invariant suite")
    v.add_argument("--full", action="store_true")
    m = sub.add_parser("mesh", help="mesh generation and conversion")
    ms = m.add_subparsers(dest="mesh_cmd", required=True)
    g = ms.add_parser("gen")
    g.add_argument("domain", choices=("square", "periodic_square", "disc"))
    g.add_argument("nele", type=int)
    g.add_argument("output")
    i = ms.add_parser("import", help="read and validate a mesh file")
    i.add_argument("path")
    e = ms.add_parser("export", help="re-export an imported mesh (orientation repaired)")
    e.add_argument("input")
    e.add_argument("output")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(parse_config(args.config))
        if args.command == "convergence":
            return cmd_convergence(parse_config(args.config))
        if args.command == "verify":
            return cmd_verify(args.full)
        return cmd_mesh(args)
    except (ConfigError, meshmod.MeshError, StepFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
