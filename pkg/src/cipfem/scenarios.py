"""Benchmark transport problems with exact solutions, and the study driver."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import analysis
from .fespace import FeSpace
from .mesh import generate_disc, generate_square, refine_uniform
from .operators import (DEFAULT_GAMMA, VelocityField, assemble_operators,
                        constant_velocity, rotation_velocity)
from .timestepper import ThetaConfig, mesh_size, run_simulation, select_dt

log = logging.getLogger(__name__)

BUMP_CENTER = (0.5, 0.0)


def gaussian(center, width=30.0):
    cx, cy = center

    def f(x, t=0.0):
        x = np.asarray(x)
        return np.exp(-width * ((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2))
    return f


def cylinder(center, radius=0.2):
    cx, cy = center

    def f(x, t=0.0):
        x = np.asarray(x)
        r = np.hypot(x[..., 0] - cx, x[..., 1] - cy)
        return (r < radius).astype(float)
    return f


def _sum(*fs):
    return lambda x, t=0.0: sum(f(x, t) for f in fs)


@dataclass(frozen=True)
class Scenario:
    """A transport problem with its exact solution.

    ``initial`` is the datum as a function on the whole plane; the exact
    solution is ``initial(flow(x, t))`` with ``flow`` the backward
    characteristic map (wrapped into the box for periodic domains).
    """

    name: str
    domain: str
    velocity: VelocityField
    initial: Callable
    final_time: float
    source: Optional[Callable] = None
    has_inflow: bool = False
    smooth_part: Optional[Callable] = field(default=None, repr=False)

    def u0(self, x, t=0.0):
        return self.initial(x)

    def exact(self, x, t):
        X = self.velocity.flow(np.asarray(x, dtype=float), t)
        if self.domain == "periodic_square":
            X = np.mod(X, 1.0)
        return self.initial(X)

    @property
    def inflow(self):
        """Inflow datum ``g``: the trace of the exact solution."""
        return self.exact if self.has_inflow else None

    def build_mesh(self, nele):
        if self.domain == "disc":
            return generate_disc(nele)
        return generate_square(nele, periodic=self.domain == "periodic_square")

    def mesh_size(self, nele):
        return mesh_size(self.domain, nele)


def make_rotating_disc(variant="smooth"):
    """Unit disc turned once by ``beta = (y, -x)``."""
    smooth = gaussian(BUMP_CENTER)
    rough = cylinder((-0.5, 0.0))
    initial = {"smooth": smooth, "rough": rough,
               "combined": _sum(smooth, rough)}[variant]
    return Scenario(name=f"rotating_disc_{variant}", domain="disc",
                    velocity=rotation_velocity(), initial=initial,
                    final_time=2.0 * math.pi,
                    smooth_part=smooth if variant == "combined" else None)


def make_square_transport(final_time=1.0):
    """Cylinder plus a Gaussian on the inflow side, moved by ``beta = (1, 0)``."""
    initial = _sum(cylinder((0.5, 0.5)), gaussian((0.0, 0.5)))
    name = "square_transport" if final_time == 1.0 else "square_longterm"
    return Scenario(name=name, domain="square", velocity=constant_velocity(1.0, 0.0),
                    initial=initial, final_time=float(final_time), has_inflow=True)


def make_periodic_cylinder():
    """Cylinder translated once around the periodic unit square."""
    return Scenario(name="periodic_cylinder", domain="periodic_square",
                    velocity=constant_velocity(1.0, 0.0),
                    initial=cylinder((0.5, 0.5)), final_time=1.0)


def make_zero():
    return Scenario(name="zero", domain="periodic_square",
                    velocity=constant_velocity(1.0, 0.0),
                    initial=lambda x, t=0.0: np.zeros(np.shape(x)[:-1]),
                    final_time=1.0)


SCENARIOS = {
    "rotating_disc_smooth": lambda: make_rotating_disc("smooth"),
    "rotating_disc_rough": lambda: make_rotating_disc("rough"),
    "rotating_disc_combined": lambda: make_rotating_disc("combined"),
    "square_transport": lambda: make_square_transport(1.0),
    "square_longterm": lambda: make_square_transport(3.0),
    "periodic_cylinder": make_periodic_cylinder,
    "zero": make_zero,
}


def get_scenario(name):
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; "
                         f"choose from {', '.join(SCENARIOS)}") from None


# ----------------------------------------------------------------------
# single runs and studies

@dataclass
class LevelResult:
    record: analysis.LevelRecord
    trajectory: object = None
    trace: object = None


def simulate(scenario, degree, nele, gamma=DEFAULT_GAMMA, theta=0.5,
             variant="abs_beta", errors=("global_L2",), weight=None,
             stride=None, trace=False, exact=None):
    """Run one level and evaluate the requested errors.

    ``weight`` is a dict with ``center``, ``r0`` and ``K`` for the weighted
    error.  ``exact`` overrides the reference solution used for the final
    errors (e.g. the smooth part of combined data).  ``trace=True``
    records the global L2 error after every step.
    """
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    errors = tuple(errors)
    exact = exact or scenario.exact
    mesh = scenario.build_mesh(nele)
    space = FeSpace(mesh, degree)
    ops = assemble_operators(space, scenario.velocity, gamma, variant)
    h = scenario.mesh_size(nele)
    T = scenario.final_time
    config = ThetaConfig.for_final_time(theta, select_dt(degree, h), T)

    observers = {}
    if "matderiv" in errors:
        observers["matderiv"] = analysis.MaterialDerivativeError(
            space, ops, scenario.velocity, scenario.source, theta)
    if "estimator" in errors:
        observers["estimator"] = analysis.AposterioriEstimator(
            space, ops, scenario.velocity, h, scenario.u0, scenario.source, theta)
    if "stab_seminorm_int" in errors:
        observers["stab_seminorm_int"] = analysis.SeminormIntegral(ops.S, theta)
    tracer = analysis.ErrorTrace(space, scenario.exact) if trace else None
    obs = list(observers.values()) + ([tracer] if tracer else [])

    traj = run_simulation(scenario, space, ops, config, stride=stride, observers=obs)
    uT = traj.final
    vals = {}
    for name in errors:
        if name in observers:
            vals[name] = observers[name].value
        elif name == "global_L2":
            vals[name] = analysis.l2_error(uT, exact, T)
        elif name == "local_L2":
            vals[name] = analysis.l2_error(uT, exact, T, "halfplane_x_pos")
        elif name == "weighted_L2":
            if weight is None:
                raise ValueError("weighted_L2 needs weight parameters")
            w = analysis.WeightFunction(h=h, velocity=scenario.velocity, **weight)
            vals[name] = analysis.weighted_l2_error(uT, exact, w, T)
        elif name == "dual_norm":
            fine = FeSpace(refine_uniform(mesh), degree)
            vals[name] = analysis.dual_norm(uT, fine, exact, T)
        else:
            raise ValueError(f"unknown error measure {name!r}")
    if tracer is not None:
        traj.extras["err_global_L2"] = np.array(tracer.values)
    record = analysis.LevelRecord(nele=nele, h=h, dt=config.dt, errors=vals)
    return LevelResult(record=record, trajectory=traj, trace=tracer)


def _level(args):
    scenario, degree, nele, kw = args
    try:
        return simulate(scenario, degree, nele, **kw).record
    except Exception as exc:  # recorded per level, the study goes on
        log.error("level nele=%d failed: %s", nele, exc)
        sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
        return analysis.LevelRecord(nele=nele, h=sc.mesh_size(nele), dt=math.nan,
                                    failure=str(exc))


def worker_count():
    try:
        n = int(os.environ.get("SOLVER_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, min(n, os.cpu_count() or 1))


def run_convergence_study(scenario, degree, gamma=DEFAULT_GAMMA, theta=0.5,
                          neles=(40, 80, 160), errors=("global_L2",),
                          variant="abs_beta", weight=None, exact=None, label=""):
    """Refinement study over ``neles``; returns an :class:`ErrorReport`.

    Levels run in worker processes when ``SOLVER_THREADS`` > 1 (scenarios
    must then be given by name).  Failed levels are kept with their
    failure message and no errors.
    """
    neles = list(neles)
    if neles != sorted(neles) or len(set(neles)) != len(neles):
        raise ValueError("nele list must be strictly ascending")
    kw = dict(gamma=gamma, theta=theta, variant=variant, errors=tuple(errors),
              weight=weight, exact=exact)
    jobs = [(scenario, degree, n, kw) for n in neles]
    workers = worker_count()
    if workers > 1 and isinstance(scenario, str) and exact is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_level, jobs))
    else:
        records = [_level(j) for j in jobs]
    report = analysis.ErrorReport(label=label)
    for r in records:
        report.add(r)
    return report
