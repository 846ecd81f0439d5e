"""Theta-scheme time integration with a once-factorized system matrix.

With ``T = A + B + gamma*S`` the step from ``u^{n-1}`` to ``u^n`` solves

    (M/dt + theta T) u^n = (M/dt - (1-theta) T) u^{n-1} + F + b

where the source ``F`` and inflow data ``b`` are evaluated at
``t^{n-1} + theta*dt``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, splu

from .fespace import DIRECT_MAX_DOFS, FeFunction, MassSolver, l2_project
from .operators import assemble_inflow_rhs, assemble_source

SOLVE_RTOL = 1e-12
FAIL_RTOL = 1e-10
ORDERING = "MMD_AT_PLUS_A"


class StepFailure(RuntimeError):
    """A time step could not be solved to tolerance."""


@dataclass(frozen=True)
class ThetaConfig:
    theta: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [1/2, 1], got {self.theta}")
        if self.dt <= 0 or self.n_steps < 0:
            raise ValueError("need dt > 0 and n_steps >= 0")

    @property
    def final_time(self):
        return self.n_steps * self.dt

    @classmethod
    def for_final_time(cls, theta, dt_max, final_time):
        """Largest ``dt <= dt_max`` landing exactly on ``final_time``."""
        n = max(1, math.ceil(final_time / dt_max - 1e-9))
        return cls(theta=theta, dt=final_time / n, n_steps=n)


def mesh_size(domain, nele):
    """Nominal mesh size used for time steps and rate plots."""
    if domain == "disc":
        return 2.0 * math.pi / nele
    if domain in ("square", "periodic_square"):
        return 1.0 / nele
    raise ValueError(f"unknown domain {domain!r}")


def select_dt(degree, h, final_time=None):
    """``h/2`` for P1, ``h^{3/2}/2`` for P2, shrunk to hit ``final_time``."""
    if degree == 1:
        dt = 0.5 * h
    elif degree == 2:
        dt = 0.5 * h ** 1.5
    else:
        raise ValueError(f"unsupported degree {degree}")
    if final_time is not None:
        dt = ThetaConfig.for_final_time(0.5, dt, final_time).dt
    return dt


class ThetaSystem:
    """Left- and right-hand operators of the theta scheme.

    The left-hand matrix is LU-factorized once at construction.  Its
    symmetric part is positive definite, so the factorization keeps the
    fill-reducing symmetric ordering and pivots on the diagonal.  Systems
    larger than ``direct_max`` unknowns use Jacobi-preconditioned BiCGSTAB
    started from a linear extrapolation of the previous solutions; both
    paths enforce the same residual tolerance.
    """

    def __init__(self, ops, config, direct_max=None):
        self.ops = ops
        self.config = config
        th, dt = config.theta, config.dt
        T = ops.transport
        self.lhs = (ops.M / dt + th * T).tocsc()
        self.rhs = (ops.M / dt - (1.0 - th) * T).tocsr()
        self.last_residual = 0.0
        self.last_iterations = 0
        direct_max = DIRECT_MAX_DOFS if direct_max is None else direct_max
        self.direct = self.lhs.shape[0] <= direct_max
        self._history = []
        if self.direct:
            try:
                self._lu = splu(self.lhs, permc_spec=ORDERING, diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise StepFailure(f"singular system matrix: {exc}") from exc
        else:
            self._lhs_csr = self.lhs.tocsr()
            diag = self._lhs_csr.diagonal()
            if np.any(diag <= 0):
                raise StepFailure("system matrix has a non-positive diagonal")
            inv = 1.0 / diag
            self._jacobi = LinearOperator(self.lhs.shape, matvec=lambda x: inv * x,
                                          dtype=float)

    def _residual(self, x, b, nb):
        return np.linalg.norm(self.lhs @ x - b) / nb

    def _iterate(self, b):
        h = self._history
        x0 = 2.0 * h[-1] - h[-2] if len(h) == 2 else (h[-1] if h else None)
        count = [0]

        def cb(_):
            count[0] += 1
        x, info = bicgstab(self._lhs_csr, b, x0=x0, M=self._jacobi,
                           rtol=0.1 * SOLVE_RTOL, atol=0.0, maxiter=1000, callback=cb)
        self.last_iterations = count[0]
        return x

    def solve(self, b):
        nb = np.linalg.norm(b)
        if nb == 0.0:
            self.last_residual = 0.0
            return np.zeros_like(b)
        if self.direct:
            x = self._lu.solve(b)
            res = self._residual(x, b, nb)
            if res > SOLVE_RTOL:
                x += self._lu.solve(b - self.lhs @ x)
                res = self._residual(x, b, nb)
        else:
            x = self._iterate(b)
            res = self._residual(x, b, nb)
        if not np.isfinite(res) or res > FAIL_RTOL:
            raise StepFailure(f"linear solve residual {res:.2e} exceeds {FAIL_RTOL:g}")
        self.last_residual = res
        if not self.direct:
            self._history = (self._history + [x.copy()])[-2:]
        return x


def build_system(ops, config):
    return ThetaSystem(ops, config)


def _load(space, ops, t_eval, source, inflow, velocity):
    b = 0.0
    if source is not None:
        b = b + assemble_source(space, source, t_eval)
    if inflow is not None and ops.B is not None:
        b = b + assemble_inflow_rhs(space, ops.partition, velocity, inflow, t_eval)
    return b


def theta_step(system, state, t_prev, source=None, inflow=None, velocity=None):
    """Advance ``state`` from ``t_prev`` by one step."""
    space = state.space
    t_eval = t_prev + system.config.theta * system.config.dt
    b = system.rhs @ state.coefficients + _load(space, system.ops, t_eval,
                                                source, inflow, velocity)
    return FeFunction(space, system.solve(b))


@dataclass
class Trajectory:
    """Snapshots and per-step diagnostics of one simulation."""

    space: object
    config: ThetaConfig
    times: np.ndarray
    energy: np.ndarray
    cip_seminorm: np.ndarray
    residual: np.ndarray
    snapshot_times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def final(self):
        return FeFunction(self.space, self.snapshots[-1])

    @property
    def initial(self):
        return FeFunction(self.space, self.snapshots[0])

    def write_diagnostics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["step", "t", "energy", "cip_seminorm"] + list(self.extras)
            w.writerow(cols)
            for n, t in enumerate(self.times):
                row = [n, repr(float(t)), repr(float(self.energy[n])),
                       repr(float(self.cip_seminorm[n]))]
                row += [repr(float(v[n])) for v in self.extras.values()]
                w.writerow(row)

    def write_snapshots(self, directory, mesh_ref="mesh.txt"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, (t, c) in enumerate(zip(self.snapshot_times, self.snapshots)):
            p = directory / f"snapshot_{i:05d}.txt"
            with open(p, "w") as fh:
                fh.write(f"# mesh {mesh_ref} degree {self.space.degree}\n")
                fh.write(repr(float(t)) + " " + " ".join(repr(float(v)) for v in c) + "\n")
            paths.append(p)
        return paths


def _seminorm(S, c):
    return math.sqrt(max(float(c @ (S @ c)), 0.0))


def run_simulation(scenario, space, ops, config, stride=None, observers=(),
                   initial=None):
    """Integrate ``scenario`` from ``u_h(0) = pi_h u_0`` over ``config``.

    ``stride`` controls the snapshot spacing (``None`` keeps only the first
    and last state).  Each observer's ``step(t_prev, dt, u_prev, u_new)``
    is called after every step with coefficient vectors, and ``start(u0)``
    before the first.
    """
    mass = MassSolver(ops.M)
    u = initial if initial is not None else l2_project(scenario.u0, 0.0, space, ops.M, mass)
    system = ThetaSystem(ops, config)
    N = config.n_steps
    times = config.dt * np.arange(N + 1)
    energy = np.empty(N + 1)
    cip = np.empty(N + 1)
    residual = np.zeros(N + 1)
    M, S = ops.M, ops.S
    c = u.coefficients
    energy[0] = math.sqrt(float(c @ (M @ c)))
    cip[0] = _seminorm(S, c)
    snap_t, snaps = [0.0], [c.copy()]
    for obs in observers:
        if hasattr(obs, "start"):
            obs.start(c)
    for n in range(1, N + 1):
        t_prev = times[n - 1]
        new = theta_step(system, u, t_prev, scenario.source, scenario.inflow,
                         scenario.velocity)
        for obs in observers:
            obs.step(t_prev, config.dt, u.coefficients, new.coefficients)
        u = new
        c = u.coefficients
        energy[n] = math.sqrt(max(float(c @ (M @ c)), 0.0))
        cip[n] = _seminorm(S, c)
        residual[n] = system.last_residual
        if n == N or (stride and n % stride == 0):
            snap_t.append(times[n])
            snaps.append(c.copy())
    if N == 0:
        snap_t.append(0.0)
        snaps.append(c.copy())
    return Trajectory(space=space, config=config, times=times, energy=energy,
                      cip_seminorm=cip, residual=residual,
                      snapshot_times=snap_t, snapshots=snaps)
