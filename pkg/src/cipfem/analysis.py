"""Error measures, diagnostics and convergence tables.

Per-step quantities (material derivative error, a posteriori estimator,
CIP semi-norm integral, L2 error trace) are accumulators with a
``step(t_prev, dt, u_prev, u_new)`` method that the time loop calls; the
same accumulators replay a stored :class:`~cipfem.timestepper.Trajectory`
when all steps were kept.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fespace import FeFunction, MassSolver, l2_project
from .operators import (assemble_mass, assemble_stiffness,
                        assemble_streamline)
from .quadrature import triangle_quadrature

DUAL_RTOL = 1e-12


# ----------------------------------------------------------------------
# regions and L2-type errors

def region_mask(mesh, region):
    """Cells belonging to a region, decided by the cell barycentre.

    ``region`` is ``"global"``, ``"halfplane_x_pos"`` or
    ``("ball", (x0, y0), r)``.
    """
    if region in (None, "global"):
        return np.ones(mesh.n_triangles, dtype=bool)
    xc = mesh.barycenters
    if region == "halfplane_x_pos":
        return xc[:, 0] > 0.0
    if isinstance(region, tuple) and region[0] == "ball":
        _, c, r = region
        return np.hypot(xc[:, 0] - c[0], xc[:, 1] - c[1]) < r
    raise ValueError(f"unknown region {region!r}")


def _data_rule(space):
    return triangle_quadrature(2 * space.degree + 4)


def l2_error(u_h, exact, t, region="global"):
    """``|| u_h - u(., t) ||`` over a region."""
    space = u_h.space
    rule = _data_rule(space)
    cells = np.flatnonzero(region_mask(space.mesh, region))
    diff = u_h.values_at(rule, cells) - exact(space.quad_points(rule, cells), t)
    return math.sqrt(float(np.sum(space.quad_weights(rule, cells) * diff ** 2)))


def weighted_l2_error(u_h, exact, weight, t):
    """``|| w(., t) (u_h - u(., t)) ||``."""
    space = u_h.space
    rule = _data_rule(space)
    x = space.quad_points(rule)
    diff = weight(x, t) * (u_h.values_at(rule) - exact(x, t))
    return math.sqrt(float(np.sum(space.quad_weights(rule) * diff ** 2)))


def stab_seminorm(u_h, S):
    """``|u_h|_s = sqrt(u^T S u)``, clamped at zero against round-off."""
    c = u_h.coefficients if isinstance(u_h, FeFunction) else np.asarray(u_h)
    v = float(c @ (S @ c))
    if v < -1e-14 * max(1.0, float(c @ c)):
        raise ValueError(f"stabilization form is negative: {v:.3e}")
    return math.sqrt(max(v, 0.0))


# ----------------------------------------------------------------------
# time-step accumulators

class _StepForms:
    """Shared matrices for residual-type accumulators.

    For ``r = f - (u^n - u^{n-1})/dt - beta . grad u^theta`` the squared
    L2 norm is an exact quadratic form in the coefficients, built from
    M, the convection matrix A and the streamline matrix K.
    """

    def __init__(self, space, ops, velocity, source, theta):
        self.space = space
        self.M = ops.M
        self.A = ops.A
        self.K = assemble_streamline(space, velocity, ops.time)
        self.velocity = velocity
        self.source = source
        self.theta = theta
        if source is not None:
            self._rule = _data_rule(space)
            self._x = space.quad_points(self._rule)
            self._w = space.quad_weights(self._rule)
            g = space.grad_basis(self._rule.points)
            bg = np.einsum("tqd,tqad->tqa", velocity(self._x, ops.time), g)
            self._bgrad = bg

    def source_terms(self, t):
        """``(f, phi_i)``, ``(f, beta . grad phi_i)`` and ``||f||^2``."""
        if self.source is None:
            return None
        f = self.source(self._x, t)
        wf = self._w * f
        phi = self.space.basis(self._rule.points)
        d = self.space.element_dofs.ravel()
        n = self.space.ndof
        Fp = np.bincount(d, np.einsum("tq,qa->ta", wf, phi).ravel(), minlength=n)
        Fb = np.bincount(d, np.einsum("tq,tqa->ta", wf, self._bgrad).ravel(), minlength=n)
        return Fp, Fb, float(np.sum(wf * f))

    def theta_state(self, u_prev, u_new):
        return self.theta * u_new + (1.0 - self.theta) * u_prev


class MaterialDerivativeError:
    """``sqrt(sum_n dt ||f^{n,theta} - L_theta^n u_h||^2)``."""

    def __init__(self, space, ops, velocity, source=None, theta=0.5):
        self.forms = _StepForms(space, ops, velocity, source, theta)
        self.total = 0.0

    def step(self, t_prev, dt, u_prev, u_new):
        fm = self.forms
        a = (u_new - u_prev) / dt
        b = fm.theta_state(u_prev, u_new)
        Ab = fm.A @ b
        val = a @ (fm.M @ a) + 2.0 * (a @ Ab) + b @ (fm.K @ b)
        src = fm.source_terms(t_prev + fm.theta * dt)
        if src is not None:
            Fp, Fb, ff = src
            val += ff - 2.0 * (Fp @ a) - 2.0 * (Fb @ b)
        self.total += dt * max(float(val), 0.0)

    @property
    def value(self):
        return math.sqrt(self.total)


class SeminormIntegral:
    """``sqrt(sum_n dt |u^{n,theta}|_s^2)``."""

    def __init__(self, S, theta=0.5):
        self.S = S
        self.theta = theta
        self.total = 0.0

    def step(self, t_prev, dt, u_prev, u_new):
        b = self.theta * u_new + (1.0 - self.theta) * u_prev
        self.total += dt * max(float(b @ (self.S @ b)), 0.0)

    @property
    def value(self):
        return math.sqrt(self.total)


class AposterioriEstimator:
    """Residual estimator of the final-time error in the dual norm.

    ``h ||u0 - pi_h u0|| + sum_n dt (h ||(I - pi_h)(f - beta . grad u^theta)||
    + gamma h^{1/2} |u^theta|_s)``.  The infimum over the discrete space is
    attained by the L2 projection, so it is evaluated exactly through
    ``||g||^2 - ||pi_h g||^2``.
    """

    def __init__(self, space, ops, velocity, h, u0, source=None, theta=0.5):
        self.forms = _StepForms(space, ops, velocity, source, theta)
        self.mass = MassSolver(ops.M)
        self.S = ops.S
        self.gamma = ops.gamma
        self.h = h
        self.u0 = u0
        self.initial = 0.0
        self.integral = 0.0

    def start(self, c0):
        u0h = FeFunction(self.forms.space, c0)
        self.initial = self.h * l2_error(u0h, self.u0, 0.0)

    def step(self, t_prev, dt, u_prev, u_new):
        fm = self.forms
        b = fm.theta_state(u_prev, u_new)
        load = -(fm.A @ b)                       # (g, phi_i) with g = f - beta.grad u
        gg = float(b @ (fm.K @ b))
        src = fm.source_terms(t_prev + fm.theta * dt)
        if src is not None:
            Fp, Fb, ff = src
            load = load + Fp
            gg += ff - 2.0 * (Fb @ b)
        proj = self.mass.solve(load)
        resid = math.sqrt(max(gg - float(load @ proj), 0.0))
        semi = math.sqrt(max(float(b @ (self.S @ b)), 0.0))
        self.integral += dt * (self.h * resid + self.gamma * math.sqrt(self.h) * semi)

    @property
    def value(self):
        return self.initial + self.integral


class ErrorTrace:
    """Global L2 error after every step (and at t = 0)."""

    def __init__(self, space, exact):
        self.space = space
        self.exact = exact
        self.rule = _data_rule(space)
        self._x = space.quad_points(self.rule)
        self._w = space.quad_weights(self.rule)
        self._phi = space.basis(self.rule.points)
        self.times = []
        self.values = []

    def _err(self, c, t):
        vals = c[self.space.element_dofs] @ self._phi.T
        diff = vals - self.exact(self._x, t)
        return math.sqrt(float(np.sum(self._w * diff ** 2)))

    def start(self, c0):
        self.times.append(0.0)
        self.values.append(self._err(c0, 0.0))

    def step(self, t_prev, dt, u_prev, u_new):
        t = t_prev + dt
        self.times.append(t)
        self.values.append(self._err(u_new, t))


def replay(trajectory, accumulator):
    """Feed consecutive stored states of a full trajectory to an accumulator."""
    times = np.asarray(trajectory.snapshot_times)
    if len(times) != trajectory.config.n_steps + 1:
        raise ValueError("trajectory must keep every step (stride 1)")
    snaps = trajectory.snapshots
    if hasattr(accumulator, "start"):
        accumulator.start(snaps[0])
    dt = trajectory.config.dt
    for n in range(1, len(snaps)):
        accumulator.step(times[n - 1], dt, snaps[n - 1], snaps[n])
    return accumulator


def material_derivative_error(trajectory, ops, velocity, source=None):
    acc = MaterialDerivativeError(trajectory.space, ops, velocity, source,
                                  trajectory.config.theta)
    return replay(trajectory, acc).value


def apost_estimator(trajectory, ops, velocity, u0, h, source=None):
    acc = AposterioriEstimator(trajectory.space, ops, velocity, h, u0, source,
                               trajectory.config.theta)
    return replay(trajectory, acc).value


# ----------------------------------------------------------------------
# weight function

def _profile_exponent(s):
    return s * s / (1.0 + s)


@dataclass(frozen=True)
class WeightFunction:
    """Radial weight transported along characteristics.

    ``phi(r) = 1`` for ``r <= r0`` and ``exp(-q((r - r0)/sigma))`` beyond,
    with ``q(s) = s^2/(1+s)`` and ``sigma = K sqrt(h)``.  The profile is C1
    at ``r0`` and decays like ``exp(-(r - r0)/sigma)``.
    """

    center: tuple
    r0: float
    K: float
    h: float
    velocity: object = None

    def __post_init__(self):
        if self.r0 <= 0 or self.h <= 0:
            raise ValueError("need r0 > 0 and h > 0")
        if self.K <= 1:
            raise ValueError("K must exceed 1")

    @property
    def sigma(self):
        return self.K * math.sqrt(self.h)

    def profile(self, r):
        s = np.maximum((np.asarray(r, dtype=float) - self.r0) / self.sigma, 0.0)
        return np.exp(-_profile_exponent(s))

    def __call__(self, x, t=0.0):
        return weight_eval(self, x, t)


def weight_eval(weight, x, t):
    """``phi(|X(x, t) - x0|)`` with ``X`` the backward characteristic map."""
    x = np.asarray(x, dtype=float)
    if t != 0.0:
        flow = getattr(weight.velocity, "flow", None)
        if flow is None:
            raise NotImplementedError("velocity has no closed-form characteristic flow")
        x = flow(x, t)
    c = np.asarray(weight.center, dtype=float)
    r = np.hypot(x[..., 0] - c[0], x[..., 1] - c[1])
    return weight.profile(r)


def weight_derivative_constants(weight, nsamples=200, rel_step=1e-4):
    """Fitted ``C_l = max |d^l phi/dr^l| sigma^l / phi`` for l = 1, 2.

    Derivatives by central differences at ``nsamples`` radii spread over
    ``[0, r0 + 10 sigma]``.
    """
    sig = weight.sigma
    r = np.linspace(0.0, weight.r0 + 10.0 * sig, nsamples + 2)[1:-1]
    d = rel_step * sig
    p0 = weight.profile(r)
    pp, pm = weight.profile(r + d), weight.profile(r - d)
    d1 = (pp - pm) / (2 * d)
    d2 = (pp - 2 * p0 + pm) / d ** 2
    return float(np.max(np.abs(d1) * sig / p0)), float(np.max(np.abs(d2) * sig ** 2 / p0))


# ----------------------------------------------------------------------
# dual norm

def _coarse_values(u_h, fine_mesh, fine_points):
    """Evaluate a coarse FE function at points of nested fine cells."""
    coarse = u_h.space.mesh
    parent = fine_mesh.parent
    v0 = coarse.vertices[coarse.triangles[parent, 0]]        # (nf, 2)
    g = coarse.grad_lambda[parent]                           # (nf, 3, 2)
    lam = np.einsum("fmd,fqd->fqm", g, fine_points - v0[:, None, :])
    lam[:, :, 0] += 1.0
    nf, nq = lam.shape[:2]
    phi = u_h.space.basis(lam.reshape(-1, 3)).reshape(nf, nq, -1)
    return np.einsum("fqa,fa->fq", phi, u_h.coefficients[u_h.space.element_dofs[parent]])


def dual_norm(e, fine_space, exact=None, t=0.0):
    """Discrete ``H^1``-dual norm of ``exact(., t) - e`` (or of ``e``).

    ``e`` is a finite element function on a coarse space;
    ``fine_space`` lives on a uniform refinement of its mesh (it carries
    ``mesh.parent``).  The Riesz problem
    ``(z, w) + (grad z, grad w) = (exact - e, w)`` is solved on the fine
    space and ``sqrt((z, exact - e))`` returned.
    """
    mesh = fine_space.mesh
    rule = triangle_quadrature(2 * fine_space.degree + 4)
    x = fine_space.quad_points(rule)
    if e.space is fine_space:
        vals = e.values_at(rule)
    else:
        if getattr(mesh, "parent", None) is None:
            raise ValueError("fine space must come from refine_uniform")
        vals = _coarse_values(e, mesh, x)
    if exact is not None:
        vals = exact(x, t) - vals
    load = fine_space.load_vector(vals, rule)
    if not np.any(load):
        return 0.0
    R = (assemble_mass(fine_space) + assemble_stiffness(fine_space)).tocsc()
    z = splu(R, permc_spec="MMD_AT_PLUS_A").solve(load)
    res = np.linalg.norm(R @ z - load) / np.linalg.norm(load)
    if res > DUAL_RTOL:
        raise RuntimeError(f"Riesz solve residual {res:.2e} exceeds {DUAL_RTOL:g}")
    return math.sqrt(max(float(z @ load), 0.0))


# ----------------------------------------------------------------------
# convergence tables

ERROR_COLUMNS = {
    "global_L2": "err_global_L2",
    "local_L2": "err_local_L2",
    "matderiv": "err_matderiv",
    "stab_seminorm_int": "stab_seminorm_int",
    "weighted_L2": "weighted_L2",
    "dual_norm": "dual_norm",
    "estimator": "estimator",
}


@dataclass
class LevelRecord:
    nele: int
    h: float
    dt: float
    errors: dict = field(default_factory=dict)
    failure: str = None


@dataclass
class ErrorReport:
    """Per-level errors of a refinement study."""

    levels: list = field(default_factory=list)
    label: str = ""

    def add(self, record):
        self.levels.append(record)
        self.levels.sort(key=lambda r: -r.h)

    def series(self, name):
        return np.array([lv.errors.get(name, np.nan) for lv in self.levels])

    @property
    def h(self):
        return np.array([lv.h for lv in self.levels])

    def rates(self):
        return convergence_rates(self)

    def to_csv(self, path):
        names = list(ERROR_COLUMNS)
        rates = self.rates()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nele", "h", "dt"] + [ERROR_COLUMNS[n] for n in names])
            for lv in self.levels:
                w.writerow([lv.nele, repr(lv.h), repr(lv.dt)]
                           + [_fmt(lv.errors.get(n)) for n in names])
            w.writerow([])
            w.writerow(["# rates"])
            w.writerow(["nele_coarse", "nele_fine"] + [ERROR_COLUMNS[n] for n in names])
            for i in range(len(self.levels) - 1):
                w.writerow([self.levels[i].nele, self.levels[i + 1].nele]
                           + [_fmt(rates[n][i]) if n in rates else "" for n in names])


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def convergence_rates(report):
    """``log(e_coarse/e_fine) / log(h_coarse/h_fine)`` per error name.

    Undefined rates (zero, negative or missing errors) are NaN.
    """
    names = sorted({n for lv in report.levels for n in lv.errors},
                   key=lambda n: list(ERROR_COLUMNS).index(n) if n in ERROR_COLUMNS else 99)
    h = report.h
    out = {}
    for n in names:
        e = report.series(n)
        r = []
        for i in range(len(e) - 1):
            ok = e[i] > 0 and e[i + 1] > 0 and np.isfinite(e[i]) and np.isfinite(e[i + 1])
            r.append(math.log(e[i] / e[i + 1]) / math.log(h[i] / h[i + 1]) if ok else math.nan)
        out[n] = r
    return out
