"""Invariant suite run by ``cipfem verify``.

Every check returns a :class:`CheckResult`.  Operators are assembled
through the :mod:`cipfem.operators` module attributes so that tests can
inject faulty assembly routines and watch the suite catch them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from math import factorial

import numpy as np

from . import operators
from .analysis import WeightFunction, dual_norm, weight_derivative_constants
from .fespace import FeFunction, FeSpace, l2_project
from .mesh import Mesh, classify_boundary, generate_disc, generate_square, refine_uniform
from .quadrature import MAX_DEGREE, edge_quadrature, triangle_quadrature
from .timestepper import ThetaConfig, run_simulation

LEVELS = ("fast", "full")


@dataclass(frozen=True)
class SuiteConfig:
    """Discretization parameters shared by the dynamic checks."""

    gamma: float = operators.DEFAULT_GAMMA
    theta: float = 0.5
    variant: str = "abs_beta"


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ----------------------------------------------------------------------
# individual checks; each returns (passed, detail)

def check_config(cfg, level):
    problems = []
    if not (cfg.gamma >= 0 and math.isfinite(cfg.gamma)):
        problems.append(f"gamma={cfg.gamma} must be >= 0")
    if not 0.5 <= cfg.theta <= 1.0:
        problems.append(f"theta={cfg.theta} outside [1/2, 1]")
    if cfg.variant not in operators.CIP_VARIANTS:
        problems.append(f"unknown CIP variant {cfg.variant!r}")
    return not problems, "; ".join(problems) or "gamma, theta, variant valid"


def _monomial_integral(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def check_quadrature(cfg, level):
    worst = 0.0
    for d in range(MAX_DEGREE + 1):
        rule = triangle_quadrature(d)
        x, y = rule.cartesian[:, 0], rule.cartesian[:, 1]
        for a in range(d + 1):
            for b in range(d + 1 - a):
                worst = max(worst, abs(rule.weights @ (x ** a * y ** b)
                                       - _monomial_integral(a, b)))
        e = edge_quadrature(d)
        for a in range(d + 1):
            worst = max(worst, abs(e.weights @ e.cartesian ** a - 1.0 / (a + 1)))
    return worst < 1e-14, f"max monomial error {worst:.1e} up to degree {MAX_DEGREE}"


def _reference_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def check_reference_mass(cfg, level):
    M = operators.assemble_mass(FeSpace(_reference_triangle(), 1)).toarray()
    exact = (np.ones((3, 3)) + np.eye(3)) / 24.0
    err = np.abs(M - exact).max()
    return err < 1e-14, f"|M - closed form| = {err:.1e}"


def _meshes(level):
    out = [("square8", generate_square(8)), ("periodic8", generate_square(8, periodic=True)),
           ("disc16", generate_disc(16))]
    if level == "full":
        out += [("square24", generate_square(24)), ("disc48", generate_disc(48))]
    return out


def check_mesh_topology(cfg, level):
    bad = []
    for name, m in _meshes(level):
        if not m.is_periodic:
            euler = m.n_vertices - m.n_edges + m.n_triangles
            if euler != 1:
                bad.append(f"{name}: V-E+T={euler}")
        elif len(m.boundary_edges):
            bad.append(f"{name}: periodic mesh has boundary edges")
        if np.any(m.areas <= 0):
            bad.append(f"{name}: non-positive area")
        if m.shape_ratios().max() >= 10:
            bad.append(f"{name}: shape ratio {m.shape_ratios().max():.2f}")
    return not bad, "; ".join(bad) or "Euler relation, orientation, shape regularity"


def check_mass_partition(cfg, level):
    worst = 0.0
    for name, m in _meshes(level):
        for k in (1, 2):
            space = FeSpace(m, k)
            M = operators.assemble_mass(space)
            one = np.ones(space.ndof)
            worst = max(worst, abs(one @ (M @ one) - m.area) / m.area)
            worst = max(worst, abs(M - M.T).max())
    return worst < 1e-12, f"max |1'M1 - area|/area, asymmetry = {worst:.1e}"


def check_convection(cfg, level):
    """``A 1 = 0`` everywhere and ``u'Au = 0`` on periodic meshes."""
    rng = np.random.default_rng(1)
    worst_kernel = worst_skew = 0.0
    beta = operators.constant_velocity(1.0, 0.3)
    for name, m in _meshes(level):
        for k in (1, 2):
            space = FeSpace(m, k)
            A = operators.assemble_convection(space, beta)
            worst_kernel = max(worst_kernel, np.abs(A @ np.ones(space.ndof)).max())
            if m.is_periodic:
                for _ in range(5):
                    u = rng.standard_normal(space.ndof)
                    worst_skew = max(worst_skew, abs(u @ (A @ u)) / (u @ u))
    ok = worst_kernel < 1e-12 and worst_skew < 1e-12
    return ok, f"|A 1| = {worst_kernel:.1e}, periodic |u'Au|/|u|^2 = {worst_skew:.1e}"


def _polynomials(k, periodic):
    if periodic:
        return [lambda x: np.ones(len(x))]
    out = [lambda x: np.ones(len(x)), lambda x: x[:, 0], lambda x: 2 * x[:, 0] - 3 * x[:, 1]]
    if k == 2:
        out += [lambda x: x[:, 0] ** 2, lambda x: x[:, 0] * x[:, 1] - x[:, 1] ** 2]
    return out


def check_cip_kernel(cfg, level):
    """S annihilates global polynomials of the space degree."""
    worst = 0.0
    for name, m in _meshes(level):
        vel = operators.rotation_velocity() if name.startswith("disc") else \
            operators.constant_velocity(1.0, 0.3)
        for k in (1, 2):
            space = FeSpace(m, k)
            S = operators.assemble_cip(space, vel, variant=cfg.variant)
            scale = max(abs(S).max(), 1e-300)
            for p in _polynomials(k, m.is_periodic):
                worst = max(worst, np.abs(S @ p(space.dof_coords)).max() / scale)
    return worst < 1e-12, f"max |S p| / max|S| = {worst:.1e}"


def check_cip_spsd(cfg, level):
    """S symmetric and positive semi-definite."""
    worst_sym = 0.0
    min_eig = math.inf
    for name, m in _meshes(level)[:3]:
        vel = operators.rotation_velocity() if name.startswith("disc") else \
            operators.constant_velocity(1.0, 0.3)
        for k in (1, 2):
            S = operators.assemble_cip(FeSpace(m, k), vel, variant=cfg.variant)
            scale = max(abs(S).max(), 1e-300)
            worst_sym = max(worst_sym, abs(S - S.T).max() / scale)
            ev = np.linalg.eigvalsh(0.5 * (S + S.T).toarray())
            min_eig = min(min_eig, ev.min() / scale)
    ok = worst_sym < 1e-13 and min_eig > -1e-12
    return ok, f"asymmetry {worst_sym:.1e}, min eigenvalue / max|S| = {min_eig:.1e}"


def check_inflow_matrix(cfg, level):
    """B is SPSD and ``1'B1`` equals the inflow flux."""
    beta = operators.constant_velocity(1.0, 0.3)
    worst = 0.0
    min_eig = math.inf
    for n in (4, 8):
        m = generate_square(n)
        part = classify_boundary(m, beta)
        for k in (1, 2):
            space = FeSpace(m, k)
            B = operators.assemble_inflow_matrix(space, part, beta)
            one = np.ones(space.ndof)
            worst = max(worst, abs(one @ (B @ one) - 1.3), abs(B - B.T).max())
            min_eig = min(min_eig, np.linalg.eigvalsh(B.toarray()).min())
    ok = worst < 1e-12 and min_eig > -1e-12
    return ok, f"|1'B1 - 1.3| and asymmetry <= {worst:.1e}, min eigenvalue {min_eig:.1e}"


def _inverse_constant(space, S, M, rng, samples):
    worst = 0.0
    for _ in range(samples):
        v = rng.standard_normal(space.ndof)
        worst = max(worst, math.sqrt(max(v @ (S @ v), 0.0) / (v @ (M @ v))))
    return worst


def check_inverse_inequality(cfg, level):
    """Fitted C in ``|v|_s <= C h^{-1/2} beta_inf^{1/2} ||v||`` is h-stable."""
    rng = np.random.default_rng(7)
    beta = operators.constant_velocity(1.0, 0.3)
    samples = 200 if level == "full" else 50
    details = []
    ok = True
    for k in ((1, 2) if level == "full" else (1,)):
        consts = []
        for n in (20, 40, 80):
            m = generate_square(n, periodic=True)
            space = FeSpace(m, k)
            S = operators.assemble_cip(space, beta, variant=cfg.variant)
            M = operators.assemble_mass(space)
            c = _inverse_constant(space, S, M, rng, samples)
            consts.append(c * math.sqrt(m.h / beta.beta_inf))
        spread = max(consts) / min(consts)
        ok &= spread <= 2.0 and min(consts) > 0
        details.append(f"P{k} C = " + ", ".join(f"{c:.3f}" for c in consts))
    return ok, "; ".join(details)


def _periodic_run(cfg, gamma, theta, n=12, k=1, steps=40):
    m = generate_square(n, periodic=True)
    space = FeSpace(m, k)
    beta = operators.constant_velocity(1.0, 0.5)
    ops = operators.assemble_operators(space, beta, gamma, cfg.variant)
    rng = np.random.default_rng(3)
    u0 = FeFunction(space, rng.standard_normal(space.ndof))

    class _Data:
        source = None
        inflow = None
        velocity = beta

        @staticmethod
        def u0(x, t=0.0):
            raise AssertionError("initial state is given explicitly")
    config = ThetaConfig(theta=theta, dt=0.5 / n, n_steps=steps)
    return run_simulation(_Data, space, ops, config, initial=u0).energy


def check_energy_conservation(cfg, level):
    worst = 0.0
    for k in ((1, 2) if level == "full" else (1,)):
        E = _periodic_run(cfg, 0.0, 0.5, k=k)
        worst = max(worst, abs(E[-1] / E[0] - 1.0))
    return worst < 1e-10, f"|E_N/E_0 - 1| = {worst:.1e} (theta=1/2, gamma=0)"


def check_energy_dissipation(cfg, level):
    """Non-increasing energy for the configured gamma; theta=1 dissipates."""
    details = []
    ok = True
    gamma = cfg.gamma if cfg.gamma > 0 else operators.DEFAULT_GAMMA
    for theta, g in ((cfg.theta, gamma), (1.0, 0.0)):
        E = _periodic_run(cfg, g, theta)
        growth = float(np.max(np.diff(E) / E[:-1]))
        ok &= growth <= 1e-12
        details.append(f"theta={theta:g} gamma={g:g}: max relative growth {growth:.1e}")
    return ok, "; ".join(details)


def check_weight_bounds(cfg, level):
    worst = 0.0
    decay_ok = True
    for nele in (40, 80, 160, 320):
        for K in (1.5, 2.0, 4.0):
            w = WeightFunction(center=(0.0, 0.0), r0=0.1, K=K, h=1.0 / nele)
            worst = max(worst, *weight_derivative_constants(w))
            r = np.linspace(0.0, w.r0 + 8 * w.sigma, 400)
            p = w.profile(r)
            decay_ok &= bool(np.all(np.diff(p) <= 0) and np.all(p > 0))
            for mm in (3, 5, 8):
                ratio = w.profile(w.r0 + mm * w.sigma) / w.profile(w.r0 + (mm + 1) * w.sigma)
                decay_ok &= math.exp(0.5) <= ratio <= math.exp(1.5)
    ok = worst <= 3.0 and decay_ok
    return ok, f"max fitted C = {worst:.3f}; monotone positive exponential tail: {decay_ok}"


def check_dual_norm(cfg, level):
    """Discrete dual norm of sin(2 pi x) against its closed form."""
    m = generate_square(32, periodic=True)
    coarse = FeSpace(m, 1)
    fine = FeSpace(refine_uniform(m), 1)
    zero = FeFunction(coarse, np.zeros(coarse.ndof))
    val = dual_norm(zero, fine, lambda x, t: np.sin(2 * np.pi * x[..., 0]))
    exact = math.sqrt(0.5 / (1.0 + 4.0 * math.pi ** 2))
    err = abs(val / exact - 1.0)
    return err < 1e-3, f"relative error {err:.1e}"


def check_disc_convergence(cfg, level):
    """Stabilized P1 smooth disc error at least halves from nele=40 to 80."""
    from .scenarios import simulate
    e = [simulate("rotating_disc_smooth", 1, n, gamma=cfg.gamma, theta=cfg.theta,
                  variant=cfg.variant).record.errors["global_L2"] for n in (40, 80)]
    return e[0] / e[1] >= 2.0, f"errors {e[0]:.3e} -> {e[1]:.3e}"


def check_exact_solutions(cfg, level):
    from .scenarios import SCENARIOS, get_scenario
    rng = np.random.default_rng(5)
    worst0 = worst_l = 0.0
    for name in SCENARIOS:
        sc = get_scenario(name)
        x = rng.uniform(-0.7, 0.7, (100, 2)) if sc.domain == "disc" else rng.uniform(0, 1, (100, 2))
        worst0 = max(worst0, np.abs(sc.exact(x, 0.0) - sc.u0(x)).max())
        # material derivative of the exact solution at points away from jumps
        t, d = 0.3, 1e-5
        b = sc.velocity(x, t)
        lu = (sc.exact(x, t + d) - sc.exact(x, t - d)) / (2 * d) \
            + (sc.exact(x + d * b, t) - sc.exact(x - d * b, t)) / (2 * d)
        smooth = np.abs(sc.exact(x + 3 * d * b, t) - sc.exact(x - 3 * d * b, t)) < 0.5
        smooth &= np.abs(sc.exact(x, t + 3 * d) - sc.exact(x, t - 3 * d)) < 0.5
        if np.any(smooth):
            worst_l = max(worst_l, np.abs(lu[smooth]).max())
    ok = worst0 < 1e-12 and worst_l < 1e-4
    return ok, f"|u(x,0) - u0| = {worst0:.1e}, |Lu| = {worst_l:.1e}"


def check_projection(cfg, level):
    """L2 projection reproduces members of the space."""
    worst = 0.0
    for name, m in _meshes(level)[:3]:
        for k in (1, 2):
            space = FeSpace(m, k)
            M = operators.assemble_mass(space)
            if m.is_periodic:
                f = lambda x, t: np.full(np.shape(x)[:-1], 2.5)
            else:
                f = lambda x, t: 1.0 + x[..., 0] - 2.0 * x[..., 1] + (k - 1) * x[..., 0] * x[..., 1]
            u = l2_project(f, 0.0, space, M)
            worst = max(worst, np.abs(u.coefficients - f(space.dof_coords, 0.0)).max())
    return worst < 1e-10, f"max nodal deviation {worst:.1e}"


CHECKS = [
    ("config", check_config, "fast"),
    ("quadrature_exactness", check_quadrature, "fast"),
    ("reference_mass_p1", check_reference_mass, "fast"),
    ("mesh_topology", check_mesh_topology, "fast"),
    ("mass_partition", check_mass_partition, "fast"),
    ("convection_kernel_skew", check_convection, "fast"),
    ("cip_kernel", check_cip_kernel, "fast"),
    ("cip_spsd", check_cip_spsd, "fast"),
    ("inflow_matrix", check_inflow_matrix, "fast"),
    ("l2_projection", check_projection, "fast"),
    ("inverse_inequality", check_inverse_inequality, "fast"),
    ("energy_conservation", check_energy_conservation, "fast"),
    ("energy_dissipation", check_energy_dissipation, "fast"),
    ("weight_bounds", check_weight_bounds, "fast"),
    ("dual_norm_oracle", check_dual_norm, "full"),
    ("exact_solutions", check_exact_solutions, "full"),
    ("disc_convergence", check_disc_convergence, "full"),
]


def run_suite(level="fast", config=None, report=print):
    """Run the invariant suite; returns the list of :class:`CheckResult`.

    A failed configuration check stops the suite before any assembly.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    config = config or SuiteConfig()
    results = []
    for name, fn, lvl in CHECKS:
        if lvl == "full" and level != "full":
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(config, level)
        except Exception as exc:  # a crash is a failed invariant, not a crashed suite
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(passed), detail, time.perf_counter() - t0)
        results.append(res)
        if report:
            report(res.line())
        if name == "config" and not passed:
            break
    return results
