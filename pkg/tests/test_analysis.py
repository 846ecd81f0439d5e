import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cipfem.analysis import (AposterioriEstimator, ErrorReport, LevelRecord,
                             MaterialDerivativeError, SeminormIntegral, WeightFunction,
                             apost_estimator, convergence_rates, dual_norm, l2_error,
                             material_derivative_error, region_mask, stab_seminorm,
                             weight_derivative_constants, weight_eval, weighted_l2_error)
from cipfem.fespace import FeFunction, FeSpace, interpolate_nodal
from cipfem.mesh import generate_disc, generate_square, refine_uniform
from cipfem.operators import assemble_cip, assemble_operators, constant_velocity, rotation_velocity
from cipfem.scenarios import Scenario, gaussian
from cipfem.timestepper import ThetaConfig, run_simulation

ZERO = lambda x, t=0.0: np.zeros(np.shape(x)[:-1])


# ----------------------------------------------------------------------
# L2 errors

def test_l2_error_of_reproduced_linear_is_zero():
    space = FeSpace(generate_square(5), 1)
    f = lambda x, t: 2 * x[..., 0] - x[..., 1]
    assert l2_error(interpolate_nodal(f, 0.0, space), f, 0.0) < 1e-12


def test_l2_error_of_one_against_zero():
    space = FeSpace(generate_square(3), 2)
    one = FeFunction(space, np.ones(space.ndof))
    assert l2_error(one, ZERO, 0.0) == pytest.approx(1.0, rel=1e-13)


def test_regions():
    m = generate_disc(24)
    half = region_mask(m, "halfplane_x_pos")
    assert half.sum() == pytest.approx(m.n_triangles / 2, rel=0.05)
    ball = region_mask(m, ("ball", (0.5, 0.0), 0.3))
    assert ball.any() and not ball.all()
    with pytest.raises(ValueError):
        region_mask(m, "moon")
    space = FeSpace(m, 1)
    one = FeFunction(space, np.ones(space.ndof))
    assert l2_error(one, ZERO, 0.0, "halfplane_x_pos") ** 2 == pytest.approx(
        m.areas[half].sum(), rel=1e-12)


@settings(max_examples=20)
@given(a=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_norms_are_homogeneous(a, seed):
    space = FeSpace(generate_square(3), 1)
    c = np.random.default_rng(seed).standard_normal(space.ndof)
    u, au = FeFunction(space, c), FeFunction(space, a * c)
    S = assemble_cip(space, constant_velocity(1.0, 0.0))
    w = WeightFunction(center=(0.3, 0.4), r0=0.2, K=2.0, h=1 / 3)
    tol = lambda x: 1e-12 * max(1.0, abs(x))
    assert l2_error(au, ZERO, 0.0) == pytest.approx(abs(a) * l2_error(u, ZERO, 0.0), abs=tol(a))
    assert stab_seminorm(au, S) == pytest.approx(abs(a) * stab_seminorm(u, S), abs=tol(a))
    assert weighted_l2_error(au, ZERO, w, 0.0) == pytest.approx(
        abs(a) * weighted_l2_error(u, ZERO, w, 0.0), abs=tol(a))


def test_stab_seminorm_of_linear_is_zero():
    space = FeSpace(generate_disc(16), 2)
    S = assemble_cip(space, rotation_velocity())
    lin = interpolate_nodal(lambda x, t: 3 - x[..., 0] + 2 * x[..., 1], 0.0, space)
    # the square root amplifies round-off, so test the quadratic form
    c = lin.coefficients
    assert stab_seminorm(lin, S) ** 2 < 1e-14 * (c @ c) * abs(S).max()
    with pytest.raises(ValueError):
        stab_seminorm(np.random.default_rng(0).standard_normal(space.ndof), -S)


# ----------------------------------------------------------------------
# weight function

def test_weight_examples():
    w = WeightFunction(center=(0.5, 0.0), r0=0.1, K=2.0, h=0.04, velocity=constant_velocity(1, 0))
    assert w.sigma == pytest.approx(0.4)
    assert weight_eval(w, np.array([0.55, 0.05]), 0.0) == 1.0
    assert weight_eval(w, np.array([0.5 + 0.7, 0.0]), 0.7) == pytest.approx(1.0)
    assert w.profile(w.r0 + w.sigma) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_weight_shape_invariants():
    w = WeightFunction(center=(0, 0), r0=0.2, K=3.0, h=0.01)
    r = np.linspace(0, 5, 2001)
    p = w.profile(r)
    assert np.all(p[r <= 0.2] == 1.0)
    assert np.all(np.diff(p) <= 0) and np.all(p > 0)
    for m in range(3, 12):
        ratio = w.profile(w.r0 + m * w.sigma) / w.profile(w.r0 + (m + 1) * w.sigma)
        assert math.exp(0.5) <= ratio <= math.exp(1.5)


@pytest.mark.parametrize("h", [0.1, 0.01, 0.001])
def test_weight_derivative_constants_bounded(h):
    c1, c2 = weight_derivative_constants(WeightFunction(center=(0, 0), r0=0.1, K=2.0, h=h))
    assert c1 <= 3 and c2 <= 3
    assert c1 == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("vel", [rotation_velocity(), constant_velocity(1.0, -0.4)],
                         ids=["rotation", "translation"])
def test_weight_is_constant_along_characteristics(vel, rng):
    w = WeightFunction(center=(0.5, 0.0), r0=0.1, K=2.0, h=0.02, velocity=vel)
    d = 1e-5
    for _ in range(50):
        x = rng.uniform(-1, 1, 2)
        t = rng.uniform(0, 3)
        dt = (w(x, t + d) - w(x, t - d)) / (2 * d)
        grad = np.array([(w(x + d * e, t) - w(x - d * e, t)) / (2 * d) for e in np.eye(2)])
        assert abs(dt + vel(x, t) @ grad) <= 1e-6


def test_weight_needs_flow():
    from cipfem.operators import VelocityField
    vel = VelocityField(field=lambda x, t: np.broadcast_to([1.0, 0.0], np.shape(x)), beta_inf=1.0)
    w = WeightFunction(center=(0, 0), r0=0.1, K=2.0, h=0.01, velocity=vel)
    assert w(np.zeros(2), 0.0) == 1.0
    with pytest.raises(NotImplementedError):
        w(np.zeros(2), 0.5)


@pytest.mark.parametrize("kw", [dict(r0=0.0), dict(K=1.0), dict(h=0.0)])
def test_weight_rejects_bad_parameters(kw):
    args = dict(center=(0, 0), r0=0.1, K=2.0, h=0.01) | kw
    with pytest.raises(ValueError):
        WeightFunction(**args)


def test_unit_weight_gives_global_error(rng):
    space = FeSpace(generate_disc(16), 2)
    u = FeFunction(space, rng.standard_normal(space.ndof))
    exact = gaussian((0.5, 0.0))
    w = WeightFunction(center=(0, 0), r0=5.0, K=2.0, h=0.1)
    assert weighted_l2_error(u, exact, w, 0.0) == pytest.approx(l2_error(u, exact, 0.0), rel=1e-12)
    assert weighted_l2_error(interpolate_nodal(ZERO, 0, space), ZERO, w, 0.0) == 0.0


def test_weighted_error_is_monotone_in_the_weight(rng):
    space = FeSpace(generate_disc(16), 1)
    u = FeFunction(space, rng.standard_normal(space.ndof))
    exact = gaussian((0.5, 0.0))
    vals = [weighted_l2_error(u, exact, WeightFunction(center=(0.5, 0), r0=r0, K=K, h=0.05), 0.0)
            for r0, K in [(0.1, 1.5), (0.1, 3.0), (0.3, 3.0), (0.6, 4.0)]]
    assert vals == sorted(vals)


# ----------------------------------------------------------------------
# dual norm

def test_dual_norm_of_zero():
    m = generate_square(4, periodic=True)
    fine = FeSpace(refine_uniform(m), 1)
    assert dual_norm(FeFunction(FeSpace(m, 1), np.zeros(16)), fine) == 0.0


@pytest.mark.parametrize("c", [1.0, -2.5])
def test_dual_norm_of_constant(c):
    m = generate_square(4, periodic=True)
    coarse = FeSpace(m, 2)
    e = FeFunction(coarse, np.full(coarse.ndof, c))
    assert dual_norm(e, FeSpace(refine_uniform(m), 2)) == pytest.approx(abs(c), rel=1e-12)


@settings(max_examples=10)
@given(seed=st.integers(0, 2 ** 16), k=st.sampled_from([1, 2]))
def test_dual_norm_bounded_by_l2(seed, k):
    m = generate_square(4, periodic=True)
    coarse = FeSpace(m, k)
    e = FeFunction(coarse, np.random.default_rng(seed).standard_normal(coarse.ndof))
    fine = FeSpace(refine_uniform(m), k)
    assert dual_norm(e, fine) <= l2_error(e, ZERO, 0.0) * (1 + 1e-10)


def test_dual_norm_of_oscillation_matches_fourier_value():
    """For sin(2 pi m x) the H^1 dual norm is ||.|| / sqrt(1 + (2 pi m)^2)."""
    m = generate_square(32, periodic=True)
    coarse = FeSpace(m, 2)
    zero = FeFunction(coarse, np.zeros(coarse.ndof))
    f = lambda x, t: np.sin(2 * np.pi * 2 * x[..., 0])
    val = dual_norm(zero, FeSpace(refine_uniform(m), 2), f)
    assert val == pytest.approx(math.sqrt(0.5 / (1 + (4 * np.pi) ** 2)), rel=1e-4)


def test_dual_norm_requires_nested_space():
    m = generate_square(4, periodic=True)
    e = FeFunction(FeSpace(m, 1), np.ones(16))
    with pytest.raises(ValueError):
        dual_norm(e, FeSpace(generate_square(8, periodic=True), 1))


# ----------------------------------------------------------------------
# trajectory accumulators

def _still_run(u0, gamma=0.0, source=None, k=1, steps=5):
    vel = constant_velocity(0.0, 0.0) if source is None else constant_velocity(1.0, 0.0)
    sc = Scenario(name="still", domain="periodic_square", velocity=vel,
                  initial=u0, final_time=1.0, source=source)
    space = FeSpace(sc.build_mesh(6), k)
    ops = assemble_operators(space, vel, gamma)
    cfg = ThetaConfig(0.5, 1.0 / steps, steps)
    traj = run_simulation(sc, space, ops, cfg, stride=1)
    return sc, ops, traj


def test_material_derivative_zero_for_still_state():
    sc, ops, traj = _still_run(gaussian((0.5, 0.5)))
    assert material_derivative_error(traj, ops, sc.velocity) < 1e-12


def test_estimator_zero_for_discrete_still_data():
    sc, ops, traj = _still_run(lambda x, t=0.0: np.full(np.shape(x)[:-1], 2.0))
    assert apost_estimator(traj, ops, sc.velocity, sc.u0, 1 / 6) < 1e-12


def test_estimator_is_nonnegative_and_homogeneous():
    base = gaussian((0.5, 0.5))
    vals = []
    for a in (1.0, -3.0):
        u0 = lambda x, t=0.0, a=a: a * base(x)
        vel = constant_velocity(1.0, 0.0)
        sc = Scenario(name="s", domain="periodic_square", velocity=vel, initial=u0, final_time=0.5)
        space = FeSpace(sc.build_mesh(6), 1)
        ops = assemble_operators(space, vel, 0.05)
        traj = run_simulation(sc, space, ops, ThetaConfig(0.5, 0.1, 5), stride=1)
        vals.append(apost_estimator(traj, ops, vel, u0, 1 / 6))
    assert vals[0] > 0
    assert vals[1] == pytest.approx(3 * vals[0], rel=1e-10)


def test_online_and_replayed_accumulators_agree():
    vel = constant_velocity(1.0, 0.0)
    u0 = gaussian((0.5, 0.5))
    f = lambda x, t: np.sin(2 * np.pi * x[..., 1]) * np.cos(t)
    sc = Scenario(name="s", domain="periodic_square", velocity=vel, initial=u0,
                  final_time=0.5, source=f)
    space = FeSpace(sc.build_mesh(6), 2)
    ops = assemble_operators(space, vel, 0.05)
    cfg = ThetaConfig(0.5, 0.1, 5)
    online = [MaterialDerivativeError(space, ops, vel, f), SeminormIntegral(ops.S),
              AposterioriEstimator(space, ops, vel, 1 / 6, u0, f)]
    traj = run_simulation(sc, space, ops, cfg, stride=1, observers=online)
    assert online[0].value == material_derivative_error(traj, ops, vel, f)
    assert online[2].value == apost_estimator(traj, ops, vel, u0, 1 / 6, f)
    mids = [0.5 * (a + b) for a, b in zip(traj.snapshots[:-1], traj.snapshots[1:])]
    ref = math.sqrt(sum(0.1 * (m @ ops.S @ m) for m in mids))
    assert online[1].value == pytest.approx(ref, rel=1e-12)


def test_material_derivative_vanishes_for_exact_discrete_transport():
    """A constant state under a constant source f = 1 solves u_t = f with u = t."""
    vel = constant_velocity(1.0, 0.0)
    one = lambda x, t: np.ones(np.shape(x)[:-1])
    sc = Scenario(name="s", domain="periodic_square", velocity=vel, initial=ZERO,
                  final_time=1.0, source=one)
    space = FeSpace(sc.build_mesh(4), 1)
    ops = assemble_operators(space, vel, 0.01)
    traj = run_simulation(sc, space, ops, ThetaConfig(0.5, 0.25, 4), stride=1)
    assert np.allclose(traj.final.coefficients, 1.0, atol=1e-12)
    assert material_derivative_error(traj, ops, vel, one) < 1e-12


def test_replay_needs_every_step():
    sc, ops, traj = _still_run(gaussian((0.5, 0.5)))
    traj.snapshots = [traj.snapshots[0], traj.snapshots[-1]]
    traj.snapshot_times = [0.0, 1.0]
    with pytest.raises(ValueError):
        material_derivative_error(traj, ops, sc.velocity)


# ----------------------------------------------------------------------
# reports

def _report(errors, h=(0.1, 0.05, 0.025)):
    rep = ErrorReport()
    for i, e in enumerate(errors):
        rep.add(LevelRecord(nele=10 * 2 ** i, h=h[i], dt=h[i] / 2, errors={"global_L2": e}))
    return rep


@pytest.mark.parametrize("errors, rate", [((0.1, 0.05), 1.0), ((0.1, 0.025), 2.0), ((0.3, 0.3), 0.0)])
def test_rate_examples(errors, rate):
    assert convergence_rates(_report(errors))["global_L2"] == [pytest.approx(rate, abs=1e-14)]


@pytest.mark.parametrize("errors", [(0.0, 0.1), (0.1, -1.0), (0.1, math.nan)])
def test_undefined_rates(errors):
    assert math.isnan(convergence_rates(_report(errors))["global_L2"][0])


def test_single_level_has_empty_rates():
    assert convergence_rates(_report((0.1,)))["global_L2"] == []


def test_levels_are_sorted_by_h():
    rep = ErrorReport()
    for n in (80, 20, 40):
        rep.add(LevelRecord(nele=n, h=1 / n, dt=0.1, errors={}))
    assert [lv.nele for lv in rep.levels] == [20, 40, 80]


def test_report_csv(tmp_path):
    rep = _report((0.1, 0.05, 0.0125))
    rep.levels[1].errors["dual_norm"] = 0.5
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == ("nele,h,dt,err_global_L2,err_local_L2,err_matderiv,"
                        "stab_seminorm_int,weighted_L2,dual_norm,estimator")
    assert lines[1].split(",")[:4] == ["10", "0.1", "0.05", "0.1"]
    assert lines[4] == "" and lines[5] == "# rates"
    rates = lines[7].split(",")
    assert rates[:2] == ["10", "20"] and float(rates[2]) == pytest.approx(1.0)
    assert float(lines[8].split(",")[2]) == pytest.approx(2.0)
    assert rates[7] == "nan"
