import numpy as np
import pytest

from spherization_lab import dynamics as dyn
from spherization_lab import sol as sol_mod
from spherization_lab.errors import IntegrationDivergedError
from spherization_lab.geometry import CotangentPoint


def test_convention_lock_straight_geodesics(torus, rng):
    geo = dyn.geodesic_field(torus)
    for _ in range(5):
        q0 = rng.uniform(size=2)
        p0 = rng.normal(size=2)
        traj = dyn.integrate(geo, CotangentPoint(q0, p0), 1.0)
        assert np.allclose(traj.q[-1], q0 + p0, atol=1e-12)
        assert traj.energy_drift < 1e-12
        assert np.all(np.diff(traj.times) > 0)


def test_sol_velocity_components(sol, rng):
    f = sol_mod.sol_field(sol)
    q = rng.normal(size=(100, 3))
    p = rng.normal(size=(100, 3))
    m = sol_mod.momentum_map(q, p)
    v = f.dp(q, p)
    assert np.allclose(v[:, 0], (m[:, 0] + 1.0) * np.exp(q[:, 2]), rtol=1e-12)
    assert np.allclose(v[:, 1], m[:, 1] * np.exp(-q[:, 2]), rtol=1e-12)
    assert np.allclose(v[:, 2], m[:, 2], rtol=1e-12)


def test_core_field_vanishes_near_zero_section(round_sandwich):
    f = dyn.core_field(round_sandwich)
    q = np.zeros(2)
    p = np.full(2, 1e-3)  # gauge(p) far below the cutoff knot
    qdot, pdot = f.rhs(q, p)
    assert np.allclose(qdot, 0.0) and np.allclose(pdot, 0.0)


def test_gradient_analytic_vs_finite_difference(torus, sol, round_sandwich,
                                                ellipse_sandwich, rng):
    from spherization_lab.starshape import RadialProfile, calibrate
    fourier = calibrate(RadialProfile.fourier(1.0, cos_coeffs=(0.08,),
                                              sin_coeffs=(0.0, 0.04)), torus)
    fields = [dyn.geodesic_field(torus), dyn.geodesic_field(sol),
              dyn.core_field(round_sandwich),
              dyn.core_field(ellipse_sandwich),
              dyn.core_field(fourier),
              dyn.lower_field(round_sandwich),
              dyn.blend_field(round_sandwich, 0.37),
              sol_mod.sol_field(sol)]
    for f in fields:
        d = f.manifold.dim
        q = rng.normal(size=(1000, d)) * 0.7
        p = rng.normal(size=(1000, d)) * 1.5
        fd = dyn.HamiltonianField(name="fd", manifold=f.manifold,
                                  value=f.value)
        scale = np.maximum(1.0, np.abs(f.value(q, p)))[:, None]
        assert np.max(np.abs(f.dq(q, p) - fd.dq(q, p)) / scale) <= 1e-5
        assert np.max(np.abs(f.dp(q, p) - fd.dp(q, p)) / scale) <= 1e-5


def test_sol_fixed_point_momenta_constant(sol):
    f = sol_mod.sol_field(sol)
    q0 = np.array([0.1, 0.2, 0.3])
    p0 = sol_mod.fixed_point_covector(1.0, q0)
    traj = dyn.integrate(f, CotangentPoint(q0, p0), 100.0)
    m = sol_mod.momentum_map(traj.q, traj.p)
    assert np.max(np.abs(m - np.array([0.0, 0.0, 1.0]))) <= 1e-8


def test_integrator_self_convergence(sol, rng):
    f = sol_mod.sol_field(sol)
    q0 = sol.random_point(rng)
    p0 = sol_mod.level_covector(1.0, q0, np.array([0.6, -0.64, 0.48]) / 1.0)
    x0 = CotangentPoint(q0, p0)
    tight = dyn.integrate(f, x0, 100.0,
                          dyn.IntegratorConfig(rel_tol=1e-12, abs_tol=1e-13))
    loose = dyn.integrate(f, x0, 100.0,
                          dyn.IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12))
    assert loose.energy_drift <= 1e-8
    # momenta agree to quadrature accuracy at the final time
    assert np.max(np.abs(tight.p[-1] - loose.p[-1])) < 1e-6


def test_drift_abort_raises(sol, rng):
    f = sol_mod.sol_field(sol)
    q0 = sol.random_point(rng)
    p0 = sol_mod.level_covector(1.0, q0, np.array([0.0, 0.8, -0.6]))
    with pytest.raises(IntegrationDivergedError):
        dyn.integrate(f, CotangentPoint(q0, p0), 50.0,
                      dyn.IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7,
                                           drift_abort=1e-14))


def test_implicit_midpoint_matches_rk(torus, rng):
    geo = dyn.geodesic_field(torus)
    x0 = CotangentPoint(rng.uniform(size=2), rng.normal(size=2))
    mid = dyn.integrate(geo, x0, 1.0,
                        dyn.IntegratorConfig(scheme="midpoint", max_step=0.01))
    assert np.allclose(mid.q[-1], x0.q + x0.p, atol=1e-9)


def test_action_constant_orbit_is_zero(torus):
    f = dyn.zero_field(torus)
    traj = dyn.integrate(f, CotangentPoint(np.zeros(2), np.zeros(2)), 1.0)
    assert dyn.action_of_trajectory(traj, f) == 0.0


def test_action_geodesic_equals_energy(torus, rng):
    geo = dyn.geodesic_field(torus)
    p0 = rng.normal(size=2)
    traj = dyn.integrate(geo, CotangentPoint(np.zeros(2), p0), 1.0)
    energy = 0.5 * float(p0 @ p0)
    action = dyn.action_of_trajectory(traj, geo)
    assert abs(action - energy) < 1e-10
    assert dyn.action_convergence_gap(traj, geo) < 1e-10


def test_action_vanishing_inside_cutoff(round_sandwich):
    f = dyn.cutoff_gauge_field(round_sandwich)
    eps = round_sandwich.cutoff.eps
    p0 = np.array([eps * 0.5, 0.0])  # gauge below eps^2
    traj = dyn.integrate(f, CotangentPoint(np.zeros(2), p0), 1.0)
    assert abs(dyn.action_of_trajectory(traj, f)) < 1e-14


def test_action_homogeneous_formula():
    assert dyn.action_homogeneous(1.0, 2.0, 2.0) == 2.0          # h = id
    assert dyn.action_homogeneous(3.0, 3.0 * 2.0, 2.0) == 6.0    # h = 3 id
    assert dyn.action_homogeneous(1.0, 0.9, 0.9) == pytest.approx(0.9)


def test_formula_matches_quadrature_on_cutoff_chord(round_sandwich):
    # a trajectory of f(gauge) is a chord between its own endpoint fibers
    f = dyn.cutoff_gauge_field(round_sandwich)
    p0 = np.array([np.sqrt(0.9), 0.0])
    traj = dyn.integrate(f, CotangentPoint(np.zeros(2), p0), 1.0,
                         dyn.IntegratorConfig(max_step=0.01))
    val, slope = round_sandwich.cutoff.eval(np.asarray(0.9))
    expected = dyn.action_homogeneous(float(slope), float(val), 0.9)
    assert expected == pytest.approx(0.9)
    action = dyn.action_of_trajectory(traj, f)
    assert abs(action - expected) < 1e-6


def test_scaling_law(torus, ellipse_sandwich, rng):
    geo = dyn.geodesic_field(torus)
    cfgf = dyn.IntegratorConfig(max_step=0.01)
    w = np.array([1.5, 0.5])
    chord = dyn.integrate(geo, CotangentPoint(np.zeros(2), w), 1.0, cfgf)
    rel, res = dyn.verify_scaling_law(geo, chord, 1.0)
    assert rel == 0.0
    for c in (2.0, 3.0):
        rel, res = dyn.verify_scaling_law(geo, chord, c)
        assert rel <= 1e-6 and res <= 1e-9
    gauge = dyn.gauge_field(ellipse_sandwich)
    axes = np.asarray(ellipse_sandwich.profile.axes)
    p0 = w * axes ** 2 / 2.0
    chord = dyn.integrate(gauge, CotangentPoint(np.zeros(2), p0), 1.0, cfgf)
    rel, res = dyn.verify_scaling_law(gauge, chord, 3.0)
    assert rel <= 1e-6 and res <= 1e-9


def test_classify_chord_inside_outside(round_sandwich):
    core = dyn.core_field(round_sandwich)
    cfgf = dyn.IntegratorConfig(max_step=0.01)
    n = 3
    inside = dyn.integrate(dyn.scaled_field(core, n),
                           CotangentPoint(np.zeros(2),
                                          np.array([np.sqrt(0.8), 0.0])),
                           1.0, cfgf)
    label, action = dyn.classify_chord_action(inside, round_sandwich, n)
    assert label == "inside" and action < n
    outside = dyn.integrate(dyn.scaled_field(core, n),
                            CotangentPoint(np.zeros(2),
                                           np.array([np.sqrt(1.2), 0.0])),
                            1.0, cfgf)
    label, action = dyn.classify_chord_action(outside, round_sandwich, n)
    assert label == "outside" and action > n
    grazing = dyn.integrate(dyn.scaled_field(core, n),
                            CotangentPoint(np.zeros(2), np.array([1.0, 0.0])),
                            1.0, cfgf)
    label, _ = dyn.classify_chord_action(grazing, round_sandwich, n)
    assert label == "boundary-ambiguous"


def test_inside_action_formula_stays_below_one(round_sandwich, rng):
    # per-unit-n chord action 2 f'(F) F - f(F) < 1 whenever F < 1
    f_vals = rng.uniform(0.0, 0.999, size=2000)
    val, slope = round_sandwich.cutoff.eval(f_vals)
    formula = 2.0 * slope * f_vals - val
    assert np.all(formula < 1.0)
    # and it never exceeds the 4F envelope used in the blend region
    assert np.all(formula <= 4.0 * f_vals + 1e-15)


def test_time_change_identity(round_sandwich, ellipse_sandwich,
                              sol_round_sandwich, rng):
    for sw in (round_sandwich, ellipse_sandwich):
        for _ in range(50):
            theta = rng.uniform(0, 2 * np.pi)
            u = np.array([np.cos(theta), np.sin(theta)])
            q = rng.uniform(size=2)
            x = CotangentPoint(q, sw.surface_covector(q, u))
            assert dyn.time_change_residual(sw, x, 1.0) <= 1e-12
            assert dyn.time_change_residual(sw, x, sw.cutoff.eps) <= 1e-12
            assert dyn.time_change_residual(sw, x, 0.7) <= 1e-9
    sw = sol_round_sandwich
    for _ in range(20):
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        q = sw.manifold.random_point(rng)
        x = CotangentPoint(q, sw.surface_covector(q, u))
        s = rng.uniform(0.05, 1.0)
        assert dyn.time_change_residual(sw, x, s) <= 1e-9


def test_exclusion_level_picks_gap_midpoint(torus):
    spectrum = [1.25]
    a = dyn.exclusion_level(1, spectrum)
    assert a == pytest.approx(1.625)


def test_radial_chord_actions_against_direct_shooting(round_sandwich):
    # at t=0 the blend is the lower Hamiltonian; chords of n=1 to the nearest
    # targets should match a brute shoot along one ray
    q0 = np.zeros(2)
    q1 = np.array([0.5, 0.5])
    acts = dyn.radial_chord_actions(round_sandwich, 1, 0.0, q0, q1)
    assert len(acts) > 0
    assert all(acts[i] <= acts[i + 1] for i in range(len(acts) - 1))
    # every enumerated action is a genuine chord action: check one by
    # integrating the blend field from the implied covector
    h, hp = dyn.radial_blend_profile(round_sandwich, 0.0)
    blend = dyn.blend_field(round_sandwich, 0.0)
    w = np.array([0.5, 0.5])
    # solve for the speed profile root on the first target
    from scipy.optimize import brentq
    wn = float(np.linalg.norm(w))
    root = brentq(lambda r: float(hp(0.5 * r * r)) * r - wn, 1e-6, 4.0)
    p0 = root * w / wn
    traj = dyn.integrate(blend, CotangentPoint(q0, p0), 1.0,
                         dyn.IntegratorConfig(max_step=0.01))
    assert np.allclose(traj.q[-1], q1, atol=1e-9)
    a_quad = dyn.action_of_trajectory(traj, blend)
    assert any(abs(a - a_quad) < 1e-8 for a in acts)
