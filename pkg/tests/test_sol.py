import numpy as np
import pytest

from spherization_lab import dynamics as dyn
from spherization_lab import sol as sol_mod
from spherization_lab.geometry import CotangentPoint
from spherization_lab.sol import SolLevel


def test_momentum_map_values(rng):
    q = np.zeros(3)
    p = rng.normal(size=3)
    assert np.allclose(sol_mod.momentum_map(q, p), p)
    q = np.array([0.0, 0.0, np.log(2.0)])
    m = sol_mod.momentum_map(q, np.array([1.0, 0.0, 0.0]))
    assert np.isclose(m[0], 2.0)


def test_momentum_roundtrip(rng):
    q = rng.normal(size=(50, 3))
    p = rng.normal(size=(50, 3))
    m = sol_mod.momentum_map(q, p)
    back = sol_mod.inverse_momentum_map(m, q)
    assert np.max(np.abs(back - p)) <= 1e-14


def test_hamiltonian_values(sol, rng):
    assert sol_mod.hamiltonian_from_momenta(np.zeros(3)) == 0.5
    assert sol_mod.hamiltonian_from_momenta(np.array([0.0, 0.0, 1.0])) == 1.0
    for _ in range(10):
        q = sol.random_point(rng) + rng.normal(size=3)
        assert np.isclose(sol_mod.sol_hamiltonian(q, np.zeros(3)), 0.5)
    # coordinate form vs momentum form
    q = rng.normal(size=(100, 3))
    p = rng.normal(size=(100, 3))
    direct = sol_mod.sol_hamiltonian(q, p)
    via_m = sol_mod.hamiltonian_from_momenta(sol_mod.momentum_map(q, p))
    assert np.max(np.abs(direct - via_m)) <= 1e-12 * np.max(1 + np.abs(direct))


def test_euler_field_values():
    assert np.allclose(sol_mod.euler_field(np.array([0.0, 0.0, 1.0])), 0.0)
    assert np.allclose(sol_mod.euler_field(np.array([-1.0, 0.0, 0.0])), 0.0)
    got = sol_mod.euler_field(np.array([0.1, 0.2, 0.3]))
    assert np.allclose(got, [0.03, -0.06, -0.07])


def test_full_field_consistent_with_euler(sol, rng):
    f = sol_mod.sol_field(sol)
    q = rng.normal(size=(200, 3))
    p = rng.normal(size=(200, 3))
    qdot, pdot = f.rhs(q, p)
    ez = np.exp(q[:, 2])
    m = sol_mod.momentum_map(q, p)
    mdot = np.stack([ez * pdot[:, 0] + qdot[:, 2] * ez * p[:, 0],
                     pdot[:, 1] / ez - qdot[:, 2] * p[:, 1] / ez,
                     pdot[:, 2]], axis=-1)
    assert np.max(np.abs(mdot - sol_mod.euler_field(m))) <= 1e-10 * \
        np.max(1.0 + np.abs(mdot))


def test_lyapunov_at_fixed_point(sol):
    f = sol_mod.sol_field(sol)
    q0 = np.array([0.1, 0.2, 0.3])
    traj = dyn.integrate(f, CotangentPoint(q0, sol_mod.fixed_point_covector(1.0, q0)),
                         50.0)
    est = sol_mod.lyapunov_estimate(traj)
    assert abs(est.chi - 1.0) <= 1e-10
    assert np.all(np.isfinite(est.partial_averages[1:]))


def test_lyapunov_synthetic_constant():
    times = np.linspace(0.0, 10.0, 501)
    chi = sol_mod.lyapunov_from_momentum_series(times, np.full(501, -0.4))
    assert np.isclose(chi, 0.4)


def test_subcritical_average_decays(sol, rng):
    f = sol_mod.sol_field(sol)
    Q, P = sol_mod.sample_level_states(sol, 0.3, 3, rng)
    for i in range(3):
        traj = dyn.integrate(f, CotangentPoint(Q[i], P[i]), 400.0)
        est = sol_mod.lyapunov_estimate(traj)
        assert est.chi <= 0.02
        m = sol_mod.momentum_map(traj.q, traj.p)
        assert np.max(m[:, 0]) < 0.0  # sign barrier below the critical level


def test_first_integral_and_level_preserved(sol, rng):
    f = sol_mod.sol_field(sol)
    Q, P = sol_mod.sample_level_states(sol, 1.0, 2, rng)
    for i in range(2):
        traj = dyn.integrate(f, CotangentPoint(Q[i], P[i]), 100.0)
        integral = sol_mod.first_integral(traj.q, traj.p)
        assert np.max(np.abs(integral - integral[0])) <= 1e-8
        m = sol_mod.momentum_map(traj.q, traj.p)
        level = (m[:, 0] + 1) ** 2 + m[:, 1] ** 2 + m[:, 2] ** 2
        assert np.max(np.abs(level - 2.0)) <= 1e-8
        assert traj.energy_drift <= 1e-8


def test_entropy_closed_form():
    assert sol_mod.entropy_closed_form(1.0) == 1.0
    assert sol_mod.entropy_closed_form(0.5) == 0.0
    assert sol_mod.entropy_closed_form(5.0) == 3.0
    with pytest.raises(ValueError):
        sol_mod.entropy_closed_form(0.0)


def test_level_sampling_lies_on_level(sol, rng):
    for k in (0.3, 1.0, 1.7):
        Q, P = sol_mod.sample_level_states(sol, k, 20, rng)
        h = sol_mod.sol_hamiltonian(Q, P)
        assert np.max(np.abs(h - k)) <= 1e-12
        m = sol_mod.momentum_map(Q, P)
        sphere = (m[:, 0] + 1) ** 2 + m[:, 1] ** 2 + m[:, 2] ** 2
        assert np.max(np.abs(sphere - 2 * k)) <= 1e-8


def test_starshaped_switch(sol):
    # the momentum sphere has center distance 1 from the origin and radius
    # sqrt(2k): it encloses the origin exactly above k = 1/2
    for k, expect in ((0.3, False), (0.5, False), (0.5 + 1e-9, True),
                      (1.0, True)):
        assert SolLevel(k, sol).starshaped == expect
        radius = SolLevel(k, sol).momentum_radius
        assert (radius > 1.0) == expect
    with pytest.raises(ValueError):
        sol_mod.fixed_point_covector(0.4, np.zeros(3))
