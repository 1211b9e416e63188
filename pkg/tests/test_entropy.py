import math

import numpy as np
import pytest

from spherization_lab import dynamics as dyn
from spherization_lab import sol as sol_mod
from spherization_lab.geometry import CotangentPoint
from spherization_lab.entropy import (chord_census, fiber_circle_mesh,
                                      fiber_sphere_mesh, fibonacci_sphere,
                                      fit_exponential_rate, mpp_estimate,
                                      torus_chord_count, volume_growth)


# -- rate fitting ---------------------------------------------------------------

def test_fit_exact_exponential():
    n = np.arange(20)
    fit = fit_exponential_rate(np.exp(0.7 * n), window=10)
    assert abs(fit.rate - 0.7) <= 1e-9
    assert fit.verdict == "exponential"


def test_fit_quadratic_is_polynomial():
    n = np.arange(1, 40)
    fit = fit_exponential_rate(n.astype(float) ** 2, window=20,
                               start_index=1)
    assert fit.verdict == "polynomial"
    # the semilog slope decays toward zero as the data window moves out
    far = fit_exponential_rate(np.arange(1, 160).astype(float) ** 2,
                               window=20, start_index=1)
    assert far.rate < fit.rate < 1.0
    assert far.verdict == "polynomial"


def test_fit_noisy_exponential():
    rng = np.random.default_rng(5)
    n = np.arange(25)
    series = np.exp(0.5 * n) * (1.0 + 0.1 * rng.uniform(-1, 1, size=25))
    fit = fit_exponential_rate(series, window=15)
    assert abs(fit.rate - 0.5) <= 0.05
    assert fit.verdict == "exponential"


def test_fit_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_exponential_rate([1.0, 0.0, 2.0], window=3)


def test_fit_constant_series_polynomial():
    fit = fit_exponential_rate(np.ones(10), window=6)
    assert fit.rate == 0.0
    assert fit.verdict == "polynomial"


# -- chord census -----------------------------------------------------------------

@pytest.fixture(scope="module")
def torus_census_ctx(round_sandwich):
    torus = round_sandwich.manifold
    geo = dyn.geodesic_field(torus)
    q0 = np.zeros(2)
    q1 = np.array([0.5, 0.5])
    smap = lambda u: round_sandwich.surface_covector(q0, u)
    return torus, geo, q0, q1, smap


def test_census_zero_before_first_arrival(torus_census_ctx):
    torus, geo, q0, q1, smap = torus_census_ctx
    # horizon below the fiber distance: no chords can arrive
    dist = torus.fiber_distance(q0, q1, 1)
    census = chord_census(geo, q0, q1, smap, 0.5 * dist, 64)
    assert len(census.records) == 0


def test_census_matches_lattice_oracle(torus_census_ctx):
    torus, geo, q0, q1, smap = torus_census_ctx
    census = chord_census(geo, q0, q1, smap, 4.0, 128)
    oracle = [torus_chord_count(torus, q0, q1, float(t)) for t in (1, 2, 3, 4)]
    assert list(census.nu_series) == oracle
    # monotone counts, clean residuals, one record per deck
    assert all(np.diff(census.nu_series) >= 0)
    assert max(r.residual for r in census.records) <= 1e-8
    decks = [r.deck for r in census.records]
    assert len(decks) == len(set(decks))


def test_census_resolution_refinement_is_superset(torus_census_ctx):
    torus, geo, q0, q1, smap = torus_census_ctx
    coarse = chord_census(geo, q0, q1, smap, 2.5, 128)
    fine = chord_census(geo, q0, q1, smap, 2.5, 256)
    fine_keys = {(r.deck, round(r.arrival_time, 6)) for r in fine.records}
    for r in coarse.records:
        assert (r.deck, round(r.arrival_time, 6)) in fine_keys


def test_census_rejects_low_resolution(torus_census_ctx):
    torus, geo, q0, q1, smap = torus_census_ctx
    with pytest.raises(ValueError):
        chord_census(geo, q0, q1, smap, 2.0, 32)


def test_sol_census_finds_verified_chords(sol):
    field = sol_mod.sol_field(sol)
    rng = np.random.default_rng(3)
    q0 = sol.random_point(rng)
    q1 = sol.random_point(rng) + 1e-3 * rng.standard_normal(3)
    smap = lambda u: sol_mod.level_covector(1.0, q0, u)
    census = chord_census(field, q0, q1, smap, 3.0, 256,
                          coarse_threshold=0.35)
    assert len(census.records) > 0
    assert max(r.residual for r in census.records) <= 1e-8
    assert all(np.diff(census.nu_series) >= 0)
    # re-integrate one record from scratch and hit the tagged lift
    rec = census.records[0]
    traj = dyn.integrate(field,
                         CotangentPoint(q0, np.array(rec.start_covector)),
                         rec.arrival_time,
                         dyn.IntegratorConfig(max_step=rec.arrival_time / 64))
    lift = sol.deck_apply(rec.deck, q1)
    miss = np.linalg.norm(sol.frame_displacement(traj.q[-1], lift))
    assert miss <= 1e-6


# -- volume growth ------------------------------------------------------------------

def test_volume_static_field_constant(torus, round_sandwich):
    q0 = np.zeros(2)
    smap = lambda u: round_sandwich.surface_covector(q0, u)
    mesh = fiber_circle_mesh(torus, q0, smap, 64)
    res = volume_growth(dyn.zero_field(torus), mesh, 8, 0.5, 10000,
                        surface_map=smap, fit_window=6)
    assert np.allclose(res.volumes, res.volumes[0])
    assert abs(res.fit.rate) <= 1e-12
    assert np.isclose(res.volumes[0], 2 * np.pi, rtol=1e-3)


def test_volume_torus_circle_oracle(torus, round_sandwich):
    geo = dyn.geodesic_field(torus)
    q0 = np.array([0.2, 0.7])
    smap = lambda u: round_sandwich.surface_covector(q0, u)
    exact = 2 * np.pi * np.sqrt(1.0 + np.arange(31) ** 2)
    results = {}
    for thr in (0.2, 0.1):
        mesh = fiber_circle_mesh(torus, q0, smap, 64)
        res = volume_growth(geo, mesh, 30, thr, 100000, surface_map=smap,
                            fit_window=8)
        assert res.levels_completed == 30 and not res.exhausted
        assert np.max(np.abs(res.volumes - exact) / exact) <= 0.02
        results[thr] = res.volumes
    # halving the threshold moves the estimate by at most 2 percent
    assert np.max(np.abs(results[0.2] - results[0.1]) / results[0.1]) <= 0.02
    fit = fit_exponential_rate(results[0.1], window=8)
    assert fit.rate <= 0.05
    assert fit.verdict != "exponential"


def test_volume_sol_sphere_positive_rate(sol):
    field = sol_mod.sol_field(sol)
    rng = np.random.default_rng(11)
    q0 = sol.random_point(rng)
    smap = lambda u: sol_mod.level_covector(1.0, q0, u)
    mesh = fiber_sphere_mesh(sol, q0, smap, 162)
    # initial sphere area in the product metric: radius sqrt(2) momentum
    # sphere over a point, i.e. 8 pi
    assert np.isclose(mesh.volume(), 8 * np.pi, rtol=0.02)
    res = volume_growth(field, mesh, 8, 18.0, 200000, surface_map=smap)
    assert res.levels_completed == 8 and not res.exhausted
    assert np.all(np.diff(np.log(res.volumes[:6])) > 0)


def test_volume_budget_exhaustion_flags(sol):
    field = sol_mod.sol_field(sol)
    rng = np.random.default_rng(11)
    q0 = sol.random_point(rng)
    smap = lambda u: sol_mod.level_covector(1.0, q0, u)
    mesh = fiber_sphere_mesh(sol, q0, smap, 162)
    res = volume_growth(field, mesh, 12, 2.0, 400, surface_map=smap)
    assert res.exhausted
    assert res.fit.verdict == "inconclusive"
    assert res.levels_completed < 12


def test_fibonacci_sphere_is_unit():
    u = fibonacci_sphere(500)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    assert abs(float(np.max(u @ np.ones(3) / np.sqrt(3)))) <= 1.0


# -- averaged census -------------------------------------------------------------

def test_mpp_single_pair_matches_census_fit(torus_census_ctx):
    torus, geo, q0, q1, smap_q0 = torus_census_ctx

    def surface_at(q):
        return smap_q0  # round profile: same covectors over any base point

    rng = np.random.default_rng(9)
    result = mpp_estimate(geo, surface_at, 1, 6.0, 128, rng, jitter=1e-3)
    qa, qb = result.pairs[0]
    census = chord_census(geo, qa, qb, surface_at(qa), 6.0, 128)
    assert np.allclose(result.averaged_counts, census.nu_series)
    first = int(np.nonzero(census.nu_series > 0)[0][0])
    fit = fit_exponential_rate(census.nu_series[first:].astype(float),
                               window=len(census.nu_series) - first,
                               start_index=first + 1)
    assert np.isclose(result.fit.rate, fit.rate)


def test_mpp_torus_polynomial(torus_census_ctx):
    torus, geo, q0, q1, smap_q0 = torus_census_ctx

    def surface_at(q):
        return smap_q0

    rng = np.random.default_rng(9)
    result = mpp_estimate(geo, surface_at, 2, 10.0, 128, rng, jitter=1e-3)
    assert result.fit.verdict == "polynomial"
