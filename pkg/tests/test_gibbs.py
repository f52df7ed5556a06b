import numpy as np
import pytest
from scipy.integrate import quad

from fpu_packets.chain import ChainParams, energies
from fpu_packets.gibbs import (GibbsSampler, ThetaSolveError, bonds_to_state,
                               make_tilted_density, monomial_covariance_test,
                               sample_bonds, sample_bonds_tilted_iid, sample_momenta,
                               sample_state, slab_rejection_bonds, solve_theta,
                               tilted_moments)

BETA, A = 100.0, 1.0

# regression pin, established with an independent adaptive-quadrature +
# root-bracketing run (scipy.integrate.quad / brentq)
THETA_PIN = -0.9702613746618087


def test_theta_pin_and_independent_residual():
    theta = solve_theta(BETA, A)
    assert theta == pytest.approx(THETA_PIN, abs=1e-9)
    val, _ = quad(lambda r: r * np.exp(-theta * r - BETA * (r**2 / 2 + r**3 / 3 + A * r**4 / 4)),
                  -2.0, 2.0, epsabs=1e-15)
    td = make_tilted_density(BETA, A, theta)
    assert abs(val) / td.q_gamma <= 1e-12 * np.sqrt(td.variance)


def test_theta_zero_for_symmetric_potential():
    sym = lambda r: r**2 / 2 + A * r**4 / 4
    assert abs(solve_theta(BETA, A, potential=sym)) < 1e-10


def test_theta_approaches_large_beta_limit():
    # empirical extrapolation of theta(beta) is -1; larger beta lands closer
    th100 = solve_theta(100.0, A)
    th400 = solve_theta(400.0, A)
    assert abs(th400 + 1.0) < abs(th100 + 1.0)


def test_theta_bracketing_failure_signals():
    with pytest.raises(ThetaSolveError):
        solve_theta(BETA, A, bracket=(5.0, 10.0))


def test_tilted_moments_basics():
    theta = solve_theta(BETA, A)
    td = make_tilted_density(BETA, A, theta)
    assert tilted_moments(td, 0) == 1.0
    assert abs(tilted_moments(td, 1)) <= 1e-12 * np.sqrt(td.variance)
    assert tilted_moments(td, 2) == pytest.approx(1.0 / BETA, rel=0.15)
    with pytest.raises(ValueError):
        tilted_moments(td, 9)


def test_tilted_moments_against_scipy():
    theta = solve_theta(BETA, A)
    td = make_tilted_density(BETA, A, theta)
    V = lambda r: r**2 / 2 + r**3 / 3 + A * r**4 / 4
    for n in (2, 4):
        num, _ = quad(lambda r: r**n * np.exp(-theta * r - BETA * V(r)), -2, 2,
                      epsabs=1e-16)
        assert tilted_moments(td, n) == pytest.approx(num / td.q_gamma, rel=1e-9)


def test_sample_momenta_statistics_and_determinism():
    rng = np.random.default_rng(0)
    n = 1_000_000
    p = sample_momenta(rng, n, BETA)
    se_mean = 1.0 / np.sqrt(BETA * n)
    assert abs(p.mean()) <= 4 * se_mean
    se_var = np.sqrt(2.0 / n) / BETA
    assert abs(p.var() - 1.0 / BETA) <= 4 * se_var
    a = sample_momenta(np.random.default_rng(42), 100, BETA)
    b = sample_momenta(np.random.default_rng(42), 100, BETA)
    assert np.array_equal(a, b)


def test_sample_bonds_constraint():
    r = sample_bonds(np.random.default_rng(1), ChainParams(N=32, beta=BETA), 150)
    assert r.size == 33
    assert abs(r.sum()) <= 1e-12


def test_sampler_acceptance_band_and_determinism():
    params = ChainParams(N=64, beta=BETA)
    s1 = GibbsSampler(params, np.random.default_rng(2))
    s1.sweep(50)
    assert 0.2 <= s1.acceptance_rate <= 0.6
    s2 = GibbsSampler(params, np.random.default_rng(2))
    s2.sweep(50)
    assert np.array_equal(s1.r, s2.r)


def test_bonds_to_state_examples():
    q = bonds_to_state(np.zeros(4), np.zeros(3)).q
    assert np.all(q == 0.0)
    st = bonds_to_state(np.array([1.0, -1.0, 0.0, 0.0]), np.zeros(3))
    assert st.q == pytest.approx([1.0, 0.0, 0.0])
    rng = np.random.default_rng(3)
    r = rng.normal(size=9)
    r -= r.mean()
    st = bonds_to_state(r, np.zeros(8))
    back = np.diff(st.q, prepend=0.0, append=0.0)
    assert np.abs(back - r).max() < 1e-14
    with pytest.raises(ValueError):
        bonds_to_state(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))
    with pytest.raises(ValueError):
        bonds_to_state(np.zeros(4), np.zeros(4))


def test_single_site_moment_matches_quadrature():
    params = ChainParams(N=64, beta=BETA)
    sampler = GibbsSampler(params, np.random.default_rng(4))
    n = 3000
    r2 = np.empty(n)
    for i in range(n):
        sampler.sweep(sampler.stride)
        r2[i] = sampler.r[0] ** 2
    theta = solve_theta(BETA, A)
    oracle = tilted_moments(make_tilted_density(BETA, A, theta), 2)
    se = r2.std(ddof=1) / np.sqrt(n)
    assert abs(r2.mean() - oracle) <= 3 * se


def test_equipartition_and_seed_independence():
    params = ChainParams(N=127, beta=BETA)
    means = []
    for seed in (5, 6):
        sampler = GibbsSampler(params, np.random.default_rng(seed))
        h0 = np.array([energies(sampler.sample().state, params)[0] for _ in range(1200)])
        means.append((h0.mean(), h0.std(ddof=1) / np.sqrt(h0.size)))
        assert abs(h0.mean() - params.N / BETA) <= 0.05 * params.N / BETA
    z = abs(means[0][0] - means[1][0]) / np.hypot(means[0][1], means[1][1])
    assert z <= 4.0


def test_sample_state_momentum_mean():
    smp = sample_state(np.random.default_rng(7), ChainParams(N=64, beta=BETA), sweeps=150)
    assert abs(smp.r.sum()) <= 1e-12 * smp.r.size
    assert smp.state.n == 64
    assert "sweeps" in smp.provenance


def test_same_site_covariance_matches_oracle():
    params = ChainParams(N=32, beta=BETA)
    cov, se = monomial_covariance_test(np.random.default_rng(8), params,
                                       [0], [0], 4000)
    theta = solve_theta(BETA, A)
    td = make_tilted_density(BETA, A, theta)
    assert cov > 0
    assert abs(cov - td.variance) <= 3 * se + 0.05 * td.variance  # O(1/N) bias allowance


def test_tilted_iid_disjoint_covariance_is_zero():
    params = ChainParams(N=32, beta=BETA)
    cov, se = monomial_covariance_test(np.random.default_rng(9), params,
                                       [0], [5], 4000, sampler="tilted_iid")
    assert abs(cov) <= 3 * se


def test_tilted_iid_marginal():
    params = ChainParams(N=16, beta=BETA)
    r = sample_bonds_tilted_iid(np.random.default_rng(10), params, 4000)
    theta = solve_theta(BETA, A)
    td = make_tilted_density(BETA, A, theta)
    se = r[:, 0].std(ddof=1) / np.sqrt(r.shape[0])
    assert abs(r[:, 0].mean() - td.mean) <= 4 * se


def test_slab_rejection_matches_constrained_sampler():
    params = ChainParams(N=8, beta=BETA)
    n = 1500
    ref = slab_rejection_bonds(np.random.default_rng(11), params, n)
    assert np.abs(ref.sum(axis=1)).max() <= 1e-3
    sampler = GibbsSampler(params, np.random.default_rng(12))
    mc = np.empty(n)
    for i in range(n):
        sampler.sweep(sampler.stride)
        mc[i] = sampler.r[0] ** 2
    ref2 = ref[:, 0] ** 2
    se = np.hypot(mc.std(ddof=1) / np.sqrt(n), ref2.std(ddof=1) / np.sqrt(n))
    assert abs(mc.mean() - ref2.mean()) <= 3 * se


def test_covariance_test_rejects_bad_sites():
    params = ChainParams(N=8, beta=BETA)
    with pytest.raises(ValueError):
        monomial_covariance_test(np.random.default_rng(0), params, [9], [0], 10)
    with pytest.raises(ValueError):
        monomial_covariance_test(np.random.default_rng(0), params, [0], [1], 10,
                                 sampler="other")
