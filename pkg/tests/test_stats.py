import numpy as np
import pytest

from fpu_packets.chain import ChainParams, ChainState
from fpu_packets.gibbs import GibbsSampler, sample_momenta
from fpu_packets.packet import build_phi1_table, make_ps_test, phi0
from fpu_packets.profiles import DEFAULT_PROFILE_SPEC, disjoint_profiles, make_profile
from fpu_packets.spectral import actions, sine_transform
from fpu_packets.stats import (CorrelationCurve, autocorrelation, chebyshev_experiment,
                               estimate_from_samples, fit_power_law, half_life,
                               half_life_jackknife, lemma3_scan, mc_estimate,
                               multi_packet_experiment, ratio_theorem1)

OMEGA_PROFILE = {"kind": "constant", "value": 1.0}


def gibbs_states(N, beta, n, seed):
    return GibbsSampler(ChainParams(N=N, beta=beta), np.random.default_rng(seed)).sample_states(n)


def test_mc_estimate_constant_observable():
    states = [ChainState(np.zeros(4), np.zeros(4)) for _ in range(10)]
    est = mc_estimate(lambda s: 3.25, states)
    assert est.mean == 3.25
    assert est.variance == 0.0
    assert est.n_samples == 10


def test_mc_estimate_gaussian_mode_momentum():
    beta, N, n = 100.0, 32, 4000
    rng = np.random.default_rng(0)
    states = [ChainState(sample_momenta(rng, N, beta), np.zeros(N)) for _ in range(n)]
    k = 7
    est = mc_estimate(lambda s: sine_transform(s.p)[k] ** 2, states)
    assert abs(est.mean - 1.0 / beta) <= 3 * est.stderr_mean


def test_variance_of_phi0_matches_harmonic_oracle():
    # for nu = omega: Var(Phi0) -> N / beta^2 in the near-harmonic regime
    N, beta = 127, 200.0
    pk = build_phi1_table(make_profile(OMEGA_PROFILE), N)
    states = gibbs_states(N, beta, 2500, seed=1)
    est = mc_estimate(lambda s: phi0(s, pk), states)
    assert est.variance == pytest.approx(N / beta**2, rel=0.10)


def test_estimator_consistency_sqrt_n():
    rng = np.random.default_rng(2)
    x = rng.normal(size=4000)
    se_half = estimate_from_samples(x[:2000]).stderr_mean
    se_full = estimate_from_samples(x).stderr_mean
    assert se_full / se_half == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_autocorrelation_t0_equals_sigma2():
    N = 31
    pk = build_phi1_table(make_profile(DEFAULT_PROFILE_SPEC), N)
    states = gibbs_states(N, 100.0, 40, seed=3)
    curve = autocorrelation(lambda s: phi0(s, pk), states, ChainParams(N=N), 0.02,
                            [0.0, 1.0, 2.0])
    assert curve.values[0] == curve.sigma2
    assert curve.normalized[0] == 1.0
    # Cauchy-Schwarz on the measured grid
    assert (np.abs(curve.values) <= curve.sigma2 + 3 * curve.stderrs + 1e-30).all()


def test_autocorrelation_harmonic_hook_action_is_flat():
    N = 15
    k = 4
    states = gibbs_states(N, 50.0, 30, seed=4)
    curve = autocorrelation(lambda s: actions(s)[k], states, ChainParams(N=N), 0.02,
                            [0.0, 5.0, 20.0, 50.0], harmonic_only=True)
    for v, se in zip(curve.normalized[1:], curve.normalized_stderrs[1:]):
        assert abs(v - 1.0) <= max(3 * se, 1e-3)


def test_half_life_synthetic_and_flat():
    times = np.linspace(0.0, 10.0, 101)
    tau = 2.0
    vals = np.exp(-times / tau)
    curve = CorrelationCurve(times=times, values=vals, stderrs=np.zeros_like(vals),
                             sigma2=1.0, normalized=vals,
                             normalized_stderrs=np.zeros_like(vals),
                             samples=np.zeros((3, times.size)))
    assert half_life(curve) == pytest.approx(tau * np.log(2), abs=times[1] - times[0])
    flat = CorrelationCurve(times=times, values=np.ones_like(vals),
                            stderrs=np.zeros_like(vals), sigma2=1.0,
                            normalized=np.ones_like(vals),
                            normalized_stderrs=np.zeros_like(vals),
                            samples=np.zeros((3, times.size)))
    assert half_life(flat) is None


def test_half_life_jackknife_on_measured_curve():
    N = 31
    pk = build_phi1_table(make_profile({"kind": "bump", "center": 0.5, "width": 0.2}), N)
    states = gibbs_states(N, 25.0, 60, seed=5)
    curve = autocorrelation(lambda s: phi0(s, pk), states, ChainParams(N=N, beta=25.0),
                            0.02, np.linspace(0.0, 120.0, 13))
    th, se = half_life_jackknife(curve)
    if th is not None and se is not None:
        assert se >= 0.0
        assert th > 0.0


def test_fit_power_law():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, se = fit_power_law(x, x**2)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)
    slope, _ = fit_power_law(x, np.full(4, 3.3))
    assert slope == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(6)
    y = x**-1.0 * (1 + 0.05 * rng.normal(size=4))
    slope, _ = fit_power_law(x, y)
    assert -1.15 <= slope <= -0.85
    with pytest.raises(ValueError):
        fit_power_law([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_power_law([1.0, -2.0, 3.0], [1.0, 2.0, 3.0])


def test_ratio_theorem1_harmonic_hook_vanishes():
    N = 31
    pk = build_phi1_table(make_profile(OMEGA_PROFILE), N)
    res = ratio_theorem1(pk, ChainParams(N=N, beta=100.0), 50,
                         np.random.default_rng(7), harmonic_only=True)
    assert res.ratio <= 1e-10


def test_ratio_theorem1_inadmissible_profile_inflates_corrector():
    # at matched h2, the g'(0) != 0 profile carries a much larger corrector
    N = 63
    params = ChainParams(N=N, beta=200.0)
    adm = make_profile(OMEGA_PROFILE).scaled(1 / np.sqrt(3.0))
    inadm = make_profile({"kind": "linear"})
    pk_a = build_phi1_table(adm, N)
    pk_i = build_phi1_table(inadm, N, require_admissible=False)
    ra = ratio_theorem1(pk_a, params, 300, np.random.default_rng(8))
    ri = ratio_theorem1(pk_i, params, 300, np.random.default_rng(9))
    assert ri.ratio_phi1_phi0 >= 1.5 * ra.ratio_phi1_phi0
    assert np.abs(pk_i.coeffs).max() >= 10 * np.abs(pk_a.coeffs).max()


def test_lemma3_scan_rows():
    fn = make_ps_test("Phi0", make_profile(OMEGA_PROFILE), 31)
    rows = lemma3_scan(fn, [31, 63], [50.0, 100.0], 200, seed=10)
    assert len(rows) == 4
    for r in rows:
        assert r["kind"] == "Phi0" and r["s"] == 2
        assert r["normalized"] > 0
    # for nu = omega the normalized variance is ~ sum(g^2)/N = 1 up to
    # anharmonic and sampling corrections
    vals = [r["normalized"] for r in rows]
    assert max(vals) / min(vals) < 2.0


def test_chebyshev_bound_holds():
    N = 63
    pk = build_phi1_table(make_profile(DEFAULT_PROFILE_SPEC), N)
    res = chebyshev_experiment(pk, ChainParams(N=N, beta=50.0), 0.4, 300,
                               np.random.default_rng(11))
    assert 0.0 <= res["empirical_prob"] <= 1.0
    slack = 3 * np.hypot(res["prob_stderr"], res["bound_stderr"])
    assert res["empirical_prob"] <= res["chebyshev_bound"] + slack
    with pytest.raises(ValueError):
        chebyshev_experiment(pk, ChainParams(N=N, beta=50.0), 0.7, 10,
                             np.random.default_rng(0))


def test_multi_packet_single_reduces_to_marginal():
    N = 63
    packs = [build_phi1_table(p, N) for p in disjoint_profiles(1)]
    res = multi_packet_experiment(packs, ChainParams(N=N, beta=50.0), 0.4, 200,
                                  np.random.default_rng(12))
    assert res["joint_rate"] == res["rates"][0]
    assert res["joint_rate"] <= res["sum_individual"] + 1e-12


def test_multi_packet_union_bound():
    N = 63
    packs = [build_phi1_table(p, N) for p in disjoint_profiles(3)]
    res = multi_packet_experiment(packs, ChainParams(N=N, beta=50.0), 0.4, 200,
                                  np.random.default_rng(13))
    assert res["joint_rate"] <= res["sum_individual"] + 3 * res["joint_stderr"]
