"""Monte Carlo estimators and the theorem-level experiments built on them.

Averages are Gibbs-ensemble averages: many independent initial conditions,
each evolved by the chain flow where time enters.  Error bars are jackknife
over initial conditions; trajectories from one initial condition are never
treated as independent.  All scaling claims are reported as fitted log-log
slopes because the underlying constants are not quantified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import chain as chain_mod
from . import packet as packet_mod
from .chain import ChainParams
from .gibbs import GibbsSampler
from .packet import PacketObservable, PsTestFunction


@dataclass(frozen=True)
class Estimate:
    """Sample mean/variance with jackknife standard errors."""

    mean: float
    variance: float
    stderr_mean: float
    stderr_variance: float
    n_samples: int


def estimate_from_samples(x: np.ndarray) -> Estimate:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    se_mean = math.sqrt(var / n)
    if n >= 3:
        s1 = float(x.sum())
        s2 = float(x @ x)
        # delete-one unbiased variances, in closed form
        mean_i = (s1 - x) / (n - 1)
        var_i = ((s2 - x * x) - (n - 1) * mean_i**2) / (n - 2)
        se_var = math.sqrt((n - 1) / n * float(((var_i - var_i.mean()) ** 2).sum()))
    else:
        se_var = var * math.sqrt(2.0 / (n - 1))
    return Estimate(mean, var, se_mean, se_var, n)


def mc_estimate(observable, states) -> Estimate:
    """Estimate mean and variance of an observable over an ensemble of states."""
    return estimate_from_samples(np.array([observable(s) for s in states]))


@dataclass
class CorrelationCurve:
    """Time autocorrelation C_F(t) over a Gibbs ensemble.

    sigma2 is C_F(0) computed with the same estimator on the same samples.
    samples holds the raw per-state observable records (n_states, n_times),
    which downstream jackknives (half-life errors) reuse.
    """

    times: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    sigma2: float
    normalized: np.ndarray
    normalized_stderrs: np.ndarray
    samples: np.ndarray = field(repr=False)


def _cov_columns(f0: np.ndarray, F: np.ndarray):
    """Covariance of f0 with each column of F, plus delete-one values."""
    n = f0.size
    prods = f0[:, None] * F
    sp = prods.sum(axis=0)
    s0 = f0.sum()
    st = F.sum(axis=0)
    cov = sp / n - (s0 / n) * (st / n)
    del_cov = (sp[None, :] - prods) / (n - 1) \
        - ((s0 - f0)[:, None] / (n - 1)) * ((st[None, :] - F) / (n - 1))
    return cov, del_cov


def autocorrelation(observable, states, params: ChainParams, dt: float,
                    t_grid, harmonic_only: bool = False) -> CorrelationCurve:
    """C_F(t) = <F F(t)> - <F><F(t)> on the given time grid.

    Each initial state is integrated once up to max(t_grid); grid times are
    snapped to whole integrator steps.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or (np.diff(t_grid) <= 0).any() or t_grid[0] < 0:
        raise ValueError("t_grid must be ascending and non-negative")
    steps = np.rint(t_grid / dt).astype(int)
    n = len(states)
    if n < 3:
        raise ValueError("need at least 3 initial conditions")
    want0 = steps[0] == 0
    targets = steps if want0 else np.concatenate([[0], steps])
    snaps = chain_mod.evolve_batch(states, params, dt, targets,
                                   harmonic_only=harmonic_only)
    vals = np.array([[observable(s) for s in row] for row in snaps]).T  # (n, times)
    f0 = vals[:, 0]
    F = vals if want0 else vals[:, 1:]
    cov, del_cov = _cov_columns(f0, F)
    se = np.sqrt((n - 1) / n * ((del_cov - del_cov.mean(axis=0)) ** 2).sum(axis=0))
    # same estimator, same samples: C(0) IS sigma^2 when the grid starts at 0
    sigma2 = float(cov[0]) if want0 else \
        float(f0 @ f0) / n - (float(f0.sum()) / n) ** 2
    # delete-one sigma2 for the normalized-curve errors
    s2 = float(f0 @ f0)
    s1 = float(f0.sum())
    del_sig = (s2 - f0**2) / (n - 1) - ((s1 - f0) / (n - 1)) ** 2
    del_norm = del_cov / del_sig[:, None]
    norm_se = np.sqrt((n - 1) / n * ((del_norm - del_norm.mean(axis=0)) ** 2).sum(axis=0))
    return CorrelationCurve(times=t_grid.copy(), values=cov, stderrs=se,
                            sigma2=sigma2, normalized=cov / sigma2,
                            normalized_stderrs=norm_se, samples=F)


def half_life(curve: CorrelationCurve) -> float | None:
    """First time the normalized curve crosses 1/2 (linear interpolation);
    None when it never does within the grid."""
    return _half_life_from_series(curve.times, curve.normalized)


def _half_life_from_series(times, v) -> float | None:
    below = np.nonzero(v < 0.5)[0]
    if below.size == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    v0, v1 = v[i - 1], v[i]
    return float(t0 + (t1 - t0) * (v0 - 0.5) / (v0 - v1))


def half_life_jackknife(curve: CorrelationCurve) -> tuple[float | None, float | None]:
    """(t_half, stderr) with delete-one recomputation of the whole curve.

    stderr is None when the crossing is not reached on the full curve or on
    any delete-one replica.
    """
    t_half = half_life(curve)
    if t_half is None:
        return None, None
    F = curve.samples
    f0 = F[:, 0] if curve.times[0] == 0 else None
    if f0 is None:
        return t_half, None
    _, del_cov = _cov_columns(f0, F)
    vals = []
    for i in range(F.shape[0]):
        v = del_cov[i] / del_cov[i, 0]
        th = _half_life_from_series(curve.times, v)
        if th is None:
            return t_half, None
        vals.append(th)
    vals = np.array(vals)
    n = vals.size
    se = math.sqrt((n - 1) / n * float(((vals - vals.mean()) ** 2).sum()))
    return t_half, se


@dataclass(frozen=True)
class Theorem1Ratio:
    """Ensemble norms entering the drift-to-spread ratio of the main bound."""

    phidot_norm: float
    phidot_norm_stderr: float
    sigma_phi: float
    sigma_phi_stderr: float
    ratio: float
    sigma_phi0: float
    sigma_phi1: float
    ratio_phi1_phi0: float
    n_samples: int


def _rms_jackknife(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    s2 = float(x @ x)
    rms = math.sqrt(s2 / n)
    del_rms = np.sqrt(np.maximum((s2 - x * x) / (n - 1), 0.0))
    se = math.sqrt((n - 1) / n * float(((del_rms - del_rms.mean()) ** 2).sum()))
    return rms, se


def _std_jackknife(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    s1 = float(x.sum())
    s2 = float(x @ x)
    std = math.sqrt(max(s2 / n - (s1 / n) ** 2, 0.0))
    mean_i = (s1 - x) / (n - 1)
    var_i = np.maximum((s2 - x * x) / (n - 1) - mean_i**2, 0.0)
    del_std = np.sqrt(var_i)
    se = math.sqrt((n - 1) / n * float(((del_std - del_std.mean()) ** 2).sum()))
    return std, se


def ratio_theorem1(packet: PacketObservable, params: ChainParams, n_samples: int,
                   rng, harmonic_only: bool = False) -> Theorem1Ratio:
    """||Phi-dot|| and sigma_Phi over the Gibbs ensemble, plus their ratio.

    Phi-dot comes from the analytic bracket, never from differencing, so the
    O(1/beta) ratio is not buried under finite-difference noise.  The
    sigma_Phi1/sigma_Phi0 ratio is measured on the same samples.
    """
    sampler = GibbsSampler(params, rng)
    pd = np.empty(n_samples)
    v0 = np.empty(n_samples)
    v1 = np.empty(n_samples)
    for i in range(n_samples):
        st = sampler.sample().state
        pd[i] = packet_mod.phi_dot(st, packet, params, harmonic_only=harmonic_only)
        v0[i] = packet_mod.phi0(st, packet)
        v1[i] = 0.0 if harmonic_only else packet_mod.phi1(st, packet)
    phidot, phidot_se = _rms_jackknife(pd)
    phi = v0 + v1
    sigma_phi, sigma_phi_se = _std_jackknife(phi)
    sigma0, _ = _std_jackknife(v0)
    sigma1, _ = _std_jackknife(v1)
    return Theorem1Ratio(
        phidot_norm=phidot, phidot_norm_stderr=phidot_se,
        sigma_phi=sigma_phi, sigma_phi_stderr=sigma_phi_se,
        ratio=phidot / sigma_phi if sigma_phi > 0 else math.inf,
        sigma_phi0=sigma0, sigma_phi1=sigma1,
        ratio_phi1_phi0=sigma1 / sigma0 if sigma0 > 0 else math.inf,
        n_samples=n_samples)


def lemma3_scan(test_fn: PsTestFunction, N_list, beta_list, n_samples: int,
                seed, A: float = 1.0) -> list[dict]:
    """Normalized variance sigma^2_f beta^s / (N |f|+^2) over an (N, beta) grid.

    The variance bound asserts this stays below one constant; the scan
    reports the table so callers can check the band.
    """
    rows = []
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(len(N_list) * len(beta_list))
    idx = 0
    for N in N_list:
        fn = test_fn.for_size(N)
        for beta in beta_list:
            params = ChainParams(N=N, A=A, beta=beta)
            sampler = GibbsSampler(params, np.random.default_rng(seeds[idx]))
            idx += 1
            vals = np.array([fn.observable(sampler.sample().state)
                             for _ in range(n_samples)])
            est = estimate_from_samples(vals)
            scale = beta**fn.s / (N * fn.plus_norm**2)
            rows.append({
                "kind": fn.kind, "s": fn.s, "N": N, "beta": beta,
                "n_samples": n_samples,
                "variance": est.variance, "variance_stderr": est.stderr_variance,
                "plus_norm": fn.plus_norm,
                "normalized": est.variance * scale,
                "normalized_stderr": est.stderr_variance * scale,
            })
    return rows


def chebyshev_experiment(packet: PacketObservable, params: ChainParams,
                         a: float, n_samples: int, rng,
                         dt: float = chain_mod.DEFAULT_DT) -> dict:
    """Empirical P(|Phi0(t) - Phi0| >= sigma beta^(-a/2)) at t = beta^(1-a).

    Also returns the Chebyshev bound computed from the measured increment
    variance, which no distribution can beat beyond sampling noise.
    """
    if not 0.0 <= a <= 0.5:
        raise ValueError("a must be in [0, 1/2]")
    beta = params.beta
    t = beta ** (1.0 - a)
    lam = beta ** (-a / 2.0)
    sampler = GibbsSampler(params, rng)
    n_steps = int(round(t / dt))
    states = sampler.sample_states(n_samples)
    before = np.array([packet_mod.phi0(s, packet) for s in states])
    ends = chain_mod.evolve_batch(states, params, dt, [n_steps])[0]
    after = np.array([packet_mod.phi0(s, packet) for s in ends])
    sigma0 = float(before.std())
    thr = lam * sigma0
    inc = after - before
    exceed = np.abs(inc) >= thr
    p_emp = float(exceed.mean())
    p_se = math.sqrt(max(p_emp * (1 - p_emp), 1e-300) / n_samples)
    inc_est = estimate_from_samples(inc)
    bound = inc_est.variance / thr**2
    bound_se = inc_est.stderr_variance / thr**2
    return {
        "N": params.N, "beta": beta, "a": a, "t": t, "threshold": thr,
        "n_samples": n_samples,
        "empirical_prob": p_emp, "prob_stderr": p_se,
        "chebyshev_bound": bound, "bound_stderr": bound_se,
        "increment_variance": inc_est.variance,
        "sigma_phi0": sigma0,
    }


def multi_packet_experiment(packets: list[PacketObservable], params: ChainParams,
                            a: float, n_samples: int, rng,
                            dt: float = chain_mod.DEFAULT_DT) -> dict:
    """Joint drift statistics for several packets on shared trajectories.

    Measures each packet's exceedance rate at t = beta^(1-a), the joint
    rate that any packet exceeds (union-bound sanity), and each packet's
    normalized autocorrelation at t = beta/4.
    """
    beta = params.beta
    t_drift = beta ** (1.0 - a)
    t_corr = beta / 4.0
    lam = beta ** (-a / 2.0)
    steps = sorted({int(round(t_drift / dt)), int(round(t_corr / dt))})
    i_drift = steps.index(int(round(t_drift / dt)))
    i_corr = steps.index(int(round(t_corr / dt)))
    K = len(packets)
    sampler = GibbsSampler(params, rng)
    states = sampler.sample_states(n_samples)
    v0 = np.empty((n_samples, K))
    vt = np.empty((n_samples, K, len(steps)))
    for i, st in enumerate(states):
        for l, pk in enumerate(packets):
            v0[i, l] = packet_mod.phi0(st, pk)
    for m, row in enumerate(chain_mod.evolve_batch(states, params, dt, steps)):
        for i, snap in enumerate(row):
            for l, pk in enumerate(packets):
                vt[i, l, m] = packet_mod.phi0(snap, pk)
    sigma = v0.std(axis=0)
    exceed = np.abs(vt[:, :, i_drift] - v0) >= lam * sigma[None, :]
    rates = exceed.mean(axis=0)
    rate_se = np.sqrt(np.maximum(rates * (1 - rates), 1e-300) / n_samples)
    joint = float(exceed.any(axis=1).mean())
    joint_se = math.sqrt(max(joint * (1 - joint), 1e-300) / n_samples)
    corr_norm = np.empty(K)
    for l in range(K):
        c = np.cov(v0[:, l], vt[:, l, i_corr], ddof=0)
        corr_norm[l] = c[0, 1] / c[0, 0]
    return {
        "K": K, "N": params.N, "beta": beta, "a": a,
        "t_drift": t_drift, "t_corr": t_corr, "n_samples": n_samples,
        "rates": rates.tolist(), "rate_stderrs": rate_se.tolist(),
        "joint_rate": joint, "joint_stderr": joint_se,
        "sum_individual": float(rates.sum()),
        "corr_quarter_beta": corr_norm.tolist(),
    }


def fit_power_law(x_list, y_list) -> tuple[float, float]:
    """Least-squares slope in log-log coordinates, with its standard error."""
    x = np.asarray(x_list, dtype=float)
    y = np.asarray(y_list, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if (x <= 0).any() or (y <= 0).any():
        raise ValueError("power-law fit needs positive data")
    lx = np.log(x)
    ly = np.log(y)
    lx0 = lx - lx.mean()
    sxx = float(lx0 @ lx0)
    slope = float(lx0 @ ly) / sxx
    resid = ly - ly.mean() - slope * lx0
    dof = x.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return slope, math.sqrt(s2 / sxx)
