"""Exact sampling of the chain's Gibbs measure.

Momenta are iid Gaussian.  The configurational measure factorizes over the
bond variables r_j up to the single constraint sum_j r_j = 0, so bonds are
sampled by a Metropolis chain of pair moves (r_i += delta, r_j -= delta) that
preserve the constraint algebraically.  The analytic backbone is the tilted
one-bond density exp(-gamma r - beta V(r)) / q_gamma, whose quadrature moments
at the zero-mean tilt gamma = theta serve as the oracle for the sampler's
marginals (they agree up to O(1/N)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .chain import ChainParams, ChainState, potential_v

DEFAULT_BURN_IN = 100
_TARGET_ACCEPTANCE = 0.3


class ThetaSolveError(RuntimeError):
    pass


def _default_potential(A: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda r: potential_v(r, A)


def _support(beta: float, gamma: float, V: Callable, n_probe: int = 4001
             ) -> tuple[float, float]:
    """Interval outside which exp(-gamma r - beta V) r^n is negligible (n <= 8)."""
    L = 2.0
    while True:
        r = np.linspace(-L, L, n_probe)
        e = -gamma * r - beta * V(r)
        e_max = e.max()
        # 8 log factors cover the highest cached moment
        margin = 60.0 + 8.0 * math.log1p(L)
        if e[0] < e_max - margin and e[-1] < e_max - margin:
            keep = e > e_max - margin - 20.0
            return float(r[keep].min()), float(r[keep].max())
        if L > 1e6:
            raise ThetaSolveError(
                f"tilted density not normalizable on [-{L:g}, {L:g}]")
        L *= 2.0


def _quad_moments(beta: float, gamma: float, V: Callable, n_max: int = 8,
                  tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """(q_gamma, moments[0..n_max]) by composite Simpson with step halving."""
    lo, hi = _support(beta, gamma, V)
    n = 2048
    prev = None
    while n <= 2**22:
        x = np.linspace(lo, hi, n + 1)
        e = -gamma * x - beta * V(x)
        e_max = e.max()
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        base = np.exp(e - e_max) * w
        powers = np.vander(x, n_max + 1, increasing=True)  # (n+1, n_max+1)
        raw = base @ powers * (hi - lo) / (3.0 * n)
        q = raw[0] * math.exp(e_max)
        mom = raw / raw[0]
        if prev is not None:
            scale = np.maximum(np.abs(mom), np.sqrt(max(mom[2], 1e-300)) ** np.arange(n_max + 1))
            if (np.abs(mom - prev[1]) <= tol * scale).all() and \
                    abs(q - prev[0]) <= tol * q:
                return q, mom
        prev = (q, mom)
        n *= 2
    raise ThetaSolveError("tilted-moment quadrature did not converge")


@dataclass(frozen=True)
class TiltedDensity:
    """One-bond density exp(-gamma r - beta V(r)) / q_gamma with cached moments."""

    beta: float
    A: float
    gamma: float
    q_gamma: float
    moments: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.moments[1])

    @property
    def variance(self) -> float:
        return float(self.moments[2] - self.moments[1] ** 2)

    def central_moment(self, n: int) -> float:
        mu = self.moments[1]
        binom = [math.comb(n, j) for j in range(n + 1)]
        return float(sum(binom[j] * self.moments[j] * (-mu) ** (n - j)
                         for j in range(n + 1)))


def make_tilted_density(beta: float, A: float, gamma: float,
                        potential: Callable | None = None) -> TiltedDensity:
    V = potential if potential is not None else _default_potential(A)
    q, mom = _quad_moments(beta, gamma, V)
    mom = mom.copy()
    mom.setflags(write=False)
    return TiltedDensity(beta=beta, A=A, gamma=gamma, q_gamma=q, moments=mom)


def tilted_moments(density: TiltedDensity, n: int) -> float:
    """<r^n> under the tilted density, n <= 8."""
    if not 0 <= n < density.moments.size:
        raise ValueError(f"moment order must be in 0..{density.moments.size - 1}")
    return float(density.moments[n])


def solve_theta(beta: float, A: float, potential: Callable | None = None,
                bracket: tuple[float, float] = (-10.0, 10.0)) -> float:
    """Tilt theta zeroing the mean: int r exp(-theta r - beta V) dr = 0.

    The mean is strictly decreasing in the tilt, so the root is unique;
    bracketing failure on [-10, 10] signals pathological parameters.
    """
    V = potential if potential is not None else _default_potential(A)

    def mean_at(g: float) -> float:
        return _quad_moments(beta, g, V, n_max=2)[1][1]

    lo, hi = bracket
    m_lo, m_hi = mean_at(lo), mean_at(hi)
    if not (m_lo > 0 > m_hi):
        raise ThetaSolveError(
            f"cannot bracket theta in [{lo:g}, {hi:g}]: "
            f"mean({lo:g}) = {m_lo:.3e}, mean({hi:g}) = {m_hi:.3e}")
    theta = brentq(mean_at, lo, hi, xtol=1e-14, rtol=8.9e-16)
    q, mom = _quad_moments(beta, theta, V, n_max=2)
    sigma = math.sqrt(mom[2] - mom[1] ** 2)
    for _ in range(4):
        if abs(mom[1]) <= 1e-12 * sigma:
            break
        theta += mom[1] / (mom[2] - mom[1] ** 2)  # Newton: d<r>/dgamma = -Var
        q, mom = _quad_moments(beta, theta, V, n_max=2)
    if abs(mom[1]) > 1e-12 * sigma:
        raise ThetaSolveError(f"theta residual {mom[1]:.3e} above tolerance")
    return float(theta)


@dataclass(frozen=True)
class GibbsSample:
    """One draw: the chain state, its bond vector, and provenance metadata."""

    state: ChainState
    r: np.ndarray
    provenance: dict = field(compare=False)


def sample_momenta(rng: np.random.Generator, N: int, beta: float) -> np.ndarray:
    """iid normal momenta, mean 0, variance 1/beta."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    return rng.normal(0.0, 1.0 / math.sqrt(beta), size=N)


def bonds_to_state(r: np.ndarray, p: np.ndarray, tol: float | None = None) -> ChainState:
    """q_j = r_0 + ... + r_{j-1}; with sum r = 0 the far end closes at zero."""
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if r.size != p.size + 1:
        raise ValueError("need N+1 bonds for N momenta")
    if tol is None:
        tol = 1e-12 * r.size
    total = float(r.sum())
    if abs(total) > tol:
        raise ValueError(f"sum of bonds is {total:.3e}, above tolerance {tol:.3e}")
    q = np.cumsum(r)[:-1]
    return ChainState(p, q)


def _integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Sokal-windowed integrated autocorrelation time of a scalar series."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0 or n < 8:
        return 1.0
    acf = np.correlate(x, x, mode="full")[n - 1:] / (var * n)
    tau = 0.5
    for t in range(1, n // 2):
        tau += float(acf[t])
        if t >= c * tau:
            break
    return max(tau, 0.5)


class GibbsSampler:
    """Metropolis chain on the zero-sum bond hyperplane plus Gaussian momenta.

    One sweep is two rounds of random disjoint pairings, i.e. about N+1 pair
    moves.  The proposal width is tuned toward 30% acceptance during burn-in
    and then frozen, so detailed balance holds for all measurement sweeps.
    The decorrelation stride defaults to 5x the measured integrated
    autocorrelation time of the cubic energy.
    """

    def __init__(self, params: ChainParams, rng, burn_in: int = DEFAULT_BURN_IN,
                 stride: int | None = None, sigma_prop: float | None = None,
                 potential: Callable | None = None, pilot_sweeps: int = 400):
        self.params = params
        if isinstance(rng, np.random.Generator):
            self.rng = rng
            self.seed = "external-generator"
        else:
            self.rng = np.random.default_rng(rng)
            self.seed = rng
        self._V = potential if potential is not None else _default_potential(params.A)
        self.r = np.zeros(params.N + 1)
        self._vpot = self._V(self.r)
        self.sigma_prop = sigma_prop if sigma_prop is not None else 2.0 / math.sqrt(params.beta)
        self._tuning = sigma_prop is None
        self._accepted = 0
        self._proposed = 0
        self.n_sweeps = 0
        self.tau_int = None

        for _ in range(burn_in):
            self.sweep()
            if self._tuning:
                self._retune()
        self._tuning = False
        self._accepted = 0
        self._proposed = 0

        if stride is None:
            pilot_sweeps = max(pilot_sweeps, 50)
            h1_series = np.empty(pilot_sweeps)
            for i in range(pilot_sweeps):
                self.sweep()
                r3 = self.r**3
                h1_series[i] = r3.sum() / 3.0
            self.tau_int = _integrated_autocorr_time(h1_series)
            stride = max(1, math.ceil(5.0 * self.tau_int))
        self.stride = stride

    def _retune(self):
        rate = self._accepted / max(self._proposed, 1)
        self.sigma_prop = float(np.clip(
            self.sigma_prop * math.exp(0.25 * (rate - _TARGET_ACCEPTANCE)),
            1e-4, 5.0))
        self._accepted = 0
        self._proposed = 0

    def _round(self):
        m = self.r.size
        half = m // 2
        perm = self.rng.permutation(m)
        i = perm[:half]
        j = perm[half:2 * half]
        delta = self.rng.normal(0.0, self.sigma_prop, half)
        ri = self.r[i]
        rj = self.r[j]
        vi_new = self._V(ri + delta)
        vj_new = self._V(rj - delta)
        d_en = vi_new + vj_new - self._vpot[i] - self._vpot[j]
        acc = np.log(self.rng.random(half)) < -self.params.beta * d_en
        ia = i[acc]
        ja = j[acc]
        self.r[ia] = ri[acc] + delta[acc]
        self.r[ja] = rj[acc] - delta[acc]
        self._vpot[ia] = vi_new[acc]
        self._vpot[ja] = vj_new[acc]
        self._accepted += int(acc.sum())
        self._proposed += half

    def sweep(self, n: int = 1):
        for _ in range(2 * n):
            self._round()
        self.n_sweeps += n

    @property
    def acceptance_rate(self) -> float:
        return self._accepted / max(self._proposed, 1)

    def sample(self) -> GibbsSample:
        self.sweep(self.stride)
        p = sample_momenta(self.rng, self.params.N, self.params.beta)
        r = self.r.copy()
        return GibbsSample(
            state=bonds_to_state(r, p),
            r=r,
            provenance={"seed": self.seed, "sweeps": self.n_sweeps,
                        "stride": self.stride, "sigma_prop": self.sigma_prop,
                        "tau_int": self.tau_int},
        )

    def sample_states(self, n: int) -> list[ChainState]:
        return [self.sample().state for _ in range(n)]

    def diagnostics(self) -> dict:
        return {
            "sigma_prop": self.sigma_prop,
            "acceptance_rate": self.acceptance_rate,
            "tau_int": self.tau_int,
            "stride": self.stride,
            "n_sweeps": self.n_sweeps,
        }


def sample_bonds(rng, params: ChainParams, sweeps: int,
                 sigma_prop: float | None = None,
                 potential: Callable | None = None) -> np.ndarray:
    """Bond vector after the requested sweeps of a fresh chain.

    Tuning runs over the first min(sweeps, 100) sweeps, then the kernel is
    frozen; callers should request at least the default burn-in.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    burn = min(sweeps, DEFAULT_BURN_IN)
    s = GibbsSampler(params, rng, burn_in=burn, stride=1,
                     sigma_prop=sigma_prop, potential=potential, pilot_sweeps=0)
    s.stride = 1
    if sweeps > burn:
        s.sweep(sweeps - burn)
    return s.r.copy()


def sample_state(rng, params: ChainParams, sweeps: int = 2 * DEFAULT_BURN_IN) -> GibbsSample:
    """One-shot draw from a fresh chain.  For streams of decorrelated samples
    use GibbsSampler.sample(), which keeps the chain alive between draws."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    burn = min(sweeps, DEFAULT_BURN_IN)
    s = GibbsSampler(params, rng, burn_in=burn, stride=max(1, sweeps - burn),
                     pilot_sweeps=0)
    return s.sample()


class _InverseCdf:
    """Inverse-CDF sampler for the one-bond tilted density (grid interpolation)."""

    def __init__(self, beta: float, A: float, gamma: float,
                 potential: Callable | None = None, n_grid: int = 200_001):
        V = potential if potential is not None else _default_potential(A)
        lo, hi = _support(beta, gamma, V)
        x = np.linspace(lo, hi, n_grid)
        e = -gamma * x - beta * V(x)
        pdf = np.exp(e - e.max())
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5)])
        self.x = x
        self.cdf = cdf / cdf[-1]

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.interp(rng.random(size), self.cdf, self.x)


def sample_bonds_tilted_iid(rng, params: ChainParams, n_samples: int,
                            theta: float | None = None) -> np.ndarray:
    """(n_samples, N+1) iid draws from the theta-tilted density, no constraint.

    Test hook: under this law disjoint-site covariances vanish identically.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if theta is None:
        theta = solve_theta(params.beta, params.A)
    inv = _InverseCdf(params.beta, params.A, theta)
    return inv.draw(rng, (n_samples, params.N + 1))


def slab_rejection_bonds(rng, params: ChainParams, n_samples: int,
                         slab: float = 1e-3, theta: float | None = None,
                         max_batches: int = 10_000) -> np.ndarray:
    """Independent reference sampler: iid tilted bonds accepted on |sum r| <= slab.

    Exact up to O(slab) tilt bias, which is far below Monte Carlo resolution;
    feasible only for small N.  Returns (n_samples, N+1).
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if theta is None:
        theta = solve_theta(params.beta, params.A)
    inv = _InverseCdf(params.beta, params.A, theta)
    out = []
    got = 0
    batch = max(10_000, 4 * n_samples)
    for _ in range(max_batches):
        r = inv.draw(rng, (batch, params.N + 1))
        keep = np.abs(r.sum(axis=1)) <= slab
        if keep.any():
            out.append(r[keep])
            got += int(keep.sum())
        if got >= n_samples:
            break
    else:
        raise RuntimeError(f"slab sampler got only {got}/{n_samples} accepts")
    return np.concatenate(out)[:n_samples]


def monomial_covariance_test(rng, params: ChainParams, k_sites, l_sites,
                             n_samples: int, sampler: str = "constrained",
                             stride: int | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of <r^k r^l> - <r^k><r^l> with jackknife stderr.

    k_sites / l_sites are site multisets (repeats raise the power).  sampler
    is 'constrained' (the pair-move chain) or 'tilted_iid' (independence
    reference).
    """
    k_sites = list(k_sites)
    l_sites = list(l_sites)
    m = params.N + 1
    if any(not 0 <= s < m for s in k_sites + l_sites):
        raise ValueError(f"sites must be in 0..{m - 1}")
    if sampler == "constrained":
        chain = GibbsSampler(params, rng, stride=stride)
        xs = np.empty(n_samples)
        ys = np.empty(n_samples)
        for i in range(n_samples):
            chain.sweep(chain.stride)
            xs[i] = np.prod(chain.r[k_sites])
            ys[i] = np.prod(chain.r[l_sites])
    elif sampler == "tilted_iid":
        r = sample_bonds_tilted_iid(rng, params, n_samples)
        xs = r[:, k_sites].prod(axis=1)
        ys = r[:, l_sites].prod(axis=1)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return _covariance_jackknife(xs, ys)


def _covariance_jackknife(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 samples")
    sp = float(x @ y)
    sx = float(x.sum())
    sy = float(y.sum())
    cov = sp / n - (sx / n) * (sy / n)
    del_cov = (sp - x * y) / (n - 1) - (sx - x) * (sy - y) / (n - 1) ** 2
    se = math.sqrt((n - 1) / n * float(((del_cov - del_cov.mean()) ** 2).sum()))
    return cov, se
