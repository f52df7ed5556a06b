"""Normal-mode coordinates of the fixed-end chain.

The mode transform is the orthogonal sine matrix
T_{jk} = sqrt(2/(N+1)) sin(pi j k / (N+1)), which is symmetric and involutive,
so the same operation maps particle -> mode and mode -> particle.  Frequencies
are omega_k = 2 sin(pi k / (2(N+1))).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainState

_MATRIX_CACHE: dict[int, np.ndarray] = {}


def frequencies(N: int) -> np.ndarray:
    """omega_k = 2 sin(pi k / (2(N+1))), k = 1..N; strictly increasing, in (0, 2)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    k = np.arange(1, N + 1)
    return 2.0 * np.sin(np.pi * k / (2.0 * (N + 1)))


def _transform_matrix(n: int) -> np.ndarray:
    m = _MATRIX_CACHE.get(n)
    if m is None:
        jk = np.arange(1, n + 1)
        m = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(jk, jk) / (n + 1))
        m.setflags(write=False)
        _MATRIX_CACHE[n] = m
    return m


def sine_transform(v: np.ndarray, fast: bool = False) -> np.ndarray:
    """Apply the orthogonal sine transform (its own inverse).

    The default path is the explicit O(N^2) matrix product, which defines
    correctness.  fast=True routes through scipy's DST-I, agreeing with the
    slow path to ~1e-13.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    if n < 1:
        raise ValueError("empty vector")
    if fast:
        from scipy.fft import dst

        return dst(v, type=1, norm="ortho")
    return v @ _transform_matrix(n)


@dataclass
class SpectralState:
    """Mode momenta/displacements with the matching frequency vector."""

    p_hat: np.ndarray
    q_hat: np.ndarray
    omega: np.ndarray


def to_modes(state: ChainState, fast: bool = False) -> SpectralState:
    return SpectralState(
        p_hat=sine_transform(state.p, fast=fast),
        q_hat=sine_transform(state.q, fast=fast),
        omega=frequencies(state.n),
    )


def from_modes(p_hat: np.ndarray, q_hat: np.ndarray) -> ChainState:
    """Inverse of to_modes; the transform is involutive."""
    return ChainState(sine_transform(p_hat), sine_transform(q_hat))


def actions(state: ChainState) -> np.ndarray:
    """I_k = (p_hat_k^2 + omega_k^2 q_hat_k^2) / (2 omega_k); all >= 0."""
    ms = to_modes(state)
    return (ms.p_hat**2 + (ms.omega * ms.q_hat) ** 2) / (2.0 * ms.omega)


def to_complex(state: ChainState) -> np.ndarray:
    """xi_k = (p_hat_k + i omega_k q_hat_k) / sqrt(2); eta is its conjugate."""
    ms = to_modes(state)
    return (ms.p_hat + 1j * ms.omega * ms.q_hat) / np.sqrt(2.0)


def advance_harmonic(state: ChainState, t: float) -> ChainState:
    """Exact linear flow: rotate each mode's phase by omega_k t.

    Leaves every action invariant to rounding; used as the analytic reference
    for the nonlinear integrator and for harmonic-invariance tests.
    """
    ms = to_modes(state)
    c = np.cos(ms.omega * t)
    s = np.sin(ms.omega * t)
    p_new = ms.p_hat * c - ms.omega * ms.q_hat * s
    q_new = ms.q_hat * c + (ms.p_hat / ms.omega) * s
    return from_modes(p_new, q_new)
