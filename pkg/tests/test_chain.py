import numpy as np
import pytest

from fpu_packets import chain
from fpu_packets.chain import (BlowupError, ChainParams, ChainState, bond_extensions,
                               energies, forces, integrate, potential_dv, potential_v,
                               step_verlet, total_energy)
from fpu_packets.gibbs import GibbsSampler
from fpu_packets.spectral import frequencies, from_modes


def test_potential_values():
    assert potential_v(0.0, 1.0) == 0.0
    assert potential_v(1.0, 1.0) == pytest.approx(13.0 / 12.0, rel=1e-15)
    assert potential_v(-1.0, 1.0) == pytest.approx(5.0 / 12.0, rel=1e-15)


def test_potential_derivative_matches_fd():
    r = np.linspace(-1.2, 1.2, 41)
    h = 1e-6
    fd = (potential_v(r + h, 0.7) - potential_v(r - h, 0.7)) / (2 * h)
    assert np.abs(potential_dv(r, 0.7) - fd).max() < 1e-8


def test_params_validation():
    with pytest.raises(ValueError):
        ChainParams(N=2)
    with pytest.raises(ValueError):
        ChainParams(N=8, A=0.0)
    with pytest.raises(ValueError):
        ChainParams(N=8, beta=-1.0)


def test_state_validation():
    with pytest.raises(ValueError):
        ChainState(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        ChainState(np.array([np.inf, 0.0]), np.zeros(2))


def test_energies_examples():
    params = ChainParams(N=3, A=1.0)
    e1 = np.array([1.0, 0.0, 0.0])
    zero = np.zeros(3)
    assert energies(ChainState(e1, zero), params) == (0.5, 0.0, 0.0)
    h0, h1, h2 = energies(ChainState(zero, e1), params)
    assert (h0, h2) == (1.0, 0.5)
    assert h1 == pytest.approx(0.0, abs=1e-15)
    assert energies(ChainState(zero, zero), params) == (0.0, 0.0, 0.0)


def test_forces_unit_displacement_example():
    params = ChainParams(N=3, A=1.0)
    st = ChainState(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    f = forces(st, params)
    assert f == pytest.approx([-4.0, 1.0, 0.0])
    assert forces(ChainState(np.zeros(3), np.zeros(3)), params) == pytest.approx([0, 0, 0])


def test_forces_match_finite_differences():
    rng = np.random.default_rng(0)
    params = ChainParams(N=17, A=1.3)
    h = 1e-5
    for _ in range(200):
        q = rng.normal(scale=0.3, size=17)
        st = ChainState(np.zeros(17), q)
        f = forces(st, params)
        fd = np.empty(17)
        for j in range(17):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            vp = potential_v(bond_extensions(qp), params.A).sum()
            vm = potential_v(bond_extensions(qm), params.A).sum()
            fd[j] = -(vp - vm) / (2 * h)
        scale = np.abs(f).max()
        assert np.abs(f - fd).max() <= 1e-6 * max(scale, 1.0)


def test_verlet_zero_state_fixed_point():
    params = ChainParams(N=5)
    st = chain.zero_state(5)
    out = step_verlet(st, params, 0.02)
    assert np.all(out.p == 0.0) and np.all(out.q == 0.0)


def test_verlet_single_step_reversibility():
    rng = np.random.default_rng(1)
    params = ChainParams(N=9)
    st = ChainState(rng.normal(size=9), rng.normal(size=9))
    fwd = step_verlet(st, params, 0.02)
    back = step_verlet(ChainState(-fwd.p, fwd.q), params, 0.02)
    assert np.abs(-back.p - st.p).max() < 1e-12
    assert np.abs(back.q - st.q).max() < 1e-12


def test_verlet_harmonic_mode_second_order():
    # exact harmonic solution oracle: error over one period scales like dt^2
    N, k = 15, 4
    params = ChainParams(N=N)
    om = frequencies(N)[k - 1]
    q_hat = np.zeros(N)
    q_hat[k - 1] = 1.0
    st = from_modes(np.zeros(N), q_hat)
    period = 2 * np.pi / om
    errs = []
    for n_steps in (200, 400):
        dt = period / n_steps
        snaps = integrate(st, params, dt, period, sample_stride=n_steps,
                          harmonic_only=True)
        errs.append(np.abs(snaps[-1][1].q - st.q).max())
    assert errs[0] < (om * period / 200) ** 2
    assert errs[1] < errs[0] / 3.0  # second-order convergence


def test_integrate_snapshot_counts():
    params = ChainParams(N=5)
    st = chain.zero_state(5)
    assert len(integrate(st, params, 0.02, 0.0)) == 1
    snaps = integrate(st, params, 0.1, 1.0, sample_stride=3)
    assert len(snaps) == int(np.floor(1.0 / (0.1 * 3))) + 1
    snaps = integrate(st, params, 0.1, 1.0, sample_stride=1)
    assert len(snaps) == 11
    assert snaps[-1][0] == pytest.approx(1.0)


def test_energy_conservation_along_trajectory():
    params = ChainParams(N=63, beta=100.0)
    st = GibbsSampler(params, np.random.default_rng(3)).sample().state
    snaps = integrate(st, params, 0.02, 200.0, sample_stride=10)
    h = np.array([total_energy(s, params) for _, s in snaps])
    assert np.abs(h - h[0]).max() / max(abs(h[0]), 1.0) <= 1e-4


def test_trajectory_reversibility():
    params = ChainParams(N=31, beta=100.0)
    st = GibbsSampler(params, np.random.default_rng(4)).sample().state
    fwd = integrate(st, params, 0.02, 10.0)[-1][1]
    back = integrate(ChainState(-fwd.p, fwd.q), params, 0.02, 10.0)[-1][1]
    assert np.abs(-back.p - st.p).max() < 1e-10
    assert np.abs(back.q - st.q).max() < 1e-10


def test_blowup_detection():
    params = ChainParams(N=15, beta=1.0)
    st = ChainState(np.zeros(15), np.full(15, 30.0))
    with pytest.raises(BlowupError) as exc:
        integrate(st, params, 2.0, 50.0)
    assert exc.value.time > 0


def test_evolve_batch_matches_stepper():
    rng = np.random.default_rng(5)
    params = ChainParams(N=11)
    states = [ChainState(0.1 * rng.normal(size=11), 0.1 * rng.normal(size=11))
              for _ in range(4)]
    batch = chain.evolve_batch(states, params, 0.02, [0, 37, 100])
    for i, st in enumerate(states):
        cur = st
        reached = {0: st}
        for step in range(1, 101):
            cur = step_verlet(cur, params, 0.02)
            reached[step] = cur
        for m, target in enumerate((0, 37, 100)):
            assert np.allclose(batch[m][i].q, reached[target].q, rtol=0, atol=1e-13)
            assert np.allclose(batch[m][i].p, reached[target].p, rtol=0, atol=1e-13)
