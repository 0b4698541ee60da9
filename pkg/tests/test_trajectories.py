import math

import numpy as np
import pytest

from wpreduce._validation import PreconditionError
from wpreduce.ctrw import WalkerEngine
from wpreduce.grid import LatticeSpec, PhaseGrid, StateVector
from wpreduce.lindblad import DiscreteKetChannels, LindbladSolver, PhaseSpaceChannels, husimi_of_rho
from wpreduce.propagators import EvolutionConfig, Propagator, evolve_unitary, free_potential, harmonic_potential
from wpreduce.trajectories import ensemble_average, run_discrete_trajectory, run_ensemble, run_trajectory

from .conftest import packet


@pytest.fixture
def setup():
    g = PhaseGrid(32, 16.0)
    return g, LatticeSpec.from_grid(g), EvolutionConfig(1.0, 0.02, scheme="spectral"), harmonic_potential(g, 0.5, 1.0)


def test_norm_clock_agrees_with_direct_draws(setup):
    g, lat, cfg, V = setup
    psi = packet(g, -1, 0.5, 1.0)
    a = run_trajectory(psi, V, cfg, 0.7, 1.0, 3.0, seed=4, index=2, lattice=lat)
    b = run_trajectory(psi, V, cfg, 0.7, 1.0, 3.0, seed=4, index=2, lattice=lat, jump_method="norm")
    assert len(a.jumps) == len(b.jumps) > 0
    for ja, jb in zip(a.jumps, b.jumps):
        assert ja[0] == pytest.approx(jb[0], abs=1e-9)
        assert ja[1:] == pytest.approx(jb[1:], abs=1e-6)


def test_trajectories_share_walker_histories(setup):
    g, lat, cfg, V = setup
    psi = packet(g, -1, 0.5, 1.0)
    walkers = WalkerEngine(g, V, cfg, 0.5, 1.0, lat).run(psi, 20, 3.0, 11)
    for w in walkers:
        tr = run_trajectory(psi, V, cfg, 0.5, 1.0, 3.0, seed=11, index=w.index, lattice=lat)
        assert len(tr.jumps) == len(w.times)
        for (t, x, p), (tw, xw, pw) in zip(tr.jumps, w.history()):
            assert (t, x, p) == pytest.approx((tw, xw, pw), abs=1e-9)


def test_no_jumps_without_collapse(setup):
    g, lat, cfg, V = setup
    psi = packet(g, 2, 0, 1.0)
    tr = run_trajectory(psi, V, cfg, math.inf, 1.0, 2.0, seed=0, lattice=lat, record_times=[1.0])
    assert tr.jumps == []
    want = evolve_unitary(psi, V, cfg, 2.0).amplitudes
    assert np.allclose(tr.state.amplitudes, want, atol=1e-12)
    assert np.allclose(tr.records[1.0], evolve_unitary(psi, V, cfg, 1.0).amplitudes, atol=1e-12)


def test_ensemble_matches_master_equation(setup):
    g, lat, cfg, V = setup
    psi = packet(g, -1, 0.5, 1.0)
    trajs = run_ensemble(psi, V, cfg, 1.0, 1.0, 3000, 2.0, 5, [1.0, 2.0], lat, threads=2)
    rho = LindbladSolver(g, V, cfg, PhaseSpaceChannels(lat, 1.0, 1.0)).run(psi, [1.0, 2.0])
    for t, r in zip([1.0, 2.0], rho):
        mean, err = ensemble_average(trajs, lat, t, 1.0)
        ref = husimi_of_rho(r, lat, 1.0)
        assert mean.l1_distance(ref) < 0.06
        assert mean.total() == pytest.approx(1.0, abs=1e-9)
        assert np.all(err.values >= 0)


def test_ensemble_thread_invariance(setup):
    g, lat, cfg, V = setup
    psi = packet(g, 0, 0, 1.0)
    a = run_ensemble(psi, V, cfg, 0.5, 1.0, 64, 1.5, 1, [1.0], lat, threads=1)
    b = run_ensemble(psi, V, cfg, 0.5, 1.0, 64, 1.5, 1, [1.0], lat, threads=4)
    assert [t.jumps for t in a] == [t.jumps for t in b]
    ma, _ = ensemble_average(a, lat, 1.0, 1.0)
    mb, _ = ensemble_average(b, lat, 1.0, 1.0)
    assert np.array_equal(ma.values, mb.values)


def test_ensemble_average_guards(setup):
    g, lat, cfg, V = setup
    psi = packet(g, 0, 0, 1.0)
    a = run_ensemble(psi, V, cfg, 0.5, 1.0, 3, 1.0, 1, [0.5], lat)
    b = run_ensemble(psi, free_potential(g), cfg, 0.5, 1.0, 3, 1.0, 1, [0.5], lat)
    with pytest.raises(PreconditionError):
        ensemble_average(a + b, lat, 0.5, 1.0)
    with pytest.raises(PreconditionError):
        ensemble_average(a, lat, 0.25, 1.0)
    with pytest.raises(PreconditionError):
        ensemble_average([], lat, 0.5, 1.0)


def test_discrete_dephasing_trajectory(setup):
    g, lat, cfg, V = setup
    _, q = Propagator(g, V, cfg).eig
    kets = q[:, :3].T.copy()
    tau = 0.5
    ch = DiscreteKetChannels(kets, np.eye(3) / tau)
    psi = StateVector(g, (kets[0] + kets[1]) / math.sqrt(2))
    counts = []
    for i in range(200):
        jumps, rec = run_discrete_trajectory(psi, V, cfg, ch, 2.0, seed=3, index=i, record_times=[1.0], dt=0.05)
        assert all(l == lp and l in (0, 1) for _, l, lp in jumps)
        assert abs(np.linalg.norm(rec[1.0]) - 1) < 1e-12
        counts.append(len(jumps))
    assert np.mean(counts) == pytest.approx(2.0 / tau, rel=0.1)
