import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from wpreduce._validation import PreconditionError
from wpreduce.ctrw import (
    KernelCache,
    WalkerEngine,
    empirical_r,
    initial_components,
    kernel_normalization,
    kernel_psi,
    sample_nodes,
    source_normalization,
)
from wpreduce.grid import LatticeSpec, PhaseGrid
from wpreduce.lindblad import DensityMatrix, LindbladSolver, PhaseSpaceChannels, husimi_of_rho
from wpreduce.propagators import EvolutionConfig, Propagator, free_potential, harmonic_potential, make_disorder

from .conftest import packet


@pytest.fixture
def small():
    g = PhaseGrid(32, 16.0)
    return g, LatticeSpec.from_grid(g), EvolutionConfig(1.0, 0.02, scheme="spectral")


@pytest.mark.parametrize("kind", ["free", "harmonic", "disorder"])
def test_kernel_and_source_normalize(grid, lattice, spectral, kind):
    V = {"free": free_potential(grid), "harmonic": harmonic_potential(grid, 0.125, 1.0), "disorder": make_disorder(grid, 0.5, 0.5, 0)}[kind]
    assert kernel_normalization((-2.0, 0.5), V, spectral, 1.0, 2.0, lattice, grid) == pytest.approx(1.0, abs=1e-3)
    assert source_normalization(packet(grid, -2, 0.5, 2.0), V, spectral, 1.0, 2.0, lattice) == pytest.approx(1.0, abs=1e-3)


def test_kernel_at_zero_delay_is_packet_overlap(grid, lattice, spectral):
    k = kernel_psi((0.0, 0.0), 0.0, free_potential(grid), spectral, 2.0, 2.0, lattice, grid)
    assert k.values.max() == pytest.approx(0.5)
    assert k.argmax_node() == (0.0, 0.0)


def test_sample_nodes_follows_weights():
    lat = LatticeSpec(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    fields = np.array([[[0.0, 1.0], [3.0, 0.0]]])
    rng = np.random.default_rng(0)
    u = rng.random((4000, 3))
    x, p = sample_nodes(np.repeat(fields, 4000, axis=0), lat, u)
    ix = np.round(x).astype(int)
    assert np.mean(ix == 1) == pytest.approx(0.75, abs=0.03)
    assert np.all(np.abs(x - np.round(x)) <= 0.5)
    assert np.all((np.round(p) == 1) == (ix == 0))


def test_threads_do_not_change_histories(small):
    g, lat, cfg = small
    eng = WalkerEngine(g, harmonic_potential(g, 0.3, 1.0), cfg, 0.5, 1.0, lat)
    psi = packet(g, 1.0, 0.0, 1.0)
    a = eng.run(psi, 600, 3.0, 9, threads=1)
    b = eng.run(psi, 600, 3.0, 9, threads=4)
    assert [w.history() for w in a] == [w.history() for w in b]
    assert [w.waits for w in a] == [w.waits for w in b]


def test_waiting_times_are_exponential(small):
    g, lat, cfg = small
    ws = WalkerEngine(g, make_disorder(g, 0.5, 0.5, 1), cfg, 0.5, 1.0, lat).run(packet(g, 0, 0, 1.0), 400, 5.0, 3)
    waits = np.concatenate([w.waits for w in ws])
    assert len(waits) > 3000
    assert kstest(waits, "expon", args=(0, 0.5)).pvalue > 0.01


def test_walkers_reproduce_master_equation(small):
    g, lat, cfg = small
    V = harmonic_potential(g, 0.5, 1.0)
    psi = packet(g, -1.0, 0.5, 1.0)
    eng = WalkerEngine(g, V, cfg, 1.0, 1.0, lat)
    ws = eng.run(psi, 4000, 2.0, 0)
    rho = LindbladSolver(g, V, cfg, PhaseSpaceChannels(lat, 1.0, 1.0)).run(psi, [1.0, 2.0])
    for t, r in zip([1.0, 2.0], rho):
        d = eng.ensemble_husimi(ws, psi, t).l1_distance(husimi_of_rho(r, lat, 1.0))
        assert d < 0.06


def test_uncollapsed_walkers_carry_unitary_state(small):
    g, lat, cfg = small
    V = harmonic_potential(g, 0.5, 1.0)
    psi = packet(g, -1.0, 0.5, 1.0)
    eng = WalkerEngine(g, V, cfg, 1e6, 1.0, lat)
    ws = eng.run(psi, 3, 1.0, 0)
    assert all(w.uncollapsed for w in ws)
    want = Propagator(g, V, cfg).evolve(psi.amplitudes[None], [1.0])[0]
    assert np.allclose(eng.states_at(ws, psi, 1.0), want, atol=1e-12)


def test_mixed_initial_state_components(small):
    g, lat, cfg = small
    rho = DensityMatrix.mixture([packet(g, -3, 0, 1.0), packet(g, 3, 0, 1.0)], [0.3, 0.7])
    w, comp = initial_components(rho)
    assert sorted(w) == pytest.approx([0.3, 0.7], abs=1e-3)
    ws = WalkerEngine(g, free_potential(g), cfg, 1.0, 1.0, lat).run(rho, 2000, 0.5, 1)
    frac = np.mean([w_.component for w_ in ws])
    big = int(np.argmax(w))
    assert (frac if big == 1 else 1 - frac) == pytest.approx(0.7, abs=0.04)


def test_empirical_rate_totals_one_over_tau(small):
    g, lat, cfg = small
    ws = WalkerEngine(g, free_potential(g), cfg, 0.5, 1.0, lat).run(packet(g, 0, 0, 1.0), 3000, 4.0, 2)
    r = empirical_r(ws, lat, 3.0, 1.0, g.box_length)
    assert r.total() == pytest.approx(2.0, rel=0.05)


def test_wrap_flag_marks_long_jumps(small):
    g, lat, cfg = small
    eng = WalkerEngine(g, free_potential(g), cfg, 0.5, 1.0, lat, wrap_margin=7.9)
    ws = eng.run(packet(g, 0, 3.0, 1.0), 200, 4.0, 0)
    assert any(w.wrapped for w in ws)
    eng = WalkerEngine(g, free_potential(g), cfg, 0.5, 1.0, lat)
    assert not any(w.wrapped for w in eng.run(packet(g, 0, 3.0, 1.0), 200, 4.0, 0))


@settings(max_examples=10, deadline=None)
@given(st.floats(-4, 4), st.floats(-1, 1), st.floats(0, 2))
def test_kernel_cache_matches_direct_evolution(x, p, xi):
    g = PhaseGrid(32, 16.0)
    prop = Propagator(g, harmonic_potential(g, 0.5, 1.0), EvolutionConfig(1.0, 0.02, scheme="spectral"))
    cache = KernelCache(prop, 1.0)
    a = cache.evolved(x, p, xi)
    assert cache.evolved(x, p, xi) is a
    assert len(cache) == 1
    want = prop.evolve(packet(g, x, p, 1.0).amplitudes[None], [xi])[0]
    assert np.allclose(a, want, atol=1e-12)


def test_engine_preconditions(small):
    g, lat, cfg = small
    with pytest.raises(PreconditionError):
        WalkerEngine(g, free_potential(g), cfg, -1.0, 1.0, lat)
    with pytest.raises(PreconditionError):
        WalkerEngine(g, free_potential(g), cfg, 1.0, 0.5, lat)
    eng = WalkerEngine(g, free_potential(g), cfg, 1.0, 1.0, lat)
    with pytest.raises(PreconditionError):
        eng.run(packet(g, 0, 0, 1.0), 0, 1.0, 0)
    assert math.isfinite(eng.tau)
