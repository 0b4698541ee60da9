import math

import numpy as np
import pytest

from wpreduce._validation import PreconditionError
from wpreduce.grid import LatticeSpec, PhaseGrid, StateVector, husimi_field
from wpreduce.lindblad import (
    DensityMatrix,
    DiscreteKetChannels,
    LindbladSolver,
    PhaseSpaceChannels,
    husimi_of_rho,
    integral_form_residual,
    integrate_lindblad,
    lindblad_rhs,
)
from wpreduce.propagators import EvolutionConfig, Propagator, evolve_unitary, free_potential, harmonic_potential

from .conftest import packet


def test_trace_and_hermiticity_are_kept(grid, lattice, spectral):
    V = harmonic_potential(grid, 0.125, 1.0)
    rho = integrate_lindblad(packet(grid, -2, 0.5, 2.0), V, spectral, PhaseSpaceChannels(lattice, 2.0, 1.0), 3.0)
    assert abs(rho.trace() - 1) < 1e-10
    assert rho.hermiticity_error() < 1e-12
    assert rho.min_eigenvalue() > -1e-10
    assert rho.purity() < 1.0


def test_rhs_is_traceless_and_hermitian(grid, lattice, spectral):
    rho = DensityMatrix.from_state(packet(grid, 1.0, -0.3, 2.0))
    d = lindblad_rhs(rho, free_potential(grid), spectral, PhaseSpaceChannels(lattice, 2.0, 0.5))
    assert abs(np.trace(d)) < 1e-12
    assert np.max(np.abs(d - d.conj().T)) < 1e-12


def test_infinite_tau_reduces_to_unitary(grid, lattice, spectral):
    V = harmonic_potential(grid, 0.2, 1.0)
    s = packet(grid, 2.0, 0.0, 2.0)
    rho = integrate_lindblad(s, V, spectral, PhaseSpaceChannels(lattice, 2.0, math.inf), 2.0, dt=0.005)
    u = evolve_unitary(s, V, spectral, 2.0).amplitudes
    assert np.max(np.abs(rho.entries - np.outer(u, u.conj()))) < 1e-9


def test_dephasing_in_eigenbasis(grid, spectral):
    V = harmonic_potential(grid, 0.25, 1.0)
    _, q = Propagator(grid, V, spectral).eig
    kets = q[:, :4].T.copy()
    tau = 0.8
    ch = DiscreteKetChannels(kets, np.eye(4) / tau)
    c = np.array([1.0, 1j, -0.5, 0.25])
    rho0 = DensityMatrix.from_state(StateVector(grid, (c / np.linalg.norm(c)) @ kets))
    rho = LindbladSolver(grid, V, spectral, ch, dt=0.002).run(rho0, [1.2])[0]
    r0 = kets.conj() @ rho0.entries @ kets.T
    r1 = kets.conj() @ rho.entries @ kets.T
    off = ~np.eye(4, dtype=bool)
    assert np.max(np.abs(np.abs(r1[off]) - np.abs(r0[off]) * math.exp(-1.2 / tau))) < 1e-8
    assert np.max(np.abs(np.diag(r1) - np.diag(r0))) < 1e-10


def test_cross_terms_between_distant_packets_decay(spectral):
    # a cat state loses its coherence at the collapse rate; purity tends to the
    # value of the incoherent mixture of the two branches
    g = PhaseGrid(64, 64.0)
    lat = LatticeSpec.from_grid(g)
    a, b = packet(g, -12, 0, 2.0).amplitudes, packet(g, 12, 0, 2.0).amplitudes
    psi = StateVector(g, (a + b) / np.linalg.norm(a + b))
    tau = 1.0
    out = LindbladSolver(g, free_potential(g), spectral, PhaseSpaceChannels(lat, 2.0, tau)).run(psi, [0.5, 1.0])
    left = g.x < 0
    c0 = np.linalg.norm(np.outer(psi.amplitudes, psi.amplitudes.conj())[np.ix_(left, ~left)])
    for t, rho in zip([0.5, 1.0], out):
        c = np.linalg.norm(rho.entries[np.ix_(left, ~left)])
        assert c / c0 == pytest.approx(math.exp(-t / tau), rel=0.02)


def test_integral_form_matches_direct_integration(grid, lattice):
    cfg = EvolutionConfig(1.0, 0.001, scheme="spectral")
    V = harmonic_potential(grid, 0.125, 1.0)
    ch = PhaseSpaceChannels(lattice, 2.0, 1.0)
    psi = packet(grid, -2, 0.5, 2.0)
    ts = np.linspace(0, 0.1, 11)
    rhos = LindbladSolver(grid, V, cfg, ch).run(psi, list(ts))
    hist = [(t, husimi_of_rho(r, lattice, 2.0).scaled(1.0)) for t, r in zip(ts, rhos)]
    assert integral_form_residual(psi, V, cfg, ch, 0.1, hist, rho_t=rhos[-1]) < 1e-3


def test_husimi_of_pure_rho_matches_state_field(grid, lattice):
    s = packet(grid, 0.5, 0.2, 2.0)
    a = husimi_of_rho(DensityMatrix.from_state(s), lattice, 2.0).values
    b = husimi_field(s, lattice, 2.0).values
    assert np.max(np.abs(a - b)) < 1e-14


def test_density_text_round_trip(grid):
    rho = DensityMatrix.mixture([packet(grid, -3, 0, 2.0), packet(grid, 3, 1, 2.0)], [0.25, 0.75])
    back = DensityMatrix.from_text(grid, rho.to_text())
    assert np.array_equal(back.entries, rho.entries)
    assert rho.trace() == pytest.approx(1.0)


def test_channel_validation(grid):
    kets = np.eye(64)[:2].astype(complex)
    with pytest.raises(PreconditionError):
        DiscreteKetChannels(kets, -np.eye(2))
    with pytest.raises(PreconditionError):
        DiscreteKetChannels(2 * kets, np.eye(2))
    with pytest.raises(PreconditionError):
        DensityMatrix(grid, np.eye(3))
