import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpreduce._validation import PreconditionError
from wpreduce.grid import PhaseGrid
from wpreduce.propagators import (
    ClassicalState,
    EvolutionConfig,
    Potential,
    Propagator,
    classical_energy,
    evolve_classical,
    evolve_effective,
    evolve_unitary,
    free_potential,
    harmonic_potential,
    make_disorder,
    verlet,
)

from .conftest import packet


def _width(state):
    prob = np.abs(state.amplitudes) ** 2
    x = state.grid.x
    mu = np.sum(prob * x)
    return math.sqrt(np.sum(prob * (x - mu) ** 2)), mu


@pytest.mark.parametrize("scheme", ["spectral", "strang"])
def test_free_spreading_matches_closed_form(scheme):
    g = PhaseGrid(256, 128.0)
    s = packet(g, -10.0, 1.0, 2.0)
    cfg = EvolutionConfig(1.0, 0.01, scheme=scheme)
    out = evolve_unitary(s, free_potential(g), cfg, 6.0)
    w, mu = _width(out)
    assert mu == pytest.approx(-4.0, abs=1e-6)
    assert w == pytest.approx(2.0 * math.sqrt(1 + (6.0 / 8.0) ** 2), rel=1e-6)


def test_coherent_state_keeps_width_and_follows_orbit():
    g = PhaseGrid(128, 32.0)
    m, sigma = 1.0, 1.0
    omega = 1.0 / (2 * m * sigma**2)
    V = harmonic_potential(g, omega, m)
    s = packet(g, 3.0, 0.0, sigma)
    cfg = EvolutionConfig(m, 0.005, scheme="spectral")
    for t in [1.0, 2.5, 4.0]:
        out = evolve_unitary(s, V, cfg, t)
        w, mu = _width(out)
        assert w == pytest.approx(sigma, rel=1e-6)
        assert mu == pytest.approx(3.0 * math.cos(omega * t), abs=1e-6)
        assert out.expect_p() == pytest.approx(-3.0 * m * omega * math.sin(omega * t), abs=1e-6)


def test_strang_converges_to_spectral(grid):
    V = make_disorder(grid, 0.5, 1.0, 3)
    s = packet(grid, 0.0, 0.5, 2.0)
    exact = evolve_unitary(s, V, EvolutionConfig(1.0, 0.01, scheme="spectral"), 2.0).amplitudes
    errs = []
    for dt in [0.02, 0.01, 0.005]:
        a = evolve_unitary(s, V, EvolutionConfig(1.0, dt, scheme="strang"), 2.0).amplitudes
        errs.append(np.linalg.norm(a - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_unitarity_and_effective_decay(grid, spectral):
    V = harmonic_potential(grid, 0.3, 1.0)
    s = packet(grid, 1.0, 0.0, 2.0)
    assert evolve_unitary(s, V, spectral, 3.7).norm() == pytest.approx(1.0, abs=1e-12)
    assert evolve_effective(s, V, spectral, 2.0, 3.0).norm() ** 2 == pytest.approx(math.exp(-1.5), rel=1e-12)


def test_guard_rejects_large_steps(grid):
    cfg = EvolutionConfig(1.0, 0.2, scheme="strang")
    with pytest.raises(PreconditionError, match="guard"):
        Propagator(grid, free_potential(grid), cfg)


def test_unitary_matrix_composes(grid, spectral):
    prop = Propagator(grid, harmonic_potential(grid, 0.25, 1.0), spectral)
    a, b = prop.unitary_matrix(0.7), prop.unitary_matrix(1.1)
    assert np.allclose(a @ b, prop.unitary_matrix(1.8), atol=1e-12)


def test_config_validation():
    with pytest.raises(PreconditionError):
        EvolutionConfig(-1.0, 0.1)
    with pytest.raises(PreconditionError):
        EvolutionConfig(1.0, 0.1, scheme="euler")


def test_disorder_is_seeded_zero_mean_with_rms(grid):
    a = make_disorder(grid, 0.5, 1.0, 11)
    b = make_disorder(grid, 0.5, 1.0, 11)
    c = make_disorder(grid, 0.5, 1.0, 12)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert abs(a.values.mean()) < 1e-14
    g = PhaseGrid(1024, 512.0)
    rms = np.mean([np.sqrt(np.mean(make_disorder(g, 0.5, 1.0, s).values ** 2)) for s in range(20)])
    assert rms == pytest.approx(0.5, rel=0.1)


def test_disorder_rejects_short_correlation(grid):
    with pytest.raises(PreconditionError):
        make_disorder(grid, 0.5, 0.1, 0)


def test_potential_text_round_trip(grid):
    V = make_disorder(grid, 0.7, 1.0, 5)
    back = Potential.from_text(V.to_text(grid))
    assert np.array_equal(back.values, V.values)
    assert back.params["source_kind"] == "disorder"


def test_harmonic_force_and_energy(grid):
    V = harmonic_potential(grid, 0.5, 2.0, center=1.0)
    assert V.force(grid, 3.0) == pytest.approx(-2.0 * 0.25 * 2.0)
    assert V.energy(grid, 3.0) == pytest.approx(0.5 * 2.0 * 0.25 * 4.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2))
def test_verlet_conserves_harmonic_energy(x0, p0):
    g = PhaseGrid(64, 32.0)
    V = harmonic_potential(g, 1.0, 1.0)
    x, p = verlet(g, V, 1.0, x0, p0, 0.001, 2 * math.pi)
    e0 = classical_energy(g, V, 1.0, x0, p0)
    assert classical_energy(g, V, 1.0, x, p) == pytest.approx(e0, abs=1e-6 + 1e-6 * e0)
    assert float(x) == pytest.approx(x0, abs=1e-4)


def test_free_classical_flow_is_exact(grid):
    out = evolve_classical(ClassicalState(1.0, 2.0), free_potential(grid), 4.0, 0.1, 3.0, grid)
    assert out == ClassicalState(2.5, 2.0)
