import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpreduce._validation import PreconditionError
from wpreduce.grid import (
    LatticeSpec,
    PacketParams,
    PhaseGrid,
    StateVector,
    husimi_field,
    husimi_overlap,
    make_gaussian_packet,
    packet_amplitudes,
    packet_overlap_sq,
    resolution_of_identity_residual,
    translate_momentum,
    translate_position,
    translation_matrix,
    wrap,
)

from .conftest import packet


def test_grid_spacings(grid):
    assert grid.dx == 0.5
    assert grid.dp == pytest.approx(2 * np.pi / 32)
    assert grid.x[0] == -16.0
    assert grid.p_max == pytest.approx(np.pi / 0.5)


@pytest.mark.parametrize("n", [0, 3, 48, -4])
def test_grid_rejects_non_power_of_two(n):
    with pytest.raises(PreconditionError):
        PhaseGrid(n, 10.0)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_lands_in_half_open_box(d):
    w = float(wrap(d, 32.0))
    assert -16.0 <= w < 16.0
    assert (d - w) / 32.0 == pytest.approx(round((d - w) / 32.0), abs=1e-9)


def test_packet_moments(grid):
    st_ = packet(grid, 1.5, 0.75, 2.0)
    assert st_.norm() == pytest.approx(1.0, abs=1e-14)
    assert st_.expect_x() == pytest.approx(1.5, abs=1e-10)
    assert st_.expect_p() == pytest.approx(0.75, abs=1e-8)
    prob = np.abs(st_.amplitudes) ** 2
    var = np.sum(prob * (grid.x - 1.5) ** 2)
    assert var == pytest.approx(4.0, rel=1e-8)


@pytest.mark.parametrize("sigma", [0.99, 4.01])
def test_packet_width_bounds(grid, sigma):
    with pytest.raises(PreconditionError):
        make_gaussian_packet(grid, PacketParams(0.0, 0.0, sigma))


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-1.5, 1.5), st.floats(-5, 5), st.floats(-1.5, 1.5))
def test_overlap_matches_closed_form(x1, p1, x2, p2):
    g = PhaseGrid(128, 64.0)
    a, b = packet_amplitudes(g, x1, p1, 2.0), packet_amplitudes(g, x2, p2, 2.0)
    got = abs(np.vdot(a, b)) ** 2
    assert got == pytest.approx(packet_overlap_sq(x1 - x2, p1 - p2, 2.0), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(-20, 20), st.floats(-3, 3))
def test_translations_are_exact(y, k):
    g = PhaseGrid(128, 64.0)
    s = packet(g, 0.3, 0.2, 2.0)
    moved = translate_momentum(translate_position(s, y), k)
    want = packet_amplitudes(g, 0.3 + y, 0.2 + k, 2.0)
    # the momentum kick picks up a global phase exp(i k (x0 + y)); compare moduli of overlap
    assert abs(np.vdot(want, moved.amplitudes)) == pytest.approx(1.0, abs=1e-9)
    t = translation_matrix(g, y)
    assert np.allclose(t @ s.amplitudes, translate_position(s, y).amplitudes, atol=1e-12)
    assert np.allclose(t.conj().T @ t, np.eye(g.n_points), atol=1e-12)


def test_husimi_fast_path_matches_direct_overlaps(grid, lattice):
    s = packet(grid, -3.0, 0.6, 2.0)
    f = husimi_field(s, lattice, 2.0)
    rng = np.random.default_rng(1)
    for i, j in rng.integers(0, 64, size=(20, 2)):
        assert f.values[i, j] == pytest.approx(husimi_overlap(s, lattice.x_nodes[i], lattice.p_nodes[j], 2.0), abs=1e-14)


def test_husimi_fast_path_with_offset_nodes(grid, lattice):
    s = packet(grid, 1.0, -0.4, 2.0)
    off = LatticeSpec(lattice.x_nodes[::2] + 0.13, lattice.p_nodes[::2] + 0.021, (2 * lattice.cell[0], 2 * lattice.cell[1]))
    f = husimi_field(s, off, 2.0)
    for i, j in [(0, 0), (5, 17), (20, 3), (31, 31)]:
        assert f.values[i, j] == pytest.approx(husimi_overlap(s, off.x_nodes[i], off.p_nodes[j], 2.0), abs=1e-13)


@pytest.mark.parametrize("sigma", [1.0, 2.0, 4.0])
def test_resolution_of_identity_on_full_lattice(grid, lattice, sigma):
    assert resolution_of_identity_residual(grid, sigma, lattice) <= 1e-6


def test_husimi_total_is_one(grid, lattice):
    f = husimi_field(packet(grid, 0.0, 1.0, 2.0), lattice, 2.0)
    assert f.total() == pytest.approx(1.0, abs=1e-10)
    assert f.argmax_node() == pytest.approx((0.0, 1.0), abs=grid.dp)


def test_truncated_band_warns_and_loses_identity(grid):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lat = LatticeSpec.from_grid(grid, p_band=0.5)
        res = resolution_of_identity_residual(grid, 1.0, lat)
    assert res > 1e-6 or caught


def test_state_vector_rejects_bad_shapes(grid):
    with pytest.raises(PreconditionError):
        StateVector(grid, np.ones(10))
    with pytest.raises(PreconditionError):
        StateVector(grid, np.full(64, np.nan))


def test_lattice_rejects_irregular_nodes():
    with pytest.raises(PreconditionError):
        LatticeSpec(np.array([0.0, 1.0, 3.0]), np.array([0.0, 1.0]))
