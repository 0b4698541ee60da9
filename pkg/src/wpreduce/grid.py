"""Periodic position grid, Gaussian packets and Husimi overlaps.

Amplitudes are stored as ``psi(x_j) * sqrt(dx)`` so the discrete 2-norm is
the L2 norm.  Momentum shifts are a pointwise phase and position shifts a
phase in the conjugate (FFT) domain, so both are exactly unitary for
arbitrary, off-grid displacements.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    PreconditionError,
    check_amplitudes,
    check_positive,
    check_power_of_two,
)

_TWO_PI = 2.0 * np.pi


def wrap(d, length):
    """Map displacements onto ``[-length/2, length/2)``."""
    return (np.asarray(d) + 0.5 * length) % length - 0.5 * length


@dataclass(frozen=True)
class PhaseGrid:
    n_points: int
    box_length: float
    hbar: float = 1.0

    def __post_init__(self):
        check_power_of_two(self.n_points)
        check_positive(self.box_length, "box_length")
        check_positive(self.hbar, "hbar")

    @property
    def dx(self):
        return self.box_length / self.n_points

    @property
    def dp(self):
        return _TWO_PI * self.hbar / self.box_length

    @property
    def x(self):
        return -0.5 * self.box_length + self.dx * np.arange(self.n_points)

    @property
    def p(self):
        """Conjugate momenta in FFT order."""
        return _TWO_PI * self.hbar * np.fft.fftfreq(self.n_points, d=self.dx)

    @property
    def p_max(self):
        return np.pi * self.hbar / self.dx

    def to_dict(self):
        return {"n_points": self.n_points, "box_length": self.box_length, "hbar": self.hbar}


@dataclass(frozen=True, eq=False)
class StateVector:
    grid: PhaseGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        arr = check_amplitudes(self.amplitudes, self.grid.n_points)
        if arr.ndim != 1:
            raise PreconditionError("StateVector holds a single state")
        object.__setattr__(self, "amplitudes", arr)

    def norm(self):
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def normalized(self):
        return StateVector(self.grid, self.amplitudes / self.norm())

    def expect_x(self):
        """Mean position, measured on the circle around the grid centre."""
        prob = np.abs(self.amplitudes) ** 2
        return float(np.sum(prob * self.grid.x) / prob.sum())

    def expect_p(self):
        ak = np.fft.fft(self.amplitudes)
        prob = np.abs(ak) ** 2
        return float(np.sum(prob * self.grid.p) / prob.sum())


@dataclass(frozen=True)
class PacketParams:
    x0: float
    p0: float
    sigma: float

    def validate(self, grid):
        check_positive(self.sigma, "sigma")
        if self.sigma < 2.0 * grid.dx * (1 - 1e-12):
            raise PreconditionError(
                f"sigma={self.sigma} is below 2*dx={2 * grid.dx}; packet not resolvable"
            )
        if self.sigma > grid.box_length / 8.0 * (1 + 1e-12):
            raise PreconditionError(
                f"sigma={self.sigma} exceeds L/8={grid.box_length / 8}; packet wraps the box"
            )
        return self


def check_sigma(grid, sigma):
    PacketParams(0.0, 0.0, sigma).validate(grid)
    return float(sigma)


def packet_amplitudes(grid, x0, p0, sigma):
    """Normalized packet amplitudes for arrays of centres, shape ``(*x0.shape, N)``."""
    x0 = np.asarray(x0, dtype=float)[..., None]
    p0 = np.asarray(p0, dtype=float)[..., None]
    d = wrap(grid.x - x0, grid.box_length)
    amps = np.exp(-(d**2) / (4.0 * sigma**2) + 1j * p0 * d / grid.hbar)
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2, axis=-1, keepdims=True))
    return amps


def make_gaussian_packet(grid, params):
    params.validate(grid)
    return StateVector(grid, packet_amplitudes(grid, params.x0, params.p0, params.sigma))


def _shift_position(grid, amps, y):
    phase = np.exp(-1j * grid.p * y / grid.hbar)
    return np.fft.ifft(np.fft.fft(amps, axis=-1) * phase, axis=-1)


def translate_position(state, y):
    if y == 0:
        return StateVector(state.grid, state.amplitudes.copy())
    return StateVector(state.grid, _shift_position(state.grid, state.amplitudes, y))


def translate_momentum(state, k):
    if k == 0:
        return StateVector(state.grid, state.amplitudes.copy())
    grid = state.grid
    return StateVector(grid, state.amplitudes * np.exp(1j * k * grid.x / grid.hbar))


def translation_matrix(grid, y):
    """Dense unitary matrix of the spectral position shift by ``y``."""
    return _shift_position(grid, np.eye(grid.n_points), y).T


def husimi_overlap(state, x, p, sigma):
    """|<phi_{x,p}|psi>|^2 by direct packet construction (the reference path)."""
    phi = packet_amplitudes(state.grid, x, p, sigma)
    return float(abs(np.vdot(phi, state.amplitudes)) ** 2)


def packet_overlap_sq(dx_, dp_, sigma, hbar=1.0):
    """Closed-form |<phi_1|phi_2>|^2 for two Gaussian packets on the real line."""
    return np.exp(-(dx_**2) / (4.0 * sigma**2) - sigma**2 * dp_**2 / hbar**2)


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Rectangular uniform phase-space lattice.

    ``cell`` overrides the node spacing for one-node axes.
    """

    x_nodes: np.ndarray
    p_nodes: np.ndarray
    cell: tuple | None = None
    hbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x_nodes", np.atleast_1d(np.asarray(self.x_nodes, float)))
        object.__setattr__(self, "p_nodes", np.atleast_1d(np.asarray(self.p_nodes, float)))
        if self.cell is None:
            if len(self.x_nodes) < 2 or len(self.p_nodes) < 2:
                raise PreconditionError("single-node lattice axes need an explicit cell size")
            cx = float(self.x_nodes[1] - self.x_nodes[0])
            cp = float(self.p_nodes[1] - self.p_nodes[0])
            object.__setattr__(self, "cell", (cx, cp))
        for nodes, c in zip((self.x_nodes, self.p_nodes), self.cell):
            if len(nodes) > 1 and not np.allclose(np.diff(nodes), c, rtol=1e-9, atol=0):
                raise PreconditionError("lattice nodes must be uniformly spaced")

    @classmethod
    def from_grid(cls, grid, x_stride=1, p_stride=1, p_band=1.0):
        """Lattice aligned with the grid points and the conjugate momenta.

        ``p_band`` < 1 keeps only the central fraction of the conjugate band.
        """
        n = grid.n_points
        x_nodes = grid.x[::x_stride]
        idx = np.arange(-n // 2, n // 2)
        keep = np.abs(idx + 0.5) <= 0.5 * n * p_band
        p_nodes = idx[keep][::p_stride] * grid.dp
        return cls(x_nodes, p_nodes, (x_stride * grid.dx, p_stride * grid.dp), grid.hbar)

    @property
    def shape(self):
        return (len(self.x_nodes), len(self.p_nodes))

    @property
    def weight(self):
        return self.cell[0] * self.cell[1] / (_TWO_PI * self.hbar)

    def shifted(self, y, k):
        return LatticeSpec(self.x_nodes + y, self.p_nodes + k, self.cell, self.hbar)

    def nodes(self):
        xx, pp = np.meshgrid(self.x_nodes, self.p_nodes, indexing="ij")
        return xx.ravel(), pp.ravel()

    def to_dict(self):
        return {
            "x_nodes": self.x_nodes.tolist(),
            "p_nodes": self.p_nodes.tolist(),
            "cell": list(self.cell),
            "hbar": self.hbar,
        }


@dataclass(frozen=True, eq=False)
class PhaseSpaceLattice:
    x_nodes: np.ndarray
    p_nodes: np.ndarray
    values: np.ndarray
    weight: float
    meta: dict = field(default_factory=dict)

    def total(self):
        return float(np.sum(self.values) * self.weight)

    def l1_distance(self, other):
        if self.values.shape != other.values.shape:
            raise PreconditionError("lattices differ in shape")
        return float(np.sum(np.abs(self.values - other.values)) * self.weight)

    def argmax_node(self):
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.x_nodes[i]), float(self.p_nodes[j])

    def scaled(self, factor):
        return PhaseSpaceLattice(self.x_nodes, self.p_nodes, self.values * factor, self.weight, dict(self.meta))


def _aligned_indices(grid, lattice):
    """Grid/FFT indices of lattice nodes, or None when the lattice is off-grid."""
    jx = (lattice.x_nodes - grid.x[0]) / grid.dx
    np_ = lattice.p_nodes / grid.dp
    if np.allclose(jx, np.round(jx), atol=1e-9) and np.allclose(np_, np.round(np_), atol=1e-9):
        return np.round(jx).astype(int) % grid.n_points, np.round(np_).astype(int) % grid.n_points
    return None


def window_matrix(grid, x_nodes, sigma):
    """Real Gaussian windows centred on ``x_nodes``, each row unit-norm."""
    d = wrap(grid.x[None, :] - np.asarray(x_nodes)[:, None], grid.box_length)
    g = np.exp(-(d**2) / (4.0 * sigma**2))
    return g / np.sqrt(np.sum(g**2, axis=1, keepdims=True))


def _p_offset(grid, p_nodes):
    """FFT indices and common offset when ``p_nodes`` = offset + integer * dp."""
    base = np.round(p_nodes[0] / grid.dp) * grid.dp
    k0 = float(p_nodes[0] - base)
    m = (p_nodes - k0) / grid.dp
    if not np.allclose(m, np.round(m), atol=1e-9):
        return None
    return np.round(m).astype(int) % grid.n_points, k0


def husimi_values(grid, amps, lattice, sigma):
    """Husimi values of a batch of states, shape ``(*batch, Mx, Mp)``.

    Momenta on the conjugate grid (up to one common offset) use a windowed
    FFT per x-row; the offset enters as a per-row phase, so the result is
    exact for any x nodes.
    """
    amps = np.asarray(amps, dtype=complex)
    hit = _p_offset(grid, lattice.p_nodes)
    if hit is not None:
        pidx, k0 = hit
        win = window_matrix(grid, lattice.x_nodes, sigma)
        if k0 != 0.0:
            d = wrap(grid.x[None, :] - lattice.x_nodes[:, None], grid.box_length)
            win = win * np.exp(-1j * k0 * d / grid.hbar)
        spec = np.fft.fft(amps[..., None, :] * win, axis=-1)
        return np.abs(spec[..., pidx]) ** 2
    out = np.empty(amps.shape[:-1] + lattice.shape)
    for i, xc in enumerate(lattice.x_nodes):
        rows = packet_amplitudes(grid, np.full(len(lattice.p_nodes), xc), lattice.p_nodes, sigma)
        out[..., i, :] = np.abs(amps @ rows.conj().T) ** 2
    return out


def husimi_field(state, lattice, sigma):
    """Husimi field of a pure state on every lattice node.

    Grid-aligned lattices go through one windowed FFT per x-row; anything else
    falls back to explicit packet rows.
    """
    grid = state.grid
    check_sigma(grid, sigma)
    span = lattice.x_nodes.max() - lattice.x_nodes.min() + lattice.cell[0]
    if span < grid.box_length * (1 - 1e-9):
        raise PreconditionError("lattice does not cover the grid box")
    vals = husimi_values(grid, state.amplitudes, lattice, sigma)
    return PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, vals, lattice.weight)


def packet_matrix(grid, lattice, sigma):
    """All lattice packets as rows, shape ``(Mx*Mp, N)``, x-major."""
    xx, pp = lattice.nodes()
    return packet_amplitudes(grid, xx, pp, sigma)


def band_coverage(grid, lattice):
    """Fraction of the conjugate band spanned by the lattice momenta."""
    span = lattice.p_nodes.max() - lattice.p_nodes.min() + lattice.cell[1]
    return span / (grid.n_points * grid.dp)


def identity_operator(grid, lattice, sigma):
    """Dense sum of weight * |phi><phi| over the lattice."""
    n = grid.n_points
    dmat = np.zeros((n, n), dtype=complex)
    for xc in lattice.x_nodes:
        rows = packet_amplitudes(grid, np.full(len(lattice.p_nodes), xc), lattice.p_nodes, sigma)
        dmat += rows.T @ rows.conj()
    return dmat * lattice.weight


def resolution_of_identity_residual(grid, sigma, lattice):
    if band_coverage(grid, lattice) < 1.0 - 1e-9:
        warnings.warn(
            "lattice momenta cover less than the conjugate band; residual will be O(1)",
            RuntimeWarning,
            stacklevel=2,
        )
    dmat = identity_operator(grid, lattice, sigma)
    return float(np.max(np.abs(dmat - np.eye(grid.n_points))))
