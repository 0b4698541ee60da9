"""Dense density-matrix integration of the collapse master equation.

Two channel families are supported: the phase-space packet continuum
(discretized on a lattice) and an explicit set of normalized kets with a
non-negative rate matrix.  Both are evaluated through :class:`Generator`,
which precomputes everything that does not depend on rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from ._validation import NumericalAbort, PreconditionError, check_nonnegative, check_positive
from .grid import (
    LatticeSpec,
    PhaseSpaceLattice,
    StateVector,
    _aligned_indices,
    check_sigma,
    packet_amplitudes,
    packet_matrix,
    resolution_of_identity_residual,
    window_matrix,
)
from .propagators import Propagator


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    grid: object
    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=complex)
        n = self.grid.n_points
        if arr.shape != (n, n):
            raise PreconditionError(f"density matrix must be {n}x{n}, got {arr.shape}")
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_state(cls, state):
        a = state.amplitudes
        return cls(state.grid, np.outer(a, a.conj()))

    @classmethod
    def mixture(cls, states, weights=None):
        weights = np.full(len(states), 1.0 / len(states)) if weights is None else np.asarray(weights)
        ent = sum(w * np.outer(s.amplitudes, s.amplitudes.conj()) for w, s in zip(weights, states))
        return cls(states[0].grid, ent)

    @classmethod
    def maximally_mixed(cls, grid):
        return cls(grid, np.eye(grid.n_points) / grid.n_points)

    def trace(self):
        return complex(np.trace(self.entries))

    def purity(self):
        return float(np.real(np.sum(self.entries * self.entries.T)))

    def hermiticity_error(self):
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self):
        h = 0.5 * (self.entries + self.entries.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def check(self, herm_tol=1e-10, trace_tol=1e-8):
        if self.hermiticity_error() > herm_tol:
            raise PreconditionError("density matrix is not Hermitian")
        if abs(self.trace() - 1) > trace_tol:
            raise PreconditionError(f"density matrix trace {self.trace()} != 1")
        return self

    def to_text(self):
        """Row-major ``re,im`` pairs, one matrix row per line."""
        rows = [
            " ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) for row in self.entries
        ]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, grid, text):
        rows = []
        for line in text.strip().splitlines():
            pairs = [tok.split(",") for tok in line.split()]
            rows.append([complex(float(re), float(im)) for re, im in pairs])
        return cls(grid, np.array(rows))


def as_density(rho_or_state):
    if isinstance(rho_or_state, DensityMatrix):
        return rho_or_state
    if isinstance(rho_or_state, StateVector):
        return DensityMatrix.from_state(rho_or_state)
    raise TypeError(f"expected DensityMatrix or StateVector, got {type(rho_or_state).__name__}")


@dataclass(frozen=True, eq=False)
class PhaseSpaceChannels:
    """Collapse onto lattice packets at total rate 1/tau (``tau=inf`` disables it)."""

    lattice: LatticeSpec
    sigma: float
    tau: float


@dataclass(frozen=True, eq=False)
class DiscreteKetChannels:
    """Jumps ``|l> -> |l'>`` at rates ``rates[l, l']`` over normalized kets (rows)."""

    kets: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        kets = np.atleast_2d(np.asarray(self.kets, dtype=complex))
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape != (len(kets), len(kets)):
            raise PreconditionError("rates must be a square matrix matching the ket count")
        if np.any(rates < 0):
            raise PreconditionError("rates must be non-negative")
        norms = np.sum(np.abs(kets) ** 2, axis=1)
        if np.any(np.abs(norms - 1) > 1e-10):
            raise PreconditionError("channel kets must be normalized")
        object.__setattr__(self, "kets", kets)
        object.__setattr__(self, "rates", rates)

    def operators(self):
        """Lindblad operators sqrt(w) |l'><l| with their (l, l') labels."""
        ops = []
        for l, lp in zip(*np.nonzero(self.rates)):
            v = math.sqrt(self.rates[l, lp]) * np.outer(self.kets[lp], self.kets[l].conj())
            ops.append(((int(l), int(lp)), v))
        return ops


class _StructuredCollapse:
    """Packet channel map for grid-aligned lattices spanning the full conjugate band.

    Summing the packet projectors over the full band collapses the momentum
    sum to a Kronecker delta on cyclic index differences, so the map acts
    diagonal-by-diagonal: O(Mx N^2) per call instead of O(Mx Mp N^2).
    """

    def __init__(self, grid, lattice, sigma, x_stride):
        n = grid.n_points
        win = window_matrix(grid, lattice.x_nodes, sigma)
        i = np.arange(n)
        self.shift = (i[:, None] - i[None, :]) % n  # column index i - m
        # P[m, x, i] = g_x(i) g_x(i - m), stored per diagonal m for batched matmul
        p = win[:, :, None] * win[:, self.shift]
        self.Pm = np.ascontiguousarray(p.transpose(2, 0, 1))
        self.PmT = np.ascontiguousarray(p.transpose(2, 1, 0))
        self.scale = float(x_stride)
        self.rows = i[:, None]

    def __call__(self, rho):
        rp = rho[self.rows, self.shift].T  # rp[m, i] = rho[i, i - m]
        ri = np.stack([rp.real, rp.imag], axis=-1)
        c = np.matmul(self.Pm, ri)
        cp = self.scale * np.matmul(self.PmT, c)
        out = np.empty_like(rho)
        out[self.rows, self.shift] = (cp[..., 0] + 1j * cp[..., 1]).T
        return out


class _DenseCollapse:
    def __init__(self, grid, lattice, sigma):
        self.phi = packet_matrix(grid, lattice, sigma)
        self.weight = lattice.weight

    def populations(self, rho):
        return np.real(np.sum((self.phi.conj() @ rho) * self.phi, axis=1))

    def __call__(self, rho):
        q = self.populations(rho)
        return self.phi.T @ ((self.weight * q)[:, None] * self.phi.conj())


def collapse_map(grid, lattice, sigma, dense=False):
    """Return C(rho) = sum_nodes weight <phi|rho|phi> |phi><phi| as a callable."""
    aligned = _aligned_indices(grid, lattice)
    full_band = (
        aligned is not None
        and len(lattice.p_nodes) == grid.n_points
        and abs(lattice.cell[1] - grid.dp) < 1e-12 * grid.dp
    )
    if full_band and not dense:
        stride = lattice.cell[0] / grid.dx
        if abs(stride - round(stride)) < 1e-9:
            return _StructuredCollapse(grid, lattice, sigma, round(stride))
    return _DenseCollapse(grid, lattice, sigma)


class Generator:
    """Right-hand side of the master equation for fixed (grid, V, cfg, channels)."""

    def __init__(self, grid, V, cfg, channels, residual_tol=1e-4, dense=False):
        self.grid = grid
        self.cfg = cfg
        self.channels = channels
        self.prop = Propagator(grid, V, cfg, scheme="spectral")
        self.H = self.prop.hamiltonian()
        self.hbar = cfg.hbar
        self._collapse = None
        if isinstance(channels, PhaseSpaceChannels):
            if not math.isinf(channels.tau):
                check_positive(channels.tau, "tau")
                check_sigma(grid, channels.sigma)
                res = resolution_of_identity_residual(grid, channels.sigma, channels.lattice)
                if res > residual_tol:
                    raise PreconditionError(
                        f"lattice resolution-of-identity residual {res:.2e} exceeds {residual_tol:.0e}"
                    )
                self.residual = res
                self._collapse = collapse_map(grid, channels.lattice, channels.sigma, dense)
        elif isinstance(channels, DiscreteKetChannels):
            k = channels.kets
            out_rate = channels.rates.sum(axis=1)
            self._anti = (k.T * out_rate) @ k.conj()
        elif channels is not None:
            raise TypeError(f"unsupported channel set {type(channels).__name__}")

    def collapse_term(self, rho):
        """The gain term: C(rho) for packets, sum w |l'><l|rho|l><l'| for kets."""
        ch = self.channels
        if isinstance(ch, PhaseSpaceChannels):
            if self._collapse is None:
                return np.zeros_like(rho)
            return self._collapse(rho)
        k = ch.kets
        q = np.real(np.sum((k.conj() @ rho) * k, axis=1))
        gain = ch.rates.T @ q
        return (k.T * gain) @ k.conj()

    def __call__(self, rho):
        out = (1j / self.hbar) * (rho @ self.H - self.H @ rho)
        ch = self.channels
        if isinstance(ch, PhaseSpaceChannels):
            if self._collapse is not None:
                out += (self._collapse(rho) - rho) / ch.tau
        elif isinstance(ch, DiscreteKetChannels):
            out -= 0.5 * (rho @ self._anti + self._anti @ rho)
            out += self.collapse_term(rho)
        return out


def lindblad_rhs(rho, V, cfg, channels):
    rho = as_density(rho)
    return Generator(rho.grid, V, cfg, channels)(rho.entries)


def _rk4_step(f, rho, h):
    k1 = f(rho)
    k2 = f(rho + 0.5 * h * k1)
    k3 = f(rho + 0.5 * h * k2)
    k4 = f(rho + h * k3)
    return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class LindbladSolver:
    """Classical RK4 integration with trace and positivity monitoring.

    The step is ``cfg.dt`` unless ``dt`` is given; the last step of each
    interval is shortened to land on the requested times exactly.
    """

    def __init__(self, grid, V, cfg, channels, dt=None, positivity_every=0, dense=False):
        self.gen = Generator(grid, V, cfg, channels, dense=dense)
        self.grid = grid
        self.dt = dt or cfg.dt
        e = np.linalg.eigvalsh(self.gen.H)
        if self.dt * (e[-1] - e[0]) / cfg.hbar > 2.5:
            raise PreconditionError("dt too large for RK4 stability on this Hamiltonian")
        self.positivity_every = positivity_every
        self.n_steps = 0

    def run(self, rho0, times):
        """Integrate from t=0; return density matrices at each of ``times``."""
        rho0 = as_density(rho0)
        rho = rho0.entries.copy()
        t = 0.0
        out = []
        for target in times:
            check_nonnegative(target - t, "time increment")
            span = target - t
            n = math.ceil(span / self.dt - 1e-12) if span > 0 else 0
            for _ in range(n):
                rho = _rk4_step(self.gen, rho, span / n)
                self.n_steps += 1
                self._monitor(rho)
            t = target
            out.append(DensityMatrix(self.grid, rho.copy()))
        return out

    def _monitor(self, rho):
        drift = abs(np.trace(rho) - 1.0)
        if drift > 1e-6:
            raise NumericalAbort(f"trace drifted by {drift:.2e} after {self.n_steps} steps")
        if self.positivity_every and self.n_steps % self.positivity_every == 0:
            lam = DensityMatrix(self.grid, rho).min_eigenvalue()
            if lam < -1e-6:
                raise NumericalAbort(f"negative eigenvalue {lam:.2e} after {self.n_steps} steps")


def integrate_lindblad(rho0, V, cfg, channels, duration, dt=None):
    rho0 = as_density(rho0)
    if duration == 0:
        return DensityMatrix(rho0.grid, rho0.entries.copy())
    solver = LindbladSolver(rho0.grid, V, cfg, channels, dt=dt)
    rho = solver.run(rho0, [duration])[0]
    if rho.min_eigenvalue() < -1e-6:
        raise NumericalAbort("final state lost positivity")
    return rho


def husimi_of_rho(rho, lattice, sigma):
    """<phi_{x,p}|rho|phi_{x,p}> on the lattice, clipped at zero."""
    rho = as_density(rho)
    grid = rho.grid
    vals = np.empty(lattice.shape)
    for i, xc in enumerate(lattice.x_nodes):
        rows = packet_amplitudes(grid, np.full(len(lattice.p_nodes), xc), lattice.p_nodes, sigma)
        vals[i] = np.real(np.sum((rows.conj() @ rho.entries) * rows, axis=1))
    return PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, np.clip(vals, 0.0, None), lattice.weight)


def integral_form(rho0, V, cfg, channels, t, r_history):
    """Right-hand side of the renewal-integral representation of rho(t).

    ``r_history`` is a sequence of ``(t', r_lattice)`` pairs on an evenly
    spaced grid from 0 to ``t`` (odd length preferred for Simpson weights).
    """
    rho0 = as_density(rho0)
    grid = rho0.grid
    prop = Propagator(grid, V, cfg, scheme="spectral")
    tau = channels.tau
    u = prop.unitary_matrix(t)
    first = math.exp(-t / tau) * (u @ rho0.entries @ u.conj().T)
    if len(r_history) == 0 or math.isinf(tau):
        return first
    phi = packet_matrix(grid, channels.lattice, channels.sigma)
    times = np.array([tp for tp, _ in r_history])
    integrand = []
    for tp, r in r_history:
        src = phi.T @ ((r.weight * r.values.ravel())[:, None] * phi.conj())
        uu = prop.unitary_matrix(t - tp)
        integrand.append(math.exp(-(t - tp) / tau) * (uu @ src @ uu.conj().T))
    second = simpson(np.array(integrand), x=times, axis=0)
    return first + second


def integral_form_residual(rho0, V, cfg, channels, t, r_history, rho_t=None, dt=None):
    """Max-entry gap between the integral representation and direct integration."""
    rho0 = as_density(rho0)
    if rho_t is None:
        rho_t = integrate_lindblad(rho0, V, cfg, channels, t, dt=dt)
    rhs = integral_form(rho0, V, cfg, channels, t, r_history)
    return float(np.max(np.abs(rhs - rho_t.entries)))
