"""Unitary, decaying and classical time evolution plus the potential library."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import PreconditionError, check_nonnegative, check_positive
from .grid import StateVector, wrap


@dataclass(frozen=True, eq=False)
class Potential:
    """Tabulated potential on a grid; ``kind`` and ``params`` record its origin."""

    kind: str
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("potential values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def is_free(self):
        return not np.any(self.values)

    def force(self, grid, x):
        """-dV/dx at arbitrary positions (analytic where the kind allows it)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            m, w = self.params["mass"], self.params["omega"]
            c = self.params.get("center", 0.0)
            return -m * w**2 * wrap(x - c, grid.box_length)
        dvdx = (np.roll(self.values, -1) - np.roll(self.values, 1)) / (2.0 * grid.dx)
        xp = np.append(grid.x, grid.x[0] + grid.box_length)
        fp = np.append(dvdx, dvdx[0])
        xw = wrap(x, grid.box_length)
        return -np.interp(xw, xp, fp)

    def energy(self, grid, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            m, w = self.params["mass"], self.params["omega"]
            c = self.params.get("center", 0.0)
            return 0.5 * m * w**2 * wrap(x - c, grid.box_length) ** 2
        xp = np.append(grid.x, grid.x[0] + grid.box_length)
        return np.interp(wrap(x, grid.box_length), xp, np.append(self.values, self.values[0]))

    def to_text(self, grid):
        """Two-column ``x V(x)`` text with round-trip float precision."""
        lines = [f"# kind={self.kind}"]
        lines += [f"{float(x)!r} {float(v)!r}" for x, v in zip(grid.x, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Inverse of :meth:`to_text`; the result is always a tabulated potential."""
        source = "custom"
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("# kind="):
                source = line.split("=", 1)[1]
            elif line and not line.startswith("#"):
                rows.append([float(v) for v in line.split()])
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        return cls("custom", arr[:, 1], {"source_kind": source})


def free_potential(grid):
    return Potential("free", np.zeros(grid.n_points))


def harmonic_potential(grid, omega, mass, center=0.0):
    check_positive(omega, "omega")
    check_positive(mass, "mass")
    d = wrap(grid.x - center, grid.box_length)
    return Potential(
        "harmonic", 0.5 * mass * omega**2 * d**2, {"omega": omega, "mass": mass, "center": center}
    )


def custom_potential(values):
    return Potential("custom", values)


def make_disorder(grid, W, ell, seed):
    """Gaussian-correlated random potential with RMS ``W`` and correlation length ``ell``.

    Correlation ``<V(x)V(x')> ~ W^2 exp(-(x-x')^2 / (2 ell^2))``; the zero mode
    is removed so every realization has zero mean.
    """
    check_nonnegative(W, "W")
    if ell < grid.dx * (1 - 1e-12):
        raise PreconditionError(f"correlation length {ell} below grid spacing {grid.dx}")
    params = {"W": W, "ell": ell, "seed": int(seed)}
    if W == 0:
        return Potential("disorder", np.zeros(grid.n_points), params)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    white = rng.standard_normal(grid.n_points)
    k = 2.0 * np.pi * np.fft.rfftfreq(grid.n_points, d=grid.dx)
    spec = np.exp(-0.25 * (k * ell) ** 2)
    spec[0] = 0.0
    # E[V_j^2] = W^2 after this normalization (rfft mode multiplicities counted)
    mult = np.full(len(k), 2.0)
    mult[0] = 1.0
    if grid.n_points % 2 == 0:
        mult[-1] = 1.0
    spec *= W * np.sqrt(grid.n_points / np.sum(mult * spec**2))
    values = np.fft.irfft(np.fft.rfft(white) * spec, n=grid.n_points)
    return Potential("disorder", values, params)


@dataclass(frozen=True)
class EvolutionConfig:
    mass: float
    dt: float
    hbar: float = 1.0
    scheme: str = "strang"

    def __post_init__(self):
        check_positive(self.mass, "mass")
        check_positive(self.dt, "dt")
        check_positive(self.hbar, "hbar")
        if self.scheme not in ("strang", "spectral"):
            raise PreconditionError(f"unknown scheme {self.scheme!r}")

    def check_guard(self, grid, V):
        kin = grid.p_max**2 / (2 * self.mass) * self.dt / self.hbar
        pot = np.max(np.abs(V.values)) * self.dt / self.hbar
        if kin >= 0.5 or pot >= 0.5:
            raise PreconditionError(
                f"dt={self.dt} violates the phase-wrap guard (kinetic {kin:.3f}, potential {pot:.3f})"
            )


class Propagator:
    """Evolution engine for one (grid, V, config); reusable across states.

    ``scheme="strang"`` steps the split operator; ``scheme="spectral"`` uses a
    cached eigendecomposition of the dense grid Hamiltonian (exact for any
    duration, O(N^2) per state).
    """

    def __init__(self, grid, V, cfg, scheme=None):
        if abs(cfg.hbar - grid.hbar) > 1e-15:
            raise PreconditionError("config hbar differs from grid hbar")
        cfg.check_guard(grid, V)
        self.grid = grid
        self.V = V
        self.cfg = cfg
        self.scheme = scheme or cfg.scheme
        self.kinetic = grid.p**2 / (2.0 * cfg.mass)
        self._eig = None

    def hamiltonian(self):
        n = self.grid.n_points
        kin = np.fft.ifft(self.kinetic[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)
        return kin + np.diag(self.V.values)

    @property
    def eig(self):
        if self._eig is None:
            h = self.hamiltonian()
            h = 0.5 * (h + h.conj().T)
            # the grid Hamiltonian is real symmetric up to FFT round-off
            if np.max(np.abs(h.imag)) < 1e-12 * max(np.max(np.abs(h.real)), 1.0):
                e, q = np.linalg.eigh(h.real)
                self._eig = (e, q.astype(complex))
            else:
                self._eig = np.linalg.eigh(h)
        return self._eig

    def unitary_matrix(self, duration):
        e, q = self.eig
        return (q * np.exp(-1j * e * duration / self.cfg.hbar)) @ q.conj().T

    def evolve(self, amps, durations):
        """Evolve a batch ``(M, N)`` of states by per-row durations ``(M,)``."""
        amps = np.atleast_2d(np.asarray(amps, dtype=complex))
        durations = np.broadcast_to(np.asarray(durations, dtype=float), amps.shape[:1])
        if np.any(durations < 0):
            raise PreconditionError("durations must be >= 0")
        if self.scheme == "spectral":
            e, q = self.eig
            coeffs = amps @ q.conj()
            coeffs *= np.exp(-1j * np.outer(durations, e) / self.cfg.hbar)
            return coeffs @ q.T
        return self._strang(amps, durations)

    def _strang(self, amps, durations):
        hbar = self.cfg.hbar
        if self.V.is_free:
            nsteps = np.where(durations > 0, 1, 0)
        else:
            nsteps = np.ceil(durations / self.cfg.dt - 1e-12).astype(int)
        out = amps.copy()
        active = nsteps > 0
        if not np.any(active):
            return out
        h = np.where(active, durations / np.maximum(nsteps, 1), 0.0)
        half_v = np.exp(-0.5j * np.outer(h, self.V.values) / hbar)
        kin = np.exp(-1j * np.outer(h, self.kinetic) / hbar)
        for s in range(int(nsteps.max())):
            rows = np.nonzero(nsteps > s)[0]
            if len(rows) == len(out):
                psi = out * half_v
                psi = np.fft.ifft(np.fft.fft(psi, axis=1) * kin, axis=1)
                out = psi * half_v
            else:
                psi = out[rows] * half_v[rows]
                psi = np.fft.ifft(np.fft.fft(psi, axis=1) * kin[rows], axis=1)
                out[rows] = psi * half_v[rows]
        return out


def evolve_unitary(state, V, cfg, duration, propagator=None):
    check_nonnegative(duration, "duration")
    if duration == 0:
        return StateVector(state.grid, state.amplitudes.copy())
    prop = propagator or Propagator(state.grid, V, cfg)
    return StateVector(state.grid, prop.evolve(state.amplitudes, [duration])[0])


def evolve_effective(state, V, cfg, tau, duration, propagator=None):
    """Evolution under H - i hbar/(2 tau) I; the result is not renormalized."""
    check_positive(tau, "tau")
    out = evolve_unitary(state, V, cfg, duration, propagator)
    return StateVector(state.grid, out.amplitudes * math.exp(-duration / (2.0 * tau)))


@dataclass(frozen=True)
class ClassicalState:
    x: float
    p: float


def verlet(grid, V, mass, x, p, dt, duration):
    """Velocity-Verlet on arrays of phase-space points; returns ``(x, p)``."""
    x = np.array(x, dtype=float, copy=True)
    p = np.array(p, dtype=float, copy=True)
    if duration == 0:
        return x, p
    n = max(1, math.ceil(duration / dt - 1e-12))
    h = duration / n
    f = V.force(grid, x)
    for _ in range(n):
        p += 0.5 * h * f
        x += h * p / mass
        f = V.force(grid, x)
        p += 0.5 * h * f
    return x, p


def evolve_classical(s, V, mass, dt, duration, grid):
    check_nonnegative(duration, "duration")
    if V.is_free:
        return ClassicalState(s.x + s.p * duration / mass, s.p)
    x, p = verlet(grid, V, mass, s.x, s.p, dt, duration)
    return ClassicalState(float(x), float(p))


def classical_energy(grid, V, mass, x, p):
    return np.asarray(p) ** 2 / (2.0 * mass) + V.energy(grid, x)
