"""Continuous-time random walk over phase space.

A walker waits an Exp(tau) time, lets its current packet evolve unitarily
for that long, then collapses onto a packet drawn from the Husimi field of
the evolved state.  Walkers that have not collapsed yet carry the unitarily
evolved initial state, so ensemble averages rebuild the full density matrix.
"""

from __future__ import annotations

import math
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import PreconditionError, check_nonnegative, check_positive
from .grid import (
    LatticeSpec,
    PhaseSpaceLattice,
    StateVector,
    check_sigma,
    husimi_values,
    packet_amplitudes,
    wrap,
)
from .lindblad import DensityMatrix, as_density, husimi_of_rho
from .propagators import Propagator
from .rng import CollapseStream

CHUNK = 256


@dataclass
class Walker:
    index: int
    seed: int
    component: int = 0
    times: list = field(default_factory=list)
    xs: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    waits: list = field(default_factory=list)
    t_final: float = 0.0
    wrapped: bool = False

    @property
    def uncollapsed(self):
        return not self.times

    @property
    def current(self):
        if self.uncollapsed:
            return None
        return self.xs[-1], self.ps[-1]

    def last_jump_before(self, t):
        """Index of the last jump at or before ``t`` (-1 if none)."""
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def history(self):
        return list(zip(self.times, self.xs, self.ps))


def initial_components(rho0):
    """Pure-state decomposition of the initial condition as (weights, amplitude rows)."""
    if isinstance(rho0, StateVector):
        return np.ones(1), rho0.amplitudes[None, :]
    rho0 = as_density(rho0)
    lam, vec = np.linalg.eigh(0.5 * (rho0.entries + rho0.entries.conj().T))
    keep = lam > 1e-14
    return lam[keep] / lam[keep].sum(), vec[:, keep].T


def sample_nodes(fields, lattice, uniforms):
    """Categorical draw of one node per field, plus uniform in-cell jitter.

    ``fields`` has shape ``(M, Mx, Mp)``; ``uniforms`` is ``(M, 3)``.
    """
    m = fields.shape[0]
    flat = fields.reshape(m, -1)
    cdf = np.cumsum(flat, axis=1)
    target = uniforms[:, 0] * cdf[:, -1]
    idx = np.minimum(np.sum(cdf < target[:, None], axis=1), flat.shape[1] - 1)
    ix, ip = np.divmod(idx, lattice.shape[1])
    x = lattice.x_nodes[ix] + (uniforms[:, 1] - 0.5) * lattice.cell[0]
    p = lattice.p_nodes[ip] + (uniforms[:, 2] - 0.5) * lattice.cell[1]
    return x, p


def kernel_psi(origin, xi, V, cfg, tau, sigma, lattice, grid, propagator=None):
    """Memory kernel (1/tau) e^{-xi/tau} |<phi_{x,p}|U(xi)|phi_origin>|^2 on the lattice."""
    check_nonnegative(xi, "xi")
    check_positive(tau, "tau")
    check_sigma(grid, sigma)
    prop = propagator or Propagator(grid, V, cfg)
    amps = packet_amplitudes(grid, origin[0], origin[1], sigma)[None, :]
    if xi > 0:
        amps = prop.evolve(amps, [xi])
    vals = husimi_values(grid, amps[0], lattice, sigma) * math.exp(-xi / tau) / tau
    return PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, vals, lattice.weight, {"xi": xi})


def _time_quadrature(tau, horizon, n_nodes):
    horizon = 10.0 * tau if horizon is None else horizon
    if horizon < 8.0 * tau:
        warnings.warn("time quadrature spans less than 8 tau", RuntimeWarning, stacklevel=3)
    u, w = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * horizon * (u + 1.0), 0.5 * horizon * w


def kernel_normalization(origin, V, cfg, tau, sigma, lattice, grid, horizon=None, n_nodes=48):
    """Integral of the kernel over destinations and elapsed time (should be 1)."""
    xi, w = _time_quadrature(tau, horizon, n_nodes)
    prop = Propagator(grid, V, cfg)
    amps = packet_amplitudes(grid, np.full(len(xi), origin[0]), np.full(len(xi), origin[1]), sigma)
    amps = prop.evolve(amps, xi)
    mass = husimi_values(grid, amps, lattice, sigma).sum(axis=(1, 2)) * lattice.weight
    return float(np.sum(w * np.exp(-xi / tau) / tau * mass))


def source_s(rho0, t0, t, V, cfg, tau, sigma, lattice, propagator=None):
    if t < t0:
        raise PreconditionError("source requested before the initial time")
    rho0 = as_density(rho0)
    prop = propagator or Propagator(rho0.grid, V, cfg, scheme="spectral")
    u = prop.unitary_matrix(t - t0)
    rho_t = DensityMatrix(rho0.grid, u @ rho0.entries @ u.conj().T)
    field_ = husimi_of_rho(rho_t, lattice, sigma)
    return field_.scaled(math.exp(-(t - t0) / tau) / tau)


def source_normalization(rho0, V, cfg, tau, sigma, lattice, horizon=None, n_nodes=48):
    rho0 = as_density(rho0)
    prop = Propagator(rho0.grid, V, cfg, scheme="spectral")
    ts, w = _time_quadrature(tau, horizon, n_nodes)
    total = 0.0
    for ti, wi in zip(ts, w):
        total += wi * source_s(rho0, 0.0, ti, V, cfg, tau, sigma, lattice, prop).total()
    return float(total)


class WalkerEngine:
    """Batched CTRW sampler for one physical setup.

    Walkers are processed in fixed index chunks so results do not depend on
    the thread count.
    """

    def __init__(self, grid, V, cfg, tau, sigma, lattice=None, scheme=None, wrap_margin=None):
        self.grid = grid
        self.tau = check_positive(tau, "tau")
        self.sigma = check_sigma(grid, sigma)
        self.lattice = lattice or LatticeSpec.from_grid(grid)
        self.prop = Propagator(grid, V, cfg, scheme=scheme)
        self.wrap_margin = wrap_margin

    def _collapse(self, amps, streams):
        fields = husimi_values(self.grid, amps, self.lattice, self.sigma)
        u = np.array([s.jump_uniforms() for s in streams])
        return sample_nodes(fields, self.lattice, u)

    def run_chunk(self, indices, comp_weights, comp_amps, t_final, base_seed):
        tau = self.tau
        streams = [CollapseStream(base_seed, i) for i in indices]
        walkers = [Walker(int(i), int(base_seed), t_final=t_final) for i in indices]
        t_last = np.zeros(len(walkers))
        for w, s in zip(walkers, streams):
            w.component = s.component(comp_weights)
        waits = np.array([s.wait(tau) for s in streams])
        for w, d in zip(walkers, waits):
            w.waits.append(d)
        active = np.nonzero(waits < t_final)[0]
        start = comp_amps[[walkers[a].component for a in active]]
        if self.wrap_margin is not None:
            x_start = np.array([_circular_center(self.grid, comp_amps[w.component]) for w in walkers])
            reach = 0.5 * self.grid.box_length - self.wrap_margin
        while len(active):
            amps = self.prop.evolve(start, waits[active])
            x, p = self._collapse(amps, [streams[a] for a in active])
            t_last[active] += waits[active]
            for j, a in enumerate(active):
                walkers[a].times.append(float(t_last[a]))
                walkers[a].xs.append(float(x[j]))
                walkers[a].ps.append(float(p[j]))
                if self.wrap_margin is not None:
                    # a jump this long is ambiguous under the minimal image
                    if abs(wrap(x[j] - x_start[a], self.grid.box_length)) > reach:
                        walkers[a].wrapped = True
                    x_start[a] = x[j]
                d = streams[a].wait(tau)
                walkers[a].waits.append(d)
                waits[a] = d
            keep = t_last[active] + waits[active] < t_final
            active = active[keep]
            start = packet_amplitudes(self.grid, x[keep], p[keep], self.sigma)
        return walkers

    def run(self, rho0, n_walkers, t_final, base_seed, threads=1):
        if n_walkers < 1:
            raise PreconditionError("n_walkers must be >= 1")
        check_nonnegative(t_final, "t_final")
        weights, amps = initial_components(rho0)
        chunks = [range(i, min(i + CHUNK, n_walkers)) for i in range(0, n_walkers, CHUNK)]

        def job(ix):
            return self.run_chunk(ix, weights, amps, t_final, base_seed)

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                parts = list(ex.map(job, chunks))
        else:
            parts = [job(c) for c in chunks]
        return [w for part in parts for w in part]

    def states_at(self, walkers, rho0, t):
        """Pure states of every walker at time ``t``, shape ``(M, N)``."""
        _, comp = initial_components(rho0)
        m = len(walkers)
        last = np.array([w.last_jump_before(t) for w in walkers], dtype=int)
        jumped = last >= 0
        xs = np.array([w.xs[j] for w, j in zip(walkers, last) if j >= 0])
        ps = np.array([w.ps[j] for w, j in zip(walkers, last) if j >= 0])
        tj = np.array([w.times[j] for w, j in zip(walkers, last) if j >= 0])
        starts = np.empty((m, self.grid.n_points), dtype=complex)
        durations = np.full(m, float(t))
        if jumped.any():
            starts[jumped] = packet_amplitudes(self.grid, xs, ps, self.sigma)
            durations[jumped] = t - tj
        fresh = np.nonzero(~jumped)[0]
        if len(fresh):
            starts[fresh] = comp[[walkers[i].component for i in fresh]]
        return self.prop.evolve(starts, durations)

    def ensemble_husimi(self, walkers, rho0, t, lattice=None):
        """Walker-averaged Husimi field at ``t``; estimates <phi|rho(t)|phi>."""
        lattice = lattice or self.lattice
        rho = np.zeros((self.grid.n_points,) * 2, dtype=complex)
        for i in range(0, len(walkers), CHUNK):
            amps = self.states_at(walkers[i : i + CHUNK], rho0, t)
            rho += amps.T @ amps.conj()
        # the Husimi field is linear in rho: go through its eigenvectors
        lam, vec = np.linalg.eigh(0.5 * (rho + rho.conj().T) / len(walkers))
        vals = np.tensordot(lam, husimi_values(self.grid, vec.T, lattice, self.sigma), axes=1)
        return PhaseSpaceLattice(
            lattice.x_nodes, lattice.p_nodes, np.clip(vals, 0.0, None), lattice.weight, {"t": t}
        )


def _circular_center(grid, amps):
    z = np.sum(np.abs(amps) ** 2 * np.exp(2j * np.pi * grid.x / grid.box_length))
    return float(np.angle(z) * grid.box_length / (2 * np.pi))


def run_walkers(rho0, V, cfg, tau, sigma, n_walkers, t_final, base_seed, lattice=None, threads=1):
    grid = rho0.grid
    engine = WalkerEngine(grid, V, cfg, tau, sigma, lattice)
    return engine.run(rho0, n_walkers, t_final, base_seed, threads)


def _node_index(nodes, cell, values, periodic_length=None):
    if periodic_length is not None:
        values = nodes[0] + (values - nodes[0] + 0.5 * cell) % periodic_length - 0.5 * cell
    idx = np.round((values - nodes[0]) / cell).astype(int)
    return idx


def empirical_r(walkers, lattice, t, bandwidth, box_length=None):
    """Collapse-rate density estimated from jumps in ``(t - bandwidth, t]``.

    Normalized so that ``sum(values) * weight`` estimates the total jump rate
    per walker (1/tau in the model).
    """
    check_positive(bandwidth, "bandwidth")
    waits = [d for w in walkers for d in w.waits]
    if waits and bandwidth < np.mean(waits) / 10:
        warnings.warn("bandwidth below a tenth of the mean wait: high variance", RuntimeWarning, stacklevel=2)
    xs, ps = [], []
    for w in walkers:
        if not w.times:
            continue
        times = np.asarray(w.times)
        sel = (times > t - bandwidth) & (times <= t)
        xs.extend(np.asarray(w.xs)[sel])
        ps.extend(np.asarray(w.ps)[sel])
    counts = np.zeros(lattice.shape)
    if xs:
        ix = _node_index(lattice.x_nodes, lattice.cell[0], np.asarray(xs), box_length)
        ip = _node_index(lattice.p_nodes, lattice.cell[1], np.asarray(ps))
        ok = (ix >= 0) & (ix < lattice.shape[0]) & (ip >= 0) & (ip < lattice.shape[1])
        np.add.at(counts, (ix[ok], ip[ok]), 1.0)
    vals = counts / (len(walkers) * bandwidth * lattice.weight)
    return PhaseSpaceLattice(
        lattice.x_nodes, lattice.p_nodes, vals, lattice.weight, {"t": t, "bandwidth": bandwidth}
    )


class KernelCache:
    """Thread-safe memo of evolved origin packets keyed by (x', p', xi)."""

    def __init__(self, propagator, sigma):
        self.prop = propagator
        self.sigma = sigma
        self._store = {}
        self._lock = threading.Lock()

    def evolved(self, x, p, xi):
        key = (float(x), float(p), float(xi))
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        amps = packet_amplitudes(self.prop.grid, x, p, self.sigma)[None, :]
        out = self.prop.evolve(amps, [xi])[0]
        with self._lock:
            self._store.setdefault(key, out)
        return out

    def __len__(self):
        return len(self._store)
