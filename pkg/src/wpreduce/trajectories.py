"""Quantum-jump unravelling of the collapse master equation.

Between jumps a trajectory evolves under ``H - i hbar/(2 tau)``.  The decay
is proportional to the identity, so the jump clock is an Exp(tau) draw and
the normalized state between jumps is plain unitary evolution.  The general
norm-threshold method is kept for the packet model (as a cross-check) and
for discrete ket channels, where the decay is state dependent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from ._validation import PreconditionError, check_normalized, check_positive
from .ctrw import sample_nodes
from .grid import LatticeSpec, PhaseSpaceLattice, StateVector, check_sigma, husimi_values, packet_amplitudes
from .propagators import Propagator
from .rng import CollapseStream


@dataclass
class Trajectory:
    seed: int
    index: int
    t: float
    state: StateVector
    jumps: list = field(default_factory=list)
    waits: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    config_key: tuple = ()

    def times(self):
        return [j[0] for j in self.jumps]


def _config_key(V, cfg, tau, sigma, lattice):
    return (
        V.kind,
        hash(V.values.tobytes()),
        cfg.mass,
        cfg.hbar,
        float(tau),
        float(sigma),
        hash(lattice.x_nodes.tobytes() + lattice.p_nodes.tobytes()),
    )


class _NormClock:
    """Finds the time at which the H_eff norm falls to a drawn threshold."""

    def __init__(self, prop, tau, dt):
        self.prop = prop
        self.tau = tau
        self.dt = dt

    def _step(self, amps, h):
        return self.prop.evolve(amps[None, :], [h])[0] * math.exp(-h / (2 * self.tau))

    def advance(self, amps, threshold, t, t_stop):
        """Evolve until |psi|^2 <= threshold or ``t_stop``; returns (amps, t, jumped)."""
        while t < t_stop:
            h = min(self.dt, t_stop - t)
            nxt = self._step(amps, h)
            if np.vdot(nxt, nxt).real <= threshold:
                lo, hi = 0.0, h
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if np.vdot(*(2 * [self._step(amps, mid)])).real > threshold:
                        lo = mid
                    else:
                        hi = mid
                return self._step(amps, hi), t + hi, True
            amps, t = nxt, t + h
        return amps, t, False


def run_trajectory(
    psi0,
    V,
    cfg,
    tau,
    sigma,
    t_final,
    seed,
    index=0,
    lattice=None,
    record_times=(),
    jump_method="direct",
    propagator=None,
):
    """Sample one jump trajectory on ``[0, t_final]``.

    ``record_times`` are stored as normalized amplitudes in ``records``.
    """
    grid = psi0.grid
    check_normalized(psi0.amplitudes)
    check_sigma(grid, sigma)
    lattice = lattice or LatticeSpec.from_grid(grid)
    prop = propagator or Propagator(grid, V, cfg, scheme="spectral")
    stream = CollapseStream(seed, index)
    no_jumps = math.isinf(tau)
    if not no_jumps:
        check_positive(tau, "tau")
    pending = sorted(float(r) for r in record_times if r <= t_final)
    traj = Trajectory(int(seed), int(index), t_final, psi0, config_key=_config_key(V, cfg, tau, sigma, lattice))

    amps = psi0.amplitudes.copy()
    t = 0.0

    def evolve(a, d):
        return prop.evolve(a[None, :], [d])[0] if d > 0 else a

    def flush(a, t0, upto):
        # store normalized states at record times in [t0, upto)
        while pending and pending[0] < upto:
            r = pending.pop(0)
            s = evolve(a, r - t0)
            traj.records[r] = s / np.linalg.norm(s)

    clock = _NormClock(prop, tau, cfg.dt) if jump_method == "norm" else None
    if jump_method not in ("direct", "norm"):
        raise PreconditionError(f"unknown jump method {jump_method!r}")

    while True:
        if no_jumps:
            t_jump = math.inf
        elif clock is None:
            wait = stream.wait(tau)
            traj.waits.append(wait)
            t_jump = t + wait
        else:
            u = stream.gen.random()
            _, t_hit, jumped = clock.advance(amps / np.linalg.norm(amps), 1.0 - u, t, t_final)
            traj.waits.append(t_hit - t if jumped else -tau * math.log1p(-u))
            t_jump = t_hit if jumped else math.inf
        if t_jump >= t_final:
            flush(amps, t, math.inf)
            final = evolve(amps, t_final - t)
            traj.state = StateVector(grid, final / np.linalg.norm(final))
            return traj
        flush(amps, t, t_jump)
        pre = evolve(amps, t_jump - t)
        pre = pre / np.linalg.norm(pre)
        fields = husimi_values(grid, pre, lattice, sigma)[None]
        x, p = sample_nodes(fields, lattice, stream.jump_uniforms()[None, :])
        traj.jumps.append((float(t_jump), float(x[0]), float(p[0])))
        amps = packet_amplitudes(grid, x[0], p[0], sigma)
        t = t_jump


def run_ensemble(psi0, V, cfg, tau, sigma, n_trajectories, t_final, base_seed, record_times=(), lattice=None, threads=1, jump_method="direct", scheme="spectral"):
    grid = psi0.grid
    lattice = lattice or LatticeSpec.from_grid(grid)
    prop = Propagator(grid, V, cfg, scheme=scheme)
    prop.eig if scheme == "spectral" else None  # build the cache before threads share it

    def one(i):
        return run_trajectory(psi0, V, cfg, tau, sigma, t_final, base_seed, i, lattice, record_times, jump_method, prop)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(n_trajectories)))
    return [one(i) for i in range(n_trajectories)]


def ensemble_average(trajectories, lattice, t, sigma):
    """Mean Husimi field of the trajectory states at ``t`` and its standard error."""
    if not trajectories:
        raise PreconditionError("empty ensemble")
    key = trajectories[0].config_key
    if any(tr.config_key != key for tr in trajectories):
        raise PreconditionError("trajectories were generated with different configurations")
    missing = [tr.index for tr in trajectories if t not in tr.records]
    if missing:
        raise PreconditionError(f"time {t} was not recorded for trajectories {missing[:5]}")
    grid = trajectories[0].state.grid
    amps = np.array([tr.records[t] for tr in trajectories])
    vals = husimi_values(grid, amps, lattice, sigma)
    m = len(trajectories)
    # sample axis last and contiguous so numpy reduces it pairwise
    flat = np.ascontiguousarray(vals.reshape(m, -1).T)
    mean = (np.sum(flat, axis=1) / m).reshape(vals.shape[1:])
    if m > 1:
        dev = flat - mean.reshape(-1, 1)
        err = np.sqrt(np.sum(dev * dev, axis=1) / (m - 1) / m).reshape(vals.shape[1:])
    else:
        err = np.zeros_like(mean)
    return (
        PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, mean, lattice.weight, {"t": t}),
        PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, err, lattice.weight, {"t": t}),
    )


def run_discrete_trajectory(psi0, V, cfg, channels, t_final, seed, index=0, record_times=(), dt=None):
    """Norm-threshold jump trajectory for explicit ket channels.

    Returns ``(jumps, records)`` where ``jumps`` lists ``(t, l, l')``.
    """
    grid = psi0.grid
    prop = Propagator(grid, V, cfg, scheme="spectral")
    hbar = cfg.hbar
    kets, rates = channels.kets, channels.rates
    decay = (kets.T * rates.sum(axis=1)) @ kets.conj()
    heff = prop.hamiltonian() - 0.5j * hbar * decay
    h = dt or cfg.dt
    step = expm(-1j * heff * h / hbar)
    gen = CollapseStream(seed, index).gen
    pending = sorted(r for r in record_times if r <= t_final)
    records, jumps = {}, []
    amps = psi0.amplitudes.copy()
    t = 0.0
    threshold = 1.0 - gen.random()

    def partial(a, s):
        return expm(-1j * heff * s / hbar) @ a

    while t < t_final - 1e-15:
        hh = min(h, t_final - t)
        nxt = step @ amps if hh == h else partial(amps, hh)
        if np.vdot(nxt, nxt).real <= threshold:
            lo, hi = 0.0, hh
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                a = partial(amps, mid)
                lo, hi = (mid, hi) if np.vdot(a, a).real > threshold else (lo, mid)
            while pending and pending[0] < t + hi:
                a = partial(amps, pending[0] - t)
                records[pending.pop(0)] = a / np.linalg.norm(a)
            pre = partial(amps, hi)
            pre /= np.linalg.norm(pre)
            pops = np.abs(kets.conj() @ pre) ** 2
            weights = (rates * pops[:, None]).ravel()
            u = gen.random()
            cdf = np.cumsum(weights)
            k = int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(weights) - 1))
            l, lp = divmod(k, len(kets))
            t += hi
            jumps.append((t, l, lp))
            amps = kets[lp].copy()
            threshold = 1.0 - gen.random()
            continue
        while pending and pending[0] < t + hh:
            a = partial(amps, pending[0] - t)
            records[pending.pop(0)] = a / np.linalg.norm(a)
        amps = nxt
        t += hh
    while pending:
        records[pending.pop(0)] = amps / np.linalg.norm(amps)
    return jumps, records
