"""Momentum-position localization operators and the disorder MSD study.

``S = alpha (p - k)^2 + beta (x - y)^2`` is a shifted harmonic oscillator
with level spacing ``2 hbar sqrt(alpha beta)`` and a Gaussian ground state of
width ``sigma^2 = (hbar / 2) sqrt(alpha / beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import PreconditionError, check_positive
from .ctrw import WalkerEngine
from .grid import LatticeSpec, StateVector, packet_amplitudes, translation_matrix, wrap
from .propagators import EvolutionConfig, make_disorder
from .rng import CollapseStream

# exp(-E) underflows past this
_MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class LocalizationOperator:
    alpha: float
    beta: float
    y: float = 0.0
    k: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise PreconditionError(f"{name} must be finite")
            check_positive(v, name)

    @property
    def ratio(self):
        return self.beta / self.alpha

    @property
    def gap(self):
        return 2.0 * self.hbar * math.sqrt(self.alpha * self.beta)

    @property
    def ground_sigma(self):
        return math.sqrt(0.5 * self.hbar * math.sqrt(self.alpha / self.beta))

    def check_resolved(self, grid):
        s = self.ground_sigma
        if s < 2 * grid.dx or s > grid.box_length / 8:
            raise PreconditionError(
                f"ground width {s:.3g} not resolved by the grid (needs [{2 * grid.dx:.3g}, {grid.box_length / 8:.3g}])"
            )

    def matrix(self, grid):
        n = grid.n_points
        f = np.fft.fft(np.eye(n), axis=0)
        kin = np.fft.ifft(((grid.p - self.k) ** 2)[:, None] * f, axis=0)
        pos = wrap(grid.x - self.y, grid.box_length) ** 2
        s = self.alpha * kin + np.diag(self.beta * pos)
        return 0.5 * (s + s.conj().T)


def spectrum(op, grid):
    op.check_resolved(grid)
    return np.linalg.eigh(op.matrix(grid))


def build_exp_S(op, grid):
    """exp(-S) through the eigendecomposition of S."""
    e, q = spectrum(op, grid)
    if e[0] > _MAX_EXPONENT:
        raise PreconditionError("exp(-S) underflows: lowest eigenvalue too large")
    return (q * np.exp(-e)) @ q.conj().T


def ladder_deviation(op, grid, n_levels=6):
    """Max relative deviation of the lowest spacings from the harmonic gap."""
    e, _ = spectrum(op, grid)
    gaps = np.diff(e[: n_levels + 1])
    return float(np.max(np.abs(gaps - op.gap)) / op.gap)


@dataclass
class LimitReport:
    alphas: np.ndarray
    log_ratio: np.ndarray
    packet_fidelity: np.ndarray
    step_fidelity: np.ndarray
    resolvable: np.ndarray
    monotone: bool

    @property
    def ratio(self):
        return np.exp(self.log_ratio)

    def final_fidelity(self):
        """Packet fidelity at the largest resolvable alpha."""
        idx = np.nonzero(self.resolvable)[0]
        if not len(idx):
            raise PreconditionError("no resolvable alpha on the ladder")
        return float(self.packet_fidelity[idx[-1]])


def limit_convergence(alphas, ratio, grid, y=0.0, k=0.0):
    """Walk the ladder ``alpha -> inf`` with ``beta / alpha`` fixed.

    Second-to-top eigenvalue ratios of exp(-S) are taken from S itself
    (``log ratio = E0 - E1``) so they stay finite past underflow.
    """
    alphas = np.asarray(alphas, float)
    if np.any(np.diff(alphas) <= 0):
        raise PreconditionError("alpha ladder must increase")
    logs, fid, step, ok = [], [], [], []
    prev = None
    for a in alphas:
        op = LocalizationOperator(a, ratio * a, y, k, grid.hbar)
        e, q = spectrum(op, grid)
        top = q[:, 0]
        logs.append(e[0] - e[1])
        phi = packet_amplitudes(grid, y, k, op.ground_sigma)
        fid.append(abs(np.vdot(phi, top)) ** 2)
        step.append(1.0 if prev is None else abs(np.vdot(prev, top)) ** 2)
        ok.append(bool(e[0] < _MAX_EXPONENT and ladder_deviation(op, grid, 2) < 1e-6))
        prev = top
    logs = np.array(logs)
    return LimitReport(alphas, logs, np.array(fid), np.array(step), np.array(ok), bool(np.all(np.diff(logs) < 0)))


def trace_fixing_constant(op, grid, tau, lattice=None):
    """Constant c making the channel sum trace preserving, and its closed form.

    Assembles ``A = sum_nodes w exp(-2 S_{y,k})`` over the lattice of centres;
    trace preservation needs ``c A = I / tau``.  Returns ``(c, c_closed_form,
    deviation of A from a multiple of I)``.
    """
    lattice = lattice or LatticeSpec.from_grid(grid)
    base = LocalizationOperator(op.alpha, op.beta, 0.0, 0.0, op.hbar)
    e, q = spectrum(base, grid)
    two = (q * np.exp(-2.0 * e)) @ q.conj().T
    # sum over momentum centres k of M_k A M_k^dag is A times a fixed kernel
    dphase = np.subtract.outer(grid.x, grid.x)
    kern = np.sum(np.exp(1j * lattice.p_nodes[:, None, None] * dphase[None] / grid.hbar), axis=0)
    total = np.zeros_like(two)
    for yc in lattice.x_nodes:
        t = translation_matrix(grid, yc)
        total += (t @ two @ t.conj().T) * kern
    total *= lattice.weight
    scale = float(np.real(np.trace(total))) / grid.n_points
    dev = float(np.max(np.abs(total - scale * np.eye(grid.n_points))) / scale)
    closed = 2.0 * math.sinh(op.gap) / tau
    return 1.0 / (tau * scale), closed, dev


# ------------------------------------------------------------ disorder MSD


@dataclass
class MsdSeries:
    times: np.ndarray
    msd_quantum: np.ndarray
    msd_classical: np.ndarray
    n_samples: int
    seeds: list
    wrap_events: int = 0
    per_seed_quantum: list = field(default_factory=list)
    per_seed_classical: list = field(default_factory=list)

    @staticmethod
    def _slope(t, y, t_min):
        sel = t >= t_min
        if sel.sum() < 2:
            raise PreconditionError("fit window holds fewer than two points")
        return float(np.polyfit(t[sel], y[sel], 1)[0])

    def late_slopes(self, window=0.1):
        """Linear slopes over ``[window * t_max, t_max]`` (the last decade by default)."""
        t_min = window * self.times[-1]
        return (
            self._slope(self.times, self.msd_quantum, t_min),
            self._slope(self.times, self.msd_classical, t_min),
        )

    def tracking_deviation(self):
        """Largest ``|msd_q / msd_c - 1|`` over the positive times."""
        sel = (self.times > 0) & (self.msd_classical > 0)
        return float(np.max(np.abs(self.msd_quantum[sel] / self.msd_classical[sel] - 1.0)))

    def to_rows(self):
        for i, t in enumerate(self.times):
            yield float(t), float(self.msd_quantum[i]), float(self.msd_classical[i])


def _unwrapped_positions(walkers, x0, times, box):
    """Minimal-image accumulated collapse positions at each time, shape (M, T)."""
    out = np.zeros((len(walkers), len(times)))
    for i, w in enumerate(walkers):
        if not w.times:
            continue
        steps = wrap(np.diff(np.concatenate([[x0], w.xs])), box)
        path = np.cumsum(steps)
        idx = np.searchsorted(w.times, times, side="right") - 1
        out[i] = np.where(idx >= 0, path[np.maximum(idx, 0)], 0.0)
    return out


def classical_walk(grid, V, mass, tau, sigma, x0, p0, times, n_walkers, base_seed, dt):
    """Classical flow interrupted by Exp(tau) jumps to Husimi-jittered points.

    Each jump redraws ``(x, p)`` around the current point with the Husimi
    widths of one packet, ``sqrt(2) sigma`` and ``hbar / (sqrt(2) sigma)``.
    Returns the unwrapped collapse positions at ``times``.
    """
    hbar = grid.hbar
    horizon = float(times[-1])
    streams = [CollapseStream(base_seed, i) for i in range(n_walkers)]
    x = np.full(n_walkers, float(x0))
    p = np.full(n_walkers, float(p0))
    t = np.zeros(n_walkers)
    nxt = np.array([s.wait(tau) for s in streams])
    last_x = np.full(n_walkers, float(x0))
    jt = [[] for _ in range(n_walkers)]
    jx = [[] for _ in range(n_walkers)]
    sx, sp = math.sqrt(2.0) * sigma, hbar / (math.sqrt(2.0) * sigma)
    while True:
        live = np.nonzero(nxt < horizon)[0]
        if not len(live):
            break
        x[live], p[live] = _flow_to(grid, V, mass, x[live], p[live], nxt[live] - t[live], dt)
        t[live] = nxt[live]
        for i in live:
            g = streams[i].gen.standard_normal(2)
            x[i] += sx * g[0]
            p[i] += sp * g[1]
            last_x[i] = x[i]
            jt[i].append(t[i])
            jx[i].append(x[i])
            nxt[i] = t[i] + streams[i].wait(tau)
    out = np.zeros((n_walkers, len(times)))
    for i in range(n_walkers):
        if jt[i]:
            idx = np.searchsorted(jt[i], times, side="right") - 1
            out[i] = np.where(idx >= 0, np.asarray(jx[i])[np.maximum(idx, 0)] - x0, 0.0)
    return out


def _flow_to(grid, V, mass, x, p, durations, dt):
    """Verlet with per-walker durations (common step count, per-walker step)."""
    n = max(1, int(math.ceil(float(durations.max()) / dt - 1e-12)))
    nsteps = np.maximum(1, np.ceil(durations / dt - 1e-12)).astype(int)
    h = durations / nsteps
    x, p = x.copy(), p.copy()
    f = V.force(grid, x)
    for s in range(n):
        act = nsteps > s
        if not act.any():
            break
        hh = np.where(act, h, 0.0)
        p += 0.5 * hh * f
        x += hh * p / mass
        f = V.force(grid, x)
        p += 0.5 * hh * f
    return x, p


def localization_experiment(
    grid,
    W,
    ell,
    tau,
    mass,
    sigma,
    p0,
    horizon,
    n_walkers,
    disorder_seeds,
    base_seed=0,
    n_times=40,
    lattice=None,
    wrap_margin=None,
    dt_classical=0.01,
    x0=0.0,
):
    """Disorder-averaged MSD of quantum CTRW walkers and the matched classical walk.

    Quantum walkers whose evolved state reaches the antipode of a segment
    start (within ``wrap_margin``) are dropped and counted in ``wrap_events``.
    """
    times = np.linspace(0.0, horizon, n_times + 1)
    wrap_margin = 4.0 * sigma if wrap_margin is None else wrap_margin
    lattice = lattice or LatticeSpec.from_grid(grid)
    cfg = EvolutionConfig(mass, _guard_dt(grid, mass, W), grid.hbar, scheme="spectral")
    psi0 = StateVector(grid, packet_amplitudes(grid, x0, p0, sigma))
    q_curves, c_curves, wraps, kept = [], [], 0, 0
    for seed in disorder_seeds:
        V = make_disorder(grid, W, ell, seed)
        engine = WalkerEngine(grid, V, cfg, tau, sigma, lattice, wrap_margin=wrap_margin)
        q_seed, c_seed = _sample_seeds(base_seed, seed)
        walkers = engine.run(psi0, n_walkers, horizon, q_seed)
        good = [w for w in walkers if not w.wrapped]
        wraps += len(walkers) - len(good)
        kept += len(good)
        if good:
            disp = _unwrapped_positions(good, x0, times, grid.box_length) - 0.0
            q_curves.append(np.mean(disp**2, axis=0))
        cdisp = classical_walk(grid, V, mass, tau, sigma, x0, p0, times, n_walkers, c_seed, dt_classical)
        c_curves.append(np.mean(cdisp**2, axis=0))
    if not q_curves:
        raise PreconditionError("every quantum sample wrapped around the box")
    return MsdSeries(
        times,
        np.mean(q_curves, axis=0),
        np.mean(c_curves, axis=0),
        kept,
        list(disorder_seeds),
        wraps,
        q_curves,
        c_curves,
    )


def _sample_seeds(base_seed, disorder_seed):
    # independent walker streams per disorder realization
    q, c = np.random.SeedSequence([int(base_seed), int(disorder_seed)]).generate_state(2, np.uint32)
    return int(q), int(c)


def _guard_dt(grid, mass, W):
    # spectral stepping ignores dt; pick one that satisfies the phase guard
    vmax = max(6.0 * W, 1e-12)
    return 0.4 * min(2 * mass * grid.hbar / grid.p_max**2, grid.hbar / vmax)
