"""Macroscopic coarse-graining of the CTRW.

Cells are half-widths: two points are macroscopically indistinguishable when
``|x1 - x2| < Delta1`` and ``|p1 - p2| < Delta2``, so the cell measures are
``Omega1 = 2 Delta1`` and ``Omega2 = 2 Delta2``.  A zero half-width means no
averaging along that axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from ._validation import PreconditionError, check_nonnegative, check_positive
from .grid import (
    LatticeSpec,
    PhaseSpaceLattice,
    StateVector,
    husimi_values,
    packet_amplitudes,
    translation_matrix,
    wrap,
)
from .lindblad import DensityMatrix
from .propagators import Propagator, verlet
from .rng import stream


@dataclass(frozen=True)
class CoarseSpec:
    Delta1: float
    Delta2: float
    T: float = 0.0

    def __post_init__(self):
        check_nonnegative(self.Delta1, "Delta1")
        check_nonnegative(self.Delta2, "Delta2")
        check_nonnegative(self.T, "T")

    @property
    def Omega1(self):
        return 2.0 * self.Delta1

    @property
    def Omega2(self):
        return 2.0 * self.Delta2

    @property
    def degenerate(self):
        return self.Delta1 == 0 and self.Delta2 == 0

    def blocks(self, lattice, min_nodes=4):
        """Fine nodes per coarse cell along x and p."""
        out = []
        for half, cell, name in ((self.Delta1, lattice.cell[0], "x"), (self.Delta2, lattice.cell[1], "p")):
            if half == 0:
                out.append(1)
                continue
            b = 2.0 * half / cell
            if abs(b - round(b)) > 1e-9:
                raise PreconditionError(f"coarse {name}-cell is not a whole number of lattice cells")
            if round(b) < min_nodes:
                raise PreconditionError(f"coarse {name}-cell holds {round(b)} lattice nodes, need >= {min_nodes}")
            out.append(int(round(b)))
        return tuple(out)

    def to_dict(self):
        return {"Delta1": self.Delta1, "Delta2": self.Delta2, "T": self.T}


def shift_nodes(half, n):
    """Midpoint nodes on (-half, half) and their weights (sum to 1)."""
    if half == 0:
        return np.zeros(1), np.ones(1)
    h = 2.0 * half / n
    return -half + h * (np.arange(n) + 0.5), np.full(n, 1.0 / n)


@dataclass(eq=False)
class HamiltonianFamily:
    """Potential translates ``H_y = T_y^dag H T_y`` with a uniform weight on |y| < Delta1."""

    grid: object
    V: object
    cfg: object
    Delta1: float
    n_y: int = 16
    _eigs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        check_nonnegative(self.Delta1, "Delta1")
        if self.Delta1 > 0 and self.n_y < 16:
            raise PreconditionError("the shift quadrature needs at least 16 nodes")
        self.base = Propagator(self.grid, self.V, self.cfg, scheme="spectral")

    def nodes(self):
        return shift_nodes(self.Delta1, self.n_y)

    def weight_integral(self):
        """Quadrature of F(y) over the window; 1 by construction."""
        return float(np.sum(self.nodes()[1]))

    def hamiltonian(self, y):
        t = translation_matrix(self.grid, y)
        h = self.base.hamiltonian()
        kin = h - np.diag(self.V.values)
        return kin + t.conj().T @ np.diag(self.V.values) @ t

    def eig(self, y):
        key = float(y)
        if key not in self._eigs:
            h = self.hamiltonian(y)
            self._eigs[key] = np.linalg.eigh(0.5 * (h + h.conj().T))
        return self._eigs[key]

    def unitary(self, y, xi):
        """exp(-i xi H_y / hbar) from the eigendecomposition of H_y itself."""
        e, q = self.eig(y)
        return (q * np.exp(-1j * e * xi / self.cfg.hbar)) @ q.conj().T

    def translated_unitary(self, y, xi):
        """T_y^dag U(xi) T_y, i.e. one base propagation conjugated by translations."""
        t = translation_matrix(self.grid, y)
        return t.conj().T @ self.base.unitary_matrix(xi) @ t


def translation_identity_error(family, xi, n_states=8, seed=0):
    """Max deviation between U^(y) and T_y^dag U T_y acting on random states."""
    rng = stream(seed, 0)
    n = family.grid.n_points
    psi = rng.standard_normal((n, n_states)) + 1j * rng.standard_normal((n, n_states))
    psi /= np.linalg.norm(psi, axis=0)
    err = 0.0
    for y in family.nodes()[0]:
        a = family.unitary(y, xi) @ psi
        b = family.translated_unitary(y, xi) @ psi
        err = max(err, float(np.max(np.abs(a - b))))
    return err


def jaynes_sigma(origin, xi, family, sigma, method="translated"):
    """Shift-averaged evolved projector sum_y F(y) U^(y) |phi><phi| U^(y)^dag.

    ``method="translated"`` builds each U^(y) from the base propagator;
    ``"direct"`` diagonalizes every H_y separately.
    """
    check_nonnegative(xi, "xi")
    grid = family.grid
    phi = packet_amplitudes(grid, origin[0], origin[1], sigma)
    ys, ws = family.nodes()
    out = np.zeros((grid.n_points, grid.n_points), dtype=complex)
    for y, w in zip(ys, ws):
        u = family.unitary(y, xi) if method == "direct" else family.translated_unitary(y, xi)
        v = u @ phi
        out += w * np.outer(v, v.conj())
    return DensityMatrix(grid, out)


def coarse_kernel_Psi(
    origin, xi, V, cfg, tau, sigma, spec, lattice, grid, n_y=16, n_k=16, route="shift", family=None
):
    """Cell-averaged memory kernel on ``lattice`` for one origin.

    ``route="shift"`` averages the microscopic kernel over simultaneous
    shifts of both endpoints; ``route="jaynes"`` averages over the potential
    translates instead, with each H_y diagonalized on its own.
    """
    check_nonnegative(xi, "xi")
    check_positive(tau, "tau")
    spec.blocks(lattice)
    if spec.Delta1 > 0 and n_y < 16:
        raise PreconditionError("the shift quadrature needs at least 16 nodes")
    ys, wy = shift_nodes(spec.Delta1, n_y)
    ks, wk = shift_nodes(spec.Delta2, n_k)
    vals = np.zeros(lattice.shape)
    if route == "shift":
        prop = Propagator(grid, V, cfg, scheme="spectral")
        yy, kk = np.meshgrid(ys, ks, indexing="ij")
        amps = packet_amplitudes(grid, origin[0] + yy.ravel(), origin[1] + kk.ravel(), sigma)
        amps = prop.evolve(amps, np.full(len(amps), float(xi)))
        for i, (y, k) in enumerate(zip(yy.ravel(), kk.ravel())):
            vals += wy[i // len(ks)] * wk[i % len(ks)] * husimi_values(grid, amps[i], lattice.shifted(y, k), sigma)
    elif route == "jaynes":
        family = family or HamiltonianFamily(grid, V, cfg, spec.Delta1, n_y)
        for k, w_k in zip(ks, wk):
            phi = packet_amplitudes(grid, origin[0], origin[1] + k, sigma)
            target = lattice.shifted(0.0, k)
            for y, w_y in zip(ys, wy):
                v = family.unitary(y, xi) @ phi
                vals += w_k * w_y * husimi_values(grid, v, target, sigma)
    else:
        raise PreconditionError(f"unknown route {route!r}")
    vals *= math.exp(-xi / tau) / tau
    return PhaseSpaceLattice(lattice.x_nodes, lattice.p_nodes, vals, lattice.weight, {"xi": xi, "route": route})


# ---------------------------------------------------------------- histories


@dataclass(frozen=True, eq=False)
class FieldHistory:
    """Fine-lattice fields r(x, p, t_j) on increasing times."""

    times: np.ndarray
    values: np.ndarray
    lattice: LatticeSpec

    def __post_init__(self):
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if v.shape != (len(t),) + self.lattice.shape:
            raise PreconditionError("history values do not match times x lattice")
        if np.any(np.diff(t) <= 0):
            raise PreconditionError("history times must increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_lattices(cls, times, fields, lattice):
        return cls(np.asarray(times), np.array([f.values for f in fields]), lattice)

    def at(self, t):
        """Linear interpolation in time."""
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise PreconditionError(f"history does not cover t={t}")
        j = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        a = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - a) * self.values[j] + a * self.values[j + 1]

    def window(self, t, T):
        if T == 0:
            return self.at(t)
        if t < self.times[0] - 1e-12 or t + T > self.times[-1] + 1e-12:
            raise PreconditionError(f"history does not span [{t}, {t + T}]")
        inner = self.times[(self.times > t) & (self.times < t + T)]
        pts = np.concatenate([[t], inner, [t + T]])
        vals = np.array([self.at(s) for s in pts])
        return np.trapezoid(vals, pts, axis=0) / T


def _block_mean(values, bx, bp):
    mx, mp = values.shape[-2:]
    if mx % bx or mp % bp:
        raise PreconditionError("coarse cells do not tile the lattice")
    shp = values.shape[:-2] + (mx // bx, bx, mp // bp, bp)
    return values.reshape(shp).mean(axis=(-3, -1))


def coarse_lattice(spec, lattice):
    bx, bp = spec.blocks(lattice)
    xs = _block_mean(lattice.x_nodes[:, None], bx, 1)[:, 0]
    ps = _block_mean(lattice.p_nodes[None, :], 1, bp)[0]
    return LatticeSpec(xs, ps, (bx * lattice.cell[0], bp * lattice.cell[1]), lattice.hbar)


def macro_density_R(history, spec, t):
    """Cell- and window-averaged density on the coarse lattice."""
    lat = history.lattice
    bx, bp = spec.blocks(lat)
    vals = _block_mean(history.window(t, spec.T), bx, bp)
    clat = coarse_lattice(spec, lat)
    return PhaseSpaceLattice(clat.x_nodes, clat.p_nodes, vals, clat.weight, {"t": t, "level": "coarse"})


def homogeneity_deviation(history, spec, t):
    """How far in-cell window averages stray from the cell value.

    Returns the mass-weighted relative L1 deviation and the max deviation
    relative to the peak cell value.
    """
    lat = history.lattice
    bx, bp = spec.blocks(lat)
    win = history.window(t, spec.T)
    coarse = _block_mean(win, bx, bp)
    spread = np.repeat(np.repeat(coarse, bx, axis=0), bp, axis=1)
    dev = np.abs(win - spread)
    return {
        "l1_rel": float(dev.sum() / max(np.abs(win).sum(), 1e-300)),
        "max_rel": float(dev.max() / max(coarse.max(), 1e-300)),
    }


def walker_r_history(engine, walkers, rho0, times):
    """r(x, p, t) = <phi|rho(t)|phi>/tau estimated from walker states."""
    fields = [engine.ensemble_husimi(walkers, rho0, t).values / engine.tau for t in times]
    return FieldHistory(np.asarray(times, float), np.array(fields), engine.lattice)


def _source_fine(rho0, prop, tau, sigma, lattice, t):
    u = prop.unitary_matrix(t)
    rho_t = u @ rho0.entries @ u.conj().T
    lam, vec = np.linalg.eigh(0.5 * (rho_t + rho_t.conj().T))
    fields = husimi_values(prop.grid, vec.T, lattice, sigma)
    return np.tensordot(np.clip(lam, 0, None), fields, axes=1) * math.exp(-t / tau) / tau


def macro_renewal_residual(history, rho0, V, cfg, tau, sigma, spec, eval_times, n_shift=4):
    """Relative L1 mismatch of the macroscopic renewal equation.

    Both sides are window averages over ``[t, t + T]`` of cell-averaged
    quantities, and every evaluation time must be a history node.  The
    history must cover ``[0, max(eval_times) + 2T]``.  Returns
    ``(max residual, per-time residuals)``.
    """
    lat = history.lattice
    grid = rho0.grid
    bx, bp = spec.blocks(lat)
    clat = coarse_lattice(spec, lat)
    prop = Propagator(grid, V, cfg, scheme="spectral")
    e, q = prop.eig
    hbar = cfg.hbar
    hist_t = history.times
    if hist_t[0] > 1e-12:
        raise PreconditionError("history must start at t0 = 0")
    need = max(eval_times) + 2 * spec.T
    if need > hist_t[-1] + 1e-12:
        raise PreconditionError(f"history ends at {hist_t[-1]}, renewal check needs {need}")

    def R(t):
        return _block_mean(history.window(t, spec.T), bx, bp)

    r_nodes = np.array([t for t in hist_t if t + spec.T <= hist_t[-1] + 1e-12])
    r_vals = np.array([R(t).ravel() for t in r_nodes]) * clat.weight

    # per shift: packets in the eigenbasis and sum_j R_j |phi_j><phi_j| there
    ys, wy = shift_nodes(spec.Delta1, n_shift)
    ks, wk = shift_nodes(spec.Delta2, n_shift)
    xx, pp = clat.nodes()
    shifts = []
    for y, a in zip(ys, wy):
        for k, b in zip(ks, wk):
            bmat = q.conj().T @ packet_amplitudes(grid, xx + y, pp + k, sigma).T
            gam = np.matmul(bmat[None] * r_vals[:, None, :], bmat.conj().T[None])
            shifts.append((a * b, bmat, gam))
    gap = np.subtract.outer(e, e)

    def rhs(t):
        sel = np.nonzero(r_nodes <= t + 1e-12)[0]
        ts = r_nodes[sel]
        if len(ts) < 2 or abs(ts[-1] - t) > 1e-9:
            raise PreconditionError(f"t={t} is not a history node")
        xi = t - ts
        coef = simpson(np.eye(len(ts)), x=ts, axis=1) * np.exp(-xi / tau) / tau
        phase = coef[:, None, None] * np.exp(-1j * gap[None] * xi[:, None, None] / hbar)
        total = np.zeros(len(xx))
        for w, bmat, gam in shifts:
            m = np.sum(phase * gam[sel], axis=0)
            total += w * np.real(np.einsum("aj,ab,bj->j", bmat.conj(), m, bmat, optimize=True))
        src = _block_mean(_source_fine(rho0, prop, tau, sigma, lat, t), bx, bp).ravel()
        return total + src

    residuals = []
    for t in eval_times:
        lhs = R(t).ravel()
        if spec.T > 0:
            pts = hist_t[(hist_t >= t - 1e-12) & (hist_t <= t + spec.T + 1e-12)]
            if len(pts) < 2:
                raise PreconditionError("window holds fewer than two history nodes")
            right = np.trapezoid(np.array([rhs(s) for s in pts]), pts, axis=0) / spec.T
        else:
            right = rhs(t)
        residuals.append(float(np.sum(np.abs(lhs - right)) / np.sum(np.abs(lhs))))
    return max(residuals), residuals


# ------------------------------------------------------- classical limit


def _circular_mean(x, weights, length):
    z = np.sum(weights * np.exp(2j * np.pi * x / length))
    return float(np.angle(z) * length / (2 * np.pi))


def regime_flags(grid, V, mass, tau, sigma, hbar=1.0):
    """Checks of the conditions under which walkers follow classical flow."""
    harmonic_matched = V.kind == "harmonic" and abs(
        sigma**2 - hbar / (2 * mass * V.params["omega"])
    ) < 1e-9 * sigma**2
    t_spread = 2 * mass * sigma**2 / hbar
    d2 = (np.roll(V.values, -1) - 2 * V.values + np.roll(V.values, 1)) / grid.dx**2
    d3 = (np.roll(d2, -1) - np.roll(d2, 1)) / (2 * grid.dx)
    scale = max(np.max(np.abs(d2)), 1e-300)
    # analytic kinds are smooth apart from the periodic seam, which walkers must not reach
    smooth = V.kind in ("free", "harmonic") or V.is_free or float(np.max(np.abs(d3)) * sigma / scale) < 1.0
    return {
        "slow_spreading": bool(harmonic_matched or t_spread > tau),
        "smooth_potential": bool(smooth),
        "spreading_time": t_spread,
    }


def liouville_correspondence_error(engine, mass, x0, p0, horizon, n_walkers, seed, n_checks=12, dt_classical=None):
    """Walker mean trajectory vs the classical flow of a matched cloud.

    The matched cloud is a lattice quadrature of the initial Husimi field
    carried by velocity Verlet.  Distances use ``(x / Lx, p / Lp)`` with ``Lx``, ``Lp``
    the half extents of the classical mean orbit, so the returned error is a
    fraction of the orbit radius.
    """
    grid, V, sigma, tau = engine.grid, engine.prop.V, engine.sigma, engine.tau
    hbar = grid.hbar
    flags = regime_flags(grid, V, mass, tau, sigma, hbar)
    if not (flags["slow_spreading"] and flags["smooth_potential"]):
        warnings.warn(f"classical-limit regime violated: {flags}", RuntimeWarning, stacklevel=2)
    psi0 = packet_amplitudes(grid, x0, p0, sigma)
    state0 = StateVector(grid, psi0)
    walkers = engine.run(state0, n_walkers, horizon, seed)

    # matched classical cloud: lattice quadrature of the initial Husimi field
    lat = engine.lattice
    field0 = husimi_values(grid, psi0, lat, sigma).ravel()
    keep = field0 > 1e-14 * field0.max()
    xn, pn = lat.nodes()
    xc = x0 + wrap(xn[keep] - x0, grid.box_length)
    pc = pn[keep].astype(float)
    wc = field0[keep] / field0[keep].sum()

    dt_c = dt_classical or engine.prop.cfg.dt
    checks = np.linspace(0.0, horizon, n_checks + 1)
    q_means, c_means, q_err = [], [], []
    x_cur, p_cur, t_cur = xc.copy(), pc.copy(), 0.0
    kappa = 2 * np.pi / grid.box_length
    for t in checks:
        x_cur, p_cur = verlet(grid, V, mass, x_cur, p_cur, dt_c, t - t_cur)
        t_cur = t
        c_means.append((_circular_mean(x_cur, wc, grid.box_length), float(np.dot(wc, p_cur))))
        amps = engine.states_at(walkers, state0, t)
        prob = np.abs(amps) ** 2
        prob /= prob.sum(axis=1, keepdims=True)
        zw = prob @ np.exp(1j * kappa * grid.x)
        xq = float(np.angle(np.mean(zw)) / kappa)
        pk = np.abs(np.fft.fft(amps, axis=1)) ** 2
        pk /= pk.sum(axis=1, keepdims=True)
        pw = pk @ grid.p
        xw = xq + wrap(np.angle(zw) / kappa - xq, grid.box_length)
        q_means.append((xq, float(np.mean(pw))))
        q_err.append((float(np.std(xw) / math.sqrt(len(xw))), float(np.std(pw) / math.sqrt(len(pw)))))
    q_means, c_means = np.array(q_means), np.array(c_means)
    lx = max(0.5 * np.ptp(c_means[:, 0]), sigma)
    lp = max(0.5 * np.ptp(c_means[:, 1]), hbar / (2 * sigma))
    dx_ = wrap(q_means[:, 0] - c_means[:, 0], grid.box_length) / lx
    dp_ = (q_means[:, 1] - c_means[:, 1]) / lp
    err = np.sqrt(dx_**2 + dp_**2)
    return {
        "error": float(err.max()),
        "errors": err,
        "times": checks,
        "quantum_means": q_means,
        "classical_means": c_means,
        "quantum_stderr": np.array(q_err),
        "scales": (lx, lp),
        "flags": flags,
    }
