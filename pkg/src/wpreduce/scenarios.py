"""Named verification scenarios and their declarative configuration.

A config is a nested mapping (read from YAML by the CLI).  It is merged
over the scenario defaults, validated against the module preconditions,
and only then executed.  Every scenario returns a list of :class:`Check`
rows plus data tables for the CSV writer.
"""

from __future__ import annotations

import copy
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstest

from ._validation import PreconditionError
from .coarse import (
    CoarseSpec,
    FieldHistory,
    HamiltonianFamily,
    coarse_kernel_Psi,
    homogeneity_deviation,
    liouville_correspondence_error,
    macro_density_R,
    macro_renewal_residual,
    translation_identity_error,
    walker_r_history,
)
from .ctrw import WalkerEngine, kernel_normalization, source_normalization
from .grid import LatticeSpec, PhaseGrid, StateVector, packet_amplitudes, resolution_of_identity_residual
from .lindblad import (
    DensityMatrix,
    DiscreteKetChannels,
    LindbladSolver,
    PhaseSpaceChannels,
    husimi_of_rho,
    integral_form_residual,
)
from .localization import (
    LocalizationOperator,
    build_exp_S,
    ladder_deviation,
    limit_convergence,
    localization_experiment,
    trace_fixing_constant,
)
from .propagators import EvolutionConfig, Propagator, free_potential, harmonic_potential, make_disorder
from .trajectories import ensemble_average, run_ensemble

SCENARIOS = (
    "identity-checks",
    "lindblad-vs-ctrw",
    "lindblad-vs-trajectories",
    "kernel-normalization",
    "liouville-correspondence",
    "coarse-grain-consistency",
    "localization-msd",
    "exp-S-limit",
)


class ConfigError(ValueError):
    """The configuration is malformed or violates a precondition."""


@dataclass
class Check:
    name: str
    criterion: int
    value: float
    tolerance: float
    relation: str = "le"
    detail: str = ""
    timing: bool = False

    @property
    def passed(self):
        if self.relation == "le":
            return bool(self.value <= self.tolerance)
        if self.relation == "ge":
            return bool(self.value >= self.tolerance)
        return bool(self.value)

    def as_row(self):
        return (self.criterion, self.name, self.value, self.relation, self.tolerance, self.passed, self.detail)


CHECK_COLUMNS = ("criterion", "name", "value", "relation", "tolerance", "passed", "detail")


@dataclass
class ScenarioResult:
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


# ---------------------------------------------------------------- config

_BASE = {
    "physics": {"mass": 1.0, "hbar": 1.0, "tau": 1.0, "sigma": 2.0, "potentials": [{"kind": "free"}]},
    "numerics": {
        "n_points": 64,
        "box_length": 32.0,
        "dt": 0.02,
        "scheme": "spectral",
        "lattice": {"x_stride": 1, "p_stride": 1, "p_band": 1.0},
        "n_samples": 10000,
    },
    "seeds": {"base": 0},
    "params": {},
}

_THREE = [
    {"kind": "free"},
    {"kind": "harmonic", "omega": "coherent"},
    {"kind": "disorder", "W": 0.5, "ell": 0.5, "seed": 0},
]

_OVERRIDES = {
    "identity-checks": {
        "physics": {"potentials": _THREE},
        "params": {"trace_steps": 10000, "trace_dt": 0.001, "packet": [-2.0, 0.5], "integral_nodes": 21, "n_kets": 6},
    },
    "kernel-normalization": {
        "physics": {"potentials": _THREE},
        "params": {"packet": [-2.0, 0.5], "n_waits": 10000, "horizon": 10.0, "quadrature_nodes": 48},
    },
    "lindblad-vs-ctrw": {
        "physics": {"potentials": _THREE[:2]},
        "params": {"packet": [-2.0, 0.5], "times_in_tau": [1, 3, 5]},
    },
    "lindblad-vs-trajectories": {
        "physics": {"potentials": _THREE[:2]},
        "params": {"packet": [-2.0, 0.5], "times_in_tau": [1, 3, 5]},
    },
    "liouville-correspondence": {
        "physics": {"mass": 8.0, "tau": 2.0, "sigma": 0.25, "potentials": [{"kind": "harmonic", "omega": 1.0}]},
        "numerics": {"n_points": 256, "box_length": 14.0, "dt": 0.001, "lattice": {"x_stride": 2, "p_stride": 2}},
        "params": {"packet": [2.0, 0.0], "periods": 3, "n_checks": 12},
    },
    "coarse-grain-consistency": {
        "physics": {"sigma": 1.5, "potentials": [{"kind": "harmonic", "omega": 0.25}]},
        "numerics": {"dt": 0.01},
        "params": {
            "route_potential": {"kind": "harmonic", "omega": "coherent"},
            "route_origin": [-2.0, 0.5],
            "route_xi": 1.3,
            "route_block": [4, 4],
            "packet": [-4.0, 1.0],
            "horizon": 6.0,
            "history_step": 0.125,
            "eval_times": [1.0, 3.0, 5.0],
            "block": [4, 4],
            "T": 0.25,
        },
    },
    "localization-msd": {
        "physics": {"sigma": 2.0, "potentials": [{"kind": "disorder", "W": 0.5, "ell": 0.25, "seed": 0}]},
        "numerics": {"lattice": {"x_stride": 8, "p_stride": 4, "p_band": 0.4}},
        "params": {
            "p0": 2.0,
            "disorder_seeds": [0, 1, 2, 3, 4, 5, 6, 7],
            "n_times": 40,
            "long": {"n_points": 2048, "box_length": 512.0, "tau": 100.0, "horizon": 500.0, "n_walkers": 100},
            "short": {"n_points": 256, "box_length": 64.0, "tau": 0.05, "horizon": 2.0, "n_walkers": 200, "p_band": 1.0},
        },
    },
    "exp-S-limit": {
        "numerics": {"n_points": 128, "box_length": 32.0},
        "params": {"ratio": 1.0, "alphas": [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0], "check_alpha": 2.0},
    },
}


def _merge(base, over, path="", strict=True):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if strict and k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, f"{path}{k}.", strict)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(scenario):
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    cfg = _merge(_BASE, _OVERRIDES.get(scenario, {}), strict=False)
    cfg = {"scenario": scenario, **cfg}
    return cfg


def resolve_config(raw):
    """Merge a user mapping over the scenario defaults and validate it."""
    if not isinstance(raw, dict) or "scenario" not in raw:
        raise ConfigError("config must be a mapping with a 'scenario' key")
    base = default_config(raw["scenario"])
    rest = {k: v for k, v in raw.items() if k != "scenario"}
    for k in rest:
        if k not in base:
            raise ConfigError(f"unknown config section {k!r}")
    cfg = _merge(base, rest)
    validate(cfg)
    return cfg


@dataclass
class Setup:
    grid: PhaseGrid
    lattice: LatticeSpec
    evo: EvolutionConfig
    tau: float
    sigma: float
    potentials: list


def build_potential(spec, grid, mass, sigma):
    kind = spec.get("kind")
    if kind == "free":
        return free_potential(grid)
    if kind == "harmonic":
        omega = spec.get("omega", "coherent")
        if omega == "coherent":
            omega = grid.hbar / (2.0 * mass * sigma**2)
        return harmonic_potential(grid, float(omega), mass, float(spec.get("center", 0.0)))
    if kind == "disorder":
        return make_disorder(grid, float(spec["W"]), float(spec["ell"]), int(spec["seed"]))
    raise ConfigError(f"unknown potential kind {kind!r}")


def _setup(cfg, n_points=None, box_length=None, tau=None, p_band=None, potentials=None):
    ph, nu = cfg["physics"], cfg["numerics"]
    try:
        grid = PhaseGrid(int(n_points or nu["n_points"]), float(box_length or nu["box_length"]), float(ph["hbar"]))
        lat_cfg = dict(nu["lattice"])
        if p_band is not None:
            lat_cfg["p_band"] = p_band
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lattice = LatticeSpec.from_grid(grid, int(lat_cfg.get("x_stride", 1)), int(lat_cfg.get("p_stride", 1)), float(lat_cfg.get("p_band", 1.0)))
        sigma = float(ph["sigma"])
        if not (2 * grid.dx <= sigma <= grid.box_length / 8):
            raise ConfigError(f"sigma={sigma} outside [2 dx, L/8] = [{2 * grid.dx}, {grid.box_length / 8}]")
        evo = EvolutionConfig(float(ph["mass"]), float(nu["dt"]), grid.hbar, scheme=nu["scheme"])
        pots = [build_potential(p, grid, evo.mass, sigma) for p in (potentials or ph["potentials"])]
        t = float(tau if tau is not None else ph["tau"])
        if not (t > 0 and math.isfinite(t)):
            raise ConfigError("tau must be finite and positive")
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from exc
    return Setup(grid, lattice, evo, t, sigma, pots)


def validate(cfg):
    """Check every parameter before any compute; raises :class:`ConfigError`."""
    if int(cfg["numerics"]["n_samples"]) < 1:
        raise ConfigError("n_samples must be >= 1")
    if not isinstance(cfg["seeds"].get("base"), int):
        raise ConfigError("seeds.base must be an integer")
    name = cfg["scenario"]
    pr = cfg["params"]
    if name == "localization-msd":
        for key in ("long", "short"):
            b = pr[key]
            _setup(cfg, b["n_points"], b["box_length"], b["tau"], b.get("p_band"))
        return
    s = _setup(cfg)
    if name in ("lindblad-vs-ctrw", "lindblad-vs-trajectories", "identity-checks", "kernel-normalization"):
        if s.evo.scheme != "spectral":
            for V in s.potentials:
                try:
                    s.evo.check_guard(s.grid, V)
                except PreconditionError as exc:
                    raise ConfigError(str(exc)) from exc
    if name == "coarse-grain-consistency":
        for key in ("route_block", "block"):
            bx, bp = pr[key]
            try:
                CoarseSpec(bx * s.lattice.cell[0] / 2, bp * s.lattice.cell[1] / 2, pr["T"]).blocks(s.lattice)
            except PreconditionError as exc:
                raise ConfigError(str(exc)) from exc
    if name == "exp-S-limit":
        a = np.asarray(pr["alphas"], float)
        if len(a) < 2 or np.any(np.diff(a) <= 0) or np.any(a <= 0):
            raise ConfigError("alphas must be a positive increasing ladder")


# -------------------------------------------------------------- helpers


def _packet(s, xp):
    return StateVector(s.grid, packet_amplitudes(s.grid, float(xp[0]), float(xp[1]), s.sigma))


def _label(V):
    return V.kind


def _iter_field(f):
    for i, x in enumerate(f.x_nodes):
        for j, p in enumerate(f.p_nodes):
            yield float(x), float(p), float(f.values[i, j])


FIELD_COLUMNS = ("level", "source", "potential", "t", "x", "p", "value")


# ------------------------------------------------------------- scenarios


def run_identity_checks(cfg, threads=1):
    s = _setup(cfg)
    pr = cfg["params"]
    res = ScenarioResult()
    t0 = time.perf_counter()
    roi = resolution_of_identity_residual(s.grid, s.sigma, s.lattice)
    elapsed = time.perf_counter() - t0
    res.checks.append(Check("resolution_of_identity", 1, roi, 1e-6))
    res.checks.append(Check("resolution_of_identity_runtime_s", 1, elapsed, 10.0, timing=True))

    psi = _packet(s, pr["packet"])
    origin = tuple(float(v) for v in pr["packet"])
    norm_rows = []
    for V in s.potentials:
        kn = kernel_normalization(origin, V, s.evo, s.tau, s.sigma, s.lattice, s.grid)
        sn = source_normalization(psi, V, s.evo, s.tau, s.sigma, s.lattice)
        res.checks.append(Check(f"kernel_normalization[{_label(V)}]", 2, abs(kn - 1), 1e-3))
        res.checks.append(Check(f"source_normalization[{_label(V)}]", 2, abs(sn - 1), 1e-3))
        norm_rows.append((_label(V), kn, sn))
    res.tables["normalization.csv"] = (("potential", "kernel", "source"), norm_rows)

    V = s.potentials[0]
    channels = PhaseSpaceChannels(s.lattice, s.sigma, s.tau)
    fine = EvolutionConfig(s.evo.mass, float(pr["trace_dt"]), s.grid.hbar, scheme="spectral")
    n_steps = int(pr["trace_steps"])
    solver = LindbladSolver(s.grid, V, fine, channels)
    marks = np.linspace(0, n_steps * fine.dt, 11)[1:]
    rhos = solver.run(psi, list(marks))
    drift = [abs(r.trace() - 1.0) for r in rhos]
    res.checks.append(Check("trace_drift", 3, max(drift), 1e-6, detail=f"{solver.n_steps} steps"))
    res.tables["trace.csv"] = (("t", "trace_drift"), list(zip(marks, drift)))

    t_int = 0.1 * s.tau
    ts = np.linspace(0.0, t_int, int(pr["integral_nodes"]))
    rhos = LindbladSolver(s.grid, V, fine, channels).run(psi, list(ts))
    hist = [(tp, husimi_of_rho(r, s.lattice, s.sigma).scaled(1.0 / s.tau)) for tp, r in zip(ts, rhos)]
    ifr = integral_form_residual(psi, V, s.evo, channels, t_int, hist, rho_t=rhos[-1])
    res.checks.append(Check("integral_form_residual", 5, ifr, 1e-3))

    # orthonormal eigenkets with self-jumps: pure dephasing in the H eigenbasis
    harm = harmonic_potential(s.grid, s.grid.hbar / (2 * s.evo.mass * s.sigma**2), s.evo.mass)
    e, q = Propagator(s.grid, harm, s.evo, scheme="spectral").eig
    n = int(pr["n_kets"])
    kets = q[:, :n].T.copy()
    ch = DiscreteKetChannels(kets, np.eye(n) / s.tau)
    coef = np.exp(1j * np.arange(n)) / np.arange(1, n + 1)
    coef /= np.linalg.norm(coef)
    rho0 = DensityMatrix.from_state(StateVector(s.grid, coef @ kets))
    times = [0.5 * s.tau, s.tau, 2 * s.tau]
    out = LindbladSolver(s.grid, harm, s.evo, ch, dt=0.002 * s.tau).run(rho0, times)
    r0 = kets.conj() @ rho0.entries @ kets.T
    off = ~np.eye(n, dtype=bool)
    off_err, diag_err, rows = 0.0, 0.0, []
    for t, r in zip(times, out):
        rk = kets.conj() @ r.entries @ kets.T
        o = float(np.max(np.abs(np.abs(rk[off]) - np.abs(r0[off]) * math.exp(-t / s.tau))))
        d = float(np.max(np.abs(np.diag(rk) - np.diag(r0))))
        off_err, diag_err = max(off_err, o), max(diag_err, d)
        rows.append((t, o, d))
    res.checks.append(Check("offdiagonal_decay", 7, off_err, 1e-8))
    res.checks.append(Check("diagonal_constancy", 7, diag_err, 1e-10))
    res.tables["decoherence.csv"] = (("t", "offdiag_error", "diag_error"), rows)
    return res


def run_kernel_normalization(cfg, threads=1):
    s = _setup(cfg)
    pr = cfg["params"]
    res = ScenarioResult()
    psi = _packet(s, pr["packet"])
    origin = tuple(float(v) for v in pr["packet"])
    rows, wait_rows = [], []
    n_waits = int(pr["n_waits"])
    for i, V in enumerate(s.potentials):
        kn = kernel_normalization(origin, V, s.evo, s.tau, s.sigma, s.lattice, s.grid, n_nodes=int(pr["quadrature_nodes"]))
        sn = source_normalization(psi, V, s.evo, s.tau, s.sigma, s.lattice, n_nodes=int(pr["quadrature_nodes"]))
        res.checks.append(Check(f"kernel_normalization[{_label(V)}]", 2, abs(kn - 1), 1e-3))
        res.checks.append(Check(f"source_normalization[{_label(V)}]", 2, abs(sn - 1), 1e-3))
        rows.append((_label(V), kn, sn))
        engine = WalkerEngine(s.grid, V, s.evo, s.tau, s.sigma, s.lattice)
        n_walk = max(1, math.ceil(n_waits * s.tau / float(pr["horizon"])))
        walkers = engine.run(psi, n_walk, float(pr["horizon"]), cfg["seeds"]["base"] + i, threads)
        waits = np.concatenate([w.waits for w in walkers])[:n_waits]
        pval = float(kstest(waits, "expon", args=(0.0, s.tau)).pvalue)
        res.checks.append(Check(f"waiting_time_ks_pvalue[{_label(V)}]", 6, pval, 0.01, "ge", f"{len(waits)} waits"))
        wait_rows.append((_label(V), len(waits), float(np.mean(waits)), pval))
        if i == 0:
            res.events = walkers
    res.tables["normalization.csv"] = (("potential", "kernel", "source"), rows)
    res.tables["waits.csv"] = (("potential", "n_waits", "mean_wait", "ks_pvalue"), wait_rows)
    return res


def _three_way(cfg, threads, with_ctrw, with_traj):
    s = _setup(cfg)
    pr = cfg["params"]
    res = ScenarioResult()
    psi = _packet(s, pr["packet"])
    times = [float(k) * s.tau for k in pr["times_in_tau"]]
    n = int(cfg["numerics"]["n_samples"])
    base = cfg["seeds"]["base"]
    rows, dist_rows = [], []
    for i, V in enumerate(s.potentials):
        label = _label(V)
        channels = PhaseSpaceChannels(s.lattice, s.sigma, s.tau)
        rhos = LindbladSolver(s.grid, V, s.evo, channels).run(psi, times)
        fields = {"lindblad": [husimi_of_rho(r, s.lattice, s.sigma) for r in rhos]}
        if with_ctrw:
            engine = WalkerEngine(s.grid, V, s.evo, s.tau, s.sigma, s.lattice)
            walkers = engine.run(psi, n, max(times), base + 2 * i, threads)
            fields["ctrw"] = [engine.ensemble_husimi(walkers, psi, t) for t in times]
            if i == 0:
                res.events = walkers
        if with_traj:
            trajs = run_ensemble(psi, V, s.evo, s.tau, s.sigma, n, max(times), base + 2 * i + 1, times, s.lattice, threads)
            fields["trajectories"] = [ensemble_average(trajs, s.lattice, t, s.sigma)[0] for t in times]
        names = list(fields)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                for k, t in enumerate(times):
                    d = fields[names[a]][k].l1_distance(fields[names[b]][k])
                    res.checks.append(Check(f"husimi_l1[{label},{names[a]}-{names[b]},t={t:g}]", 4, d, 0.05))
                    dist_rows.append((label, names[a], names[b], t, d))
        for name, fl in fields.items():
            for t, f in zip(times, fl):
                for x, p, v in _iter_field(f):
                    rows.append(("fine", name, label, t, x, p, v))
    res.tables["husimi.csv"] = (FIELD_COLUMNS, rows)
    res.tables["distances.csv"] = (("potential", "a", "b", "t", "l1"), dist_rows)
    return res


def run_lindblad_vs_ctrw(cfg, threads=1):
    return _three_way(cfg, threads, True, False)


def run_lindblad_vs_trajectories(cfg, threads=1):
    return _three_way(cfg, threads, True, True)


def run_liouville(cfg, threads=1):
    s = _setup(cfg)
    pr = cfg["params"]
    res = ScenarioResult()
    V = s.potentials[0]
    if V.kind != "harmonic":
        raise PreconditionError("the correspondence check needs a harmonic potential")
    omega = V.params["omega"]
    horizon = float(pr["periods"]) * 2 * math.pi / omega
    engine = WalkerEngine(s.grid, V, s.evo, s.tau, s.sigma, s.lattice)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = liouville_correspondence_error(
            engine, s.evo.mass, float(pr["packet"][0]), float(pr["packet"][1]), horizon,
            int(cfg["numerics"]["n_samples"]), cfg["seeds"]["base"], int(pr["n_checks"]),
        )
    flags = out["flags"]
    res.checks.append(Check("regime_valid", 9, flags["slow_spreading"] and flags["smooth_potential"], 1, "true",
                            "; ".join(str(w.message) for w in caught)))
    res.checks.append(Check("orbit_error_fraction", 9, out["error"], 0.02))
    rows = [
        (t, qm[0], qm[1], cm[0], cm[1], se[0], se[1], e)
        for t, qm, cm, se, e in zip(out["times"], out["quantum_means"], out["classical_means"], out["quantum_stderr"], out["errors"])
    ]
    res.tables["orbit.csv"] = (("t", "x_walkers", "p_walkers", "x_classical", "p_classical", "x_stderr", "p_stderr", "error"), rows)
    return res


def _spec_from_blocks(lattice, block, T):
    return CoarseSpec(block[0] * lattice.cell[0] / 2, block[1] * lattice.cell[1] / 2, T)


def run_coarse(cfg, threads=1):
    s = _setup(cfg)
    pr = cfg["params"]
    res = ScenarioResult()
    # two routes to the coarse kernel
    Vr = build_potential(pr["route_potential"], s.grid, s.evo.mass, s.sigma)
    rspec = _spec_from_blocks(s.lattice, pr["route_block"], 0.0)
    origin = tuple(float(v) for v in pr["route_origin"])
    xi = float(pr["route_xi"])
    a = coarse_kernel_Psi(origin, xi, Vr, s.evo, s.tau, s.sigma, rspec, s.lattice, s.grid)
    b = coarse_kernel_Psi(origin, xi, Vr, s.evo, s.tau, s.sigma, rspec, s.lattice, s.grid, route="jaynes")
    res.checks.append(Check("route_agreement", 8, float(np.max(np.abs(a.values - b.values))), 1e-8))
    fam = HamiltonianFamily(s.grid, Vr, s.evo, rspec.Delta1)
    res.checks.append(Check("translation_identity", 8, translation_identity_error(fam, xi, seed=cfg["seeds"]["base"]), 1e-10))
    rows = []
    for route, f in (("shift", a), ("jaynes", b)):
        for x, p, v in _iter_field(f):
            rows.append(("coarse", route, _label(Vr), xi, x, p, v))
    res.tables["kernels.csv"] = (FIELD_COLUMNS, rows)

    # renewal with walker histories
    V = s.potentials[0]
    psi = _packet(s, pr["packet"])
    rho0 = DensityMatrix.from_state(psi)
    horizon, h = float(pr["horizon"]), float(pr["history_step"])
    times = np.arange(0.0, horizon + 1e-9, h)
    evals = [float(t) for t in pr["eval_times"]]
    engine = WalkerEngine(s.grid, V, s.evo, s.tau, s.sigma, s.lattice)
    walkers = engine.run(psi, int(cfg["numerics"]["n_samples"]), horizon, cfg["seeds"]["base"], threads)
    hist = walker_r_history(engine, walkers, psi, times)
    exact_rhos = LindbladSolver(s.grid, V, s.evo, PhaseSpaceChannels(s.lattice, s.sigma, s.tau)).run(rho0, list(times))
    exact = FieldHistory(times, np.array([husimi_of_rho(r, s.lattice, s.sigma).values / s.tau for r in exact_rhos]), s.lattice)

    deg = CoarseSpec(0.0, 0.0, 0.0)
    _, walk_res = macro_renewal_residual(hist, rho0, V, s.evo, s.tau, s.sigma, deg, evals)
    _, exact_res = macro_renewal_residual(exact, rho0, V, s.evo, s.tau, s.sigma, deg, evals)
    mc = [float(np.abs(hist.at(t) - exact.at(t)).sum() / np.abs(exact.at(t)).sum()) for t in evals]
    margin = max(w - (e + m) for w, e, m in zip(walk_res, exact_res, mc))
    res.checks.append(Check("degenerate_renewal_minus_mc_error", 10, margin, 0.0,
                            detail="walker residual minus (exact residual + walker L1 noise), max over times"))
    spec = _spec_from_blocks(s.lattice, pr["block"], float(pr["T"]))
    valid, per_t = macro_renewal_residual(hist, rho0, V, s.evo, s.tau, s.sigma, spec, evals)
    res.checks.append(Check("macro_renewal_residual", 10, valid, 0.10, detail=str(spec.to_dict())))
    hom = [homogeneity_deviation(hist, spec, t)["l1_rel"] for t in evals]
    rows = [("degenerate", t, w, e, m) for t, w, e, m in zip(evals, walk_res, exact_res, mc)]
    rows += [("coarse", t, r, float("nan"), hm) for t, r, hm in zip(evals, per_t, hom)]
    res.tables["renewal.csv"] = (("case", "t", "residual", "exact_residual", "noise_or_homogeneity"), rows)
    macro = []
    for t in evals:
        R = macro_density_R(hist, spec, t)
        for x, p, v in _iter_field(R):
            macro.append(("coarse", "walkers", _label(V), t, x, p, v))
    res.tables["macro_density.csv"] = (FIELD_COLUMNS, macro)
    res.events = walkers
    return res


def run_localization(cfg, threads=1):
    pr = cfg["params"]
    res = ScenarioResult()
    spec = cfg["physics"]["potentials"][0]
    W, ell = float(spec["W"]), float(spec["ell"])
    seeds = [int(v) for v in pr["disorder_seeds"]]
    out = {}
    for key in ("long", "short"):
        b = pr[key]
        s = _setup(cfg, b["n_points"], b["box_length"], b["tau"], b.get("p_band"), potentials=[{"kind": "free"}])
        out[key] = localization_experiment(
            s.grid, W, ell, s.tau, s.evo.mass, s.sigma, float(pr["p0"]), float(b["horizon"]), int(b["n_walkers"]),
            seeds, cfg["seeds"]["base"], int(pr["n_times"]), s.lattice,
        )
    lq, lc = out["long"].late_slopes()
    res.checks.append(Check("long_tau_slope_ratio", 11, lq / lc, 0.1, detail=f"wraps={out['long'].wrap_events}"))
    res.checks.append(Check("short_tau_tracking", 11, out["short"].tracking_deviation(), 0.2,
                            detail=f"wraps={out['short'].wrap_events}"))
    sq, sc = out["short"].late_slopes()
    res.checks.append(Check("contrast_reverses", 11, (lq / lc) < (sq / sc), 1, "true"))
    rows = []
    for key, m in out.items():
        rows += [(key, t, q, c) for t, q, c in m.to_rows()]
    res.tables["msd.csv"] = (("regime", "t", "msd_quantum", "msd_classical"), rows)
    return res


def run_exp_s(cfg, threads=1):
    s = _setup(cfg, potentials=[{"kind": "free"}])
    pr = cfg["params"]
    res = ScenarioResult()
    ratio = float(pr["ratio"])
    rep = limit_convergence(pr["alphas"], ratio, s.grid)
    res.checks.append(Check("ratio_strictly_decreasing", 12, rep.monotone, 1, "true"))
    res.checks.append(Check("packet_infidelity_at_largest_resolvable", 12, 1.0 - rep.final_fidelity(), 1e-6))
    ok = np.nonzero(rep.resolvable)[0]
    res.checks.append(Check("top_vector_drift", 12, float(np.max(1.0 - rep.step_fidelity[ok])), 1e-8))
    a = float(pr["check_alpha"])
    op = LocalizationOperator(a, ratio * a, 0.0, 0.0, s.grid.hbar)
    op.check_resolved(s.grid)
    m = build_exp_S(op, s.grid)
    herm = float(np.max(np.abs(m - m.conj().T)))
    lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))))
    scale = float(np.max(np.abs(m)))
    res.checks.append(Check("exp_S_hermiticity", 12, herm / scale, 1e-10))
    res.checks.append(Check("exp_S_positivity", 12, max(0.0, -lam_min) / scale, 1e-10))
    res.checks.append(Check("ladder_spacing_deviation", 12, ladder_deviation(op, s.grid), 1e-8))
    c_num, c_closed, dev = trace_fixing_constant(op, s.grid, s.tau)
    res.checks.append(Check("trace_fixing_constant_rel", 12, abs(c_num / c_closed - 1), 1e-8, detail=f"c={c_num!r} identity_dev={dev!r}"))
    rows = [
        (float(al), float(lr), float(pf), float(sf), bool(rv))
        for al, lr, pf, sf, rv in zip(rep.alphas, rep.log_ratio, rep.packet_fidelity, rep.step_fidelity, rep.resolvable)
    ]
    res.tables["ladder.csv"] = (("alpha", "log_ratio", "packet_fidelity", "step_fidelity", "resolvable"), rows)
    return res


RUNNERS = {
    "identity-checks": run_identity_checks,
    "lindblad-vs-ctrw": run_lindblad_vs_ctrw,
    "lindblad-vs-trajectories": run_lindblad_vs_trajectories,
    "kernel-normalization": run_kernel_normalization,
    "liouville-correspondence": run_liouville,
    "coarse-grain-consistency": run_coarse,
    "localization-msd": run_localization,
    "exp-S-limit": run_exp_s,
}


def run(cfg, threads=1):
    return RUNNERS[cfg["scenario"]](cfg, threads)
