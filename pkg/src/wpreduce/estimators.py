"""Scikit-learn style front ends for the three Husimi-field predictors.

Each estimator is configured by constructor parameters, ``fit`` takes the
initial state (a ``StateVector`` or ``DensityMatrix``) and ``predict`` maps
a list of times to ``PhaseSpaceLattice`` fields.  They hold no physics of
their own; they forward to the solver modules.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import PreconditionError
from .ctrw import WalkerEngine
from .grid import LatticeSpec, StateVector
from .lindblad import LindbladSolver, PhaseSpaceChannels, as_density, husimi_of_rho
from .propagators import EvolutionConfig
from .trajectories import ensemble_average, run_ensemble


class _HusimiEstimator(BaseEstimator):
    def _setup(self, X):
        self.rho0_ = X
        self.grid_ = X.grid
        self.lattice_ = self.lattice or LatticeSpec.from_grid(self.grid_)
        self.cfg_ = EvolutionConfig(self.mass, self.dt, self.grid_.hbar, scheme=self.scheme)


class LindbladHusimi(_HusimiEstimator):
    def __init__(self, V=None, tau=1.0, sigma=1.0, mass=1.0, dt=0.01, scheme="spectral", lattice=None):
        self.V = V
        self.tau = tau
        self.sigma = sigma
        self.mass = mass
        self.dt = dt
        self.scheme = scheme
        self.lattice = lattice

    def fit(self, X, y=None):
        self._setup(as_density(X))
        channels = PhaseSpaceChannels(self.lattice_, self.sigma, self.tau)
        self.solver_ = LindbladSolver(self.grid_, self.V, self.cfg_, channels)
        return self

    def predict(self, times):
        check_is_fitted(self, "solver_")
        rhos = self.solver_.run(self.rho0_, sorted(times))
        by_t = dict(zip(sorted(times), rhos))
        return [husimi_of_rho(by_t[t], self.lattice_, self.sigma) for t in times]


class CTRWHusimi(_HusimiEstimator):
    def __init__(self, V=None, tau=1.0, sigma=1.0, mass=1.0, dt=0.01, scheme="spectral", lattice=None,
                 n_walkers=1000, horizon=1.0, seed=0, threads=1):
        self.V = V
        self.tau = tau
        self.sigma = sigma
        self.mass = mass
        self.dt = dt
        self.scheme = scheme
        self.lattice = lattice
        self.n_walkers = n_walkers
        self.horizon = horizon
        self.seed = seed
        self.threads = threads

    def fit(self, X, y=None):
        self._setup(X)
        self.engine_ = WalkerEngine(self.grid_, self.V, self.cfg_, self.tau, self.sigma, self.lattice_)
        self.walkers_ = self.engine_.run(X, self.n_walkers, self.horizon, self.seed, self.threads)
        return self

    def predict(self, times):
        check_is_fitted(self, "walkers_")
        if any(t > self.horizon for t in times):
            raise PreconditionError("prediction time beyond the sampled horizon")
        return [self.engine_.ensemble_husimi(self.walkers_, self.rho0_, t, self.lattice_) for t in times]


class TrajectoryHusimi(_HusimiEstimator):
    def __init__(self, V=None, tau=1.0, sigma=1.0, mass=1.0, dt=0.01, scheme="spectral", lattice=None,
                 n_trajectories=1000, record_times=(1.0,), seed=0, threads=1, jump_method="direct"):
        self.V = V
        self.tau = tau
        self.sigma = sigma
        self.mass = mass
        self.dt = dt
        self.scheme = scheme
        self.lattice = lattice
        self.n_trajectories = n_trajectories
        self.record_times = record_times
        self.seed = seed
        self.threads = threads
        self.jump_method = jump_method

    def fit(self, X, y=None):
        if not isinstance(X, StateVector):
            raise PreconditionError("trajectories start from a pure state")
        self._setup(X)
        t_final = max(self.record_times) if self.record_times else 0.0
        self.trajectories_ = run_ensemble(
            X, self.V, self.cfg_, self.tau, self.sigma, self.n_trajectories, t_final, self.seed,
            self.record_times, self.lattice_, self.threads, self.jump_method, self.scheme,
        )
        return self

    def predict(self, times, return_stderr=False):
        check_is_fitted(self, "trajectories_")
        out = [ensemble_average(self.trajectories_, self.lattice_, t, self.sigma) for t in times]
        return out if return_stderr else [m for m, _ in out]


def pairwise_l1(fields_a, fields_b):
    """L1 distances between matching fields of two predictions."""
    return [a.l1_distance(b) for a, b in zip(fields_a, fields_b)]


__all__ = ["LindbladHusimi", "CTRWHusimi", "TrajectoryHusimi", "pairwise_l1"]
