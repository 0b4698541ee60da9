"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class NumericalAbort(RuntimeError):
    """A monitored invariant drifted past its abort threshold mid-run."""


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise PreconditionError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_nonnegative(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise PreconditionError(f"{name} must be finite and >= 0, got {value!r}")
    return float(value)


def check_power_of_two(n, name="n_points"):
    if not isinstance(n, numbers.Integral) or n < 1 or (n & (n - 1)) != 0:
        raise PreconditionError(f"{name} must be a positive power of two, got {n!r}")
    return int(n)


def check_amplitudes(amplitudes, n_points):
    arr = np.asarray(amplitudes, dtype=complex)
    if arr.shape[-1] != n_points:
        raise PreconditionError(
            f"amplitude array has trailing length {arr.shape[-1]}, grid has {n_points}"
        )
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("amplitudes contain non-finite values")
    return arr


def check_normalized(amplitudes, tol=1e-10):
    norm2 = float(np.vdot(amplitudes, amplitudes).real)
    if abs(norm2 - 1.0) > tol:
        raise PreconditionError(f"state is not normalized: |psi|^2 = {norm2:.3e}")
