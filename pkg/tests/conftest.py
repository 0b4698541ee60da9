import numpy as np
import pytest

from wpreduce.grid import LatticeSpec, PhaseGrid, StateVector, packet_amplitudes
from wpreduce.propagators import EvolutionConfig


@pytest.fixture
def grid():
    return PhaseGrid(64, 32.0)


@pytest.fixture
def lattice(grid):
    return LatticeSpec.from_grid(grid)


@pytest.fixture
def spectral():
    return EvolutionConfig(1.0, 0.02, 1.0, scheme="spectral")


def packet(grid, x0, p0, sigma):
    return StateVector(grid, packet_amplitudes(grid, x0, p0, sigma))


def rel_l1(a, b):
    return float(np.sum(np.abs(a - b)) / np.sum(np.abs(b)))


# one verdict line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
