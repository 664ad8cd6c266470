"""Shared instances for the scattering/dyson/convergence test modules."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fockscatter.evolution import Propagator
from fockscatter.fock import build_mode_grid, build_particle_system, enumerate_basis
from fockscatter.hamiltonian import (
    InteractionSpec,
    assemble_regularized,
    phi_power_vertices,
)


def phi4_instance(coupling=2e-3, cap=5.3, n_max=4, channels=(1, 3), rank=None):
    """The workhorse 30-dim scalar instance: phi^4 restricted to the
    number-changing channels, which keeps the free vacuum exactly decoupled
    and the free-basis diagonal zero (no uncompensated self-energy)."""
    system = build_particle_system({"phi": {"statistics": "boson", "mass": 1.0}})
    grid = build_mode_grid(1.0, 1.0)
    basis = enumerate_basis(system, grid, n_max, energy_cap=cap)
    spec = InteractionSpec(
        vertices=phi_power_vertices(system, grid, "phi", 4, coupling, channels=channels),
        couplings={"g": coupling},
    )
    return assemble_regularized(spec, basis, rank if rank is not None else basis.dim)


PLATEAU_TIME_GRID = np.arange(0.5, 400.0, 0.5)
EPS_SEQUENCE = (0.2, 0.1, 0.05)


@pytest.fixture(scope="session")
def certified():
    """Certified 30-dim instance shared by scattering/acceptance tests."""
    h = phi4_instance()
    assert h.dim == 30
    return h


@pytest.fixture(scope="session")
def certified_exact_prop(certified):
    return Propagator(certified.full, method="dense-exponential")
