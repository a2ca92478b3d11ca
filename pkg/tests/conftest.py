import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shapematch import synthetic
from shapematch.descriptors import l2_normalize, wks
from shapematch.mesh import assemble_operators
from shapematch.spectral import eigendecompose


@pytest.fixture(scope="session")
def triangle():
    return synthetic.equilateral_triangle()


@pytest.fixture(scope="session")
def chain():
    return synthetic.chain_mesh()


@pytest.fixture(scope="session")
def sphere():
    return synthetic.icosphere(2)


@pytest.fixture(scope="session")
def strip():
    return synthetic.bumpy_strip(nx=15, ny=10)


@pytest.fixture(scope="session")
def strip_basis(strip):
    mass, stiff = assemble_operators(strip)
    return eigendecompose(stiff, mass, 20)


@pytest.fixture(scope="session")
def strip_stiffness(strip):
    _, stiff = assemble_operators(strip)
    return stiff


@pytest.fixture(scope="session")
def bent_pair():
    """Small near-isometric pair with identity ground truth and spectra."""
    mesh_m, mesh_n, gt = synthetic.bent_strip_pair(nx=22, ny=14, angle=2.0)
    mass_m, stiff_m = assemble_operators(mesh_m)
    mass_n, stiff_n = assemble_operators(mesh_n)
    basis_m = eigendecompose(stiff_m, mass_m, 24)
    basis_n = eigendecompose(stiff_n, mass_n, 24)
    return {
        "mesh_m": mesh_m, "mesh_n": mesh_n, "gt": gt,
        "basis_m": basis_m, "basis_n": basis_n,
        "stiff_m": stiff_m, "stiff_n": stiff_n,
    }


@pytest.fixture(scope="session")
def bent_pair_descriptors(bent_pair):
    dm = l2_normalize(wks(bent_pair["basis_m"], dim=40))
    dn = l2_normalize(wks(bent_pair["basis_n"], dim=40))
    return dm.values, dn.values
