import numpy as np
import pytest

import dgboltz as dg

DOMAIN = ((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0))

MACH155 = (
    dg.MaxwellianParams(1.6094, (0.7750, 0.0, 0.0), 0.3),
    dg.MaxwellianParams(2.8628, (0.4357, 0.0, 0.0), 0.464),
)


def make_mesh(M, s=(1, 1, 1), domain=DOMAIN):
    return dg.VelocityMesh(dg.GridSpec(domain[0], domain[1], M, s))


@pytest.fixture(scope="session")
def model():
    return dg.InteractionModel(alpha=1.0)


@pytest.fixture(scope="session")
def quad():
    return dg.sphere_quadrature(8, 16)


@pytest.fixture(scope="session")
def mesh5():
    return make_mesh(5)


@pytest.fixture(scope="session")
def kernel5(mesh5, model, quad):
    """Default-truncation non-split kernel on the M=5 mesh."""
    return dg.precompute_kernel(mesh5, model, quad)


@pytest.fixture(scope="session")
def skernel5(kernel5):
    return dg.spectral_transform_kernel(kernel5)


@pytest.fixture(scope="session")
def mach155_field5(mesh5):
    return dg.sample_maxwellian_sum(mesh5, MACH155)


def random_tensor(mesh, rng, form="non-split"):
    """Random dense tensor with the kernel layout (for pure-math tests)."""
    M = mesh.cells_per_dim
    s3 = mesh.nodes_per_cell
    values = rng.normal(size=(s3, s3, s3, M**3, M**3))
    return dg.KernelTensor(form, values, np.inf, dg.InteractionModel(), 8, 16, mesh.spec)


def random_field(mesh, rng):
    shape = (mesh.nodes_per_cell,) + (mesh.cells_per_dim,) * 3
    return dg.DistributionField(mesh, rng.normal(size=shape))
