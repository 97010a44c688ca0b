import numpy as np
import pytest

from mfgmesh.cost import objective, objective_gradient
from mfgmesh.field import DensityField
from mfgmesh.mesh import TriMesh, gradient, make_flat_grid, make_icosphere

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ico1():
    return make_icosphere(1)


@pytest.fixture(scope="session")
def ico2():
    return make_icosphere(2)


@pytest.fixture(scope="session")
def grid10():
    return make_flat_grid(10, 10)


@pytest.fixture
def unit_triangle():
    return TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def uniform_density(mesh):
    return np.full(mesh.n_vertices, 1.0 / mesh.total_area)


def random_density(mesh, rng, low=0.5, high=1.5):
    p = rng.uniform(low, high, mesh.n_vertices)
    return p / (mesh.vertex_area @ p)


def random_tangent_flux(mesh, rng, n, scale=1.0):
    """Random tangent flux: face gradients of random potentials."""
    return scale * gradient(mesh, rng.standard_normal((n, mesh.n_vertices)))


def fd_check(mesh, spec, P, M, rng, count=25, h=1e-6):
    """Largest relative error between analytic partials and central differences."""
    gP, gM = objective_gradient(mesh, spec, P, M)

    def Y(values, flux):
        return objective(mesh, spec, DensityField(values, P.initial), flux).total

    worst = 0.0
    scale = max(np.abs(gP).max(), np.abs(gM).max())
    for _ in range(count):
        k, i = rng.integers(P.n), rng.integers(mesh.n_vertices)
        e = np.zeros_like(P.values)
        e[k, i] = h
        fd = (Y(P.values + e, M) - Y(P.values - e, M)) / (2 * h)
        worst = max(worst, abs(fd - gP[k, i]) / max(abs(gP[k, i]), 1e-3 * scale))
        k, j, d = rng.integers(P.n), rng.integers(mesh.n_triangles), rng.integers(3)
        e = np.zeros_like(M)
        e[k, j, d] = h
        fd = (Y(P.values, M + e) - Y(P.values, M - e)) / (2 * h)
        worst = max(worst, abs(fd - gM[k, j, d]) / max(abs(gM[k, j, d]), 1e-3 * scale))
    # directional derivative along a random direction
    dP = rng.standard_normal(P.values.shape)
    dM = random_tangent_flux(mesh, rng, P.n)
    t = 1e-6
    fd = (Y(P.values + t * dP, M + t * dM) - Y(P.values - t * dP, M - t * dM)) / (2 * t)
    an = np.sum(gP * dP) + np.sum(gM * dM)
    worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return worst
