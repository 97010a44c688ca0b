import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfgmesh.field import (DensityField, DomainError, FluxField,
                           average_density, average_density_jacobian,
                           continuity_residual, inner_vt, normal_defect,
                           staggered_density, time_diff, time_diff_adjoint)
from mfgmesh.mesh import TriMesh, make_flat_grid

from conftest import random_tangent_flux, uniform_density


def test_time_diff_hand_values():
    P0 = np.array([1.0, 2.0])
    np.testing.assert_array_equal(time_diff(np.tile(P0, (3, 1)), P0), 0.0)
    np.testing.assert_array_equal(time_diff((2 * P0)[None], P0), P0[None])
    out = time_diff(np.vstack([P0, 3 * P0]), P0)
    np.testing.assert_array_equal(out, np.vstack([0 * P0, 4 * P0]))


def test_time_diff_adjoint_hand_values():
    psi = np.array([0.5, -1.0])
    n = 4
    out = time_diff_adjoint(np.tile(psi, (n, 1)))
    np.testing.assert_array_equal(out[:-1], 0.0)
    np.testing.assert_array_equal(out[-1], n * psi)
    np.testing.assert_array_equal(time_diff_adjoint(psi[None]), psi[None])


def test_time_diff_adjointness_small_mesh(rng):
    # 5 vertices, 3 triangles (a fan)
    v = [[0, 0, 0], [1, 0, 0], [1, 1, 0.2], [0, 1, 0], [-1, 0.5, 0.1]]
    m = TriMesh(v, [[0, 1, 2], [0, 2, 3], [0, 3, 4]])
    n = 4
    P = rng.standard_normal((n, 5))
    Psi = rng.standard_normal((n, 5))
    lhs = inner_vt(m, time_diff(P, np.zeros(5)), Psi)
    rhs = inner_vt(m, P, time_diff_adjoint(Psi))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_average_density_modes():
    tri = np.array([[0, 1, 2]])
    for mode in ("arithmetic", "geometric", "harmonic"):
        assert average_density(tri, np.full(3, 2.5), mode)[0] == pytest.approx(2.5)
    assert average_density(tri, [1, 2, 3])[0] == pytest.approx(2.0)
    assert average_density(tri, [1, 2, 4], "geometric")[0] == pytest.approx(2.0)
    assert average_density(tri, [1, 2, 4], "harmonic")[0] == pytest.approx(12 / 7)


def test_average_density_domain_and_mode_errors():
    tri = np.array([[0, 1, 2]])
    with pytest.raises(DomainError):
        average_density(tri, [1.0, 0.0, 2.0], "geometric")
    with pytest.raises(DomainError):
        average_density(tri, [1.0, -1.0, 2.0], "harmonic")
    with pytest.raises(ValueError):
        average_density(tri, [1.0, 1.0, 1.0], "median")


@pytest.mark.parametrize("mode", ["arithmetic", "geometric", "harmonic"])
def test_average_density_jacobian_fd(mode, rng):
    tri = np.array([[0, 1, 2], [1, 3, 2]])
    p = rng.uniform(0.5, 2.0, 4)
    jac = average_density_jacobian(tri, p, mode)
    h = 1e-6
    for j in range(2):
        for a in range(3):
            e = np.zeros(4)
            e[tri[j, a]] = h
            fd = (average_density(tri, p + e, mode)[j] - average_density(tri, p - e, mode)[j]) / (2 * h)
            assert jac[j, a] == pytest.approx(fd, rel=1e-7)


def test_staggered_density_hand_values():
    tri = np.array([[0, 1, 2]])
    P0 = np.ones(3)
    P = np.array([[2.0] * 3, [4.0] * 3])
    np.testing.assert_allclose(staggered_density(tri, P, P0), [[1.5], [3.0]])
    np.testing.assert_allclose(staggered_density(tri, P[:1], P0), [[1.5]])


def test_staggered_uniform(grid10):
    u = uniform_density(grid10)
    rho = staggered_density(grid10.triangles, np.tile(u, (3, 1)), u)
    np.testing.assert_allclose(rho, 1.0 / grid10.total_area)


def test_density_field_shapes():
    f = DensityField(np.ones((2, 3)), np.zeros(3))
    assert f.n == 2 and f.with_initial().shape == (3, 3)
    with pytest.raises(ValueError):
        DensityField(np.ones((2, 3)), np.zeros(4))
    with pytest.raises(ValueError):
        FluxField(np.ones((2, 3)))


def test_mass_of_field(grid10):
    u = uniform_density(grid10)
    np.testing.assert_allclose(DensityField(np.tile(u, (4, 1)), u).mass(grid10), 1.0)


def test_normal_defect(ico1, rng):
    M = random_tangent_flux(ico1, rng, 2)
    assert normal_defect(ico1, M) < 1e-12
    M = M + 0.1 * ico1.normals[None]
    assert normal_defect(ico1, M) > 1e-3
    assert normal_defect(ico1, np.zeros((1, ico1.n_triangles, 3))) == 0.0


def test_continuity_residual_of_static_uniform(grid10):
    u = uniform_density(grid10)
    r = continuity_residual(grid10, np.tile(u, (3, 1)), u, np.zeros((3, grid10.n_triangles, 3)))
    np.testing.assert_array_equal(r, 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(0.01, 100)))
def test_means_are_ordered(vals):
    tri = np.array([[0, 1, 2]])
    a = average_density(tri, vals)[0]
    g = average_density(tri, vals, "geometric")[0]
    h = average_density(tri, vals, "harmonic")[0]
    assert h <= g * (1 + 1e-12) and g <= a * (1 + 1e-12)
    assert vals.min() * (1 - 1e-12) <= h and a <= vals.max() * (1 + 1e-12)
