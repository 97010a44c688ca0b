import threading
from dataclasses import dataclass

import numpy as np
import pytest

from mfgmesh.cost import (CostSpec, Entropy, KLTerminal, QuadraticTerminal,
                          Vanilla)
from mfgmesh.field import (DensityField, continuity_residual, inner_tt,
                           inner_vt, normal_defect)
from mfgmesh.mesh import make_flat_grid, make_icosphere
from mfgmesh.solver import (KKTResidual, SolveReport, SolverError,
                            SolverOptions, build_projection, gradient_step,
                            kkt_residual, pgd_solve, project, time_operator)

from conftest import random_density, random_tangent_flux, uniform_density


def bump(mesh, center, sigma):
    d = np.linalg.norm(mesh.vertices - np.asarray(center), axis=1)
    p = 0.5 / mesh.total_area + np.exp(-(d / sigma) ** 2)
    return p / (mesh.vertex_area @ p)


def time_system(n):
    """D_t D_t^* written out entry by entry for one spatial constant."""
    A = np.zeros((n, n))
    for k in range(n):
        for j in range(n):
            # (D* e_j)_m = n (delta_{m j} - delta_{m+1, j})
            Ds = np.array([n * ((m == j) - (m + 1 == j)) for m in range(n)], dtype=float)
            prev = Ds[k - 1] if k > 0 else 0.0
            A[k, j] = n * (Ds[k] - prev)
    return A


def norm_sq(mesh, P, M):
    return inner_vt(mesh, P, P) + inner_tt(mesh, M, M)


# -- projection operator -----------------------------------------------------

def test_time_operator_matches_hand_assembly():
    for n in (1, 2, 5):
        np.testing.assert_allclose(time_operator(n).toarray(), time_system(n))


def test_zero_rhs_gives_zero(ico1):
    op = build_projection(ico1, 1)
    assert np.all(op.solve(np.zeros((1, ico1.n_vertices))) == 0)


def test_round_trip(ico1, rng):
    op = build_projection(ico1, 3)
    Psi = rng.standard_normal((3, ico1.n_vertices))
    back = op.solve(op.apply(Psi))
    assert np.linalg.norm(back - Psi) <= 1e-10 * np.linalg.norm(Psi)


def test_random_solve_residual(ico2, rng):
    op = build_projection(ico2, 4)
    b = rng.standard_normal((4, ico2.n_vertices))
    x = op.solve(b)
    assert np.linalg.norm(op.apply(x) - b) <= 1e-10 * np.linalg.norm(b)


def test_spatially_constant_rhs_decouples(ico1, rng):
    n = 5
    c = rng.standard_normal(n)
    op = build_projection(ico1, n)
    Psi = op.solve(np.outer(c, np.ones(ico1.n_vertices)))
    np.testing.assert_allclose(Psi, Psi[:, :1] * np.ones(ico1.n_vertices), atol=1e-10)
    np.testing.assert_allclose(Psi[:, 0], np.linalg.solve(time_system(n), c), rtol=1e-10)


def test_matrix_symmetric(ico1):
    A = build_projection(ico1, 3).matrix
    assert abs(A - A.T).max() < 1e-12


def test_solve_shape_check(ico1):
    op = build_projection(ico1, 2)
    with pytest.raises(ValueError):
        op.solve(np.zeros((3, ico1.n_vertices)))
    with pytest.raises(ValueError):
        build_projection(ico1, 0)


def test_concurrent_solves_agree(ico2, rng):
    op = build_projection(ico2, 3)
    rhs = [rng.standard_normal((3, ico2.n_vertices)) for _ in range(8)]
    serial = [op.solve(b) for b in rhs]
    out = [None] * 8

    def work(i):
        out[i] = op.solve(rhs[i])

    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for a, b in zip(serial, out):
        np.testing.assert_array_equal(a, b)


# -- projection --------------------------------------------------------------

@pytest.fixture
def infeasible(ico2, rng):
    n = 4
    P0 = random_density(ico2, rng)
    P = rng.uniform(0.0, 0.2, (n, ico2.n_vertices))
    M = random_tangent_flux(ico2, rng, n, 0.3)
    return ico2, n, P0, P, M


def test_project_is_feasible_and_idempotent(infeasible):
    mesh, n, P0, P, M = infeasible
    op = build_projection(mesh, n)
    Pp, Mp = project(op, mesh, P, M, P0)
    r = continuity_residual(mesh, Pp, P0, Mp)
    assert np.sqrt(inner_vt(mesh, r, r)) <= 1e-8
    np.testing.assert_allclose(Pp @ mesh.vertex_area, 1.0, atol=1e-8)
    P2, M2 = project(op, mesh, Pp, Mp, P0)
    assert np.abs(P2 - Pp).max() <= 1e-10 and np.abs(M2 - Mp).max() <= 1e-10
    assert normal_defect(mesh, Mp) < 1e-10


def test_uniform_static_is_fixed(grid10):
    u = uniform_density(grid10)
    op = build_projection(grid10, 3)
    P, M = np.tile(u, (3, 1)), np.zeros((3, grid10.n_triangles, 3))
    Pp, Mp = project(op, grid10, P, M, u)
    assert np.abs(Pp - P).max() <= 1e-10 and np.abs(Mp).max() <= 1e-10


def test_projection_optimality(infeasible, rng):
    mesh, n, P0, P, M = infeasible
    op = build_projection(mesh, n)
    Pp, Mp = project(op, mesh, P, M, P0)
    Pz, Mz = project(op, mesh, np.zeros_like(P), np.zeros_like(M), P0)
    best = norm_sq(mesh, P - Pp, M - Mp)
    for _ in range(100):
        Pr, Mr = project(op, mesh, rng.standard_normal(P.shape),
                         rng.standard_normal(M.shape), P0)
        # difference of two feasible points is a feasible direction
        dP, dM = Pr - Pz, Mr - Mz
        t = rng.uniform(0.01, 1.0)
        assert best < norm_sq(mesh, P - (Pp + t * dP), M - (Mp + t * dM))


# -- gradient step and KKT ---------------------------------------------------

def test_gradient_step_identities(grid10, rng):
    u = uniform_density(grid10)
    spec = CostSpec(QuadraticTerminal(1.0, u))
    P = DensityField(np.tile(u, (2, 1)), u)
    M = np.zeros((2, grid10.n_triangles, 3))
    Ph, Mh = gradient_step(grid10, spec, P, M, 0.3)   # zero gradient here
    np.testing.assert_array_equal(Ph, P.values)
    np.testing.assert_array_equal(Mh, M)
    P = DensityField(np.stack([random_density(grid10, rng)] * 2), u)
    M = random_tangent_flux(grid10, rng, 2)
    Ph, Mh = gradient_step(grid10, spec, P, M, 0.0)
    np.testing.assert_array_equal(Ph, P.values)
    np.testing.assert_array_equal(Mh, M)
    with pytest.raises(ValueError):
        gradient_step(grid10, spec, P, M, -1.0)


def test_gradient_step_single_triangle(unit_triangle):
    # dY/dM = (0.5, 0, 0); weighted by n / A_T = 2 gives (1, 0, 0)
    P0 = np.ones(3)
    P = DensityField(np.ones((1, 3)), P0)
    M = np.array([[[1.0, 0.0, 0.0]]])
    spec = CostSpec(QuadraticTerminal(0.0, np.full(3, 2.0)))
    _, Mh = gradient_step(unit_triangle, spec, P, M, 0.1)
    np.testing.assert_allclose(Mh, [[[0.9, 0.0, 0.0]]])


def test_kkt_stationary_point(ico1):
    u = uniform_density(ico1)
    spec = CostSpec(QuadraticTerminal(5.0, u))
    P = DensityField(np.tile(u, (3, 1)), u)
    k = kkt_residual(ico1, spec, P, np.zeros((3, ico1.n_triangles, 3)))
    assert max(k.eP, k.eM, k.eC) <= 1e-8


def test_kkt_after_projection_has_no_continuity_defect(infeasible):
    mesh, n, P0, P, M = infeasible
    op = build_projection(mesh, n)
    Pp, Mp = project(op, mesh, P, M, P0)
    spec = CostSpec(KLTerminal(0.5, P0), Entropy(0.1))
    k = kkt_residual(mesh, spec, DensityField(Pp, P0), Mp, op)
    assert k.eC <= 1e-8 and k.eP >= 0 and k.eM > 0
    assert k.max == max(k.eP, k.eM, k.eC) and k.min == min(k.eP, k.eM, k.eC)


def test_kkt_residual_dataclass():
    k = KKTResidual(0.1, 0.3, 0.0)
    assert k.as_dict() == {"eP": 0.1, "eM": 0.3, "eC": 0.0, "max": 0.3, "min": 0.0}


# -- solver ------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_problem():
    mesh = make_icosphere(1)
    P0 = bump(mesh, [0, 0, 1], 0.6)
    P1 = bump(mesh, [1, 0, 0], 0.6)
    return mesh, P0, P1


def test_stationary_scenario_stops_at_zero(small_problem):
    mesh, P0, _ = small_problem
    spec = CostSpec(QuadraticTerminal(10.0, P0))
    res = pgd_solve(mesh, spec, P0, 4, SolverOptions(iterations=50, tolerance=1e-8))
    assert res.report.iterations == 0 and res.report.converged
    assert res.report.objective_trace[-1] <= 1e-12
    assert res.report.kkt_final["max"] <= 1e-8


def test_solver_decreases_kkt_and_stays_feasible(small_problem):
    mesh, P0, P1 = small_problem
    n = 4
    spec = CostSpec(KLTerminal(1.0, P1))
    worst = []

    def track(it, P, M, costs):
        r = continuity_residual(mesh, P.values, P0, M)
        worst.append(np.sqrt(inner_vt(mesh, r, r)))
        np.testing.assert_allclose(P.mass(mesh), 1.0, atol=1e-8)

    res = pgd_solve(mesh, spec, P0, n, SolverOptions(iterations=300, eta=0.005), callback=track)
    rep = res.report
    assert len(worst) == 300 and max(worst) <= 1e-8
    assert rep.kkt_final["max"] <= 0.1 * rep.kkt_initial["max"]
    assert rep.objective_trace[-1] < rep.objective_trace[0]
    assert rep.costs["total"] == pytest.approx(
        rep.costs["dynamic"] + rep.costs["interaction"] + rep.costs["terminal"], rel=1e-10)
    assert normal_defect(mesh, res.M.values) < 1e-10


def test_line_search_monotone(small_problem):
    mesh, P0, P1 = small_problem
    spec = CostSpec(QuadraticTerminal(5.0, P1), Entropy(0.05))
    res = pgd_solve(mesh, spec, P0, 4, SolverOptions(iterations=60, eta=1.0, line_search=True))
    trace = res.report.objective_trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert res.report.final_eta < 1.0


def test_determinism(small_problem):
    mesh, P0, P1 = small_problem
    spec = CostSpec(KLTerminal(1.0, P1))
    opts = SolverOptions(iterations=40, eta=0.02, deterministic=True)
    a = pgd_solve(mesh, spec, P0, 3, opts)
    b = pgd_solve(mesh, spec, P0, 3, opts)
    assert a.report.without_timing() == b.report.without_timing()
    np.testing.assert_array_equal(a.P.values, b.P.values)
    np.testing.assert_array_equal(a.M.values, b.M.values)


def test_report_round_trip(small_problem):
    mesh, P0, P1 = small_problem
    res = pgd_solve(mesh, CostSpec(KLTerminal(1.0, P1)), P0, 2, SolverOptions(iterations=3))
    again = SolveReport.from_dict(res.report.as_dict())
    assert again == res.report


@dataclass(frozen=True)
class _Broken:
    name = "broken"

    def value(self, mesh, p):
        return float("nan")

    def gradient(self, mesh, p):
        return np.zeros_like(p)


def test_non_finite_objective_names_term(small_problem):
    mesh, P0, P1 = small_problem
    spec = CostSpec(QuadraticTerminal(1.0, P1), _Broken())
    with pytest.raises(SolverError, match="interaction cost is nan at iteration 0"):
        pgd_solve(mesh, spec, P0, 3, SolverOptions(iterations=2))


def test_solver_argument_checks(small_problem):
    mesh, P0, P1 = small_problem
    spec = CostSpec(QuadraticTerminal(1.0, P1))
    with pytest.raises(ValueError):
        pgd_solve(mesh, spec, 2 * P0, 2)
    with pytest.raises(ValueError):
        pgd_solve(mesh, spec, P0, 2, SolverOptions(eta=0.0))
    with pytest.raises(ValueError):
        pgd_solve(mesh, spec, P0, 2, SolverOptions(iterations=0))
    with pytest.raises(ValueError):
        pgd_solve(mesh, spec, P0, 2, op=build_projection(mesh, 3))


def test_reused_operator_matches_fresh(small_problem):
    mesh, P0, P1 = small_problem
    spec = CostSpec(KLTerminal(1.0, P1))
    op = build_projection(mesh, 3)
    a = pgd_solve(mesh, spec, P0, 3, SolverOptions(iterations=10), op=op)
    b = pgd_solve(mesh, spec, P0, 3, SolverOptions(iterations=10))
    np.testing.assert_allclose(a.P.values, b.P.values, rtol=1e-12, atol=1e-14)


def test_flat_grid_is_also_supported():
    mesh = make_flat_grid(8, 8)
    P0 = bump(mesh, [0.3, 0.5, 0], 0.2)
    P1 = bump(mesh, [0.7, 0.5, 0], 0.2)
    res = pgd_solve(mesh, CostSpec(QuadraticTerminal(1.0, P1), Vanilla()), P0, 4,
                    SolverOptions(iterations=200, eta=0.005))
    assert res.report.kkt_final["max"] < res.report.kkt_initial["max"]
