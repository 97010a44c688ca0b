"""Proximal gradient descent on the discrete objective.

Each iteration takes a gradient step and then projects onto the continuity
constraint ``D_t P + div M = 0`` (with ``P(., t_0) = P0``).  The projection
needs one solve with the space-time operator ``D_t D_t^* - div grad``,
factored once per ``(mesh, n)``.

Gradients are taken in the same weighted inner products used by the
projection (``<.,.>_{V,t}`` and ``<.,.>_{T,t}``), i.e. the partial
derivatives are rescaled by ``n / A_V`` and ``n / A_T``.
"""
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .cost import objective, objective_gradient
from .field import (DensityField, FluxField, continuity_residual, inner_tt,
                    inner_vt, normal_defect, time_diff, time_diff_adjoint)
from .mesh import divergence, gradient

logger = logging.getLogger(__name__)

# Flux must stay in the face planes to this relative tolerance.
TANGENCY_TOL = 1e-10


class SolverError(RuntimeError):
    """The iteration produced a non-finite objective or broke an invariant."""


def time_operator(n):
    """Matrix of ``D_t D_t^*`` on one vertex's ``n`` staggered values."""
    D = n * (sparse.eye(n) - sparse.eye(n, k=-1))          # D_t with zero initial slice
    Dstar = n * (sparse.eye(n) - sparse.eye(n, k=1))
    return (D @ Dstar).tocsr()


class ProjectionOperator:
    """Factorization of ``A = D_t D_t^* - div grad`` on ``(n, h)`` dual fields.

    The factored matrix is ``A`` left-multiplied by ``I_n (x) A_V``, i.e.
    ``T (x) A_V + I_n (x) S`` with ``S`` the stiffness matrix, which is
    symmetric positive definite.
    """

    def __init__(self, mesh, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.mesh = mesh
        self.n = int(n)
        T = time_operator(self.n)
        A_V = sparse.diags(mesh.vertex_area)
        self.matrix = (sparse.kron(T, A_V) + sparse.kron(sparse.eye(self.n), mesh.stiffness)).tocsc()
        try:
            self._lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"space-time factorization failed: {exc}") from exc
        self._lock = threading.Lock()

    @property
    def shape(self):
        return (self.n, self.mesh.n_vertices)

    def apply(self, Psi):
        """Forward operator ``D_t D_t^* Psi - div grad Psi``."""
        Psi = np.asarray(Psi, dtype=float)
        zero = np.zeros(self.mesh.n_vertices)
        return time_diff(time_diff_adjoint(Psi), zero) - divergence(self.mesh, gradient(self.mesh, Psi))

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != self.shape:
            raise ValueError(f"rhs has shape {rhs.shape}, expected {self.shape}")
        b = (rhs * self.mesh.vertex_area).ravel()
        with self._lock:
            x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("space-time solve returned non-finite values")
        return x.reshape(self.shape)


def build_projection(mesh, n):
    return ProjectionOperator(mesh, n)


def project(op, mesh, P_half, M_half, P0):
    """Weighted least-squares projection onto the continuity constraint.

    Returns ``(P, M)`` as arrays.
    """
    rhs = continuity_residual(mesh, P_half, P0, M_half)
    Psi = op.solve(rhs)
    return P_half - time_diff_adjoint(Psi), M_half + gradient(mesh, Psi)


def riesz_gradient(mesh, gP, gM):
    """Convert partial derivatives into gradients for the weighted inner products."""
    n = len(gP)
    return n * gP / mesh.vertex_area, n * gM / mesh.triangle_area[None, :, None]


def gradient_step(mesh, spec, P, M, eta):
    """``(P, M) - eta * grad Y``; returns arrays ``(P_half, M_half)``."""
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    gP, gM = riesz_gradient(mesh, *objective_gradient(mesh, spec, P, M))
    return P.values - eta * gP, np.asarray(M) - eta * gM


@dataclass(frozen=True)
class KKTResidual:
    eP: float
    eM: float
    eC: float

    @property
    def max(self):
        return max(self.eP, self.eM, self.eC)

    @property
    def min(self):
        return min(self.eP, self.eM, self.eC)

    def as_dict(self):
        return {"eP": self.eP, "eM": self.eM, "eC": self.eC, "max": self.max, "min": self.min}


def kkt_residual(mesh, spec, P, M, op=None):
    """Stationarity and feasibility defects of ``(P, M)``.

    ``Psi`` is the least-squares multiplier fitting the weighted gradient;
    ``E_P`` is the complementarity residual ``min(grad_P Y - D_t^* Psi, P)``,
    ``E_M = grad_M Y + grad Psi`` and ``E_c`` the continuity defect.
    """
    M = np.asarray(M, dtype=float)
    if op is None:
        op = build_projection(mesh, P.n)
    gP, gM = riesz_gradient(mesh, *objective_gradient(mesh, spec, P, M))
    zero = np.zeros(mesh.n_vertices)
    Psi = op.solve(time_diff(gP, zero) + divergence(mesh, gM))
    EP = np.minimum(gP - time_diff_adjoint(Psi), P.values)
    EM = gM + gradient(mesh, Psi)
    EC = continuity_residual(mesh, P.values, P.initial, M)
    return KKTResidual(
        eP=math.sqrt(max(inner_vt(mesh, EP, EP), 0.0)),
        eM=math.sqrt(max(inner_tt(mesh, EM, EM), 0.0)),
        eC=math.sqrt(max(inner_vt(mesh, EC, EC), 0.0)),
    )


@dataclass
class SolverOptions:
    iterations: int = 1000
    eta: float = 0.01
    line_search: bool = False
    tolerance: float | None = None
    kkt_every: int = 50
    log_every: int = 0
    deterministic: bool = True
    armijo: float = 1e-4
    max_halvings: int = 30

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.kkt_every < 1:
            raise ValueError("kkt_every must be >= 1")


@dataclass
class SolveReport:
    objective_trace: list
    costs: dict
    kkt_initial: dict
    kkt_final: dict
    min_density: float
    continuity_residual: float
    iterations: int
    converged: bool
    final_eta: float
    precompute_seconds: float
    iteration_seconds: float
    kkt_trace: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def without_timing(self):
        d = self.as_dict()
        d.pop("precompute_seconds")
        d.pop("iteration_seconds")
        return d


@dataclass
class SolveResult:
    P: DensityField
    M: FluxField
    report: SolveReport


def _checked_objective(mesh, spec, P, M, iteration):
    costs = objective(mesh, spec, P, M)
    for term in ("dynamic", "interaction", "terminal"):
        value = getattr(costs, term)
        if not math.isfinite(value):
            raise SolverError(f"{term} cost is {value} at iteration {iteration}")
    return costs


def pgd_solve(mesh, spec, P0, n, options=None, op=None, callback=None):
    """Run proximal gradient descent from ``P(., t_k) = P0``, ``M = 0``.

    Parameters
    ----------
    mesh : TriMesh
    spec : CostSpec
    P0 : array_like, shape (h,)
        Initial density with unit mass.
    n : int
        Number of time steps.
    options : SolverOptions, optional
    op : ProjectionOperator, optional
        Reuse a factorization built for the same mesh and ``n``.
    callback : callable, optional
        Called as ``callback(iteration, P, M, costs)`` after each iteration.

    Returns
    -------
    SolveResult
    """
    options = options or SolverOptions()
    options.validate()
    spec.validate(mesh)
    P0 = np.asarray(P0, dtype=float)
    mass0 = float(mesh.vertex_area @ P0)
    if P0.shape != (mesh.n_vertices,) or np.any(P0 < 0) or abs(mass0 - 1.0) > 1e-8:
        raise ValueError(f"P0 must be a nonnegative unit-mass density (mass {mass0:.12g})")

    t0 = time.perf_counter()
    if op is None:
        op = build_projection(mesh, n)
    elif op.n != n or op.mesh is not mesh:
        raise ValueError("projection operator was built for a different mesh or n")
    t_pre = time.perf_counter() - t0

    t0 = time.perf_counter()
    Pv, Mv = project(op, mesh, np.tile(P0, (n, 1)), np.zeros((n, mesh.n_triangles, 3)), P0)
    P = DensityField(Pv, P0)
    costs = _checked_objective(mesh, spec, P, Mv, 0)
    trace = [costs.total]
    kkt0 = kkt_residual(mesh, spec, P, Mv, op)
    kkt_trace = [(0, kkt0.as_dict())]
    min_density = P.min_entry
    eta = options.eta
    converged = options.tolerance is not None and kkt0.max <= options.tolerance
    done = 0

    if not converged:
        for it in range(1, options.iterations + 1):
            gP, gM = riesz_gradient(mesh, *objective_gradient(mesh, spec, P, Mv))
            for _ in range(options.max_halvings + 1):
                Pn, Mn = project(op, mesh, P.values - eta * gP, Mv - eta * gM, P0)
                cand = DensityField(Pn, P0)
                new_costs = _checked_objective(mesh, spec, cand, Mn, it)
                if not options.line_search:
                    break
                decrease = inner_vt(mesh, gP, Pn - P.values) + inner_tt(mesh, gM, Mn - Mv)
                if new_costs.total <= costs.total + options.armijo * decrease:
                    break
                eta *= 0.5
            else:
                raise SolverError(f"line search failed at iteration {it} (eta {eta:.3e})")

            defect = normal_defect(mesh, Mn)
            if defect > TANGENCY_TOL:
                raise SolverError(f"flux left the face planes at iteration {it} (defect {defect:.2e})")
            P, Mv, costs = cand, Mn, new_costs
            trace.append(costs.total)
            min_density = min(min_density, P.min_entry)
            done = it
            if callback is not None:
                callback(it, P, Mv, costs)
            if options.log_every and it % options.log_every == 0:
                logger.info("iter %d  objective %.8g  (dyn %.6g, int %.6g, term %.6g)",
                            it, costs.total, costs.dynamic, costs.interaction, costs.terminal)
            if options.tolerance is not None and it % options.kkt_every == 0:
                kkt = kkt_residual(mesh, spec, P, Mv, op)
                kkt_trace.append((it, kkt.as_dict()))
                if kkt.max <= options.tolerance:
                    converged = True
                    break

    kkt = kkt_residual(mesh, spec, P, Mv, op)
    if not kkt_trace or kkt_trace[-1][0] != done:
        kkt_trace.append((done, kkt.as_dict()))
    t_iter = time.perf_counter() - t0
    if options.tolerance is not None and kkt.max <= options.tolerance:
        converged = True

    residual = continuity_residual(mesh, P.values, P0, Mv)
    report = SolveReport(
        objective_trace=[float(x) for x in trace],
        costs=costs.as_dict(),
        kkt_initial=kkt0.as_dict(),
        kkt_final=kkt.as_dict(),
        min_density=float(min_density),
        continuity_residual=math.sqrt(max(inner_vt(mesh, residual, residual), 0.0)),
        iterations=done,
        converged=bool(converged),
        final_eta=float(eta),
        precompute_seconds=t_pre,
        iteration_seconds=t_iter,
        kkt_trace=[[i, d] for i, d in kkt_trace],
    )
    return SolveResult(P=P, M=FluxField(Mv), report=report)
