"""Discrete objective: quadratic dynamic cost, running interaction, terminal cost.

For density ``P`` (central steps ``t_1..t_n``) and flux ``M`` (staggered
steps) the objective is::

    dynamic     = 1/n sum_{k=1..n} sum_j A_Tj |M_jk|^2 / (2 rho_bar_jk)
    interaction = 1/n sum_{k=1..n-1} F(P(., t_k))
    terminal    = F_T(P(., t_n))

Gradients returned by :func:`objective_gradient` are plain partial
derivatives with respect to the array entries.
"""
from dataclasses import dataclass, field

import numpy as np

from .field import (AVERAGING_MODES, RHO_FLOOR, DensityField, DomainError,
                    average_density_jacobian, staggered_density)
from .mesh import Kernel


def _check_weight(weight):
    if not weight >= 0:
        raise ValueError(f"cost weight must be >= 0, got {weight}")


def _check_indicator(indicator):
    b = np.asarray(indicator, dtype=float)
    if b.ndim != 1 or np.any(b < 0) or np.any(b > 1):
        raise ValueError("indicator values must lie in [0, 1]")
    b.setflags(write=False)
    return b


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


# -- interaction costs -------------------------------------------------------

@dataclass(frozen=True)
class Vanilla:
    name = "vanilla"

    def value(self, mesh, p):
        return 0.0

    def gradient(self, mesh, p):
        return np.zeros_like(p)


@dataclass(frozen=True)
class Obstacle:
    """``weight * sum_i A_Vi P_i B_i``."""

    weight: float
    indicator: np.ndarray
    name = "obstacle"

    def __post_init__(self):
        _check_weight(self.weight)
        object.__setattr__(self, "indicator", _check_indicator(self.indicator))

    def value(self, mesh, p):
        return self.weight * float(np.dot(mesh.vertex_area * self.indicator, p))

    def gradient(self, mesh, p):
        return np.broadcast_to(self.weight * mesh.vertex_area * self.indicator, p.shape).copy()


@dataclass(frozen=True)
class Entropy:
    """``weight * sum_i A_Vi P_i log P_i`` with ``0 log 0 = 0``."""

    weight: float
    name = "entropy"

    def __post_init__(self):
        _check_weight(self.weight)

    def value(self, mesh, p):
        return self.weight * float(np.dot(mesh.vertex_area, _xlogx(p)))

    def gradient(self, mesh, p):
        return self.weight * mesh.vertex_area * (np.log(np.maximum(p, RHO_FLOOR)) + 1.0)


@dataclass(frozen=True)
class Congestion:
    """``weight * sum_i A_Vi sqrt(P_i + eps)``."""

    weight: float
    eps: float = 1e-4
    name = "congestion"

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.eps > 0:
            raise ValueError("congestion eps must be positive")

    def value(self, mesh, p):
        return self.weight * float(np.dot(mesh.vertex_area, np.sqrt(np.maximum(p + self.eps, 0.0))))

    def gradient(self, mesh, p):
        root = np.sqrt(np.maximum(p + self.eps, RHO_FLOOR))
        return self.weight * mesh.vertex_area / (2.0 * root)


@dataclass(frozen=True)
class Nonlocal:
    """``weight / 2 * P^T A_V K A_V P`` for a dense symmetric kernel ``K``."""

    weight: float
    kernel: Kernel
    name = "nonlocal"

    def __post_init__(self):
        _check_weight(self.weight)
        if not isinstance(self.kernel, Kernel):
            object.__setattr__(self, "kernel", Kernel(self.kernel))

    def _apply(self, mesh, p):
        q = mesh.vertex_area * p
        return mesh.vertex_area * (q @ self.kernel.matrix)

    def value(self, mesh, p):
        return 0.5 * self.weight * float(np.dot(p, self._apply(mesh, p)))

    def gradient(self, mesh, p):
        return self.weight * self._apply(mesh, p)


@dataclass(frozen=True)
class Dirichlet:
    """Nonlocal cost with the Laplacian kernel: ``weight / 2 * sum_j A_Tj |grad P|^2``.

    Evaluated through the sparse stiffness matrix, which equals
    ``A_V K A_V`` for the Laplacian kernel.
    """

    weight: float
    name = "dirichlet"

    def __post_init__(self):
        _check_weight(self.weight)

    def value(self, mesh, p):
        return 0.5 * self.weight * float(np.dot(p, mesh.stiffness @ p))

    def gradient(self, mesh, p):
        return self.weight * (mesh.stiffness @ p)


# -- terminal costs ----------------------------------------------------------

@dataclass(frozen=True)
class QuadraticTerminal:
    """``weight * sum_i A_Vi (P_i - P1_i)^2``."""

    weight: float
    target: np.ndarray
    name = "quadratic"

    def __post_init__(self):
        _check_weight(self.weight)
        t = np.asarray(self.target, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "target", t)

    def value(self, mesh, p):
        d = p - self.target
        return self.weight * float(np.dot(mesh.vertex_area, d * d))

    def gradient(self, mesh, p):
        return 2.0 * self.weight * mesh.vertex_area * (p - self.target)


@dataclass(frozen=True)
class KLTerminal:
    """``weight * sum_i A_Vi P_i log(P_i / P1_i)``.

    ``P1`` must be positive wherever ``P`` exceeds the density floor.
    """

    weight: float
    target: np.ndarray
    name = "kl"

    def __post_init__(self):
        _check_weight(self.weight)
        t = np.asarray(self.target, dtype=float)
        if np.any(t < 0):
            raise ValueError("KL target must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "target", t)

    def _check_support(self, p):
        bad = np.flatnonzero((self.target <= 0) & (p > RHO_FLOOR))
        if bad.size:
            raise DomainError(
                f"KL terminal: target vanishes at vertex {bad[0]} where density is {p[bad[0]]:.3e}")

    def value(self, mesh, p):
        self._check_support(p)
        pos = p > 0
        terms = np.zeros_like(p)
        terms[pos] = p[pos] * (np.log(p[pos]) - np.log(self.target[pos]))
        return self.weight * float(np.dot(mesh.vertex_area, terms))

    def gradient(self, mesh, p):
        self._check_support(p)
        ratio = np.maximum(p, RHO_FLOOR) / np.maximum(self.target, RHO_FLOOR)
        return self.weight * mesh.vertex_area * (np.log(ratio) + 1.0)


@dataclass(frozen=True)
class ObstacleTerminal:
    """``weight * sum_i A_Vi P_i B_T,i``."""

    weight: float
    indicator: np.ndarray
    name = "obstacle_region"

    def __post_init__(self):
        _check_weight(self.weight)
        object.__setattr__(self, "indicator", _check_indicator(self.indicator))

    def value(self, mesh, p):
        return self.weight * float(np.dot(mesh.vertex_area * self.indicator, p))

    def gradient(self, mesh, p):
        return self.weight * mesh.vertex_area * self.indicator


INTERACTIONS = {c.name: c for c in (Vanilla, Obstacle, Entropy, Congestion, Nonlocal, Dirichlet)}
TERMINALS = {c.name: c for c in (QuadraticTerminal, KLTerminal, ObstacleTerminal)}


@dataclass(frozen=True)
class CostSpec:
    terminal: object
    interaction: object = field(default_factory=Vanilla)
    averaging: str = "arithmetic"

    def __post_init__(self):
        if self.averaging not in AVERAGING_MODES:
            raise ValueError(f"unknown averaging mode {self.averaging!r}")

    def validate(self, mesh, atol=1e-8):
        """Check per-vertex arrays against ``mesh``; raises ``ValueError``."""
        h = mesh.n_vertices
        for part in (self.interaction, self.terminal):
            for attr in ("indicator", "target"):
                arr = getattr(part, attr, None)
                if arr is not None and arr.shape != (h,):
                    raise ValueError(f"{part.name}.{attr} has length {len(arr)}, mesh has {h} vertices")
            if isinstance(part, Nonlocal) and part.kernel.size != h:
                raise ValueError(f"kernel size {part.kernel.size} does not match {h} vertices")
        target = getattr(self.terminal, "target", None)
        if target is not None:
            if np.any(target < 0):
                raise ValueError("terminal target density must be nonnegative")
            mass = float(mesh.vertex_area @ target)
            if abs(mass - 1.0) > atol:
                raise ValueError(f"terminal target density has mass {mass:.12g}, expected 1")


@dataclass(frozen=True)
class CostBreakdown:
    dynamic: float
    interaction: float
    terminal: float

    @property
    def total(self):
        return self.dynamic + self.interaction + self.terminal

    def as_dict(self):
        return {"total": self.total, "dynamic": self.dynamic,
                "interaction": self.interaction, "terminal": self.terminal}


def _unpack(P):
    if isinstance(P, DensityField):
        return P.values, P.initial
    raise TypeError("P must be a DensityField")


def dynamic_value(mesh, P, M, averaging="arithmetic"):
    values, P0 = _unpack(P)
    M = np.asarray(M, dtype=float)
    n = len(values)
    rho = np.maximum(staggered_density(mesh.triangles, values, P0, averaging), RHO_FLOOR)
    sq = np.einsum("ksd,ksd->ks", M, M)
    return float(np.sum(mesh.triangle_area * sq / (2.0 * rho))) / n


def interaction_value(mesh, spec, P_slice):
    return float(spec.interaction.value(mesh, np.asarray(P_slice, dtype=float)))


def terminal_value(mesh, spec, P_last):
    return float(spec.terminal.value(mesh, np.asarray(P_last, dtype=float)))


def running_interaction(mesh, interaction, values):
    """``1/n sum_{k=1..n-1} F(P(., t_k))``."""
    n = len(values)
    return sum(interaction.value(mesh, values[k]) for k in range(n - 1)) / n


def objective(mesh, spec, P, M):
    """Evaluate the objective; returns a :class:`CostBreakdown`."""
    values, _ = _unpack(P)
    return CostBreakdown(
        dynamic=dynamic_value(mesh, P, M, spec.averaging),
        interaction=float(running_interaction(mesh, spec.interaction, values)),
        terminal=terminal_value(mesh, spec, values[-1]),
    )


def objective_gradient(mesh, spec, P, M):
    """Partial derivatives ``(dY/dP, dY/dM)`` with shapes ``(n, h)`` and ``(n, s, 3)``.

    The staggered density is floored at ``RHO_FLOOR`` and the floored value
    is used in both the flux and the density derivative.
    """
    values, P0 = _unpack(P)
    M = np.asarray(M, dtype=float)
    n, h = values.shape
    tri = mesh.triangles
    area_t = mesh.triangle_area

    full = np.vstack([P0[None], values])
    rho = np.maximum(staggered_density(tri, values, P0, spec.averaging), RHO_FLOOR)
    gM = M * (area_t / n)[None, :, None] / rho[..., None]

    sq = np.einsum("ksd,ksd->ks", M, M)
    d_rho = -(area_t / n) * sq / (2.0 * rho ** 2)          # (n, s)
    # slice m of the full stack feeds rho at staggered steps m and m + 1
    coef = np.zeros((n + 1, len(tri)))
    coef[1:] += 0.5 * d_rho
    coef[:-1] += 0.5 * d_rho
    jac = average_density_jacobian(tri, full[1:], spec.averaging)   # (n, s, 3)
    contrib = coef[1:, :, None] * jac
    gP = np.zeros((n, h))
    for k in range(n):
        gP[k] = np.bincount(tri.ravel(), weights=contrib[k].ravel(), minlength=h)

    for k in range(n - 1):
        gP[k] += spec.interaction.gradient(mesh, values[k]) / n
    gP[n - 1] += spec.terminal.gradient(mesh, values[n - 1])
    return gP, gM
