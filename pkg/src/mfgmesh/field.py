"""Space-time fields on a mesh and the time-difference / averaging operators.

Layout is slice-major throughout:

* density ``P`` has shape ``(n, h)``; row ``k - 1`` holds ``P(., t_k)`` for
  ``k = 1..n`` and the fixed initial slice ``P0`` is kept separately;
* flux ``M`` has shape ``(n, s, 3)``; row ``k - 1`` is ``M(., t_{k-1/2})``;
* dual variables ``Psi`` have shape ``(n, h)`` on the staggered steps.
"""
from dataclasses import dataclass

import numpy as np

from .mesh import divergence, inner_triangle, inner_vertex

# Lower bound applied to the staggered density inside cost evaluation.
RHO_FLOOR = 1e-8

AVERAGING_MODES = ("arithmetic", "geometric", "harmonic")


class DomainError(ValueError):
    """A cost or averaging rule was evaluated outside its domain."""


@dataclass
class DensityField:
    values: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.initial.shape[0]:
            raise ValueError(
                f"density of shape {self.values.shape} does not match P0 of length {len(self.initial)}")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def min_entry(self):
        return float(self.values.min())

    def with_initial(self):
        """All ``n + 1`` slices ``P(., t_0) .. P(., t_n)``."""
        return np.vstack([self.initial, self.values])

    def mass(self, mesh):
        return self.values @ mesh.vertex_area


@dataclass
class FluxField:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("flux must have shape (n, s, 3)")

    @property
    def n(self):
        return self.values.shape[0]


@dataclass
class DualField:
    values: np.ndarray

    @property
    def n(self):
        return self.values.shape[0]


def normal_defect(mesh, M):
    """Largest normal component of ``M`` relative to its face magnitude."""
    M = np.asarray(M)
    normal = np.abs(np.einsum("...sd,sd->...s", M, mesh.normals))
    size = np.linalg.norm(M, axis=-1)
    scale = max(float(size.max(initial=0.0)), 1e-300)
    return float(normal.max(initial=0.0) / scale)


def time_diff(P, P0):
    """Forward difference ``n (P(t_k) - P(t_{k-1}))`` on staggered steps."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    prev = np.concatenate([np.asarray(P0, dtype=float)[None], P[:-1]])
    return n * (P - prev)


def time_diff_adjoint(Psi):
    """Adjoint of :func:`time_diff` (with zero initial slice) under the 1/n-weighted products.

    Slice ``k`` is ``n (Psi_{k-1/2} - Psi_{k+1/2})`` with ``Psi_{n+1/2} = 0``.
    """
    Psi = np.asarray(Psi, dtype=float)
    n = Psi.shape[0]
    nxt = np.concatenate([Psi[1:], np.zeros_like(Psi[:1])])
    return n * (Psi - nxt)


def inner_vt(mesh, a, b):
    """``<a, b>_{V,t} = (1/n) sum_k <a_k, b_k>_V``."""
    return float(np.sum(inner_vertex(mesh, a, b))) / len(a)


def inner_tt(mesh, u, w):
    """``<u, w>_{T,t} = (1/n) sum_k <u_k, w_k>_T``."""
    return float(np.sum(inner_triangle(mesh, u, w))) / len(u)


def _check_mode(mode):
    if mode not in AVERAGING_MODES:
        raise ValueError(f"unknown averaging mode {mode!r}; expected one of {AVERAGING_MODES}")


def average_density(triangles, P_slice, mode="arithmetic"):
    """Triangle densities from vertex densities (the averaging map ``W``).

    ``P_slice`` has shape ``(..., h)``; the result has shape ``(..., s)``.
    """
    _check_mode(mode)
    vals = np.asarray(P_slice, dtype=float)[..., triangles]      # (..., s, 3)
    if mode == "arithmetic":
        return vals.mean(axis=-1)
    if np.any(~(vals > 0)):
        raise DomainError(f"{mode} averaging requires strictly positive densities")
    if mode == "geometric":
        return np.cbrt(np.prod(vals, axis=-1))
    return 3.0 / np.sum(1.0 / vals, axis=-1)


def average_density_jacobian(triangles, P_slice, mode="arithmetic"):
    """Partial derivatives of :func:`average_density` w.r.t. each face's vertices.

    Returns ``(..., s, 3)``.
    """
    _check_mode(mode)
    vals = np.asarray(P_slice, dtype=float)[..., triangles]
    if mode == "arithmetic":
        return np.full(vals.shape, 1.0 / 3.0)
    w = average_density(triangles, P_slice, mode)[..., None]
    if mode == "geometric":
        return w / (3.0 * vals)
    return w ** 2 / (3.0 * vals ** 2)


def staggered_density(triangles, P, P0, mode="arithmetic"):
    """``rho_bar(t_{k-1/2}) = (W(P_k) + W(P_{k-1})) / 2`` for ``k = 1..n``; shape ``(n, s)``."""
    full = np.vstack([np.asarray(P0, dtype=float)[None], np.asarray(P, dtype=float)])
    W = average_density(triangles, full, mode)
    return 0.5 * (W[1:] + W[:-1])


def continuity_residual(mesh, P, P0, M):
    """``D_t P + div M`` on every staggered step, shape ``(n, h)``."""
    return time_diff(P, P0) + divergence(mesh, M)
