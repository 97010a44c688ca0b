"""Triangle meshes, discrete differential operators and interaction kernels.

Functions on a mesh are piecewise linear and stored by their vertex values
(arrays whose last axis has length ``h``).  Vector fields are piecewise
constant per triangle and stored as ``(..., s, 3)`` arrays of embedded
3-vectors lying in each triangle's plane.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)

# Faces whose area falls below this fraction of their longest squared edge
# are treated as degenerate.
DEGENERATE_RTOL = 1e-12


class MeshError(ValueError):
    """Raised for malformed or degenerate mesh input."""


class DegenerateTriangleError(MeshError):
    def __init__(self, face, area):
        self.face = int(face)
        self.area = float(area)
        super().__init__(f"triangle {self.face} is degenerate (area {self.area:.3e})")


class TriMesh:
    """Triangulated surface embedded in 3-space.

    Parameters
    ----------
    vertices : array_like, shape (h, 3)
        Vertex coordinates.  2D input is padded with ``z = 0``.
    triangles : array_like, shape (s, 3)
        Vertex indices of each face, consistently oriented.

    Attributes
    ----------
    triangle_area : ndarray, shape (s,)
    vertex_area : ndarray, shape (h,)
        Barycentric dual-cell areas, one third of the incident face areas.
    grad_rows : ndarray, shape (s, 3, 3)
        ``grad_rows[j, d, a]`` is the weight of local vertex ``a`` of face
        ``j`` in component ``d`` of that face's gradient.
    """

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=float)
        t = np.asarray(triangles)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (h, 2) or (h, 3)")
        if v.shape[1] == 2:
            v = np.column_stack([v, np.zeros(len(v))])
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (s, 3)")
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(np.equal(np.mod(t, 1), 0)):
                raise MeshError("triangle indices must be integers")
        t = t.astype(np.int64)
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError(f"triangle index out of range [0, {len(v)})")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")

        self.vertices = v
        self.triangles = t
        self._build_geometry()
        for arr in (self.vertices, self.triangles, self.triangle_area,
                    self.vertex_area, self.grad_rows, self.normals):
            arr.setflags(write=False)

    def _build_geometry(self):
        v, t = self.vertices, self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        cross = np.cross(e1, e2)
        area = 0.5 * np.linalg.norm(cross, axis=1)
        longest = np.max(np.stack([
            np.einsum("ij,ij->i", e1, e1),
            np.einsum("ij,ij->i", e2, e2),
            np.einsum("ij,ij->i", e2 - e1, e2 - e1),
        ]), axis=0)
        bad = np.flatnonzero(~(area > DEGENERATE_RTOL * longest))
        if bad.size:
            raise DegenerateTriangleError(bad[0], area[bad[0]])

        # induced metric g = E^T E with E = (V2 - V1, V3 - V1)
        E = np.stack([e1, e2], axis=2)                    # (s, 3, 2)
        g = np.einsum("sdi,sdj->sij", E, E)               # (s, 2, 2)
        diff = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
        ginv_diff = np.linalg.solve(g, np.broadcast_to(diff, (len(t), 2, 3)))
        self.grad_rows = np.einsum("sdi,sia->sda", E, ginv_diff)

        self.triangle_area = area
        self.normals = cross / (2.0 * area[:, None])
        self.vertex_area = np.bincount(
            t.ravel(), weights=np.repeat(area / 3.0, 3), minlength=len(v))
        if np.any(self.vertex_area <= 0):
            unused = np.flatnonzero(self.vertex_area <= 0)
            raise MeshError(f"vertex {unused[0]} belongs to no triangle")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def total_area(self):
        return float(self.triangle_area.sum())

    @cached_property
    def grad_matrix(self):
        """Sparse ``(3 s, h)`` matrix; row ``3 j + d`` is ``G^d`` restricted to face ``j``."""
        s = self.n_triangles
        rows = np.repeat(np.arange(3 * s), 3)
        cols = np.repeat(self.triangles, 3, axis=0).ravel()
        return sparse.csr_matrix(
            (self.grad_rows.ravel(), (rows, cols)), shape=(3 * s, self.n_vertices))

    @cached_property
    def stiffness(self):
        """``sum_d (G^d)^T A_T G^d``, the weak Laplacian (cotangent weights)."""
        G = self.grad_matrix
        w = sparse.diags(np.repeat(self.triangle_area, 3))
        return (G.T @ w @ G).tocsc()

    @cached_property
    def edges(self):
        """Unique undirected edges ``(i, k)`` with ``i < k``."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def edge_graph(self):
        """Symmetric sparse adjacency weighted by Euclidean edge length."""
        e = self.edges
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        h = self.n_vertices
        A = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(h, h))
        return (A + A.T).tocsr()

    @cached_property
    def boundary_edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @property
    def is_closed(self):
        return len(self.boundary_edges) == 0

    def __repr__(self):
        return f"TriMesh(h={self.n_vertices}, s={self.n_triangles}, area={self.total_area:.6g})"


def gradient(mesh, psi):
    """Per-face gradient of a piecewise linear function.

    ``psi`` has shape ``(..., h)``; the result has shape ``(..., s, 3)``.
    """
    psi = np.asarray(psi, dtype=float)
    vals = psi[..., mesh.triangles]                       # (..., s, 3)
    return np.einsum("sda,...sa->...sd", mesh.grad_rows, vals)


def divergence(mesh, u):
    """Discrete divergence, the negative adjoint of :func:`gradient`.

    ``u`` has shape ``(..., s, 3)``; the result has shape ``(..., h)``.
    """
    u = np.asarray(u, dtype=float)
    lead = u.shape[:-2]
    s, h = mesh.n_triangles, mesh.n_vertices
    weighted = (u * mesh.triangle_area[:, None]).reshape(-1, 3 * s)
    out = -(mesh.grad_matrix.T @ weighted.T).T / mesh.vertex_area
    return out.reshape(lead + (h,))


def inner_vertex(mesh, a, b):
    """``<a, b>_V = a^T A_V b`` over the last axis."""
    return np.einsum("...i,i,...i->...", a, mesh.vertex_area, b)


def inner_triangle(mesh, u, w):
    """``<u, w>_T = sum_d (u^d)^T A_T w^d``."""
    return np.einsum("...sd,s,...sd->...", u, mesh.triangle_area, w)


def geodesic_distances(mesh, source):
    """Shortest-path distances along mesh edges from ``source``.

    Unreachable vertices get ``inf``.
    """
    return csgraph.dijkstra(mesh.edge_graph, directed=False, indices=int(source))


def all_pairs_geodesic(mesh, metric="graph"):
    """Dense ``(h, h)`` geodesic distances.

    ``metric="graph"`` runs Dijkstra on the edge graph; ``metric="sphere"``
    uses great-circle distances on the sphere through the vertices (assumed
    centred at the origin).
    """
    if metric == "graph":
        return csgraph.dijkstra(mesh.edge_graph, directed=False)
    if metric == "sphere":
        v = mesh.vertices
        r = np.linalg.norm(v, axis=1)
        u = v / r[:, None]
        d = np.arccos(np.clip(u @ u.T, -1.0, 1.0)) * r.mean()
        np.fill_diagonal(d, 0.0)
        return 0.5 * (d + d.T)
    raise ValueError(f"unknown geodesic metric {metric!r}")


@dataclass(frozen=True)
class Kernel:
    """Dense symmetric interaction kernel on mesh vertices."""

    matrix: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.matrix, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("kernel must be a square matrix")
        K = 0.5 * (K + K.T)
        K.setflags(write=False)
        object.__setattr__(self, "matrix", K)

    @property
    def size(self):
        return self.matrix.shape[0]


def gaussian_kernel(mesh, mu, sigma, metric="graph", distances=None):
    """``mu * exp(-d^2 / sigma^2)`` with ``d`` the geodesic distance."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if mu <= 0:
        raise ValueError("mu must be positive")
    d = all_pairs_geodesic(mesh, metric) if distances is None else np.asarray(distances)
    return Kernel(mu * np.exp(-(d / sigma) ** 2))


def laplacian_kernel(mesh):
    """Kernel whose quadratic form ``1/2 P^T A_V K A_V P`` is the Dirichlet energy."""
    inv = 1.0 / mesh.vertex_area
    K = mesh.stiffness.toarray() * inv[:, None] * inv[None, :]
    return Kernel(K)


def make_icosphere(subdivisions=0, radius=1.0):
    """Icosahedron refined by midpoint subdivision and projected to the sphere."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = np.array(verts, dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array(faces, dtype=np.int64)

    for _ in range(subdivisions):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inverse = np.unique(e, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1)[:, None]
        m = len(v) + inverse.reshape(3, -1)   # midpoints of edges 01, 12, 20
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[0], m[1], m[2]
        f = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
        v = np.concatenate([v, mids])
    return TriMesh(radius * v, f)


def make_flat_grid(nx, ny, width=1.0, height=1.0, mask=None):
    """Rectangle ``[0, width] x [0, height]`` split into ``2 nx ny`` right triangles.

    Parameters
    ----------
    mask : callable or array_like of bool, optional
        Vertex predicate (called with the ``(h, 3)`` coordinate array) or a
        boolean per-vertex array.  Faces whose three vertices are all masked
        are removed and orphaned vertices dropped, which punctures holes for
        irregular domains.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    f = np.concatenate([np.stack([v00, v10, v11], axis=1),
                        np.stack([v00, v11, v01], axis=1)])

    if mask is not None:
        m = mask(v) if callable(mask) else mask
        m = np.asarray(m, dtype=bool)
        if m.shape != (len(v),):
            raise ValueError("mask must have one entry per grid vertex")
        f = f[~m[f].all(axis=1)]
        if len(f) == 0:
            raise MeshError("mask removes every triangle")
        used = np.unique(f)
        remap = np.full(len(v), -1)
        remap[used] = np.arange(len(used))
        v, f = v[used], remap[f]
    return TriMesh(v, f)
