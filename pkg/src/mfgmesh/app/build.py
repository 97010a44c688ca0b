"""Turn a validated :class:`Scenario` into meshes, densities and cost specs."""
from pathlib import Path

import numpy as np

from ..cost import (Congestion, CostSpec, Dirichlet, Entropy, KLTerminal,
                    Nonlocal, Obstacle, ObstacleTerminal, QuadraticTerminal,
                    Vanilla)
from ..mesh import (all_pairs_geodesic, gaussian_kernel, geodesic_distances,
                    make_flat_grid, make_icosphere)
from ..meshio import load_mesh
from .scenario import BumpSpec, ScenarioError

# Uniform mass fraction mixed into a KL target that has no background, so the
# target is positive everywhere.
KL_TARGET_FLOOR = 1e-8


def _pad3(x):
    x = [float(c) for c in x]
    return np.array(x + [0.0] * (3 - len(x)))


def mask_indicator(mesh, masks):
    """0/1 per-vertex indicator of the union of ``masks``."""
    v = mesh.vertices
    out = np.zeros(len(v), dtype=bool)
    for m in masks:
        if m.type == "box":
            lo, hi = np.array(m.min), np.array(m.max)
            d = len(lo)
            out |= np.all((v[:, :d] >= lo) & (v[:, :d] <= hi), axis=1)
        elif m.type == "ball":
            c = _pad3(m.center)
            out |= np.linalg.norm(v - c, axis=1) <= m.radius
        elif m.type == "longitude":
            lon = np.degrees(np.arctan2(v[:, 1], v[:, 0]))
            out |= (lon >= m.min_deg) & (lon <= m.max_deg)
        elif m.type == "vertices":
            idx = np.asarray(m.indices, dtype=int)
            if idx.size and (idx.min() < 0 or idx.max() >= len(v)):
                raise ScenarioError([f"mask vertex index out of range [0, {len(v)})"])
            out[idx] = True
    return out.astype(float)


def build_mesh(spec, base_dir="."):
    if spec.path is not None:
        path = Path(spec.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        return load_mesh(path)
    if spec.generator == "icosphere":
        return make_icosphere(spec.subdivisions, spec.radius)
    holes = None
    if spec.holes:
        holes = lambda v: mask_indicator(_Points(v), spec.holes) > 0  # noqa: E731
    return make_flat_grid(spec.nx, spec.ny, spec.width, spec.height, mask=holes)


class _Points:
    def __init__(self, vertices):
        self.vertices = vertices


def bump_distances(mesh, bump, metric="graph"):
    """Distances from a bump centre to every vertex under ``metric``."""
    v = mesh.vertices
    if bump.vertex is not None:
        if bump.vertex >= len(v):
            raise ScenarioError([f"bump vertex {bump.vertex} out of range [0, {len(v)})"])
        center = v[bump.vertex]
        source = bump.vertex
    else:
        center = _pad3(bump.center)
        source = int(np.argmin(np.linalg.norm(v - center, axis=1)))
    if metric == "graph":
        return geodesic_distances(mesh, source)
    if metric == "euclidean":
        return np.linalg.norm(v - center, axis=1)
    r = np.linalg.norm(v, axis=1)
    u = v / r[:, None]
    c = center / np.linalg.norm(center)
    return np.arccos(np.clip(u @ c, -1.0, 1.0)) * r.mean()


def synth_density(mesh, bumps, metric="graph", background=0.0):
    """Sum of geodesic Gaussian bumps, normalised to unit mass.

    Each bump contributes ``weight * exp(-d^2 / sigma^2)``.  A fraction
    ``background`` of the mass is then spread uniformly over the surface.
    """
    bumps = [b if isinstance(b, BumpSpec) else BumpSpec(**b) for b in bumps]
    if not bumps:
        raise ValueError("at least one bump is required")
    p = np.zeros(mesh.n_vertices)
    for b in bumps:
        d = bump_distances(mesh, b, metric)
        p += b.weight * np.exp(-(d / b.sigma) ** 2)
    mass = float(mesh.vertex_area @ p)
    if not mass > 0:
        raise ValueError("bumps vanish on every vertex; widen sigma or move the centres")
    p /= mass
    if background:
        p = (1.0 - background) * p + background / mesh.total_area
    return p / float(mesh.vertex_area @ p)


def build_density(mesh, spec, metric, base_dir=".", floor=0.0):
    if spec.file is not None:
        path = Path(spec.file)
        if not path.is_absolute():
            path = Path(base_dir) / path
        p = np.loadtxt(path, dtype=float).ravel()
        if p.shape != (mesh.n_vertices,):
            raise ScenarioError([f"{path}: expected {mesh.n_vertices} values, got {p.size}"])
        if np.any(p < 0):
            raise ScenarioError([f"{path}: density must be nonnegative"])
        p = p / float(mesh.vertex_area @ p)
        if spec.background:
            p = (1.0 - spec.background) * p + spec.background / mesh.total_area
    else:
        p = synth_density(mesh, spec.bumps, metric, spec.background)
    if floor and not spec.background:
        p = (1.0 - floor) * p + floor / mesh.total_area
    return p / float(mesh.vertex_area @ p)


def build_terminal(mesh, spec, target):
    if spec.type == "quadratic":
        return QuadraticTerminal(spec.weight, target)
    if spec.type == "kl":
        return KLTerminal(spec.weight, target)
    return ObstacleTerminal(spec.weight, mask_indicator(mesh, spec.region))


class _KernelCache:
    def __init__(self, mesh, metric):
        self.mesh, self.metric = mesh, metric
        self._dist = None

    def distances(self):
        if self._dist is None:
            if self.metric == "euclidean":
                v = self.mesh.vertices
                self._dist = np.linalg.norm(v[:, None] - v[None], axis=2)
            else:
                self._dist = all_pairs_geodesic(self.mesh, self.metric)
        return self._dist


def build_interaction(mesh, spec, kernels):
    if spec.type == "vanilla":
        return Vanilla()
    if spec.type == "obstacle":
        return Obstacle(spec.weight, mask_indicator(mesh, spec.region))
    if spec.type == "entropy":
        return Entropy(spec.weight)
    if spec.type == "congestion":
        return Congestion(spec.weight, spec.eps)
    if spec.type == "nonlocal":
        K = gaussian_kernel(mesh, spec.mu, spec.sigma, distances=kernels.distances())
        return Nonlocal(spec.weight, K)
    return Dirichlet(spec.weight)


class ResolvedScenario:
    """Mesh, densities and one :class:`CostSpec` per interaction variant."""

    def __init__(self, scenario, base_dir="."):
        self.scenario = scenario
        self.base_dir = Path(base_dir)
        self.mesh = build_mesh(scenario.mesh, base_dir)
        metric = scenario.mesh.metric
        self.P0 = build_density(self.mesh, scenario.initial, metric, base_dir)
        self.P1 = None
        if scenario.target is not None:
            floor = KL_TARGET_FLOOR if scenario.terminal.type == "kl" else 0.0
            self.P1 = build_density(self.mesh, scenario.target, metric, base_dir, floor)
        self.terminal = build_terminal(self.mesh, scenario.terminal, self.P1)
        kernels = _KernelCache(self.mesh, metric)
        self.interactions = {
            spec.name: build_interaction(self.mesh, spec, kernels) for spec in scenario.interactions}
        self.costs = {
            name: CostSpec(terminal=self.terminal, interaction=inter, averaging=scenario.averaging)
            for name, inter in self.interactions.items()}
        self.reported = self.interactions[scenario.reported_interaction.name]
        for cost in self.costs.values():
            try:
                cost.validate(self.mesh)
            except ValueError as exc:
                raise ScenarioError([str(exc)]) from None


def resolve(scenario, base_dir="."):
    return ResolvedScenario(scenario, base_dir)
