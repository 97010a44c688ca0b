"""Mean-field games on triangle meshes, solved by proximal gradient descent."""
from .cost import (Congestion, CostSpec, Dirichlet, Entropy, KLTerminal,
                   Nonlocal, Obstacle, ObstacleTerminal, QuadraticTerminal,
                   Vanilla, objective, objective_gradient)
from .field import DensityField, DomainError, FluxField
from .mesh import (DegenerateTriangleError, MeshError, TriMesh, divergence,
                   gaussian_kernel, geodesic_distances, gradient,
                   laplacian_kernel, make_flat_grid, make_icosphere)
from .meshio import load_mesh
from .solver import (SolverError, SolverOptions, build_projection,
                     kkt_residual, pgd_solve, project)

__version__ = "0.1.0"
