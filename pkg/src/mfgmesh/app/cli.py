"""Command line: ``mfgmesh solve|validate|report|mesh-info|dump``.

Exit codes: 0 success, 1 validation error, 2 solver failure, 3 I/O error.
"""
import argparse
import logging
import re
import sys
from pathlib import Path

import numpy as np

from ..field import DomainError
from ..mesh import MeshError, make_flat_grid, make_icosphere
from ..meshio import load_mesh
from ..solver import SolverError
from .build import resolve
from .runner import format_table, read_run, run_scenario
from .scenario import ScenarioError, dumps, load_scenario

logger = logging.getLogger("mfgmesh")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def _mesh_from_arg(arg):
    m = re.fullmatch(r"icosphere:(\d+)", arg)
    if m:
        return make_icosphere(int(m.group(1)))
    m = re.fullmatch(r"grid:(\d+)x(\d+)", arg)
    if m:
        return make_flat_grid(int(m.group(1)), int(m.group(2)))
    return load_mesh(arg)


def cmd_solve(args):
    summary = run_scenario(
        args.scenario, iterations=args.iterations, eta=args.eta,
        deterministic=True if args.deterministic else None,
        output=args.output, format=args.format)
    print(format_table(summary.table, summary.scenario.reported_interaction.name), end="")
    for v in summary.variants:
        r = v.result.report
        print(f"{v.name}: KKT {r.kkt_initial['max']:.3g} -> {r.kkt_final['max']:.3g}, "
              f"min density {r.min_density:.3g}")
    print(f"artifacts written to {summary.directory}")
    return EXIT_OK


def cmd_validate(args):
    scenario, base = load_scenario(args.scenario)
    resolved = resolve(scenario, base)
    mesh = resolved.mesh
    print(f"{args.scenario}: ok ({mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"n={scenario.steps}, variants: {', '.join(resolved.costs)})")
    return EXIT_OK


def cmd_report(args):
    rows, reports = read_run(args.run_dir)
    print(format_table(rows), end="")
    for name, r in reports.items():
        print(f"{name}: eP {r.kkt_final['eP']:.3g}  eM {r.kkt_final['eM']:.3g}  "
              f"eC {r.kkt_final['eC']:.3g}  (initial max {r.kkt_initial['max']:.3g}); "
              f"precompute {r.precompute_seconds:.2f} s, iterations {r.iteration_seconds:.2f} s")
    return EXIT_OK


def cmd_mesh_info(args):
    mesh = _mesh_from_arg(args.mesh)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    print(f"vertices      {mesh.n_vertices}")
    print(f"triangles     {mesh.n_triangles}")
    print(f"edges         {len(mesh.edges)}")
    print(f"closed        {mesh.is_closed}")
    print(f"boundary edges {len(mesh.boundary_edges)}")
    print(f"total area    {mesh.total_area:.12g}")
    print(f"triangle area min {mesh.triangle_area.min():.6g} max {mesh.triangle_area.max():.6g}")
    print(f"bounding box  {np.array2string(lo, precision=4)} .. {np.array2string(hi, precision=4)}")
    return EXIT_OK


def cmd_dump(args):
    scenario, _ = load_scenario(args.scenario)
    print(dumps(scenario), end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mfgmesh", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve every variant of a scenario and write artifacts")
    s.add_argument("scenario")
    s.add_argument("--iterations", type=int)
    s.add_argument("--eta", type=float)
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--output")
    s.add_argument("--format", choices=["csv", "vtk"])
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("validate", help="parse a scenario and resolve its mesh and densities")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("report", help="print the cost table of a finished run")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("mesh-info", help="summarize a mesh file (or icosphere:N, grid:NXxNY)")
    s.add_argument("mesh")
    s.set_defaults(func=cmd_mesh_info)

    s = sub.add_parser("dump", help="print a scenario in normalized form")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_dump)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, MeshError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        if isinstance(exc, ScenarioError):
            for e in exc.errors:
                print(f"  {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
