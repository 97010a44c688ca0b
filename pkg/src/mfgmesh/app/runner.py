"""Run every interaction variant of a scenario and write the artifacts.

Layout of a run directory::

    scenario.toml          effective scenario (after command-line overrides)
    costs.csv, costs.md    one row per variant: dynamic, interaction, terminal
    <variant>/report.json  SolveReport
    <variant>/snapshots/   density_000.csv ... (or .vtk)
"""
import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from ..cost import running_interaction
from ..solver import SolveReport, SolverOptions, build_projection, pgd_solve
from .build import resolve
from .export import export_snapshots
from .scenario import dump_scenario, load_scenario

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("variant", "dynamic", "interaction", "terminal", "objective",
                 "kkt_max", "iterations", "seconds")


@dataclass
class VariantRun:
    name: str
    result: object
    row: dict


@dataclass
class RunSummary:
    scenario: object
    directory: Path
    variants: list
    resolved: object

    @property
    def table(self):
        return [v.row for v in self.variants]


def apply_overrides(scenario, iterations=None, eta=None, deterministic=None,
                    output=None, format=None):
    solver = {}
    if iterations is not None:
        solver["iterations"] = iterations
    if eta is not None:
        solver["eta"] = eta
    if deterministic is not None:
        solver["deterministic"] = deterministic
    out = {}
    if output is not None:
        out["directory"] = str(output)
    if format is not None:
        out["format"] = format
    data = scenario.model_dump(mode="json", exclude_none=True)
    data["solver"].update(solver)
    data["output"].update(out)
    # re-validate so overrides obey the same rules as the file
    return type(scenario).model_validate(data)


def solver_options(spec):
    return SolverOptions(
        iterations=spec.iterations, eta=spec.eta, line_search=spec.line_search,
        tolerance=spec.tolerance, kkt_every=spec.kkt_every, log_every=spec.log_every,
        deterministic=spec.deterministic)


def run_scenario(source, base_dir=None, write=True, variants=None, **overrides):
    """Solve each interaction variant of ``source`` (a path or a Scenario).

    Returns a :class:`RunSummary`.  With ``write=True`` the artifacts are
    written to the scenario's output directory.
    """
    if isinstance(source, (str, Path)):
        scenario, file_dir = load_scenario(source)
        base_dir = base_dir or file_dir
    else:
        scenario = source
    base_dir = Path(base_dir or ".")
    scenario = apply_overrides(scenario, **overrides)
    directory = Path(scenario.output.directory or Path("runs") / scenario.name)

    resolved = resolve(scenario, base_dir)
    mesh = resolved.mesh
    t0 = time.perf_counter()
    op = build_projection(mesh, scenario.steps)
    t_pre = time.perf_counter() - t0
    options = solver_options(scenario.solver)

    if write:
        directory.mkdir(parents=True, exist_ok=True)
        dump_scenario(scenario, directory / "scenario.toml")

    runs = []
    for spec in scenario.interactions:
        if variants is not None and spec.name not in variants:
            continue
        logger.info("solving variant %s", spec.name)
        cost = resolved.costs[spec.name]
        result = pgd_solve(mesh, cost, resolved.P0, scenario.steps, options, op=op)
        result.report.precompute_seconds = t_pre
        c = result.report.costs
        row = {
            "variant": spec.name,
            "dynamic": c["dynamic"],
            "interaction": running_interaction(mesh, resolved.reported, result.P.values),
            "terminal": c["terminal"],
            "objective": c["total"],
            "kkt_max": result.report.kkt_final["max"],
            "iterations": result.report.iterations,
            "seconds": result.report.iteration_seconds,
        }
        runs.append(VariantRun(spec.name, result, row))
        if write:
            vdir = directory / spec.name
            vdir.mkdir(parents=True, exist_ok=True)
            (vdir / "report.json").write_text(json.dumps(result.report.as_dict(), indent=2))
            if scenario.output.snapshots:
                export_snapshots(mesh, result.P, vdir / "snapshots", scenario.output.format)

    summary = RunSummary(scenario, directory, runs, resolved)
    if write:
        write_table(summary.table, directory, scenario.reported_interaction.name)
    return summary


def write_table(rows, directory, reported_name):
    directory = Path(directory)
    with open(directory / "costs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    (directory / "costs.md").write_text(format_table(rows, reported_name))


def format_table(rows, reported_name=None):
    label = f"interaction ({reported_name})" if reported_name else "interaction"
    head = f"| variant | dynamic cost | {label} | terminal cost | KKT max | iterations |"
    lines = [head, "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(
            f"| {r['variant']} | {float(r['dynamic']):.4g} | {float(r['interaction']):.4g} | "
            f"{float(r['terminal']):.4g} | {float(r['kkt_max']):.3g} | {int(float(r['iterations']))} |")
    return "\n".join(lines) + "\n"


def read_run(directory):
    """Load ``(rows, reports)`` from a run directory."""
    directory = Path(directory)
    with open(directory / "costs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    reports = {}
    for row in rows:
        path = directory / row["variant"] / "report.json"
        if path.exists():
            reports[row["variant"]] = SolveReport.from_dict(json.loads(path.read_text()))
    return rows, reports
