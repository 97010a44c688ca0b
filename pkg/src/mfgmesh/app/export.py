"""Per-step density snapshots as CSV or legacy VTK files."""
import csv
from pathlib import Path

import numpy as np

from ..meshio import write_vtk


class ExportError(OSError):
    def __init__(self, path, exc):
        self.path = str(path)
        super().__init__(f"cannot write {self.path}: {exc}")


def snapshot_name(prefix, step, n_steps, ext):
    width = max(3, len(str(n_steps)))
    return f"{prefix}_{step:0{width}d}.{ext}"


def export_snapshots(mesh, P, directory, format="csv", prefix="density"):
    """Write ``P(., t_0) .. P(., t_n)``, one file per step; returns the paths."""
    fmt = format.lower()
    if fmt not in ("csv", "vtk"):
        raise ValueError(f"unknown snapshot format {format!r}")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(directory, exc) from exc
    slices = P.with_initial()
    n = len(slices) - 1
    paths = []
    for k, values in enumerate(slices):
        path = directory / snapshot_name(prefix, k, n, fmt)
        try:
            if fmt == "csv":
                _write_csv(mesh, values, path)
            else:
                write_vtk(mesh, path, {"density": values}, title=f"density t={k}/{n}")
        except OSError as exc:
            raise ExportError(path, exc) from exc
        paths.append(path)
    return paths


def _write_csv(mesh, values, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_index", "x", "y", "z", "density"])
        for i, ((x, y, z), p) in enumerate(zip(mesh.vertices, values)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(z)), repr(float(p))])


def read_csv_snapshot(path):
    """Return ``(coordinates, density)`` from a CSV snapshot."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:4], data[:, 4]
