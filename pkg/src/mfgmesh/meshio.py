"""ASCII mesh readers (OFF, OBJ) and writers (OFF, legacy VTK)."""
import os

import numpy as np

from .mesh import MeshError, TriMesh


class MeshParseError(MeshError):
    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def _guess_format(path):
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    if ext in ("off", "obj"):
        return ext.upper()
    raise MeshParseError(path, f"cannot infer mesh format from extension {ext!r}")


def load_mesh(path, format=None):
    """Read an OFF or OBJ file into a :class:`TriMesh`.

    Only triangular faces are accepted.  OBJ files contribute their ``v`` and
    ``f`` records; every other record type is ignored.
    """
    fmt = (format or _guess_format(path)).upper()
    with open(path) as fh:
        text = fh.read()
    if fmt == "OFF":
        vertices, faces = _parse_off(path, text)
    elif fmt == "OBJ":
        vertices, faces = _parse_obj(path, text)
    else:
        raise ValueError(f"unsupported mesh format {format!r}")
    if not faces:
        raise MeshParseError(path, "no faces")
    faces = np.asarray(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise MeshParseError(path, "face index out of range")
    return TriMesh(np.asarray(vertices, dtype=float), faces)


def _off_tokens(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_off(path, text):
    lines = list(_off_tokens(text))
    if not lines:
        raise MeshParseError(path, "empty file")
    lineno, head = lines[0]
    pos = 1
    if head[0].upper() == "OFF":
        head = head[1:]
        if not head:
            if len(lines) < 2:
                raise MeshParseError(path, "missing counts line")
            lineno, head = lines[1]
            pos = 2
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise MeshParseError(path, "bad counts line", lineno) from None

    if len(lines) < pos + nv + nf:
        raise MeshParseError(path, f"expected {nv} vertices and {nf} faces")
    vertices = []
    for lineno, tok in lines[pos:pos + nv]:
        try:
            vertices.append([float(x) for x in tok[:3]])
        except ValueError:
            raise MeshParseError(path, "bad vertex record", lineno) from None
        if len(tok) < 3:
            raise MeshParseError(path, "vertex needs 3 coordinates", lineno)
    faces = []
    for lineno, tok in lines[pos + nv:pos + nv + nf]:
        try:
            k = int(tok[0])
            idx = [int(x) for x in tok[1:1 + k]]
        except ValueError:
            raise MeshParseError(path, "bad face record", lineno) from None
        if k != 3 or len(idx) != 3:
            raise MeshParseError(path, "only triangular faces are supported", lineno)
        faces.append(idx)
    return vertices, faces


def _parse_obj(path, text):
    vertices, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            try:
                vertices.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise MeshParseError(path, "bad vertex record", lineno) from None
            if len(tok) < 4:
                raise MeshParseError(path, "vertex needs 3 coordinates", lineno)
        elif tok[0] == "f":
            if len(tok) != 4:
                raise MeshParseError(path, "only triangular faces are supported", lineno)
            idx = []
            for item in tok[1:]:
                try:
                    k = int(item.split("/")[0])
                except ValueError:
                    raise MeshParseError(path, "bad face record", lineno) from None
                # OBJ indices are 1-based; negative ones count back from the end
                idx.append(k - 1 if k > 0 else len(vertices) + k)
            faces.append(idx)
    return vertices, faces


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.triangles.tolist():
            fh.write(f"3 {a} {b} {c}\n")


def write_vtk(mesh, path, point_data=None, title="mfgmesh"):
    """Legacy ASCII VTK POLYDATA with optional per-vertex scalar fields."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        fh.write(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for a, b, c in mesh.triangles.tolist():
            fh.write(f"3 {a} {b} {c}\n")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (mesh.n_vertices,):
                    raise ValueError(f"point field {name!r} has shape {values.shape}")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{x!r}\n" for x in values.tolist())


def read_vtk_points(path):
    """Minimal reader for files produced by :func:`write_vtk`.

    Returns ``(points, polygons, point_data)``.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    i = 0
    points = polygons = None
    data = {}
    while i < len(lines):
        tok = lines[i].split()
        if tok and tok[0] == "POINTS":
            n = int(tok[1])
            points = np.array([[float(x) for x in lines[i + 1 + k].split()] for k in range(n)])
            i += n
        elif tok and tok[0] == "POLYGONS":
            n = int(tok[1])
            polygons = np.array([[int(x) for x in lines[i + 1 + k].split()[1:]] for k in range(n)])
            i += n
        elif tok and tok[0] == "SCALARS":
            name = tok[1]
            n = len(points)
            data[name] = np.array([float(lines[i + 2 + k]) for k in range(n)])
            i += n + 1
        i += 1
    return points, polygons, data
