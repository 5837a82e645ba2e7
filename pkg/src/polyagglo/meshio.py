"""ASCII MSH 2.2 import/export and legacy VTK unstructured-grid output."""

from __future__ import annotations

import os
from collections.abc import Mapping

import numpy as np

from .geometry import CELL_NVERT, HEX, QUAD, TET, TRI
from .mesh import BackgroundMesh, MeshError

# gmsh element type -> (topological dimension, node count); only the four
# linear kinds below are importable as cells.
_GMSH_TYPES = {
    1: (1, 2), 2: (2, 3), 3: (2, 4), 4: (3, 4), 5: (3, 8), 6: (3, 6), 7: (3, 5),
    8: (1, 3), 9: (2, 6), 10: (2, 9), 11: (3, 10), 12: (3, 27), 13: (3, 18),
    14: (3, 14), 15: (0, 1), 16: (2, 8), 17: (3, 20), 18: (3, 15), 19: (3, 13),
    20: (2, 9), 21: (2, 10), 22: (2, 12), 23: (2, 15), 24: (2, 15), 25: (2, 21),
    26: (1, 4), 27: (1, 5), 28: (1, 6), 29: (3, 20), 30: (3, 35), 31: (3, 56),
    92: (3, 64), 93: (3, 125),
}
_GMSH_KIND = {2: TRI, 3: QUAD, 4: TET, 5: HEX}
_KIND_GMSH = {v: k for k, v in _GMSH_KIND.items()}

_VTK_TYPE = {TRI: 5, QUAD: 9, TET: 10, HEX: 12}


class MshParseError(ValueError):
    """Malformed MSH input; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def read_msh(path) -> BackgroundMesh:
    """Read an ASCII MSH v2.2 file.

    Only the top-dimensional elements become cells; points, lines and (in 3D)
    surface elements are skipped. The first tag of each element, the physical
    group, becomes the material label when every cell carries one.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    it = _Lines(lines)

    nodes_by_id: dict[int, int] = {}
    coords: list[list[float]] = []
    elements: list[tuple[int, int, list[int], list[int]]] = []
    seen_format = False
    while not it.done():
        lineno, text = it.next()
        if not text:
            continue
        if text == "$MeshFormat":
            lineno, text = it.next("$MeshFormat body")
            parts = text.split()
            if len(parts) < 3 or not parts[0].startswith("2"):
                raise MshParseError(f"unsupported mesh format {text!r}", lineno)
            if parts[1] != "0":
                raise MshParseError("binary MSH files are not supported", lineno)
            it.expect("$EndMeshFormat")
            seen_format = True
        elif text == "$Nodes":
            if not seen_format:
                raise MshParseError("$Nodes before $MeshFormat", lineno)
            count = it.next_int("node count")
            for _ in range(count):
                lineno, text = it.next("node line")
                parts = text.split()
                if len(parts) != 4:
                    raise MshParseError(f"bad node line {text!r}", lineno)
                try:
                    nid = int(parts[0])
                    xyz = [float(v) for v in parts[1:]]
                except ValueError:
                    raise MshParseError(f"bad node line {text!r}", lineno) from None
                if nid in nodes_by_id:
                    raise MshParseError(f"duplicate node {nid}", lineno)
                nodes_by_id[nid] = len(coords)
                coords.append(xyz)
            it.expect("$EndNodes")
        elif text == "$Elements":
            if not seen_format:
                raise MshParseError("$Elements before $MeshFormat", lineno)
            count = it.next_int("element count")
            for _ in range(count):
                lineno, text = it.next("element line")
                try:
                    parts = [int(v) for v in text.split()]
                    etype, ntags = parts[1], parts[2]
                except (ValueError, IndexError):
                    raise MshParseError(f"bad element line {text!r}", lineno) from None
                if etype not in _GMSH_TYPES:
                    raise MshParseError(f"unknown element type {etype}", lineno)
                tags = parts[3 : 3 + ntags]
                enodes = parts[3 + ntags :]
                if len(enodes) != _GMSH_TYPES[etype][1]:
                    raise MshParseError(f"element type {etype} needs {_GMSH_TYPES[etype][1]} nodes", lineno)
                elements.append((lineno, etype, tags, enodes))
            it.expect("$EndElements")
        elif text.startswith("$"):
            # Skip sections we do not interpret ($PhysicalNames, data blocks).
            end = "$End" + text[1:]
            while True:
                _, t = it.next(end)
                if t == end:
                    break
        else:
            raise MshParseError(f"unexpected content {text!r}", lineno)

    if not seen_format:
        raise MshParseError("missing $MeshFormat header", 1)
    if not elements:
        raise MshParseError("no elements", len(lines))
    top = max(_GMSH_TYPES[e[1]][0] for e in elements)
    if top not in (2, 3):
        raise MshParseError("no 2D or 3D elements", len(lines))

    cells, kinds, material = [], [], []
    all_tagged = True
    for lineno, etype, tags, enodes in elements:
        if _GMSH_TYPES[etype][0] != top:
            continue
        if etype not in _GMSH_KIND:
            raise MshParseError(f"unsupported element type {etype}", lineno)
        try:
            cells.append([nodes_by_id[n] for n in enodes])
        except KeyError as exc:
            raise MshParseError(f"unknown node {exc.args[0]}", lineno) from None
        kinds.append(_GMSH_KIND[etype])
        if tags:
            material.append(tags[0])
        else:
            all_tagged = False

    xyz = np.array(coords, dtype=float).reshape(-1, 3)
    verts = xyz if top == 3 else xyz[:, :2]
    mat = np.array(material) if all_tagged and material else None
    if mat is not None and (mat < 0).any():
        mat = None
    try:
        return BackgroundMesh(verts, cells, kinds=kinds, material=mat)
    except MeshError as exc:
        raise MshParseError(str(exc), len(lines)) from exc


class _Lines:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def done(self):
        return self.pos >= len(self.lines)

    def next(self, what="more input"):
        if self.done():
            raise MshParseError(f"unexpected end of file, expected {what}", len(self.lines))
        self.pos += 1
        return self.pos, self.lines[self.pos - 1].strip()

    def next_int(self, what):
        lineno, text = self.next(what)
        try:
            return int(text)
        except ValueError:
            raise MshParseError(f"expected {what}, got {text!r}", lineno) from None

    def expect(self, tag):
        lineno, text = self.next(tag)
        if text != tag:
            raise MshParseError(f"expected {tag}, got {text!r}", lineno)


def write_msh(mesh: BackgroundMesh, path) -> None:
    """Write ``mesh`` as ASCII MSH 2.2 (cells only, materials as physical tags)."""
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{mesh.n_vertices}\n")
        for i, v in enumerate(mesh.vertices):
            xyz = [float(c) for c in v] + [0.0] * (3 - mesh.dim)
            fh.write(f"{i + 1} {xyz[0]!r} {xyz[1]!r} {xyz[2]!r}\n")
        fh.write(f"$EndNodes\n$Elements\n{mesh.n_cells}\n")
        for c in range(mesh.n_cells):
            kind = mesh.kind_of(c)
            tag = int(mesh.material[c]) if mesh.material is not None else 1
            nodes = " ".join(str(v + 1) for v in mesh.cell(c))
            fh.write(f"{c + 1} {_KIND_GMSH[kind]} 2 {tag} {tag} {nodes}\n")
        fh.write("$EndElements\n")


def write_vtk(mesh: BackgroundMesh, cell_scalars: Mapping[str, object], path, title="polyagglo") -> None:
    """Write a legacy ASCII VTK unstructured grid with per-cell scalar arrays."""
    arrays = {}
    for name, values in cell_scalars.items():
        a = np.asarray(values)
        if a.shape != (mesh.n_cells,):
            raise ValueError(
                f"cell scalar {name!r} has {a.size} values for {mesh.n_cells} cells"
            )
        if " " in name:
            raise ValueError(f"cell scalar name {name!r} contains whitespace")
        arrays[name] = a
    n = mesh.n_cells
    size = sum(CELL_NVERT[mesh.kind_of(c)] + 1 for c in range(n))
    out = [
        "# vtk DataFile Version 2.0",
        title[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    pad = np.zeros((mesh.n_vertices, 3 - mesh.dim))
    for p in np.hstack([mesh.vertices, pad]).tolist():
        out.append(f"{p[0]!r} {p[1]!r} {p[2]!r}")
    out.append(f"CELLS {n} {size}")
    for c in range(n):
        verts = mesh.cell(c)
        out.append(f"{len(verts)} " + " ".join(map(str, verts)))
    out.append(f"CELL_TYPES {n}")
    out.extend(str(_VTK_TYPE[mesh.kind_of(c)]) for c in range(n))
    if arrays:
        out.append(f"CELL_DATA {n}")
        for name, a in arrays.items():
            integral = np.issubdtype(a.dtype, np.integer) or a.dtype == bool
            out.append(f"SCALARS {name} {'int' if integral else 'double'} 1")
            out.append("LOOKUP_TABLE default")
            out.extend(str(int(v)) if integral else repr(float(v)) for v in a)
    with open(os.fspath(path), "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_vtk(path) -> tuple[np.ndarray, list[tuple[int, ...]], dict[str, np.ndarray]]:
    """Parse a file produced by :func:`write_vtk`; returns points, cells and cell data."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    pos = 4
    _, npts, _ = tokens[pos].split()
    npts = int(npts)
    pts = np.array([[float(v) for v in tokens[pos + 1 + i].split()] for i in range(npts)])
    pos += 1 + npts
    _, ncell, _ = tokens[pos].split()
    ncell = int(ncell)
    cells = [tuple(int(v) for v in tokens[pos + 1 + i].split()[1:]) for i in range(ncell)]
    pos += 1 + ncell + 1 + ncell
    data: dict[str, np.ndarray] = {}
    if pos < len(tokens) and tokens[pos].startswith("CELL_DATA"):
        pos += 1
        while pos < len(tokens) and tokens[pos].startswith("SCALARS"):
            _, name, dtype, _ = tokens[pos].split()
            vals = tokens[pos + 2 : pos + 2 + ncell]
            conv = int if dtype == "int" else float
            data[name] = np.array([conv(v) for v in vals])
            pos += 2 + ncell
    return pts, cells, data
