"""Fine background meshes: storage, structured generators and the dual graph."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import geometry as geo
from .geometry import CELL_DIM, CELL_FACES, CELL_NVERT, HEX, QUAD, TET, TRI

KIND_NAMES = (TRI, QUAD, TET, HEX)
_KIND_CODE = {k: i for i, k in enumerate(KIND_NAMES)}

BOUNDARY = -1


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


class BackgroundMesh:
    """Conforming fine grid of triangles, quads, tetrahedra or hexahedra.

    Parameters
    ----------
    vertices : (nv, dim) array of coordinates.
    cells : sequence of vertex-index tuples, one per cell.
    kinds : per-cell kind name ("tri", "quad", "tet", "hex"). When omitted it
        is inferred from the vertex count and the dimension.
    material : optional non-negative integer label per cell.

    Faces are derived at construction and keyed by their sorted vertex set;
    the owner of a face is the lower incident cell id. Cells with negative
    orientation are reordered so that every cell has positive measure.
    """

    def __init__(self, vertices, cells, kinds=None, material=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3) or len(vertices) == 0:
            raise MeshError("vertices must be a nonempty (n, 2) or (n, 3) array")
        self.dim = vertices.shape[1]
        self.vertices = vertices
        ncell = len(cells)
        if ncell == 0:
            raise MeshError("mesh has no cells")

        if kinds is None:
            kinds = [_infer_kind(len(c), self.dim) for c in cells]
        elif isinstance(kinds, str):
            kinds = [kinds] * ncell
        kind_codes = np.array([_KIND_CODE[k] for k in kinds], dtype=np.int8)
        nodes = np.full((ncell, 8), -1, dtype=np.int64)
        if isinstance(cells, np.ndarray) and cells.ndim == 2:
            nodes[:, : cells.shape[1]] = cells
        else:
            for i, c in enumerate(cells):
                nodes[i, : len(c)] = c
        for code in np.unique(kind_codes):
            kind = KIND_NAMES[code]
            if CELL_DIM[kind] != self.dim:
                raise MeshError(f"{kind} cells in a {self.dim}D mesh")
            sel = kind_codes == code
            nv = CELL_NVERT[kind]
            if (nodes[sel, :nv] < 0).any() or (nodes[sel, nv:] >= 0).any():
                raise MeshError(f"{kind} cells need exactly {nv} vertices")
        if nodes.max() >= len(vertices):
            raise MeshError("cell references a vertex index out of range")
        self.cell_kind = kind_codes
        self.cell_nodes = nodes

        if material is not None:
            material = np.asarray(material, dtype=np.int64)
            if material.shape != (ncell,) or (material < 0).any():
                raise MeshError("material must hold one non-negative label per cell")
        self.material = material

        self._orient()
        self._build_faces()
        for a in (self.vertices, self.cell_nodes, self.cell_kind):
            a.setflags(write=False)

    # -- basic queries -------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.cell_kind)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.face_owner)

    def kind_of(self, cell: int) -> str:
        return KIND_NAMES[self.cell_kind[cell]]

    def cell(self, cell: int) -> tuple[int, ...]:
        nv = CELL_NVERT[self.kind_of(cell)]
        return tuple(int(v) for v in self.cell_nodes[cell, :nv])

    def groups(self):
        """Yield ``(kind, cell_ids, connectivity)`` for every cell kind present."""
        for code in np.unique(self.cell_kind):
            kind = KIND_NAMES[code]
            ids = np.flatnonzero(self.cell_kind == code)
            yield kind, ids, self.cell_nodes[ids, : CELL_NVERT[kind]]

    def face_groups(self, face_ids=None):
        """Yield ``(face_kind, face_ids, connectivity)`` grouped by face vertex count."""
        if face_ids is None:
            face_ids = np.arange(self.n_faces)
        face_ids = np.asarray(face_ids, dtype=np.int64)
        nvf = self.face_nvert[face_ids]
        for n in np.unique(nvf):
            sel = face_ids[nvf == n]
            yield geo.FACE_KIND_BY_NVERT[int(n)], sel, self.face_nodes[sel, :n]

    @cached_property
    def cell_measure(self) -> np.ndarray:
        out = np.empty(self.n_cells)
        for kind, ids, conn in self.groups():
            out[ids] = _signed_measure(kind, self.vertices[conn])
        out.setflags(write=False)
        return out

    @cached_property
    def cell_lo(self) -> np.ndarray:
        return self._cell_bounds()[0]

    @cached_property
    def cell_hi(self) -> np.ndarray:
        return self._cell_bounds()[1]

    @cached_property
    def cell_centroid(self) -> np.ndarray:
        """Vertex average of each cell."""
        out = np.empty((self.n_cells, self.dim))
        for _, ids, conn in self.groups():
            out[ids] = self.vertices[conn].mean(axis=1)
        return out

    @cached_property
    def cell_diameter(self) -> np.ndarray:
        out = np.empty(self.n_cells)
        for _, ids, conn in self.groups():
            pts = self.vertices[conn]
            d = np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :], axis=-1)
            out[ids] = d.reshape(len(ids), -1).max(axis=1)
        return out

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor == BOUNDARY)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor != BOUNDARY)

    @property
    def domain_measure(self) -> float:
        return float(self.cell_measure.sum())

    def checksum(self) -> str:
        """Content hash of coordinates, connectivity and materials."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.cell_nodes).tobytes())
        h.update(self.cell_kind.tobytes())
        if self.material is not None:
            h.update(self.material.tobytes())
        return h.hexdigest()

    def __repr__(self):
        kinds = ",".join(KIND_NAMES[c] for c in np.unique(self.cell_kind))
        return f"BackgroundMesh(dim={self.dim}, cells={self.n_cells}, vertices={self.n_vertices}, kinds={kinds})"

    # -- construction helpers --------------------------------------------
    def _cell_bounds(self):
        lo = np.empty((self.n_cells, self.dim))
        hi = np.empty((self.n_cells, self.dim))
        for _, ids, conn in self.groups():
            pts = self.vertices[conn]
            lo[ids] = pts.min(axis=1)
            hi[ids] = pts.max(axis=1)
        lo.setflags(write=False)
        hi.setflags(write=False)
        return lo, hi

    def _orient(self):
        nodes = self.cell_nodes
        for kind, ids, conn in self.groups():
            m = _signed_measure(kind, self.vertices[conn])
            flip = m < 0
            if flip.any():
                perm = {
                    TRI: [0, 2, 1],
                    QUAD: [0, 3, 2, 1],
                    TET: [0, 2, 1, 3],
                    HEX: [0, 3, 2, 1, 4, 7, 6, 5],
                }[kind]
                fixed = conn[flip][:, perm]
                nodes[ids[flip], : len(perm)] = fixed
                m = np.abs(m)
            bad = ids[~(m > 0)]
            if len(bad):
                raise MeshError(f"cell {int(bad[0])} has non-positive measure")

    def _build_faces(self):
        # Local faces of every cell, grouped by face size.
        by_size: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        for kind, ids, conn in self.groups():
            for lf in CELL_FACES[kind]:
                by_size.setdefault(len(lf), []).append((ids, conn[:, lf]))

        face_nodes, owners, neighbors = [], [], []
        nv = self.n_vertices
        for size in sorted(by_size):
            cells = np.concatenate([c for c, _ in by_size[size]])
            local = np.concatenate([f for _, f in by_size[size]])
            key = _face_keys(np.sort(local, axis=1), nv)
            order = np.lexsort((cells, key))
            key, cells, local = key[order], cells[order], local[order]
            start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
            count = np.diff(np.r_[start, len(key)])
            if (count > 2).any():
                raise MeshError("non-manifold face shared by more than two cells")
            owner = cells[start]
            neighbor = np.where(count == 2, cells[np.minimum(start + 1, len(cells) - 1)], BOUNDARY)
            if (neighbor == owner).any():
                raise MeshError("cell has a repeated face")
            fn = np.full((len(start), 4), -1, dtype=np.int64)
            fn[:, :size] = local[start]
            face_nodes.append(fn)
            owners.append(owner)
            neighbors.append(neighbor)
        self.face_nodes = np.concatenate(face_nodes)
        self.face_owner = np.concatenate(owners)
        self.face_neighbor = np.concatenate(neighbors)
        self.face_nvert = (self.face_nodes >= 0).sum(axis=1)
        for a in (self.face_nodes, self.face_owner, self.face_neighbor, self.face_nvert):
            a.setflags(write=False)


def _infer_kind(nv: int, dim: int) -> str:
    table = {(2, 3): TRI, (2, 4): QUAD, (3, 4): TET, (3, 8): HEX}
    try:
        return table[(dim, nv)]
    except KeyError:
        raise MeshError(f"cannot infer cell kind of a {nv}-vertex cell in {dim}D") from None


def _face_keys(sorted_faces: np.ndarray, nv: int) -> np.ndarray:
    """Integer key for each sorted face.

    Three vertices identify a face of a conforming mesh, so quad faces are
    keyed by their three smallest vertex ids.
    """
    cols = sorted_faces[:, :3]
    k = cols.shape[1]
    if nv ** k < 2**62:
        key = np.zeros(len(cols), dtype=np.int64)
        for j in range(k):
            key = key * nv + cols[:, j]
        return key
    _, inv = np.unique(cols, axis=0, return_inverse=True)
    return inv.ravel().astype(np.int64)


def _signed_measure(kind: str, pts: np.ndarray) -> np.ndarray:
    if kind in (TRI, QUAD):
        x, y = pts[..., 0], pts[..., 1]
        return 0.5 * (x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)
    if kind == TET:
        e = pts[:, 1:] - pts[:, :1]
        return np.linalg.det(e) / 6.0
    xi, w = geo.reference_rule(HEX, 2)
    _, det = geo.map_cells(HEX, pts, xi)
    return det @ w


# -- generators -----------------------------------------------------------


def _check_bounds(bounds, dim):
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if lo.shape != (dim,) or hi.shape != (dim,) or not np.all(hi > lo):
        raise ValueError(f"degenerate bounds {bounds!r}")
    return lo, hi


def _cells_per_side(n, dim):
    counts = (n,) * dim if np.isscalar(n) else tuple(n)
    if len(counts) != dim or any(int(c) != c or c < 1 for c in counts):
        raise ValueError(f"need {dim} positive cell counts, got {n!r}")
    return tuple(int(c) for c in counts)


def generate_structured_quad(n, bounds=((0.0, 0.0), (1.0, 1.0))) -> BackgroundMesh:
    """Uniform axis-aligned grid of ``n`` x ``n`` squares (or ``(nx, ny)`` rectangles).

    Vertices and cells are numbered with x varying fastest.
    """
    nx, ny = _cells_per_side(n, 2)
    lo, hi = _check_bounds(bounds, 2)
    x = np.linspace(lo[0], hi[0], nx + 1)
    y = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(x, y, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    v0 = (i + j * (nx + 1)).ravel()
    cells = np.stack([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1], axis=-1)
    return BackgroundMesh(verts, cells, kinds=QUAD)


def generate_structured_hex(n, bounds=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> BackgroundMesh:
    """Uniform axis-aligned grid of ``n``^3 hexahedra, x fastest."""
    nx, ny, nz = _cells_per_side(n, 3)
    lo, hi = _check_bounds(bounds, 3)
    axes = [np.linspace(lo[d], hi[d], c + 1) for d, c in enumerate((nx, ny, nz))]
    Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    sx, sy = 1, nx + 1
    sz = (nx + 1) * (ny + 1)
    v0 = (i * sx + j * sy + k * sz).ravel()
    bottom = [v0, v0 + sx, v0 + sx + sy, v0 + sy]
    cells = np.stack(bottom + [b + sz for b in bottom], axis=-1)
    return BackgroundMesh(verts, cells, kinds=HEX)


_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """``count`` consecutive outputs of the SplitMix64 generator started at ``seed``."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed % 2**64) + _SM_GAMMA * np.arange(1, count + 1, dtype=np.uint64)
        z = state
        z = (z ^ (z >> np.uint64(30))) * _SM_M1
        z = (z ^ (z >> np.uint64(27))) * _SM_M2
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1) from the top 53 bits of SplitMix64."""
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def generate_perturbed_quad(n, amplitude: float, seed: int = 0, bounds=((0.0, 0.0), (1.0, 1.0))) -> BackgroundMesh:
    """Structured quad grid with interior vertices moved by seeded random offsets.

    Each interior vertex moves inside a disc of radius ``amplitude`` times the
    smaller cell width; boundary vertices stay in place.
    """
    if not 0.0 <= amplitude < 0.5:
        raise ValueError(f"amplitude must lie in [0, 0.5), got {amplitude}")
    base = generate_structured_quad(n, bounds)
    if amplitude == 0.0:
        return base
    nx, ny = _cells_per_side(n, 2)
    lo, hi = _check_bounds(bounds, 2)
    width = min((hi[0] - lo[0]) / nx, (hi[1] - lo[1]) / ny)
    verts = base.vertices.copy()
    u = uniform01(seed, 2 * len(verts)).reshape(-1, 2)
    radius = amplitude * width * np.sqrt(u[:, 0])
    angle = 2.0 * np.pi * u[:, 1]
    offset = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    on_boundary = (
        np.isclose(verts[:, 0], lo[0]) | np.isclose(verts[:, 0], hi[0])
        | np.isclose(verts[:, 1], lo[1]) | np.isclose(verts[:, 1], hi[1])
    )
    offset[on_boundary] = 0.0
    verts += offset
    return BackgroundMesh(verts, base.cell_nodes[:, :4], kinds=QUAD)


# -- dual graph ------------------------------------------------------------


@dataclass(frozen=True)
class DualGraph:
    """Face-neighbour graph of the cells in compressed-row form."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def __getitem__(self, i: int) -> list[int]:
        return self.indices[self.indptr[i] : self.indptr[i + 1]].tolist()

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def to_csr(self):
        import scipy.sparse as sp

        n = self.n_nodes
        data = np.ones(len(self.indices), dtype=np.int8)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


def dual_adjacency(mesh: BackgroundMesh) -> DualGraph:
    """Symmetric cell adjacency through shared faces, neighbour lists sorted."""
    inner = mesh.interior_faces
    a = mesh.face_owner[inner]
    b = mesh.face_neighbor[inner]
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(mesh.n_cells + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return DualGraph(np.cumsum(indptr), cols.astype(np.int64))
