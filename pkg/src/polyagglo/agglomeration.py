"""Agglomerates from R-tree levels, nested hierarchies, polytopal meshes and a graph baseline."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from itertools import chain
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from .mesh import BOUNDARY, BackgroundMesh, dual_adjacency
from .spatial_index import Node, RTree, build_str_arrays, default_order, nodes_at_depth

STRATEGIES = ("rtree", "graph", "external")
HIERARCHY_FORMAT = "polyagglo-hierarchy"
HIERARCHY_VERSION = 1


class PartitionError(ValueError):
    pass


class HierarchyError(ValueError):
    pass


class Partition:
    """Assignment of every fine cell to one of ``n_parts`` agglomerates.

    Every id in ``0..n_parts-1`` must be used.
    """

    def __init__(self, assignment, n_parts: Optional[int] = None):
        a = np.asarray(assignment)
        if a.ndim != 1 or len(a) == 0:
            raise PartitionError("assignment must be a nonempty 1-D array")
        if not np.issubdtype(a.dtype, np.integer):
            raise PartitionError("assignment must hold integer ids")
        a = a.astype(np.int64)
        if a.min() < 0:
            raise PartitionError("negative agglomerate id")
        n = int(a.max()) + 1 if n_parts is None else int(n_parts)
        if a.max() >= n:
            raise PartitionError(f"agglomerate id {int(a.max())} >= n_parts {n}")
        counts = np.bincount(a, minlength=n)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            raise PartitionError(f"empty agglomerate {int(empty[0])} (of {n})")
        a.setflags(write=False)
        self.assignment = a
        self.n_parts = n
        self.sizes = counts

    @property
    def n_cells(self) -> int:
        return len(self.assignment)

    @classmethod
    def identity(cls, n: int) -> "Partition":
        return cls(np.arange(n))

    def members(self) -> list[np.ndarray]:
        """Sorted cell ids of each agglomerate."""
        order = np.argsort(self.assignment, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])

    def __eq__(self, other):
        return isinstance(other, Partition) and self.n_parts == other.n_parts and np.array_equal(
            self.assignment, other.assignment
        )

    def __repr__(self):
        return f"Partition(n_cells={self.n_cells}, n_parts={self.n_parts})"


# -- R-tree extraction ------------------------------------------------------


def extract_leaves(node: Node) -> list[int]:
    """Entry ids of all leaves below ``node``, collected recursively."""
    if node.is_leaf:
        return list(node.ids)
    out: list[int] = []
    for child in node.children:
        out.extend(extract_leaves(child))
    return out


def compute_agglomerates(tree: RTree, depth: int) -> Partition:
    """One agglomerate per tree node at ``depth``, numbered left to right."""
    nodes = nodes_at_depth(tree, depth)
    groups = [extract_leaves(n) for n in nodes]
    ids = np.fromiter(chain.from_iterable(groups), dtype=np.int64, count=len(tree))
    assignment = np.empty(len(ids), dtype=np.int64)
    assignment[ids] = np.repeat(np.arange(len(groups)), [len(g) for g in groups])
    return Partition(assignment, len(groups))


def _tree_level_maps(tree: RTree):
    """Leaf-node index of every entry and node-to-parent maps, leaves upward."""
    levels = tree.levels()
    leaf = levels[-1]
    ids = np.fromiter(chain.from_iterable(n.ids for n in leaf), dtype=np.int64)
    order = np.argsort(ids)
    leaf_of = np.repeat(np.arange(len(leaf)), [len(n.ids) for n in leaf])[order]
    parents = []
    for depth in range(len(levels) - 1, 0, -1):
        upper = levels[depth - 1]
        parents.append(np.repeat(np.arange(len(upper)), [len(n.children) for n in upper]))
    return ids[order], leaf_of, parents


@dataclass
class AgglomerateHierarchy:
    """Nested partitions of the fine cells, finest (identity) first.

    ``parents[l - 1][k]`` is the level-``l`` agglomerate containing level
    ``l - 1`` agglomerate ``k``.
    """

    mesh: BackgroundMesh
    levels: list[Partition]
    parents: list[np.ndarray]
    strategy: str = "rtree"
    by_material: bool = False
    disconnected: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise HierarchyError(f"unknown strategy {self.strategy!r}")
        self.validate()

    def __len__(self):
        return len(self.levels)

    def sizes(self) -> list[int]:
        return [p.n_parts for p in self.levels]

    def validate(self):
        levels, parents = self.levels, self.parents
        if not levels:
            raise HierarchyError("hierarchy has no levels")
        n = self.mesh.n_cells
        if levels[0] != Partition.identity(n):
            raise HierarchyError("level 0 must be the identity partition")
        if len(parents) != len(levels) - 1:
            raise HierarchyError("need one parent map per coarse level")
        for lvl, part in enumerate(levels):
            if part.n_cells != n:
                raise HierarchyError(f"level {lvl} covers {part.n_cells} cells, mesh has {n}")
        for lvl in range(1, len(levels)):
            fine, coarse, par = levels[lvl - 1], levels[lvl], np.asarray(parents[lvl - 1])
            if coarse.n_parts >= fine.n_parts:
                raise HierarchyError(f"level sizes must strictly decrease at level {lvl}")
            if par.shape != (fine.n_parts,) or par.min() < 0 or par.max() >= coarse.n_parts:
                raise HierarchyError(f"nesting violation at level {lvl}: malformed parent map")
            if not np.array_equal(par[fine.assignment], coarse.assignment):
                raise HierarchyError(f"nesting violation at level {lvl}")
        if self.by_material:
            mat = self.mesh.material
            for lvl, part in enumerate(levels):
                lo = np.full(part.n_parts, np.iinfo(np.int64).max)
                hi = np.full(part.n_parts, -1)
                np.minimum.at(lo, part.assignment, mat)
                np.maximum.at(hi, part.assignment, mat)
                if (lo != hi).any():
                    raise HierarchyError(f"material mixing at level {lvl}")

    def ancestor_map(self, fine: int, coarse: int) -> np.ndarray:
        """Map level-``fine`` agglomerates to their level-``coarse`` ancestors."""
        if not 0 <= fine <= coarse < len(self.levels):
            raise IndexError(f"need 0 <= fine <= coarse < {len(self.levels)}")
        out = np.arange(self.levels[fine].n_parts)
        for lvl in range(fine, coarse):
            out = self.parents[lvl][out]
        return out


def _from_level_assignments(mesh, assignments, strategy, by_material=False):
    levels, parents = [Partition.identity(mesh.n_cells)], []
    for a in assignments:
        part = Partition(a)
        if part.n_parts >= levels[-1].n_parts:
            continue
        par = np.empty(levels[-1].n_parts, dtype=np.int64)
        par[levels[-1].assignment] = part.assignment
        levels.append(part)
        parents.append(par)
    return AgglomerateHierarchy(mesh, levels, parents, strategy, by_material)


def _tree_assignments(tree: RTree, n_cells: int, cells: np.ndarray):
    """Per-level assignments (leaf level first) of ``cells`` from a tree over them."""
    ids, leaf_of, parents = _tree_level_maps(tree)
    if not np.array_equal(ids, np.sort(cells)):
        raise HierarchyError("tree entries do not match the mesh cells")
    pos = np.searchsorted(ids, cells)
    current = leaf_of[pos]
    out = [current]
    for par in parents:
        current = par[current]
        out.append(current)
    return out


def build_hierarchy(mesh: BackgroundMesh, tree=None, by_material: bool = False, m=None, M=None) -> AgglomerateHierarchy:
    """Nested hierarchy from the levels of an R-tree over the mesh cells.

    Level 0 is the fine mesh, level 1 groups cells by leaf node and every
    further level climbs one tree level. With ``by_material`` one tree is
    built per material label; the per-material levels are concatenated and a
    material whose tree is exhausted keeps repeating its coarsest partition.
    """
    dm, dM = default_order(mesh.dim)
    m, M = m or dm, M or dM
    if not by_material:
        if tree is None:
            tree = build_str_arrays(mesh.cell_lo, mesh.cell_hi, None, m, M)
        cells = np.arange(mesh.n_cells)
        return _from_level_assignments(mesh, _tree_assignments(tree, mesh.n_cells, cells), "rtree")

    if mesh.material is None:
        raise ValueError("by_material requires per-cell material labels")
    labels = np.unique(mesh.material)
    per_material = []
    for lab in labels:
        cells = np.flatnonzero(mesh.material == lab)
        t = tree[int(lab)] if tree is not None else build_str_arrays(
            mesh.cell_lo[cells], mesh.cell_hi[cells], cells, m, M
        )
        per_material.append((cells, _tree_assignments(t, mesh.n_cells, cells)))
    depth = max(len(a) for _, a in per_material)
    assignments = []
    for lvl in range(depth):
        a = np.empty(mesh.n_cells, dtype=np.int64)
        offset = 0
        for cells, levels in per_material:
            local = levels[min(lvl, len(levels) - 1)]
            a[cells] = local + offset
            offset += int(local.max()) + 1
        assignments.append(a)
    return _from_level_assignments(mesh, assignments, "rtree", by_material=True)


def build_hierarchy_timed(mesh: BackgroundMesh, m=None, M=None):
    """:func:`build_hierarchy` (single tree) split into timed phases.

    Returns the hierarchy and wall-clock seconds for building the tree,
    visiting it to collect node memberships, and flagging cells per level.
    """
    dm, dM = default_order(mesh.dim)
    t0 = time.perf_counter()
    tree = build_str_arrays(mesh.cell_lo, mesh.cell_hi, None, m or dm, M or dM)
    t1 = time.perf_counter()
    ids, leaf_of, parents = _tree_level_maps(tree)
    t2 = time.perf_counter()
    if not np.array_equal(ids, np.arange(mesh.n_cells)):
        raise HierarchyError("tree entries do not match the mesh cells")
    current, assignments = leaf_of, [leaf_of]
    for par in parents:
        current = par[current]
        assignments.append(current)
    hier = _from_level_assignments(mesh, assignments, "rtree")
    t3 = time.perf_counter()
    return hier, {"build_s": t1 - t0, "visit_s": t2 - t1, "flag_s": t3 - t2}


def hierarchy_from_partition(mesh: BackgroundMesh, partition: Partition, strategy="graph") -> AgglomerateHierarchy:
    """Two-level hierarchy (fine mesh plus one partition) for non-tree strategies."""
    levels = [Partition.identity(mesh.n_cells)]
    parents = []
    if partition.n_parts < mesh.n_cells:
        par = np.empty(mesh.n_cells, dtype=np.int64)
        par[:] = partition.assignment
        levels.append(partition)
        parents.append(par)
    return AgglomerateHierarchy(mesh, levels, parents, strategy)


# -- polytopal meshes ---------------------------------------------------------


class PolytopalMesh:
    """Geometry of one agglomeration level.

    Attributes
    ----------
    lo, hi : (P, d) bounding boxes of the agglomerates.
    measure : (P,) sum of member-cell measures.
    diameter : (P,) largest vertex-to-vertex distance over member cells.
    skeleton : fine face ids on agglomerate boundaries (interior and domain).
    plus, minus : agglomerate on the owner / neighbour side of each skeleton
        face; ``minus`` is -1 on the domain boundary.
    disconnected : agglomerates whose cells are not face-connected.
    """

    def __init__(self, mesh: BackgroundMesh, partition: Partition):
        if partition.n_cells != mesh.n_cells:
            raise PartitionError(
                f"partition covers {partition.n_cells} cells, mesh has {mesh.n_cells}"
            )
        self.mesh = mesh
        self.partition = partition
        a = partition.assignment
        P = partition.n_parts
        self.n = P
        d = mesh.dim

        lo = np.full((P, d), np.inf)
        hi = np.full((P, d), -np.inf)
        np.minimum.at(lo, a, mesh.cell_lo)
        np.maximum.at(hi, a, mesh.cell_hi)
        self.lo, self.hi = lo, hi
        self.measure = np.bincount(a, weights=mesh.cell_measure, minlength=P)
        self.diameter = _agglomerate_diameters(mesh, partition)

        owner_agg = a[mesh.face_owner]
        nb = mesh.face_neighbor
        nb_agg = np.where(nb == BOUNDARY, -1, a[np.maximum(nb, 0)])
        on_skeleton = nb_agg != owner_agg
        self.skeleton = np.flatnonzero(on_skeleton)
        self.plus = owner_agg[self.skeleton]
        self.minus = nb_agg[self.skeleton]

        inner = mesh.interior_faces
        same = a[mesh.face_owner[inner]] == a[mesh.face_neighbor[inner]]
        r, c = mesh.face_owner[inner][same], mesh.face_neighbor[inner][same]
        g = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(mesh.n_cells,) * 2)
        _, comp = connected_components(g, directed=False)
        n_comp = np.array([len(np.unique(comp[m])) for m in partition.members()]) if P < mesh.n_cells else np.ones(P, int)
        self.disconnected = np.flatnonzero(n_comp > 1)

    @property
    def box_measure(self) -> np.ndarray:
        return np.prod(self.hi - self.lo, axis=1)

    @property
    def interior_skeleton(self) -> np.ndarray:
        return self.skeleton[self.minus >= 0]

    @property
    def boundary_skeleton(self) -> np.ndarray:
        return self.skeleton[self.minus < 0]

    def members(self) -> list[np.ndarray]:
        return self.partition.members()

    def __repr__(self):
        return f"PolytopalMesh(agglomerates={self.n}, skeleton_faces={len(self.skeleton)})"


def build_polytopal_mesh(mesh: BackgroundMesh, partition: Partition) -> PolytopalMesh:
    return PolytopalMesh(mesh, partition)


def _pairwise_max(pts: np.ndarray) -> float:
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff * diff).sum(-1).max()))


def _agglomerate_diameters(mesh: BackgroundMesh, partition: Partition) -> np.ndarray:
    if partition.n_parts == mesh.n_cells and np.array_equal(partition.assignment, np.arange(mesh.n_cells)):
        return mesh.cell_diameter.copy()
    a = partition.assignment
    nv = mesh.n_vertices
    keys = []
    for _, ids, conn in mesh.groups():
        keys.append((a[ids][:, None] * nv + conn).ravel())
    keys = np.unique(np.concatenate(keys))
    agg, vert = np.divmod(keys, nv)
    splits = np.flatnonzero(np.diff(agg)) + 1
    out = np.empty(partition.n_parts)
    for k, vs in zip(agg[np.r_[0, splits]], np.split(vert, splits)):
        pts = mesh.vertices[vs]
        if len(pts) > 32:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except QhullError:
                pass
        out[k] = _pairwise_max(pts)
    return out


# -- graph-partition baseline ---------------------------------------------------


def graph_partition_baseline(mesh: BackgroundMesh, n_parts: int, seed: int = 0) -> Partition:
    """Recursive inertial bisection of the cell centroids plus connectivity repair.

    Each split cuts along the principal axis of the centroid cloud so that the
    two sides receive cell counts proportional to their target part counts.
    Afterwards every part is reduced to its largest face-connected component;
    detached pieces join the neighbouring part they share most faces with.
    """
    return Partition(_repair_connectivity(mesh, _inertial_bisection(mesh, n_parts, seed)), n_parts)


def graph_partition_timed(mesh: BackgroundMesh, n_parts: int, seed: int = 0):
    """Baseline partition with the same three timing phases as the tree path."""
    t0 = time.perf_counter()
    mesh.cell_centroid, mesh.interior_faces
    t1 = time.perf_counter()
    raw = _inertial_bisection(mesh, n_parts, seed)
    t2 = time.perf_counter()
    part = Partition(_repair_connectivity(mesh, raw), n_parts)
    t3 = time.perf_counter()
    return part, {"build_s": t1 - t0, "visit_s": t2 - t1, "flag_s": t3 - t2}


def _inertial_bisection(mesh, n_parts, seed):
    n = mesh.n_cells
    if not 1 <= n_parts <= n:
        raise ValueError(f"n_parts must lie in [1, {n}], got {n_parts}")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n)
    cent = mesh.cell_centroid
    assignment = np.empty(n, dtype=np.int64)

    stack = [(np.arange(n), n_parts, 0)]
    while stack:
        cells, k, first = stack.pop()
        if k == 1:
            assignment[cells] = first
            continue
        pts = cent[cells] - cent[cells].mean(axis=0)
        _, vecs = np.linalg.eigh(pts.T @ pts)
        axis = vecs[:, -1]
        axis = axis * np.sign(axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]])
        proj = pts @ axis
        order = np.lexsort((tiebreak[cells], proj))
        k1 = k // 2
        n1 = int(round(len(cells) * k1 / k))
        n1 = min(max(n1, k1), len(cells) - (k - k1))
        stack.append((cells[order[n1:]], k - k1, first + k1))
        stack.append((cells[order[:n1]], k1, first))
    return assignment


def _repair_connectivity(mesh, assignment, max_rounds=100):
    inner = mesh.interior_faces
    r, c = mesh.face_owner[inner], mesh.face_neighbor[inner]
    n = mesh.n_cells
    a = assignment.copy()
    for _ in range(max_rounds):
        same = a[r] == a[c]
        g = sp.coo_matrix((np.ones(same.sum()), (r[same], c[same])), shape=(n, n))
        _, comp = connected_components(g, directed=False)
        comp_size = np.bincount(comp)
        # Largest component of each part survives (lowest label on ties).
        comp_part = np.empty(comp.max() + 1, dtype=np.int64)
        comp_part[comp] = a
        order = np.lexsort((np.arange(len(comp_size)), -comp_size, comp_part))
        keep = np.zeros(len(comp_size), dtype=bool)
        first_of_part = np.r_[True, comp_part[order][1:] != comp_part[order][:-1]]
        keep[order[first_of_part]] = True
        stray = ~keep[comp]
        if not stray.any():
            return a
        # Vote across faces leaving each stray component.
        cross = comp[r] != comp[c]
        rr = np.concatenate([r[cross], c[cross]])
        cc = np.concatenate([c[cross], r[cross]])
        sel = stray[rr]
        votes = {}
        for src, dst in zip(comp[rr[sel]].tolist(), a[cc[sel]].tolist()):
            d = votes.setdefault(src, {})
            d[dst] = d.get(dst, 0) + 1
        changed = False
        for src, tally in votes.items():
            target = max(sorted(tally), key=lambda p: tally[p])
            a[comp == src] = target
            changed = True
        if not changed:
            return a
    return a


# -- file exchange ------------------------------------------------------------


def export_metis_graph(mesh: BackgroundMesh, path) -> None:
    """Write the dual graph in METIS format: "n m" header, 1-indexed neighbour lines."""
    g = dual_adjacency(mesh)
    lines = [f"{g.n_nodes} {g.n_edges}"]
    for i in range(g.n_nodes):
        lines.append(" ".join(str(j + 1) for j in g[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_partition(path, n_cells: int, n_parts: Optional[int] = None) -> Partition:
    """Read a flat partition file (one part id per line) for ``n_cells`` cells."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    while raw and not raw[-1].strip():
        raw.pop()
    if len(raw) != n_cells:
        raise PartitionError(f"{path}: expected {n_cells} lines, found {len(raw)}")
    ids = []
    for lineno, text in enumerate(raw, 1):
        try:
            ids.append(int(text.strip()))
        except ValueError:
            raise PartitionError(f"{path}:{lineno}: missing or invalid part id {text!r}") from None
    return Partition(np.array(ids, dtype=np.int64), n_parts)


def serialize_hierarchy(hier: AgglomerateHierarchy, path) -> None:
    doc = {
        "format": HIERARCHY_FORMAT,
        "version": HIERARCHY_VERSION,
        "strategy": hier.strategy,
        "by_material": hier.by_material,
        "n_cells": hier.mesh.n_cells,
        "mesh_checksum": hier.mesh.checksum(),
        "n_levels": len(hier.levels),
        "sizes": hier.sizes(),
        "levels": [p.assignment.tolist() for p in hier.levels],
        "parents": [np.asarray(p).tolist() for p in hier.parents],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_hierarchy(path, mesh: BackgroundMesh) -> AgglomerateHierarchy:
    """Load a hierarchy document and check it against ``mesh``."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise HierarchyError(f"{path}: not a hierarchy document ({exc})") from None
    if doc.get("format") != HIERARCHY_FORMAT or doc.get("version") != HIERARCHY_VERSION:
        raise HierarchyError(f"{path}: unsupported document format")
    if doc["n_cells"] != mesh.n_cells:
        raise HierarchyError(f"size mismatch: document has {doc['n_cells']} cells, mesh has {mesh.n_cells}")
    if doc["mesh_checksum"] != mesh.checksum():
        raise HierarchyError("checksum mismatch: hierarchy was built on a different mesh")
    if len(doc["levels"]) != doc["n_levels"]:
        raise HierarchyError("level count mismatch")
    try:
        levels = [Partition(np.array(a, dtype=np.int64)) for a in doc["levels"]]
    except PartitionError as exc:
        raise HierarchyError(str(exc)) from None
    parents = [np.array(p, dtype=np.int64) for p in doc["parents"]]
    return AgglomerateHierarchy(mesh, levels, parents, doc["strategy"], doc.get("by_material", False))
