"""R-tree of order (m, M) over cell bounding boxes.

Two construction paths are provided: deterministic sort-tile-recursive (STR)
bulk packing, which is what the agglomeration pipeline uses, and dynamic
R*-style insertion (choose-subtree by overlap/area enlargement, split by
margin and overlap, no forced reinsertion).
"""

from __future__ import annotations

import gc
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class Aabb:
    """Axis-aligned box; ``lo`` and ``hi`` are coordinate tuples with lo <= hi."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"inverted box lo={self.lo} hi={self.hi}")

    @classmethod
    def _trusted(cls, lo: tuple, hi: tuple) -> "Aabb":
        # Skips validation; callers pass min/max reductions.
        box = object.__new__(cls)
        object.__setattr__(box, "lo", lo)
        object.__setattr__(box, "hi", hi)
        return box

    @classmethod
    def from_points(cls, pts) -> "Aabb":
        pts = np.asarray(pts, dtype=float)
        return cls(tuple(pts.min(axis=0).tolist()), tuple(pts.max(axis=0).tolist()))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def extent(self) -> tuple:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def measure(self) -> float:
        out = 1.0
        for a, b in zip(self.lo, self.hi):
            out *= b - a
        return out

    @property
    def margin(self) -> float:
        """Sum of edge lengths along each axis (half perimeter in 2D)."""
        return sum(b - a for a, b in zip(self.lo, self.hi))

    @property
    def center(self) -> tuple:
        return tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb._trusted(
            tuple(map(min, self.lo, other.lo)), tuple(map(max, self.hi, other.hi))
        )

    def overlap(self, other: "Aabb") -> float:
        out = 1.0
        for a0, a1, b0, b1 in zip(self.lo, self.hi, other.lo, other.hi):
            w = min(a1, b1) - max(a0, b0)
            if w <= 0.0:
                return 0.0
            out *= w
        return out

    def contains(self, other: "Aabb") -> bool:
        return all(a <= c for a, c in zip(self.lo, other.lo)) and all(
            b >= d for b, d in zip(self.hi, other.hi)
        )


def hull(boxes: Iterable[Aabb]) -> Aabb:
    boxes = list(boxes)
    lo = tuple(min(c) for c in zip(*(b.lo for b in boxes)))
    hi = tuple(max(c) for c in zip(*(b.hi for b in boxes)))
    return Aabb._trusted(lo, hi)


class Node:
    """Tree node. Leaves hold ``(box, id)`` entries, internal nodes hold child nodes."""

    __slots__ = ("box", "children", "ids", "_boxes", "_arrays")

    def __init__(self, box: Optional[Aabb], children=None, ids=None, boxes=None, arrays=None):
        self.box = box
        self.children: Optional[list[Node]] = children
        self.ids: Optional[list[int]] = ids
        self._boxes = boxes
        # (lo, hi) arrays of the entries; boxes are materialized on demand.
        self._arrays = arrays

    @property
    def boxes(self) -> Optional[list[Aabb]]:
        if self._boxes is None and self._arrays is not None:
            lo, hi = self._arrays
            self._boxes = [Aabb._trusted(tuple(a), tuple(b)) for a, b in zip(lo.tolist(), hi.tolist())]
            self._arrays = None
        return self._boxes

    @boxes.setter
    def boxes(self, value):
        self._boxes = value
        self._arrays = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def __len__(self):
        return len(self.ids) if self.is_leaf else len(self.children)

    def child_boxes(self) -> list[Aabb]:
        return self.boxes if self.is_leaf else [c.box for c in self.children]

    def refresh_box(self):
        self.box = hull(self.child_boxes()) if len(self) else None

    def __repr__(self):
        kind = "Leaf" if self.is_leaf else "Node"
        return f"{kind}(n={len(self)}, box={self.box})"


class RTree:
    """R-tree of order (m, M).

    ``height`` counts node levels, so a tree whose root is a leaf has height 1.
    """

    def __init__(self, dim: int, m: Optional[int] = None, M: Optional[int] = None):
        M = 2**dim if M is None else M
        m = M // 2 if m is None else m
        if not (2 <= m and 2 * m <= M):
            raise ValueError(f"invalid order (m, M) = ({m}, {M}); need 2 <= m <= M/2")
        self.dim = dim
        self.m = m
        self.M = M
        self.root = Node(None, ids=[], boxes=[])
        self.height = 1
        self._ids: set[int] = set()

    def __len__(self):
        return len(self._ids)

    @property
    def order(self) -> tuple[int, int]:
        return self.m, self.M

    def levels(self) -> list[list[Node]]:
        """Nodes grouped by depth, root first, each level left to right."""
        out = [[self.root]]
        while not out[-1][0].is_leaf:
            out.append([c for n in out[-1] for c in n.children])
        return out

    def level_sizes(self) -> list[int]:
        return [len(level) for level in self.levels()]

    def insert(self, box: Aabb, ident: int):
        insert_rstar(self, (box, ident))


def default_order(dim: int) -> tuple[int, int]:
    """Default (m, M) = (2^(d-1), 2^d)."""
    return 2 ** (dim - 1), 2**dim


def _iroot_ceil(n: int, d: int) -> int:
    """Smallest integer s with s**d >= n."""
    s = max(1, int(round(n ** (1.0 / d))))
    while s**d < n:
        s += 1
    while s > 1 and (s - 1) ** d >= n:
        s -= 1
    return s


def _group_sizes(n: int, m: int, M: int) -> list[int]:
    q, r = divmod(n, M)
    sizes = [M] * q + ([r] if r else [])
    if r and r < m and q >= 1:
        t = M + r
        sizes[-2:] = [t - t // 2, t // 2]
    return sizes


def _str_order(lo: np.ndarray, hi: np.ndarray, keys: np.ndarray, M: int) -> np.ndarray:
    """Sort-tile-recursive ordering of boxes; ties are broken by ``keys``."""
    n, d = lo.shape
    centers = 0.5 * (lo + hi)
    s = _iroot_ceil(-(-n // M), d)
    order = np.arange(n)
    slab = np.zeros(n, dtype=np.int64)
    for axis in range(d):
        # Sort inside the current slabs by this axis, key as tiebreak.
        perm = np.lexsort((keys[order], centers[order, axis], slab))
        order, slab = order[perm], slab[perm]
        if axis == d - 1:
            break
        first = np.r_[0, np.flatnonzero(slab[1:] != slab[:-1]) + 1]
        local = np.arange(n) - np.repeat(first, np.diff(np.r_[first, n]))
        slab = slab * (n + 1) + local // (s ** (d - 1 - axis) * M)
    return order


def build_str(entries: Sequence[tuple[Aabb, int]], m: Optional[int] = None, M: Optional[int] = None) -> RTree:
    """Bulk-load an R-tree from ``(box, id)`` entries with STR packing."""
    if not entries:
        raise ValueError("cannot build an R-tree from no entries")
    lo = np.array([b.lo for b, _ in entries], dtype=float)
    hi = np.array([b.hi for b, _ in entries], dtype=float)
    ids = np.array([i for _, i in entries], dtype=np.int64)
    return build_str_arrays(lo, hi, ids, m, M, boxes=[b for b, _ in entries])


def build_str_arrays(lo, hi, ids=None, m=None, M=None, boxes=None) -> RTree:
    """Array front end of :func:`build_str`; ``lo``/``hi`` are (n, d)."""
    # Node allocation is acyclic; the cyclic collector only adds pauses here.
    enabled = gc.isenabled()
    gc.disable()
    try:
        return _build_str(lo, hi, ids, m, M, boxes)
    finally:
        if enabled:
            gc.enable()


def _build_str(lo, hi, ids, m, M, boxes) -> RTree:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n, d = lo.shape
    if n == 0:
        raise ValueError("cannot build an R-tree from no entries")
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids)) != n:
        raise ValueError("duplicate entry ids")
    tree = RTree(d, m, M)
    m, M = tree.m, tree.M

    # Leaf level.
    order = _str_order(lo, hi, ids, M)
    sizes = _group_sizes(n, m, M)
    bounds = np.r_[0, np.cumsum(sizes)]
    olo, ohi = lo[order], hi[order]
    node_lo = np.minimum.reduceat(olo, bounds[:-1], axis=0)
    node_hi = np.maximum.reduceat(ohi, bounds[:-1], axis=0)
    oids = ids[order].tolist()
    nlo, nhi = node_lo.tolist(), node_hi.tolist()
    if boxes is None:
        nodes = [
            Node(Aabb._trusted(tuple(nlo[k]), tuple(nhi[k])), ids=oids[a:b], arrays=(olo[a:b], ohi[a:b]))
            for k, (a, b) in enumerate(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
        ]
    else:
        ebox = [boxes[i] for i in order]
        nodes = [
            Node(Aabb._trusted(tuple(nlo[k]), tuple(nhi[k])), ids=oids[a:b], boxes=ebox[a:b])
            for k, (a, b) in enumerate(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
        ]
    height = 1
    while len(nodes) > 1:
        order = _str_order(node_lo, node_hi, np.arange(len(nodes)), M)
        sizes = _group_sizes(len(nodes), m, M)
        bounds = np.r_[0, np.cumsum(sizes)]
        olo, ohi = node_lo[order], node_hi[order]
        node_lo = np.minimum.reduceat(olo, bounds[:-1], axis=0)
        node_hi = np.maximum.reduceat(ohi, bounds[:-1], axis=0)
        ordered = [nodes[i] for i in order]
        nlo, nhi = node_lo.tolist(), node_hi.tolist()
        nodes = [
            Node(Aabb._trusted(tuple(nlo[k]), tuple(nhi[k])), children=ordered[a:b])
            for k, (a, b) in enumerate(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
        ]
        height += 1
    tree.root = nodes[0]
    tree.height = height
    tree._ids = set(ids.tolist())
    return tree


# -- dynamic R* insertion -------------------------------------------------


def _enlargement(box: Aabb, add: Aabb) -> float:
    return box.union(add).measure - box.measure


def _choose_subtree(node: Node, box: Aabb) -> int:
    kids = node.children
    if kids[0].is_leaf:
        best, best_key = 0, None
        for i, c in enumerate(kids):
            grown = c.box.union(box)
            before = sum(c.box.overlap(o.box) for j, o in enumerate(kids) if j != i)
            after = sum(grown.overlap(o.box) for j, o in enumerate(kids) if j != i)
            key = (after - before, grown.measure - c.box.measure, c.box.measure, i)
            if best_key is None or key < best_key:
                best, best_key = i, key
        return best
    keys = [(_enlargement(c.box, box), c.box.measure, i) for i, c in enumerate(kids)]
    return min(keys)[2]


def _split(items: list, boxes: list[Aabb], m: int, M: int):
    """R* split: pick the axis with least margin sum, then the least-overlap cut."""
    n = len(items)
    dim = boxes[0].dim
    best_axis, best_margin, best_sorts = None, None, None
    for axis in range(dim):
        sorts = []
        margin = 0.0
        for end in ("lo", "hi"):
            idx = sorted(range(n), key=lambda i: (getattr(boxes[i], end)[axis], getattr(boxes[i], "hi" if end == "lo" else "lo")[axis], i))
            sorts.append(idx)
            for k in range(m, n - m + 1):
                margin += hull(boxes[i] for i in idx[:k]).margin + hull(boxes[i] for i in idx[k:]).margin
        if best_margin is None or margin < best_margin:
            best_axis, best_margin, best_sorts = axis, margin, sorts
    best_key, best_cut = None, None
    for idx in best_sorts:
        for k in range(m, n - m + 1):
            a = hull(boxes[i] for i in idx[:k])
            b = hull(boxes[i] for i in idx[k:])
            key = (a.overlap(b), a.margin + b.margin, min(idx[:k]))
            if best_key is None or key < best_key:
                best_key, best_cut = key, (idx[:k], idx[k:])
    return best_cut


def _split_node(node: Node, m: int, M: int) -> Node:
    """Split an overflowing node in place; returns the new sibling."""
    if node.is_leaf:
        first, second = _split(list(range(len(node.ids))), node.boxes, m, M)
        ids, boxes = node.ids, node.boxes
        sib = Node(None, ids=[ids[i] for i in second], boxes=[boxes[i] for i in second])
        node.ids = [ids[i] for i in first]
        node.boxes = [boxes[i] for i in first]
    else:
        kids = node.children
        first, second = _split(kids, [c.box for c in kids], m, M)
        sib = Node(None, children=[kids[i] for i in second])
        node.children = [kids[i] for i in first]
    node.refresh_box()
    sib.refresh_box()
    return sib


def insert_rstar(tree: RTree, entry: tuple[Aabb, int]) -> None:
    """Insert ``(box, id)`` dynamically, splitting overflowing nodes bottom-up."""
    box, ident = entry
    ident = int(ident)
    if ident in tree._ids:
        raise ValueError(f"duplicate id {ident}")
    if box.dim != tree.dim:
        raise ValueError("box dimension does not match the tree")
    path = [tree.root]
    while not path[-1].is_leaf:
        node = path[-1]
        path.append(node.children[_choose_subtree(node, box)])
    leaf = path[-1]
    leaf.ids.append(ident)
    leaf.boxes.append(box)
    tree._ids.add(ident)

    # Walk back up, splitting on overflow and refreshing hulls.
    for depth in range(len(path) - 1, -1, -1):
        node = path[depth]
        node.box = box if node.box is None else node.box.union(box)
        if len(node) > tree.M:
            sib = _split_node(node, tree.m, tree.M)
            if depth == 0:
                tree.root = Node(None, children=[node, sib])
                tree.root.refresh_box()
                tree.height += 1
            else:
                parent = path[depth - 1]
                parent.children.insert(parent.children.index(node) + 1, sib)
                parent.refresh_box()


# -- queries ----------------------------------------------------------------


def nodes_at_depth(tree: RTree, k: int) -> list[Node]:
    """All nodes at distance ``k`` from the root, left to right."""
    if not 0 <= k < tree.height:
        raise IndexError(f"depth {k} outside [0, {tree.height})")
    level = [tree.root]
    for _ in range(k):
        level = [c for n in level for c in n.children]
    return level


@dataclass(frozen=True)
class TreeReport:
    ok: bool
    violation: Optional[str] = None

    def __bool__(self):
        return self.ok


def validate_tree(tree: RTree) -> TreeReport:
    """Check hulls, uniform leaf depth, occupancy bounds and the id partition."""
    m, M = tree.m, tree.M
    seen: list[int] = []
    queue = deque([(tree.root, 0, 0)])
    per_depth: dict[int, int] = {}
    leaf_depths = set()
    while queue:
        node, depth, idx = queue.popleft()
        where = f"node (depth {depth}, index {idx})"
        n = len(node)
        if n:
            expected = hull(node.child_boxes())
            if node.box != expected:
                return TreeReport(False, f"hull violation at {where}")
        if node is tree.root:
            if not node.is_leaf and not 2 <= n <= M:
                return TreeReport(False, f"occupancy violation at root: {n} children")
            if node.is_leaf and n > M:
                return TreeReport(False, f"occupancy violation at root: {n} entries")
        elif not m <= n <= M:
            return TreeReport(False, f"occupancy violation at {where}: {n} not in [{m}, {M}]")
        if node.is_leaf:
            leaf_depths.add(depth)
            seen.extend(node.ids)
        else:
            for c in node.children:
                k = per_depth.get(depth + 1, 0)
                per_depth[depth + 1] = k + 1
                queue.append((c, depth + 1, k))
    if leaf_depths != {tree.height - 1}:
        return TreeReport(False, f"leaf depth violation: leaves at depths {sorted(leaf_depths)}, height {tree.height}")
    if len(seen) != len(set(seen)):
        return TreeReport(False, "partition violation: duplicate entry id")
    if sorted(seen) != list(range(len(seen))):
        return TreeReport(False, "partition violation: entry ids are not 0..N-1")
    return TreeReport(True)


def mbr_of_cell(mesh, cell_id: int) -> Aabb:
    """Bounding box of one mesh cell."""
    if not 0 <= cell_id < mesh.n_cells:
        raise IndexError(f"cell {cell_id} out of range")
    return Aabb.from_points(mesh.vertices[list(mesh.cell(cell_id))])


def build_mesh_tree(mesh, m=None, M=None) -> RTree:
    """STR tree over all cell bounding boxes of ``mesh``; defaults to (2^(d-1), 2^d)."""
    dm, dM = default_order(mesh.dim)
    return build_str_arrays(mesh.cell_lo, mesh.cell_hi, None, m or dm, M or dM)
