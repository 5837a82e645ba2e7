"""Shape-quality metrics of agglomerates: uniformity, circle ratio, box ratio and overlap."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from .agglomeration import PolytopalMesh
from .geometry import CELL_FACES

INRADIUS_RTOL = 1e-3
_CANDIDATES = 16


def uniformity_factor(diameter, h_mesh: float):
    """diam(K) / h, where h is the largest agglomerate diameter of the mesh."""
    if not h_mesh > 0:
        raise ValueError(f"mesh size must be positive, got {h_mesh}")
    return np.asarray(diameter, dtype=float) / h_mesh


def box_ratio(measure, box_measure):
    """|K| / |MBR(K)|."""
    return np.asarray(measure, dtype=float) / np.asarray(box_measure, dtype=float)


def overlap_factor(polymesh: PolytopalMesh) -> float:
    """|Omega| / sum of agglomerate MBR measures."""
    return float(polymesh.mesh.domain_measure / polymesh.box_measure.sum())


def circle_ratio(polymesh: PolytopalMesh, k: int | None = None, rtol: float = INRADIUS_RTOL):
    """r_in(K) / (diam(K)/2) for one agglomerate, or for all when ``k`` is None.

    diam/2 stands in for the circumscribed radius; r_in is the largest ball
    inside the union of the member cells.
    """
    finder = InradiusFinder(polymesh)
    if k is not None:
        return 2.0 * finder.radius(k, rtol) / polymesh.diameter[k]
    r = np.array([finder.radius(j, rtol) for j in range(polymesh.n)])
    return 2.0 * r / polymesh.diameter


# -- inscribed radius -----------------------------------------------------------


def _segment_distance(p, a, b):
    """Distances between points p (n, d) and segments a-b (s, d); returns (n, s)."""
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    denom = np.maximum((ab * ab).sum(-1), np.finfo(float).tiny)
    t = np.clip((ap * ab[None]).sum(-1) / denom, 0.0, 1.0)
    diff = ap - t[..., None] * ab[None]
    return np.sqrt((diff * diff).sum(-1))


def _triangle_distance(p, a, b, c):
    """Distances between points (n, 3) and triangles (t, 3) given by corners a, b, c."""
    n = np.cross(b - a, c - a)
    nn = (n * n).sum(-1)
    ap = p[:, None, :] - a[None]
    h = (ap * n[None]).sum(-1) / np.sqrt(np.maximum(nn, np.finfo(float).tiny))
    # Barycentric coordinates of the projection decide interior vs edge case.
    q = ap - (h / np.sqrt(np.maximum(nn, np.finfo(float).tiny)))[..., None] * n[None]
    v0, v1 = (b - a)[None], (c - a)[None]
    d00, d01, d11 = (v0 * v0).sum(-1), (v0 * v1).sum(-1), (v1 * v1).sum(-1)
    d20, d21 = (q * v0).sum(-1), (q * v1).sum(-1)
    det = np.maximum(d00 * d11 - d01 * d01, np.finfo(float).tiny)
    s = (d11 * d20 - d01 * d21) / det
    t = (d00 * d21 - d01 * d20) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    edges = np.minimum(
        np.minimum(_segment_distance(p, a, b), _segment_distance(p, b, c)),
        _segment_distance(p, c, a),
    )
    return np.where(inside, np.abs(h), edges)


class InradiusFinder:
    """Largest inscribed ball of agglomerates by box refinement.

    Boxes over the agglomerate's MBR are refined breadth-first; a box is
    dropped once its centre distance plus half-diagonal cannot beat the best
    radius found by more than the tolerance.
    """

    def __init__(self, polymesh: PolytopalMesh):
        self.pm = polymesh
        mesh = polymesh.mesh
        self.dim = mesh.dim
        self._kdt = cKDTree(mesh.cell_centroid)
        self._planes = _cell_planes(mesh)
        self._scale = float(np.max(mesh.vertices.max(0) - mesh.vertices.min(0)))
        order = np.argsort(np.r_[polymesh.plus, polymesh.minus], kind="stable")
        owner = np.r_[polymesh.plus, polymesh.minus][order]
        faces = np.r_[polymesh.skeleton, polymesh.skeleton][order]
        keep = owner >= 0
        owner, faces = owner[keep], faces[keep]
        bounds = np.searchsorted(owner, np.arange(polymesh.n + 1))
        self._faces = [faces[bounds[k] : bounds[k + 1]] for k in range(polymesh.n)]
        a = polymesh.partition.assignment
        self._centroid = np.zeros((polymesh.n, self.dim))
        np.add.at(self._centroid, a, mesh.cell_centroid * mesh.cell_measure[:, None])
        self._centroid /= polymesh.measure[:, None]

    def _boundary_distance(self, k, pts):
        mesh = self.pm.mesh
        f = self._faces[k]
        nodes, nv = mesh.face_nodes[f], mesh.face_nvert[f]
        X = mesh.vertices
        if self.dim == 2:
            return _segment_distance(pts, X[nodes[:, 0]], X[nodes[:, 1]]).min(axis=1)
        tris = [nodes[:, [0, 1, 2]], nodes[nv == 4][:, [0, 2, 3]]]
        tri = np.concatenate(tris)
        return _triangle_distance(pts, X[tri[:, 0]], X[tri[:, 1]], X[tri[:, 2]]).min(axis=1)

    def _inside(self, k, pts):
        n_cells = self.pm.mesh.n_cells
        kq = min(_CANDIDATES, n_cells)
        _, cand = self._kdt.query(pts, k=kq)
        cand = cand.reshape(len(pts), kq)
        normals, offsets = self._planes
        s = np.einsum("pcfd,pd->pcf", normals[cand], pts) - offsets[cand]
        contained = (s <= 1e-12 * self._scale).all(axis=-1)
        mine = self.pm.partition.assignment[cand] == k
        return (contained & mine).any(axis=1)

    def signed_distance(self, k: int, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self._boundary_distance(k, pts)
        return np.where(self._inside(k, pts), d, -d)

    def radius(self, k: int, rtol: float = INRADIUS_RTOL) -> float:
        lo, hi = self.pm.lo[k], self.pm.hi[k]
        diam = self.pm.diameter[k]
        if not diam > 0 or np.any(hi <= lo):
            raise ValueError(f"degenerate agglomerate {k}")
        tol = rtol * diam
        extent = hi - lo
        half = 0.5 * extent.min()
        counts = np.maximum(1, np.ceil(extent / (2 * half)).astype(int))
        axes = [lo[i] + half * (2 * np.arange(counts[i]) + 1) for i in range(self.dim)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        best = float(self.signed_distance(k, self._centroid[k])[0])
        offsets = np.array(list(product((-0.5, 0.5), repeat=self.dim)))
        while len(centers):
            sd = self.signed_distance(k, centers)
            best = max(best, float(sd.max()))
            bound = sd + half * np.sqrt(self.dim)
            centers = centers[bound > best + tol]
            half *= 0.5
            centers = (centers[:, None, :] + 2 * half * offsets[None]).reshape(-1, self.dim)
        return max(best, 0.0)


def _cell_planes(mesh):
    """Outward face planes of every cell as normals (n, 6, d) and offsets (n, 6).

    Unused slots hold a zero normal with offset 1, which every point satisfies.
    """
    n, d = mesh.n_cells, mesh.dim
    normals = np.zeros((n, 6, d))
    offsets = np.ones((n, 6))
    cent = mesh.cell_centroid
    for kind, ids, conn in mesh.groups():
        X = mesh.vertices[conn]
        for j, face in enumerate(CELL_FACES[kind]):
            F = X[:, list(face)]
            center = F.mean(axis=1)
            if d == 2:
                t = F[:, 1] - F[:, 0]
                nrm = np.stack([t[:, 1], -t[:, 0]], axis=-1)
            elif len(face) == 3:
                nrm = np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0])
            else:
                nrm = np.cross(F[:, 2] - F[:, 0], F[:, 3] - F[:, 1])
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            flip = np.sign(((center - cent[ids]) * nrm).sum(-1))
            nrm *= flip[:, None]
            normals[ids, j] = nrm
            offsets[ids, j] = (nrm * center).sum(-1)
    return normals, offsets


# -- reports --------------------------------------------------------------------


@dataclass
class MeshMetricsReport:
    uf: np.ndarray
    cr: np.ndarray
    br: np.ndarray
    of: float

    @property
    def n(self) -> int:
        return len(self.uf)

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            name: {"min": float(v.min()), "max": float(v.max()), "avg": float(v.mean())}
            for name, v in (("uf", self.uf), ("cr", self.cr), ("br", self.br))
        }

    def summary_line(self) -> str:
        s = self.summary()
        return (
            f"UF {s['uf']['avg']:.6g} CR {s['cr']['avg']:.6g} "
            f"BR {s['br']['avg']:.6g} OF {self.of:.6g}"
        )

    def write_csv(self, path) -> None:
        """Per-agglomerate rows, then min/max/avg rows and the overlap factor."""
        s = self.summary()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agglomerate", "uf", "cr", "br"])
            for k in range(self.n):
                w.writerow([k, repr(float(self.uf[k])), repr(float(self.cr[k])), repr(float(self.br[k]))])
            for stat in ("min", "max", "avg"):
                w.writerow([stat] + [repr(s[m][stat]) for m in ("uf", "cr", "br")])
            w.writerow(["of", repr(self.of), "", ""])


def metrics_report(polymesh: PolytopalMesh, rtol: float = INRADIUS_RTOL) -> MeshMetricsReport:
    if polymesh.n == 0:
        raise ValueError("empty polytopal mesh")
    uf = uniformity_factor(polymesh.diameter, float(polymesh.diameter.max()))
    cr = circle_ratio(polymesh, rtol=rtol)
    br = box_ratio(polymesh.measure, polymesh.box_measure)
    return MeshMetricsReport(uf, cr, br, overlap_factor(polymesh))
