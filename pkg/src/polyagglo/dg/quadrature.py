"""Physical quadrature on the fine cells and faces of a background mesh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CELL_DIM, map_cells, map_faces, reference_rule
from ..mesh import BackgroundMesh


@dataclass
class CellRule:
    """Quadrature for a batch of same-kind cells: points (nc, nq, d), weights (nc, nq)."""

    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray


@dataclass
class FaceRule:
    """Quadrature on a batch of faces with unit normals pointing out of the owner cell."""

    faces: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray


def cell_quadrature(mesh: BackgroundMesh, exactness: int, cells=None) -> list[CellRule]:
    """Rules exact for total degree ``exactness`` on affine cells, grouped by kind."""
    rules = []
    wanted = None if cells is None else np.asarray(cells)
    for kind, ids, conn in mesh.groups():
        if kind not in CELL_DIM:
            raise ValueError(f"unsupported cell kind {kind!r}")
        if wanted is not None:
            keep = np.isin(ids, wanted)
            ids, conn = ids[keep], conn[keep]
            if not len(ids):
                continue
        xi, w = reference_rule(kind, exactness)
        pts, det = map_cells(kind, mesh.vertices[conn], xi)
        rules.append(CellRule(ids, pts, w[None, :] * np.abs(det)))
    return rules


def face_quadrature(mesh: BackgroundMesh, faces, exactness: int) -> list[FaceRule]:
    """Trace rules on the given fine faces, grouped by face shape."""
    rules = []
    cent = mesh.cell_centroid
    for kind, ids, conn in mesh.face_groups(faces):
        xi, w = reference_rule(kind, exactness)
        pts, jac, nrm = map_faces(kind, mesh.vertices[conn], xi)
        nrm = nrm / jac[..., None]
        # Orient away from the owner cell regardless of stored vertex order.
        out = pts.mean(axis=1) - cent[mesh.face_owner[ids]]
        flip = np.sign((out[:, None, :] * nrm).sum(-1, keepdims=True).mean(axis=1, keepdims=True))
        rules.append(FaceRule(ids, pts, w[None, :] * jac, nrm * flip))
    return rules
