"""Reference cells, isoparametric maps and Gauss rules shared by the mesh and DG code."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

TRI, QUAD, TET, HEX = "tri", "quad", "tet", "hex"

CELL_DIM = {TRI: 2, QUAD: 2, TET: 3, HEX: 3}
CELL_NVERT = {TRI: 3, QUAD: 4, TET: 4, HEX: 8}

# Local faces, listed so that consecutive vertices walk around the face.
CELL_FACES = {
    TRI: ((0, 1), (1, 2), (2, 0)),
    QUAD: ((0, 1), (1, 2), (2, 3), (3, 0)),
    TET: ((0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)),
    HEX: (
        (0, 3, 2, 1),
        (4, 5, 6, 7),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
    ),
}

# Face kinds are named by the shape of the face itself.
EDGE, FTRI, FQUAD = "edge", "ftri", "fquad"
FACE_KIND_BY_NVERT = {2: EDGE, 3: FTRI, 4: FQUAD}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    return _gauss_legendre(int(n))


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def points_for_exactness(exactness: int) -> int:
    """Smallest Gauss-Legendre point count integrating degree ``exactness`` exactly."""
    return max(1, -(-(exactness + 1) // 2))


@lru_cache(maxsize=None)
def reference_rule(kind: str, exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature rule on the reference cell or face of ``kind``.

    Quads and hexes (and quad faces) use tensor Gauss rules on the unit box.
    Triangles and tetrahedra use collapsed (Duffy) Gauss rules; the extra
    powers of the collapse Jacobian are accounted for in the point count.
    """
    if kind in (QUAD, FQUAD):
        x, w = gauss_legendre(points_for_exactness(exactness))
        X, Y = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        wts = np.outer(w, w).ravel()
    elif kind == HEX:
        x, w = gauss_legendre(points_for_exactness(exactness))
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
        wts = np.einsum("i,j,k->ijk", w, w, w).ravel()
    elif kind == EDGE:
        x, w = gauss_legendre(points_for_exactness(exactness))
        pts = x[:, None].copy()
        wts = w.copy()
    elif kind in (TRI, FTRI):
        u, wu = gauss_legendre(points_for_exactness(exactness + 1))
        v, wv = gauss_legendre(points_for_exactness(exactness))
        U, V = np.meshgrid(u, v, indexing="ij")
        pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=-1)
        wts = (np.outer(wu, wv) * (1.0 - U)).ravel()
    elif kind == TET:
        u, wu = gauss_legendre(points_for_exactness(exactness + 2))
        v, wv = gauss_legendre(points_for_exactness(exactness + 1))
        s, ws = gauss_legendre(points_for_exactness(exactness))
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        pts = np.stack(
            [U.ravel(), (V * (1 - U)).ravel(), (S * (1 - U) * (1 - V)).ravel()], axis=-1
        )
        wts = (np.einsum("i,j,k->ijk", wu, wv, ws) * (1 - U) ** 2 * (1 - V)).ravel()
    else:
        raise ValueError(f"unsupported reference kind {kind!r}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def shape_functions(kind: str, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-order shape functions and their reference gradients.

    Returns ``N`` of shape (nq, nv) and ``dN`` of shape (nq, nv, rdim).
    """
    xi = np.asarray(xi, dtype=float)
    if kind in (TRI, FTRI):
        x, y = xi[:, 0], xi[:, 1]
        N = np.stack([1 - x - y, x, y], axis=-1)
        dN = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(xi), 3, 2)
        ).copy()
    elif kind in (QUAD, FQUAD):
        x, y = xi[:, 0], xi[:, 1]
        N = np.stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y], axis=-1)
        dN = np.empty((len(xi), 4, 2))
        dN[:, :, 0] = np.stack([-(1 - y), 1 - y, y, -y], axis=-1)
        dN[:, :, 1] = np.stack([-(1 - x), -x, x, 1 - x], axis=-1)
    elif kind == EDGE:
        t = xi[:, 0]
        N = np.stack([1 - t, t], axis=-1)
        dN = np.broadcast_to(np.array([[-1.0], [1.0]]), (len(xi), 2, 1)).copy()
    elif kind == TET:
        x, y, z = xi[:, 0], xi[:, 1], xi[:, 2]
        N = np.stack([1 - x - y - z, x, y, z], axis=-1)
        dN = np.broadcast_to(
            np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]]), (len(xi), 4, 3)
        ).copy()
    elif kind == HEX:
        x, y, z = xi[:, 0], xi[:, 1], xi[:, 2]
        bx = np.stack([1 - x, x], -1)
        by = np.stack([1 - y, y], -1)
        bz = np.stack([1 - z, z], -1)
        # gmsh corner order: (0,0,0) (1,0,0) (1,1,0) (0,1,0) then z = 1.
        corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
        sgn = np.array([-1.0, 1.0])
        N = np.empty((len(xi), 8))
        dN = np.empty((len(xi), 8, 3))
        for a, (i, j, k) in enumerate(corners):
            N[:, a] = bx[:, i] * by[:, j] * bz[:, k]
            dN[:, a, 0] = sgn[i] * by[:, j] * bz[:, k]
            dN[:, a, 1] = bx[:, i] * sgn[j] * bz[:, k]
            dN[:, a, 2] = bx[:, i] * by[:, j] * sgn[k]
    else:
        raise ValueError(f"unsupported kind {kind!r}")
    return N, dN


def map_cells(kind: str, coords: np.ndarray, xi: np.ndarray):
    """Map reference points into a batch of cells.

    ``coords`` has shape (nc, nv, d). Returns physical points (nc, nq, d) and
    the Jacobian determinants (nc, nq).
    """
    N, dN = shape_functions(kind, xi)
    x = np.einsum("qa,cad->cqd", N, coords)
    J = np.einsum("qar,cad->cqdr", dN, coords)
    return x, np.linalg.det(J)


def map_faces(kind: str, coords: np.ndarray, xi: np.ndarray):
    """Map reference points onto a batch of faces embedded in d dimensions.

    Returns points (nf, nq, d), surface measure factors (nf, nq) and the
    unnormalized normals (nf, nq, d) whose orientation follows the vertex
    ordering (right-hand rule in 3D, (dy, -dx) rotation in 2D).
    """
    N, dN = shape_functions(kind, xi)
    x = np.einsum("qa,cad->cqd", N, coords)
    T = np.einsum("qar,cad->cqdr", dN, coords)
    if kind == EDGE:
        t = T[..., 0]
        nrm = np.stack([t[..., 1], -t[..., 0]], axis=-1)
    else:
        nrm = np.cross(T[..., 0], T[..., 1])
    return x, np.linalg.norm(nrm, axis=-1), nrm
