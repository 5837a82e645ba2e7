"""Symmetric interior-penalty assembly over fine-cell sub-tessellations of agglomerates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .basis import DgSpace
from .quadrature import cell_quadrature, face_quadrature

C_SIGMA = 10.0
# Upper bound on floats held by one batch of basis gradients.
_BATCH_FLOATS = 2_000_000


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    rhs: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.matrix.shape


def penalty_sigma(h_plus, h_minus=None, p: int = 1, c_sigma: float = C_SIGMA):
    """C p^2 / h on boundary faces, C p^2 / min(h+, h-) on interior faces."""
    h = np.asarray(h_plus, dtype=float)
    if h_minus is not None:
        h = np.minimum(h, np.asarray(h_minus, dtype=float))
    return c_sigma * p * p / h


def _batches(n, per_item):
    step = max(1, _BATCH_FLOATS // max(per_item, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


class _Coo:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rdofs, cdofs, blocks):
        # blocks (n, a, b); rdofs (n, a); cdofs (n, b)
        n, a, b = blocks.shape
        self.rows.append(np.broadcast_to(rdofs[:, :, None], (n, a, b)).ravel())
        self.cols.append(np.broadcast_to(cdofs[:, None, :], (n, a, b)).ravel())
        self.vals.append(blocks.ravel())

    def tocsr(self, n):
        if not self.rows:
            return sp.csr_matrix((n, n))
        A = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(n, n),
        ).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A


def assemble(space: DgSpace, case=None, c_sigma: float = C_SIGMA, exactness: Optional[int] = None) -> SparseOperator:
    """SIPG stiffness matrix and load vector for -lap u = f, u = g on the boundary.

    ``case`` supplies ``f(x)`` and ``g(x)`` on (n, d) point arrays; without it
    only the matrix is built. Integrals run over the fine cells and fine
    skeleton faces of each agglomerate with rules exact to degree 2p+1.
    """
    pm, mesh, p = space.polymesh, space.mesh, space.p
    e = 2 * p + 1 if exactness is None else exactness
    a = pm.partition.assignment
    nloc, d = space.nloc, space.dim
    coo = _Coo()
    rhs = np.zeros(space.n_dofs) if case is not None else None

    for rule in cell_quadrature(mesh, e):
        nq = rule.points.shape[1]
        for s in _batches(len(rule.cells), nq * nloc * d):
            agg = a[rule.cells[s]]
            x, w = rule.points[s], rule.weights[s]
            phi, g = space.eval(agg, x)
            K = np.einsum("cq,cqid,cqjd->cij", w, g, g)
            dofs = space.dofs(agg)
            coo.add(dofs, dofs, K)
            if rhs is not None:
                f = case.f(x.reshape(-1, d)).reshape(w.shape)
                np.add.at(rhs, dofs, np.einsum("cq,cqi->ci", w * f, phi))

    # Skeleton faces, with the lower agglomerate id as the plus side.
    plus, minus = pm.plus, pm.minus
    face_plus = np.full(mesh.n_faces, -1)
    face_minus = np.full(mesh.n_faces, -1)
    face_plus[pm.skeleton] = plus
    face_minus[pm.skeleton] = minus
    h = pm.diameter

    inner = pm.skeleton[minus >= 0]
    for rule in face_quadrature(mesh, inner, e):
        nq = rule.points.shape[1]
        for s in _batches(len(rule.faces), 2 * nq * nloc * d):
            f_ids = rule.faces[s]
            kp, km = face_plus[f_ids], face_minus[f_ids]
            x, w, n = rule.points[s], rule.weights[s], rule.normals[s]
            swap = kp > km
            kp, km = np.where(swap, km, kp), np.where(swap, kp, km)
            n = np.where(swap[:, None, None], -n, n)
            sig = penalty_sigma(h[kp], h[km], p, c_sigma)[:, None]
            vp, gp = space.eval(kp, x)
            vm, gm = space.eval(km, x)
            dp = np.einsum("fqid,fqd->fqi", gp, n)
            dm = np.einsum("fqid,fqd->fqi", gm, n)
            dofp, dofm = space.dofs(kp), space.dofs(km)
            # Y_ts[i, j] = sum w * phi_t[i] * dn_s[j]; penalty P_ts likewise.
            ws = w * sig
            Ypp = np.einsum("fq,fqi,fqj->fij", w, vp, dp)
            Ymm = np.einsum("fq,fqi,fqj->fij", w, vm, dm)
            Ypm = np.einsum("fq,fqi,fqj->fij", w, vp, dm)
            Ymp = np.einsum("fq,fqi,fqj->fij", w, vm, dp)
            Ppp = np.einsum("fq,fqi,fqj->fij", ws, vp, vp)
            Pmm = np.einsum("fq,fqi,fqj->fij", ws, vm, vm)
            Ppm = np.einsum("fq,fqi,fqj->fij", ws, vp, vm)
            Mpp = -0.5 * (Ypp + Ypp.transpose(0, 2, 1)) + Ppp
            Mmm = 0.5 * (Ymm + Ymm.transpose(0, 2, 1)) + Pmm
            Mpm = -0.5 * Ypm + 0.5 * Ymp.transpose(0, 2, 1) - Ppm
            coo.add(dofp, dofp, Mpp)
            coo.add(dofm, dofm, Mmm)
            coo.add(dofp, dofm, Mpm)
            coo.add(dofm, dofp, Mpm.transpose(0, 2, 1))

    bnd = pm.skeleton[minus < 0]
    for rule in face_quadrature(mesh, bnd, e):
        nq = rule.points.shape[1]
        for s in _batches(len(rule.faces), nq * nloc * d):
            f_ids = rule.faces[s]
            k = face_plus[f_ids]
            x, w, n = rule.points[s], rule.weights[s], rule.normals[s]
            sig = penalty_sigma(h[k], None, p, c_sigma)[:, None]
            v, g = space.eval(k, x)
            dn = np.einsum("fqid,fqd->fqi", g, n)
            Y = np.einsum("fq,fqi,fqj->fij", w, v, dn)
            M = -(Y + Y.transpose(0, 2, 1)) + np.einsum("fq,fqi,fqj->fij", w * sig, v, v)
            dofs = space.dofs(k)
            coo.add(dofs, dofs, M)
            if rhs is not None:
                gval = case.g(x.reshape(-1, d)).reshape(w.shape)
                np.add.at(rhs, dofs, np.einsum("fq,fqi->fi", w * gval, sig[..., None] * v - dn))

    return SparseOperator(coo.tocsr(space.n_dofs), rhs)
