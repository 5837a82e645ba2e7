"""Polynomial bases on agglomerate bounding boxes and the DG degree-of-freedom layout."""

from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import comb

import numpy as np

from ..agglomeration import PolytopalMesh

TENSOR, TOTAL = "Q", "P"
FAMILIES = (TENSOR, TOTAL)


def legendre_table(p: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Legendre polynomials 0..p and their derivatives at ``xi`` in [-1, 1].

    Returns two arrays of shape ``xi.shape + (p + 1,)``.
    """
    xi = np.asarray(xi, dtype=float)
    P = np.empty(xi.shape + (p + 1,))
    dP = np.empty_like(P)
    P[..., 0], dP[..., 0] = 1.0, 0.0
    if p >= 1:
        P[..., 1], dP[..., 1] = xi, 1.0
    for k in range(1, p):
        P[..., k + 1] = ((2 * k + 1) * xi * P[..., k] - k * P[..., k - 1]) / (k + 1)
        dP[..., k + 1] = dP[..., k - 1] + (2 * k + 1) * P[..., k]
    return P, dP


@lru_cache(maxsize=None)
def gll_nodes(p: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre nodes on [-1, 1]: endpoints plus roots of P_p'."""
    if p < 1:
        raise ValueError("need p >= 1")
    inner = np.polynomial.legendre.Legendre.basis(p).deriv().roots().real
    x = np.concatenate([[-1.0], np.sort(inner), [1.0]])
    x.setflags(write=False)
    return x


@lru_cache(maxsize=None)
def _lagrange_coefficients(p: int) -> np.ndarray:
    # Columns hold the Legendre coefficients of each nodal Lagrange polynomial.
    V, _ = legendre_table(p, gll_nodes(p))
    C = np.linalg.inv(V)
    C.setflags(write=False)
    return C


@lru_cache(maxsize=None)
def multi_indices(p: int, dim: int, family: str) -> np.ndarray:
    """Per-direction degrees of each local basis function, first axis fastest."""
    if family == TENSOR:
        idx = [a[::-1] for a in product(range(p + 1), repeat=dim)]
    elif family == TOTAL:
        idx = [a for a in _graded(p, dim)]
    else:
        raise ValueError(f"unknown basis family {family!r}")
    out = np.array(idx, dtype=np.int64)
    out.setflags(write=False)
    return out


def _graded(p, dim):
    for total in range(p + 1):
        for a in product(range(total + 1), repeat=dim):
            if sum(a) == total:
                yield a[::-1]


def local_dimension(p: int, dim: int, family: str = TENSOR) -> int:
    return (p + 1) ** dim if family == TENSOR else comb(p + dim, dim)


class DgSpace:
    """Discontinuous piecewise polynomials on a polytopal mesh.

    Each agglomerate K owns a contiguous block of ``nloc`` coefficients.
    Q_p uses nodal Lagrange functions on tensor Gauss-Lobatto points of
    MBR(K); P_p uses Legendre products of total degree <= p, orthonormal on
    MBR(K). Both are evaluated on K only through the integration domain.
    """

    def __init__(self, polymesh: PolytopalMesh, p: int, family: str = TENSOR):
        if p < 1:
            raise ValueError(f"degree must be >= 1, got {p}")
        if family not in FAMILIES:
            raise ValueError(f"unknown basis family {family!r}")
        if polymesh.n == 0:
            raise ValueError("empty polytopal mesh")
        self.polymesh = polymesh
        self.mesh = polymesh.mesh
        self.dim = self.mesh.dim
        self.p = p
        self.family = family
        self.index = multi_indices(p, self.dim, family)
        self.nloc = len(self.index)
        self.n_agglomerates = polymesh.n
        self.offsets = np.arange(polymesh.n + 1) * self.nloc
        self.n_dofs = int(self.offsets[-1])
        self.lo, self.hi = polymesh.lo, polymesh.hi
        if family == TOTAL:
            deg = self.index
            self._norm = np.sqrt(np.prod(2 * deg + 1, axis=1))

    def __repr__(self):
        return f"DgSpace({self.family}{self.p}, agglomerates={self.n_agglomerates}, dofs={self.n_dofs})"

    def dofs(self, k) -> np.ndarray:
        """Global indices of the coefficients of agglomerate(s) ``k``."""
        k = np.asarray(k)
        return self.offsets[k][..., None] + np.arange(self.nloc)

    def _one_d(self, xi):
        P, dP = legendre_table(self.p, xi)
        if self.family == TENSOR:
            C = _lagrange_coefficients(self.p)
            return P @ C, dP @ C
        return P, dP

    def eval(self, agg, points, grad: bool = True):
        """Basis values (n, nq, nloc) and gradients (n, nq, nloc, d) on batches.

        ``agg`` has shape (n,) and ``points`` shape (n, nq, d).
        """
        agg = np.asarray(agg)
        pts = np.asarray(points, dtype=float)
        lo, hi = self.lo[agg][:, None, :], self.hi[agg][:, None, :]
        scale = 2.0 / (hi - lo)
        xi = (pts - lo) * scale - 1.0
        vals, ders = [], []
        for d in range(self.dim):
            v, dv = self._one_d(xi[..., d])
            vals.append(v[..., self.index[:, d]])
            ders.append(dv[..., self.index[:, d]] * scale[..., d, None])
        phi = vals[0].copy()
        for v in vals[1:]:
            phi *= v
        if self.family == TOTAL:
            phi *= self._norm
        if not grad:
            return phi
        g = np.empty(phi.shape + (self.dim,))
        for k in range(self.dim):
            gk = ders[k].copy()
            for d in range(self.dim):
                if d != k:
                    gk *= vals[d]
            g[..., k] = gk
        if self.family == TOTAL:
            g *= self._norm[:, None]
        return phi, g

    def nodes(self, k) -> np.ndarray:
        """Tensor Gauss-Lobatto points of MBR(K), shape (n, (p+1)^d, d).

        For Q_p these are the interpolation nodes in basis order.
        """
        k = np.atleast_1d(k)
        idx = multi_indices(self.p, self.dim, TENSOR)
        ref = 0.5 * (gll_nodes(self.p)[idx] + 1.0)
        lo, hi = self.lo[k][:, None, :], self.hi[k][:, None, :]
        return lo + ref[None] * (hi - lo)

    def interpolate(self, fn) -> np.ndarray:
        """Coefficients matching ``fn`` at the Gauss-Lobatto points of every MBR."""
        ks = np.arange(self.n_agglomerates)
        X = self.nodes(ks)
        vals = np.asarray(fn(X.reshape(-1, self.dim)), dtype=float).reshape(X.shape[:2])
        if self.family == TENSOR:
            return vals.reshape(-1)
        phi = self.eval(ks, X, grad=False)
        return np.concatenate([np.linalg.lstsq(phi[j], vals[j], rcond=None)[0] for j in range(len(ks))])


def build_space(polymesh: PolytopalMesh, p: int, family: str = TENSOR) -> DgSpace:
    return DgSpace(polymesh, p, family)


def basis_eval(space: DgSpace, agglomerate: int, points):
    """Values (nq, nloc) and gradients (nq, nloc, d) of agglomerate's basis at ``points``."""
    if not 0 <= agglomerate < space.n_agglomerates:
        raise IndexError(f"agglomerate {agglomerate} out of range [0, {space.n_agglomerates})")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phi, g = space.eval(np.array([agglomerate]), pts[None])
    return phi[0], g[0]
