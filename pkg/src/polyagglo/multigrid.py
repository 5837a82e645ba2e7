"""Geometric multigrid on nested agglomerate levels: injection transfers, Chebyshev
smoothing, V-cycles and preconditioned conjugate gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .agglomeration import AgglomerateHierarchy, build_polytopal_mesh
from .dg import C_SIGMA, TENSOR, DgSpace, SparseOperator, assemble, build_space

LANCZOS_ITERS = 20
CHEBY_DEGREE = 5
CHEBY_STEPS = 10
SMOOTHING_RANGE = 15.0
LAMBDA_SAFETY = 1.1
DENSE_COARSE_LIMIT = 5000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(message)
        self.history = list(history)


class BreakdownError(ArithmeticError):
    pass


# -- transfers -------------------------------------------------------------------


def build_injection(coarse: DgSpace, fine: DgSpace, parent_map) -> sp.csr_matrix:
    """Coefficients of each coarse polynomial in the basis of every descendant agglomerate.

    ``parent_map[k]`` is the coarse agglomerate containing fine agglomerate k.
    Because bounding-box maps are axis-aligned and affine, the restriction of
    a coarse polynomial to a child's box lies in the child space exactly.
    """
    if coarse.p != fine.p or coarse.family != fine.family or coarse.dim != fine.dim:
        raise ValueError("injection needs matching degree, family and dimension")
    parent = np.asarray(parent_map, dtype=np.int64)
    if parent.shape != (fine.n_agglomerates,):
        raise ValueError(f"parent map has {parent.shape} entries for {fine.n_agglomerates} fine agglomerates")
    if parent.min() < 0 or parent.max() >= coarse.n_agglomerates:
        raise ValueError("parent map points outside the coarse level")
    fine_a = fine.polymesh.partition.assignment
    coarse_a = coarse.polymesh.partition.assignment
    if not np.array_equal(parent[fine_a], coarse_a):
        raise ValueError("fine level is not nested in the coarse level under this parent map")

    kf = np.arange(fine.n_agglomerates)
    X = fine.nodes(kf)
    block = coarse.eval(parent, X, grad=False)
    if fine.family != TENSOR:
        block = np.linalg.pinv(fine.eval(kf, X, grad=False)) @ block
    rows = np.broadcast_to(fine.dofs(kf)[:, :, None], block.shape)
    cols = np.broadcast_to(coarse.dofs(parent)[:, None, :], block.shape)
    P = sp.coo_matrix((block.ravel(), (rows.ravel(), cols.ravel())), shape=(fine.n_dofs, coarse.n_dofs))
    return P.tocsr()


# -- smoothing -------------------------------------------------------------------


def lanczos_lambda_max(A, diagonal=None, iters: int = LANCZOS_ITERS, seed: int = 0) -> float:
    """Largest Ritz value of D^{-1/2} A D^{-1/2} after ``iters`` Lanczos steps."""
    n = A.shape[0]
    d = np.ones(n) if diagonal is None else np.asarray(diagonal, dtype=float)
    if (d <= 0).any():
        raise ValueError("Jacobi scaling needs a positive diagonal")
    s = 1.0 / np.sqrt(d)
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    v_prev = np.zeros(n)
    alphas, betas = [], []
    beta = 0.0
    for _ in range(min(iters, n)):
        w = s * (A @ (s * v)) - beta * v_prev
        alpha = float(v @ w)
        w -= alpha * v
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if beta <= 1e-14 * abs(alpha):
            break
        betas.append(beta)
        v_prev, v = v, w / beta
    k = len(alphas)
    if k == 1:
        return alphas[0]
    return float(sla.eigvalsh_tridiagonal(np.array(alphas), np.array(betas[: k - 1]))[-1])


def chebyshev_smooth(A, b, x, inv_diag, interval, degree: int = CHEBY_DEGREE, steps: int = CHEBY_STEPS):
    """``steps`` sweeps of a degree-``degree`` Jacobi-preconditioned Chebyshev iteration.

    The eigenvalues of D^{-1}A inside ``interval`` are damped; the result is a
    fixed polynomial in D^{-1}A, hence symmetric as a map on the residual.
    """
    lo, hi = interval
    if not 0 < lo < hi:
        raise ValueError(f"empty smoothing interval [{lo}, {hi}]")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    theta, delta = 0.5 * (hi + lo), 0.5 * (hi - lo)
    sigma = theta / delta
    x = np.array(x, dtype=float, copy=True)
    for _ in range(steps):
        z = inv_diag * (b - A @ x)
        dx = z / theta
        x += dx
        rho = 1.0 / sigma
        for _ in range(degree - 1):
            rho_new = 1.0 / (2.0 * sigma - rho)
            z = inv_diag * (b - A @ x)
            dx = rho_new * rho * dx + (2.0 * rho_new / delta) * z
            x += dx
            rho = rho_new
    return x


# -- hierarchy ---------------------------------------------------------------------


@dataclass
class MgLevel:
    space: DgSpace
    operator: SparseOperator
    inv_diag: np.ndarray
    interval: tuple[float, float]
    lambda_max: float


@dataclass
class MgHierarchy:
    """Levels ordered coarsest first; ``transfers[i]`` maps level i to level i + 1."""

    levels: list[MgLevel]
    transfers: list[sp.csr_matrix]
    degree: int = CHEBY_DEGREE
    steps: int = CHEBY_STEPS
    coarse_solver: Callable[[np.ndarray], np.ndarray] = field(default=None, repr=False)

    @property
    def finest(self) -> MgLevel:
        return self.levels[-1]

    @property
    def dofs(self) -> list[int]:
        return [lv.space.n_dofs for lv in self.levels]

    def __len__(self):
        return len(self.levels)

    def precondition(self, b: np.ndarray) -> np.ndarray:
        return v_cycle(self, b)


def _coarse_solver(A: sp.csr_matrix):
    n = A.shape[0]
    if n <= DENSE_COARSE_LIMIT:
        factor = sla.cho_factor(A.toarray())
        return lambda b: sla.cho_solve(factor, b)
    lu = spla.splu(A.tocsc())
    return lu.solve


def build_mg(
    hierarchy: AgglomerateHierarchy,
    p: int,
    family: str = TENSOR,
    case=None,
    n_levels: Optional[int] = None,
    levels: Optional[Sequence[int]] = None,
    c_sigma: float = C_SIGMA,
    lanczos_iters: int = LANCZOS_ITERS,
    degree: int = CHEBY_DEGREE,
    steps: int = CHEBY_STEPS,
    smoothing_range: float = SMOOTHING_RANGE,
) -> MgHierarchy:
    """Rediscretize SIPG on selected hierarchy levels and wire up the V-cycle.

    By default the ``n_levels`` finest hierarchy levels are used, ending at the
    fine mesh. ``levels`` picks explicit hierarchy indices instead; they need
    not be consecutive, since transfers compose parent maps. Only the finest
    level receives the right-hand side from ``case``.
    """
    if levels is None:
        n = len(hierarchy.levels) if n_levels is None else n_levels
        if not 1 <= n <= len(hierarchy.levels):
            raise ValueError(f"n_levels must lie in [1, {len(hierarchy.levels)}], got {n}")
        levels = list(range(n))
    levels = sorted(set(int(l) for l in levels))
    if levels[0] < 0 or levels[-1] >= len(hierarchy.levels):
        raise ValueError(f"hierarchy has levels 0..{len(hierarchy.levels) - 1}")
    chosen = levels[::-1]

    mg_levels, transfers = [], []
    for i, lvl in enumerate(chosen):
        pm = build_polytopal_mesh(hierarchy.mesh, hierarchy.levels[lvl])
        space = build_space(pm, p, family)
        op = assemble(space, case if lvl == chosen[-1] else None, c_sigma=c_sigma)
        diag = op.matrix.diagonal()
        lam = lanczos_lambda_max(op.matrix, diag, lanczos_iters)
        interval = (lam / smoothing_range, LAMBDA_SAFETY * lam)
        mg_levels.append(MgLevel(space, op, 1.0 / diag, interval, lam))
        if i:
            parent = hierarchy.ancestor_map(lvl, chosen[i - 1])
            transfers.append(build_injection(mg_levels[i - 1].space, space, parent))
    return MgHierarchy(mg_levels, transfers, degree, steps, _coarse_solver(mg_levels[0].operator.matrix))


def v_cycle(mg: MgHierarchy, b: np.ndarray, level: Optional[int] = None) -> np.ndarray:
    """One symmetric V-cycle with zero initial guess, applied at ``level`` (default finest)."""
    if level is None:
        level = len(mg.levels) - 1
    if level == 0:
        return mg.coarse_solver(b)
    lv = mg.levels[level]
    A = lv.operator.matrix
    x = chebyshev_smooth(A, b, np.zeros_like(b), lv.inv_diag, lv.interval, mg.degree, mg.steps)
    P = mg.transfers[level - 1]
    x += P @ v_cycle(mg, P.T @ (b - A @ x), level - 1)
    return chebyshev_smooth(A, b, x, lv.inv_diag, lv.interval, mg.degree, mg.steps)


# -- Krylov ---------------------------------------------------------------------------


def pcg(A, b, preconditioner=None, abstol: float = 1e-12, reltol: float = 1e-9, maxit: Optional[int] = None, callback=None):
    """Preconditioned conjugate gradients from x0 = 0.

    Stops once ||r_k|| <= max(abstol, reltol * ||r_0||) and returns
    ``(x, iterations)``. ``callback`` receives each residual norm.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxit = 10 * n if maxit is None else maxit
    M = preconditioner if preconditioner is not None else (lambda r: r)
    x = np.zeros(n)
    r = b.copy()
    r0 = float(np.linalg.norm(r))
    tol = max(abstol, reltol * r0)
    history = [r0]
    if r0 <= tol:
        return x, 0
    z = M(r)
    d = z.copy()
    rz = float(r @ z)
    for it in range(1, maxit + 1):
        Ad = A @ d
        dAd = float(d @ Ad)
        if dAd <= 0:
            raise BreakdownError(f"non-positive curvature p^T A p = {dAd:.3e} at iteration {it}")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        res = float(np.linalg.norm(r))
        history.append(res)
        if callback is not None:
            callback(res)
        if res <= tol:
            return x, it
        z = M(r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise ConvergenceError(f"no convergence in {maxit} iterations (residual {history[-1]:.3e})", history)
