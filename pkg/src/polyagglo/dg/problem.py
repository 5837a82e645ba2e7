"""Model problems, discrete errors, direct solves and solution export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from ..meshio import write_vtk
from .basis import DgSpace
from .quadrature import cell_quadrature

DIRECT_DOF_LIMIT = 20_000


class DofLimitError(RuntimeError):
    pass


@dataclass
class Case:
    """Poisson data: exact solution ``u``, its gradient, source ``f`` and boundary data ``g``.

    All callables take points of shape (n, d); ``grad`` returns (n, d).
    ``u`` and ``grad`` may be None when no exact solution is known.
    """

    u: Optional[Callable[[np.ndarray], np.ndarray]]
    grad: Optional[Callable[[np.ndarray], np.ndarray]]
    f: Callable[[np.ndarray], np.ndarray]
    g: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.g is None:
            if self.u is None:
                raise ValueError("boundary data g is required without an exact solution")
            self.g = self.u


def manufactured_case(d: int, scale=None) -> Case:
    """u = prod_i sin(pi a_i x_i) with f = pi^2 sum_i a_i^2 u; a_i = 1 unless ``scale`` is given."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    a = np.ones(d) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (d,)).copy()
    k = np.pi * a

    def u(x):
        return np.prod(np.sin(k * x), axis=-1)

    def grad(x):
        s, c = np.sin(k * x), np.cos(k * x)
        out = np.empty_like(x, dtype=float)
        for i in range(d):
            out[..., i] = k[i] * c[..., i] * np.prod(np.delete(s, i, axis=-1), axis=-1)
        return out

    def f(x):
        return float(np.sum(k * k)) * u(x)

    return Case(u, grad, f)


def constant_case(value: float) -> Case:
    return Case(
        lambda x: np.full(len(x), float(value)),
        lambda x: np.zeros_like(x, dtype=float),
        lambda x: np.zeros(len(x)),
    )


def data_case(f: float = 1.0, g: float = 0.0) -> Case:
    """Constant source and boundary data with no exact solution attached."""
    return Case(None, None, lambda x: np.full(len(x), float(f)), lambda x: np.full(len(x), float(g)))


def compute_errors(space: DgSpace, coefficients, case: Case) -> tuple[float, float]:
    """L2 and broken H1-seminorm errors, integrated over the fine cells to degree 2p+2."""
    if case.u is None:
        raise ValueError("case has no exact solution to measure against")
    c = np.asarray(coefficients, dtype=float)
    if c.shape != (space.n_dofs,):
        raise ValueError(f"expected {space.n_dofs} coefficients, got {c.shape}")
    a = space.polymesh.partition.assignment
    d = space.dim
    l2 = h1 = 0.0
    for rule in cell_quadrature(space.mesh, 2 * space.p + 2):
        nq = rule.points.shape[1]
        step = max(1, 2_000_000 // (nq * space.nloc * d))
        for start in range(0, len(rule.cells), step):
            s = slice(start, start + step)
            agg = a[rule.cells[s]]
            x, w = rule.points[s], rule.weights[s]
            phi, g = space.eval(agg, x)
            local = c[space.dofs(agg)]
            uh = np.einsum("cqi,ci->cq", phi, local)
            guh = np.einsum("cqid,ci->cqd", g, local)
            flat = x.reshape(-1, d)
            eu = uh - case.u(flat).reshape(w.shape)
            eg = guh - case.grad(flat).reshape(w.shape + (d,))
            l2 += float((w * eu * eu).sum())
            h1 += float((w[..., None] * eg * eg).sum())
    return np.sqrt(l2), np.sqrt(h1)


def solve_direct(op, limit: int = DIRECT_DOF_LIMIT) -> np.ndarray:
    n = op.matrix.shape[0]
    if n > limit:
        raise DofLimitError(
            f"{n} DoFs exceed the direct-solver cap of {limit}; use the multigrid (r3mg) solver"
        )
    return spla.spsolve(op.matrix.tocsc(), op.rhs)


def evaluate_at_cells(space: DgSpace, coefficients) -> np.ndarray:
    """u_h at every fine-cell centroid, evaluated with the owning agglomerate's basis."""
    a = space.polymesh.partition.assignment
    x = space.mesh.cell_centroid[:, None, :]
    phi = space.eval(a, x, grad=False)[:, 0, :]
    return np.einsum("ci,ci->c", phi, np.asarray(coefficients)[space.dofs(a)])


def write_solution_vtk(space: DgSpace, coefficients, path, case: Optional[Case] = None) -> None:
    data = {
        "u_h": evaluate_at_cells(space, coefficients),
        "agglomerate": space.polymesh.partition.assignment,
    }
    if case is not None and case.u is not None:
        data["u_exact"] = case.u(space.mesh.cell_centroid)
    write_vtk(space.mesh, data, path, title=f"DG solution {space.family}{space.p}")
