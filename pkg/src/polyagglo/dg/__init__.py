"""Interior-penalty DG discretization on agglomerated meshes."""

from .assembly import C_SIGMA, SparseOperator, assemble, penalty_sigma
from .basis import TENSOR, TOTAL, DgSpace, basis_eval, build_space, gll_nodes, legendre_table, local_dimension
from .problem import (
    Case,
    DofLimitError,
    compute_errors,
    constant_case,
    data_case,
    evaluate_at_cells,
    manufactured_case,
    solve_direct,
    write_solution_vtk,
)
from .quadrature import CellRule, FaceRule, cell_quadrature, face_quadrature

__all__ = [
    "C_SIGMA", "SparseOperator", "assemble", "penalty_sigma",
    "TENSOR", "TOTAL", "DgSpace", "basis_eval", "build_space", "gll_nodes", "legendre_table", "local_dimension",
    "Case", "DofLimitError", "compute_errors", "constant_case", "data_case", "evaluate_at_cells", "manufactured_case",
    "solve_direct", "write_solution_vtk",
    "CellRule", "FaceRule", "cell_quadrature", "face_quadrature",
]
