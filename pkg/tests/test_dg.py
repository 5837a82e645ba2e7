import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from polyagglo.agglomeration import Partition, build_hierarchy, build_polytopal_mesh
from polyagglo.dg import (
    Case,
    DofLimitError,
    assemble,
    basis_eval,
    build_space,
    cell_quadrature,
    compute_errors,
    constant_case,
    data_case,
    evaluate_at_cells,
    face_quadrature,
    local_dimension,
    manufactured_case,
    penalty_sigma,
    solve_direct,
    write_solution_vtk,
)
from polyagglo.mesh import BackgroundMesh, generate_perturbed_quad, generate_structured_hex, generate_structured_quad

SQ2 = np.sqrt(2.0)


def _level(mesh, level):
    h = build_hierarchy(mesh)
    return build_polytopal_mesh(mesh, h.levels[min(level, len(h.levels) - 1)])


def _single(mesh):
    return build_polytopal_mesh(mesh, Partition(np.zeros(mesh.n_cells, dtype=int)))


# -- spaces -------------------------------------------------------------------------


def test_dof_counts():
    assert build_space(_level(generate_structured_quad(32), 3), 1).n_dofs == 64
    assert build_space(_level(generate_structured_quad(32), 1), 3).n_dofs == 4096
    assert local_dimension(2, 2, "P") == 6
    assert build_space(_level(generate_structured_quad(8), 1), 2, "P").nloc == 6
    assert local_dimension(2, 3, "Q") == 27


def test_space_rejects_bad_degree():
    with pytest.raises(ValueError):
        build_space(_single(generate_structured_quad(2)), 0)


def test_q1_center_values():
    s = build_space(_single(generate_structured_quad(2)), 1)
    phi, _ = basis_eval(s, 0, [[0.5, 0.5]])
    assert phi[0] == pytest.approx([0.25] * 4, abs=1e-15)


def test_basis_eval_range():
    s = build_space(_single(generate_structured_quad(2)), 1)
    with pytest.raises(IndexError):
        basis_eval(s, 1, [[0.5, 0.5]])


@given(p=st.integers(1, 5), seed=st.integers(0, 1000))
def test_partition_of_unity(p, seed):
    pm = _level(generate_perturbed_quad(8, 0.3, seed=seed), 1)
    s = build_space(pm, p)
    k = seed % pm.n
    rng = np.random.default_rng(seed)
    x = pm.lo[k] + rng.random((50, 2)) * (pm.hi[k] - pm.lo[k])
    phi, g = basis_eval(s, k, x)
    assert phi.sum(axis=1) == pytest.approx(np.ones(50), abs=1e-12)
    assert np.abs(g.sum(axis=1)).max() < 1e-9 * p * p / (pm.hi[k] - pm.lo[k]).min()


@pytest.mark.parametrize("family,dim,p", [("Q", 2, 3), ("P", 2, 3), ("Q", 3, 2), ("P", 3, 2)])
def test_gradient_finite_differences(family, dim, p):
    mesh = generate_structured_quad(4) if dim == 2 else generate_structured_hex(2)
    pm = _level(mesh, 1)
    s = build_space(pm, p, family)
    rng = np.random.default_rng(3)
    k = 0
    x = pm.lo[k] + rng.random((20, dim)) * (pm.hi[k] - pm.lo[k])
    _, g = basis_eval(s, k, x)
    step = 1e-6
    for d in range(dim):
        e = np.zeros(dim)
        e[d] = step
        fd = (basis_eval(s, k, x + e)[0] - basis_eval(s, k, x - e)[0]) / (2 * step)
        scale = np.abs(g[..., d]).max()
        assert np.abs(fd - g[..., d]).max() <= 1e-6 * scale


def test_total_degree_basis_orthonormal_on_box():
    pm = _single(generate_structured_quad(2, bounds=((1, 2), (3, 3))))
    s = build_space(pm, 3, "P")
    (rule,) = cell_quadrature(pm.mesh, 7)
    phi, _ = s.eval(np.zeros(4, dtype=int), rule.points)
    G = np.einsum("cq,cqi,cqj->ij", rule.weights, phi, phi) / pm.measure[0]
    assert G == pytest.approx(np.eye(s.nloc), abs=1e-12)


# -- quadrature ------------------------------------------------------------------------


def test_quadrature_unit_square():
    mesh = generate_structured_quad(1)
    (rule,) = cell_quadrature(mesh, 3)
    assert rule.points.shape == (1, 4, 2)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    (rule,) = cell_quadrature(mesh, 5)
    x, y = rule.points[0].T
    assert (rule.weights[0] * x**2 * y**2).sum() == pytest.approx(1 / 9, abs=1e-14)


def test_quadrature_triangle_area():
    mesh = BackgroundMesh([[0, 0], [1, 0], [0, 1]], [(0, 1, 2)])
    for e in (1, 3, 7):
        (rule,) = cell_quadrature(mesh, e)
        assert rule.weights.sum() == pytest.approx(0.5, abs=1e-14)


def test_face_quadrature_normals_out_of_owner():
    mesh = generate_perturbed_quad(5, 0.3, seed=2)
    faces = np.arange(mesh.n_faces)
    for rule in face_quadrature(mesh, faces, 3):
        owner = mesh.face_owner[rule.faces]
        out = rule.points.mean(axis=1) - mesh.cell_centroid[owner]
        assert (np.einsum("fd,fd->f", out, rule.normals[:, 0]) > 0).all()
        assert np.linalg.norm(rule.normals, axis=-1) == pytest.approx(1.0)


# -- penalty -----------------------------------------------------------------------------


def test_penalty_examples():
    assert penalty_sigma(0.25, p=2) == pytest.approx(160.0)
    assert penalty_sigma(0.5, 0.25, p=1) == pytest.approx(40.0)
    assert penalty_sigma(1.0, p=1) == pytest.approx(10.0)


# -- assembly ------------------------------------------------------------------------------


def test_zero_data_single_agglomerate():
    pm = _single(generate_structured_quad(1))
    op = assemble(build_space(pm, 1), data_case(0.0, 0.0))
    assert op.matrix.shape == (4, 4)
    sla.cholesky(op.matrix.toarray())
    assert np.all(op.rhs == 0)
    assert np.all(solve_direct(op) == 0)


def test_energy_closed_form():
    # One agglomerate made of a 2x2 grid; face terms checked against hand integrals.
    pm = _single(generate_structured_quad(2))
    s = build_space(pm, 1)
    A = assemble(s).matrix
    sigma = 10 / SQ2
    one = s.interpolate(lambda x: np.ones(len(x)))
    xs = s.interpolate(lambda x: x[:, 0])
    assert one @ A @ one == pytest.approx(4 * sigma, rel=1e-13)
    assert xs @ A @ xs == pytest.approx(1 - 2 + 5 * sigma / 3, rel=1e-13)


@pytest.mark.parametrize("family,p", [("Q", 1), ("Q", 3), ("P", 2)])
def test_symmetric_positive_definite(family, p):
    for mesh in (generate_perturbed_quad(12, 0.3, seed=5), generate_structured_hex(4)):
        A = assemble(build_space(_level(mesh, 1), p, family)).matrix
        assert abs(A - A.T).max() <= 1e-14 * abs(A).max()
        sla.cholesky(A.toarray())


def test_assembly_deterministic():
    s = build_space(_level(generate_perturbed_quad(10, 0.3, seed=1), 1), 2)
    a, b = assemble(s, manufactured_case(2)), assemble(s, manufactured_case(2))
    assert (a.matrix != b.matrix).nnz == 0
    assert np.array_equal(a.rhs, b.rhs)


def _polynomial_case(family):
    if family == "Q":
        def u(x):
            return 1 + x[:, 0] - 2 * x[:, 1] + 3 * x[:, 0] ** 2 * x[:, 1] ** 2 - x[:, 0] * x[:, 1] ** 2

        def grad(x):
            X, Y = x[:, 0], x[:, 1]
            return np.stack([1 + 6 * X * Y**2 - Y**2, -2 + 6 * X**2 * Y - 2 * X * Y], axis=-1)

        def f(x):
            X, Y = x[:, 0], x[:, 1]
            return -(6 * Y**2 + 6 * X**2 - 2 * X)
    else:
        def u(x):
            return 2 - x[:, 0] + x[:, 0] * x[:, 1] + 0.5 * x[:, 1] ** 2

        def grad(x):
            return np.stack([-1 + x[:, 1], x[:, 0] + x[:, 1]], axis=-1)

        def f(x):
            return np.full(len(x), -1.0)
    return Case(u, grad, f)


@pytest.mark.parametrize("family", ["Q", "P"])
def test_polynomial_reproduction_affine(family):
    # Scattered, mostly disconnected agglomerates on affine cells: the default rule is exact.
    mesh = generate_structured_quad(12)
    a = np.unique(np.random.default_rng(0).integers(0, 5, mesh.n_cells), return_inverse=True)[1]
    s = build_space(build_polytopal_mesh(mesh, Partition(a)), 2, family)
    case = _polynomial_case(family)
    l2, h1 = compute_errors(s, solve_direct(assemble(s, case)), case)
    assert l2 <= 1e-10 and h1 <= 1e-10


@pytest.mark.parametrize("family", ["Q", "P"])
def test_polynomial_reproduction_bilinear_cells(family):
    # Bilinear cells carry a non-constant Jacobian, so the rule must cover its extra degree.
    pm = _level(generate_perturbed_quad(12, 0.35, seed=8), 2)
    s = build_space(pm, 2, family)
    case = _polynomial_case(family)
    l2, h1 = compute_errors(s, solve_direct(assemble(s, case, exactness=9)), case)
    assert l2 <= 1e-10 and h1 <= 1e-10


def test_constant_interpolant_errors():
    s = build_space(_level(generate_perturbed_quad(8, 0.3, seed=3), 1), 2)
    c = s.interpolate(lambda x: np.full(len(x), 3.5))
    l2, h1 = compute_errors(s, c, constant_case(3.5))
    assert l2 <= 1e-13 and h1 <= 1e-13


def test_zero_coefficients_error_is_norm():
    s = build_space(_level(generate_structured_quad(8), 1), 2)
    l2, h1 = compute_errors(s, np.zeros(s.n_dofs), manufactured_case(2))
    assert l2 == pytest.approx(0.5, rel=1e-10)
    assert h1 == pytest.approx(np.pi / SQ2, rel=1e-10)


def test_errors_reject_length():
    s = build_space(_single(generate_structured_quad(2)), 1)
    with pytest.raises(ValueError):
        compute_errors(s, np.zeros(3), manufactured_case(2))


def test_solve_256_blocks_q1():
    pm = _level(generate_structured_quad(32), 1)
    s = build_space(pm, 1)
    case = manufactured_case(2)
    l2, _ = compute_errors(s, solve_direct(assemble(s, case)), case)
    assert l2 == pytest.approx(1.89974e-3, rel=0.05)


def test_direct_limit():
    s = build_space(_level(generate_structured_quad(8), 1), 1)
    with pytest.raises(DofLimitError, match="r3mg"):
        solve_direct(assemble(s, manufactured_case(2)), limit=10)


# -- manufactured case ----------------------------------------------------------------------


def test_manufactured_values():
    c2, c3 = manufactured_case(2), manufactured_case(3)
    assert c2.u(np.array([[0.5, 0.5]]))[0] == pytest.approx(1.0)
    assert c2.f(np.array([[0.5, 0.5]]))[0] == pytest.approx(2 * np.pi**2)
    assert c3.u(np.array([[0.5, 0.5, 0.5]]))[0] == pytest.approx(1.0)
    assert c3.f(np.array([[0.5, 0.5, 0.5]]))[0] == pytest.approx(3 * np.pi**2)
    with pytest.raises(ValueError):
        manufactured_case(1)


@pytest.mark.parametrize("d,scale", [(2, None), (3, None), (2, (0.5, 2.0))])
def test_manufactured_laplacian_fd(d, scale):
    case = manufactured_case(d, scale)
    x = np.random.default_rng(0).random((100, d))
    h = 1e-4
    lap = np.zeros(100)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        lap += (case.u(x + e) - 2 * case.u(x) + case.u(x - e)) / h**2
    assert np.abs(-lap - case.f(x)).max() <= 1e-4 * np.abs(case.f(x)).max()
    # Analytic gradient against central differences.
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1e-6
        fd = (case.u(x + e) - case.u(x - e)) / 2e-6
        assert case.grad(x)[:, i] == pytest.approx(fd, abs=1e-7)


def test_vtk_export(tmp_path):
    s = build_space(_level(generate_structured_quad(4), 1), 1)
    case = manufactured_case(2)
    c = solve_direct(assemble(s, case))
    write_solution_vtk(s, c, tmp_path / "u.vtk", case)
    text = (tmp_path / "u.vtk").read_text()
    assert "u_h" in text and "u_exact" in text
    assert evaluate_at_cells(s, c).shape == (16,)


@settings(max_examples=10)
@given(seed=st.integers(0, 1000), p=st.integers(1, 3))
def test_errors_nonnegative_and_assembled_symmetric(seed, p):
    pm = _level(generate_perturbed_quad(8, 0.4, seed=seed), 1)
    s = build_space(pm, p)
    op = assemble(s, manufactured_case(2))
    A = op.matrix
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()
    l2, h1 = compute_errors(s, solve_direct(op), manufactured_case(2))
    assert l2 >= 0 and h1 >= 0
