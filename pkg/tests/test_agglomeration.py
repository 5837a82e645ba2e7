import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyagglo.agglomeration import (
    HierarchyError,
    Partition,
    PartitionError,
    build_hierarchy,
    build_polytopal_mesh,
    compute_agglomerates,
    export_metis_graph,
    extract_leaves,
    graph_partition_baseline,
    hierarchy_from_partition,
    import_partition,
    load_hierarchy,
    serialize_hierarchy,
)
from polyagglo.mesh import BackgroundMesh, generate_perturbed_quad, generate_structured_hex, generate_structured_quad
from polyagglo.meshio import read_msh
from polyagglo.spatial_index import build_mesh_tree, nodes_at_depth


def _inside_box(mesh, box):
    c = mesh.cell_centroid
    return np.flatnonzero(((c > np.array(box.lo)) & (c < np.array(box.hi))).all(axis=1))


def assert_nested(hier):
    """Nesting by sorted cell-set equality, independent of the stored parent maps."""
    for lvl in range(1, len(hier.levels)):
        fine = hier.levels[lvl - 1].members()
        coarse = hier.levels[lvl].members()
        children = {}
        for k, cells in enumerate(fine):
            owners = set(hier.levels[lvl].assignment[cells].tolist())
            assert len(owners) == 1, f"fine agglomerate {k} split at level {lvl}"
            children.setdefault(owners.pop(), []).append(cells)
        for K, cells in enumerate(coarse):
            union = np.sort(np.concatenate(children[K]))
            assert np.array_equal(union, cells)


def assert_partition(part, n):
    assert part.n_cells == n
    assert sorted(set(part.assignment.tolist())) == list(range(part.n_parts))


def _dual_nx(mesh):
    g = nx.Graph()
    g.add_nodes_from(range(mesh.n_cells))
    inner = mesh.interior_faces
    g.add_edges_from(zip(mesh.face_owner[inner].tolist(), mesh.face_neighbor[inner].tolist()))
    return g


# -- partitions --------------------------------------------------------------------


def test_partition_rejects_empty_part():
    with pytest.raises(PartitionError, match="empty"):
        Partition([0, 2, 2], 3)


def test_partition_rejects_negative():
    with pytest.raises(PartitionError):
        Partition([0, -1])


# -- tree extraction -----------------------------------------------------------------


def test_extract_leaves_of_leaf():
    t = build_mesh_tree(generate_structured_quad(4), 2, 4)
    leaf = nodes_at_depth(t, t.height - 1)[0]
    assert extract_leaves(leaf) == list(leaf.ids)


def test_extract_leaves_root_and_blocks():
    mesh = generate_structured_quad(32)
    t = build_mesh_tree(mesh, 2, 4)
    assert sorted(extract_leaves(t.root)) == list(range(1024))
    for node in nodes_at_depth(t, 2):
        ids = sorted(extract_leaves(node))
        assert len(ids) == 64
        assert ids == _inside_box(mesh, node.box).tolist()
        assert node.box.extent == pytest.approx((0.25, 0.25))


def test_compute_agglomerates():
    mesh = generate_structured_quad(32)
    t = build_mesh_tree(mesh, 2, 4)
    assert compute_agglomerates(t, 0).n_parts == 1
    p = compute_agglomerates(t, 2)
    assert p.n_parts == 16
    grid = p.assignment.reshape(32, 32)
    for block in range(16):
        rows, cols = np.nonzero(grid == block)
        assert rows.max() - rows.min() == 7 and cols.max() - cols.min() == 7
        assert len(rows) == 64
    with pytest.raises(IndexError):
        compute_agglomerates(t, t.height)


def test_compute_agglomerates_hex_octants():
    mesh = generate_structured_hex(16)
    t = build_mesh_tree(mesh, 4, 8)
    p = compute_agglomerates(t, 1)
    assert p.n_parts == 8
    pm = build_polytopal_mesh(mesh, p)
    for k, cells in enumerate(p.members()):
        assert np.allclose(pm.hi[k] - pm.lo[k], 0.5)
        c = mesh.cell_centroid
        geo = np.flatnonzero(((c > pm.lo[k]) & (c < pm.hi[k])).all(axis=1))
        assert np.array_equal(geo, cells)


# -- hierarchies -----------------------------------------------------------------------


def test_hierarchy_sizes_64():
    h = build_hierarchy(generate_structured_quad(64))
    assert h.sizes() == [4096, 1024, 256, 64, 16, 4, 1]
    assert_nested(h)


def test_hierarchy_sizes_32_and_hex():
    assert build_hierarchy(generate_structured_quad(32)).sizes() == [1024, 256, 64, 16, 4, 1]
    assert build_hierarchy(generate_structured_hex(16), m=4, M=8).sizes() == [4096, 512, 64, 8, 1]


def _two_material_grid(n=8):
    g = generate_structured_quad(n)
    mat = (g.cell_centroid[:, 0] > 0.5).astype(int)
    return BackgroundMesh(g.vertices, [g.cell(c) for c in range(g.n_cells)], material=mat)


def test_by_material_never_mixes():
    mesh = _two_material_grid()
    h = build_hierarchy(mesh, by_material=True)
    assert_nested(h)
    for part in h.levels:
        for cells in part.members():
            assert len(set(mesh.material[cells].tolist())) == 1
    assert h.sizes()[-1] == 2


def test_by_material_pads_shallow_material():
    g = generate_structured_quad(8)
    # Material 1 covers a single column of 8 cells: its tree is shallower.
    mat = (g.cell_centroid[:, 0] > 7 / 8).astype(int)
    mesh = BackgroundMesh(g.vertices, [g.cell(c) for c in range(g.n_cells)], material=mat)
    h = build_hierarchy(mesh, by_material=True)
    assert_nested(h)
    assert h.sizes()[-1] >= 2


def test_by_material_requires_labels():
    with pytest.raises(ValueError):
        build_hierarchy(generate_structured_quad(4), by_material=True)


@given(nx_=st.integers(1, 24), ny=st.integers(1, 24), amp=st.floats(0, 0.45), seed=st.integers(0, 10**6),
       order=st.sampled_from([(2, 4), (2, 5), (3, 6)]))
def test_hierarchy_invariants_perturbed(nx_, ny, amp, seed, order):
    mesh = generate_perturbed_quad((nx_, ny), amp, seed=seed)
    h = build_hierarchy(mesh, m=order[0], M=order[1])
    assert h.levels[0] == Partition.identity(mesh.n_cells)
    assert all(a > b for a, b in zip(h.sizes(), h.sizes()[1:]))
    for part in h.levels:
        assert_partition(part, mesh.n_cells)
    assert_nested(h)


@given(n=st.integers(1, 7))
def test_hierarchy_invariants_hex(n):
    h = build_hierarchy(generate_structured_hex(n))
    assert_nested(h)


@pytest.mark.parametrize("name", ["mixed2d.msh", "cube6tet.msh"])
def test_hierarchy_invariants_imported(data_dir, name):
    mesh = read_msh(data_dir / name)
    for h in (build_hierarchy(mesh, m=2, M=4), build_hierarchy(mesh, by_material=True, m=2, M=4)):
        assert_nested(h)
        for part in h.levels:
            assert_partition(part, mesh.n_cells)


def test_ancestor_map_composes_parents():
    h = build_hierarchy(generate_structured_quad(16))
    anc = h.ancestor_map(0, 3)
    assert np.array_equal(anc[h.levels[0].assignment], h.levels[3].assignment)


# -- polytopal meshes ---------------------------------------------------------------------


def _brute_diameter(mesh, cells):
    verts = np.unique(np.concatenate([mesh.cell(c) for c in cells]))
    pts = mesh.vertices[verts]
    return max(np.linalg.norm(a - b) for a in pts for b in pts)


def test_identity_polymesh():
    mesh = generate_structured_quad(4)
    pm = build_polytopal_mesh(mesh, Partition.identity(mesh.n_cells))
    assert len(pm.skeleton) == mesh.n_faces
    assert np.allclose(pm.measure, mesh.cell_measure)


def test_sixteen_block_polymesh():
    mesh = generate_structured_quad(32)
    h = build_hierarchy(mesh)
    pm = build_polytopal_mesh(mesh, h.levels[3])
    assert pm.n == 16
    assert np.allclose(pm.measure, 1 / 16, rtol=1e-12)
    assert np.allclose(pm.diameter, np.sqrt(2) / 4, rtol=1e-12)
    assert len(pm.interior_skeleton) == 192
    assert len(pm.boundary_skeleton) == 128


@given(amp=st.floats(0, 0.45), seed=st.integers(0, 10**6), level=st.integers(1, 3))
def test_polymesh_invariants(amp, seed, level):
    mesh = generate_perturbed_quad(12, amp, seed=seed)
    h = build_hierarchy(mesh)
    part = h.levels[min(level, len(h.levels) - 1)]
    pm = build_polytopal_mesh(mesh, part)
    assert pm.measure.sum() == pytest.approx(mesh.domain_measure, rel=1e-12)
    a = part.assignment
    inner = pm.minus >= 0
    assert (pm.plus[inner] != pm.minus[inner]).all()
    for k, cells in enumerate(part.members()):
        assert pm.diameter[k] == pytest.approx(_brute_diameter(mesh, cells), rel=1e-12)
        assert pm.diameter[k] >= mesh.cell_diameter[cells].max() - 1e-15
    # Every fine face between different agglomerates is on the skeleton.
    f = mesh.interior_faces
    crossing = f[a[mesh.face_owner[f]] != a[mesh.face_neighbor[f]]]
    assert set(crossing.tolist()) == set(pm.interior_skeleton.tolist())


def test_large_agglomerate_diameter_uses_hull():
    mesh = generate_perturbed_quad(16, 0.3, seed=9)
    pm = build_polytopal_mesh(mesh, Partition(np.zeros(mesh.n_cells, dtype=int)))
    assert pm.diameter[0] == pytest.approx(_brute_diameter(mesh, np.arange(mesh.n_cells)), rel=1e-12)


def test_disconnected_agglomerate_flagged():
    mesh = generate_structured_quad(4)
    a = np.arange(16)
    a[15] = 0  # far corner cell joins cell 0
    part = Partition(np.unique(a, return_inverse=True)[1])
    pm = build_polytopal_mesh(mesh, part)
    assert pm.disconnected.tolist() == [0]


def test_partition_size_mismatch():
    with pytest.raises(PartitionError):
        build_polytopal_mesh(generate_structured_quad(4), Partition.identity(15))


# -- graph baseline ------------------------------------------------------------------------


def test_baseline_single_part():
    p = graph_partition_baseline(generate_structured_quad(8), 1)
    assert (p.assignment == 0).all()


def test_baseline_strip():
    strip = generate_structured_quad((2, 1), bounds=((0, 0), (2, 1)))
    p = graph_partition_baseline(strip, 2)
    assert sorted(p.assignment.tolist()) == [0, 1]


def test_baseline_sixteen_parts():
    mesh = generate_structured_quad(32)
    p = graph_partition_baseline(mesh, 16, seed=7)
    assert p.n_parts == 16
    assert (np.abs(p.sizes - 64) <= 16).all()
    g = _dual_nx(mesh)
    for cells in p.members():
        assert nx.is_connected(g.subgraph(cells.tolist()))


@given(n=st.integers(3, 20), amp=st.floats(0, 0.45), seed=st.integers(0, 1000), parts=st.integers(1, 12))
def test_baseline_connected_and_balanced(n, amp, seed, parts):
    mesh = generate_perturbed_quad(n, amp, seed=seed)
    parts = min(parts, mesh.n_cells)
    p = graph_partition_baseline(mesh, parts, seed=seed)
    g = _dual_nx(mesh)
    for cells in p.members():
        assert nx.is_connected(g.subgraph(cells.tolist()))


def test_baseline_range():
    with pytest.raises(ValueError):
        graph_partition_baseline(generate_structured_quad(2), 5)


# -- file exchange -------------------------------------------------------------------------


def test_metis_strip(tmp_path):
    strip = generate_structured_quad((2, 1), bounds=((0, 0), (2, 1)))
    export_metis_graph(strip, tmp_path / "g.graph")
    assert (tmp_path / "g.graph").read_text() == "2 1\n2\n1\n"


def test_metis_graph_matches_dual(tmp_path):
    mesh = generate_perturbed_quad(6, 0.2, seed=4)
    export_metis_graph(mesh, tmp_path / "g.graph")
    lines = (tmp_path / "g.graph").read_text().splitlines()
    n, m = map(int, lines[0].split())
    g = _dual_nx(mesh)
    assert (n, m) == (g.number_of_nodes(), g.number_of_edges())
    for i, line in enumerate(lines[1:]):
        assert sorted(int(v) - 1 for v in line.split()) == sorted(g.neighbors(i))


def test_import_single_part(tmp_path):
    (tmp_path / "p.txt").write_text("0\n" * 16)
    p = import_partition(tmp_path / "p.txt", 16)
    h = hierarchy_from_partition(generate_structured_quad(4), p, "external")
    assert h.sizes() == [16, 1]


def test_import_empty_part(tmp_path):
    (tmp_path / "p.txt").write_text("0\n2\n0\n2\n")
    with pytest.raises(PartitionError, match="empty"):
        import_partition(tmp_path / "p.txt", 4, n_parts=3)


def test_import_wrong_length(tmp_path):
    (tmp_path / "p.txt").write_text("0\n1\n")
    with pytest.raises(PartitionError, match="expected 3 lines"):
        import_partition(tmp_path / "p.txt", 3)


def test_import_bad_token(tmp_path):
    (tmp_path / "p.txt").write_text("0\nx\n")
    with pytest.raises(PartitionError, match=":2:"):
        import_partition(tmp_path / "p.txt", 2)


# -- serialization ---------------------------------------------------------------------------


def test_hierarchy_round_trip(tmp_path):
    mesh = generate_structured_quad(64)
    h = build_hierarchy(mesh)
    serialize_hierarchy(h, tmp_path / "h.json")
    r = load_hierarchy(tmp_path / "h.json", mesh)
    assert len(r.levels) == 7
    assert r.levels == h.levels and r.strategy == "rtree"
    assert all(np.array_equal(a, b) for a, b in zip(r.parents, h.parents))


def test_tampered_parent_rejected(tmp_path):
    mesh = generate_structured_quad(8)
    serialize_hierarchy(build_hierarchy(mesh), tmp_path / "h.json")
    doc = json.loads((tmp_path / "h.json").read_text())
    doc["parents"][1][0], doc["parents"][1][-1] = doc["parents"][1][-1], doc["parents"][1][0]
    (tmp_path / "h.json").write_text(json.dumps(doc))
    with pytest.raises(HierarchyError, match="nesting violation at level 2"):
        load_hierarchy(tmp_path / "h.json", mesh)


def test_load_on_other_mesh_rejected(tmp_path):
    serialize_hierarchy(build_hierarchy(generate_structured_quad(8)), tmp_path / "h.json")
    with pytest.raises(HierarchyError, match="checksum"):
        load_hierarchy(tmp_path / "h.json", generate_perturbed_quad(8, 0.1, seed=1))
    with pytest.raises(HierarchyError, match="size mismatch"):
        load_hierarchy(tmp_path / "h.json", generate_structured_quad(4))
