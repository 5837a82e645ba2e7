"""R-tree agglomeration of unstructured meshes, agglomerate quality metrics,
interior-penalty DG on the resulting polytopal meshes and multigrid on the
nested hierarchy."""

from .agglomeration import (
    AgglomerateHierarchy,
    HierarchyError,
    Partition,
    PartitionError,
    PolytopalMesh,
    build_hierarchy,
    build_polytopal_mesh,
    compute_agglomerates,
    export_metis_graph,
    extract_leaves,
    graph_partition_baseline,
    import_partition,
    load_hierarchy,
    serialize_hierarchy,
)
from .mesh import (
    BackgroundMesh,
    MeshError,
    dual_adjacency,
    generate_perturbed_quad,
    generate_structured_hex,
    generate_structured_quad,
)
from .meshio import MshParseError, read_msh, write_msh, write_vtk
from .metrics import MeshMetricsReport, metrics_report
from .multigrid import BreakdownError, ConvergenceError, MgHierarchy, build_mg, pcg, v_cycle
from .spatial_index import Aabb, RTree, build_mesh_tree, build_str, insert_rstar, validate_tree

__version__ = "0.1.0"
