"""Command-line front end: agglomerate, score, solve and run the convergence/multigrid/timing studies."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import agglomeration as ag
from .agglomeration import HierarchyError, PartitionError
from .dg import (
    DofLimitError,
    assemble,
    build_space,
    compute_errors,
    data_case,
    manufactured_case,
    solve_direct,
    write_solution_vtk,
)
from .mesh import (
    BackgroundMesh,
    MeshError,
    generate_perturbed_quad,
    generate_structured_hex,
    generate_structured_quad,
)
from .meshio import MshParseError, read_msh, write_vtk
from .metrics import metrics_report
from .multigrid import BreakdownError, ConvergenceError, build_mg, pcg

OUTDIR_ENV = "POLYAGGLO_OUTDIR"
EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

# Keys a --config file may set; each maps onto an argparse destination.
CONFIG_KEYS = {
    "gen", "mesh", "strategy", "order", "parts", "partition", "by_material", "seed",
    "level", "agglomerates", "hierarchy", "p", "degrees", "family", "c_sigma",
    "solver", "levels", "sizes", "outdir", "abstol", "reltol", "maxit", "f", "g",
}


class UsageError(Exception):
    pass


# -- input helpers ---------------------------------------------------------------


def parse_generator(spec: str) -> BackgroundMesh:
    """Build a mesh from ``quad:N``, ``quad:NxM``, ``hex:N`` or ``pquad:N[xM]:amp:seed``."""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "quad" and len(parts) == 2:
            return generate_structured_quad(_dims(parts[1]))
        if kind == "hex" and len(parts) == 2:
            return generate_structured_hex(int(parts[1]))
        if kind == "pquad" and len(parts) in (3, 4):
            seed = int(parts[3]) if len(parts) == 4 else 0
            return generate_perturbed_quad(_dims(parts[1]), float(parts[2]), seed=seed)
    except ValueError as exc:
        raise UsageError(f"bad generator spec {spec!r}: {exc}") from None
    raise UsageError(f"bad generator spec {spec!r}; expected quad:N, hex:N or pquad:N:amp:seed")


def _dims(text):
    if "x" in text:
        nx, ny = text.split("x")
        return int(nx), int(ny)
    return int(text)


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _order(text):
    vals = _int_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"order must be m,M; got {text!r}")
    return tuple(vals)


def load_mesh(args) -> BackgroundMesh:
    if bool(args.gen) == bool(args.mesh):
        raise UsageError("give exactly one of --gen or --mesh")
    if args.gen:
        return parse_generator(args.gen)
    if not os.path.exists(args.mesh):
        raise UsageError(f"mesh file not found: {args.mesh}")
    return read_msh(args.mesh)


def build_hierarchy_from_args(args, mesh):
    if args.hierarchy:
        if not os.path.exists(args.hierarchy):
            raise UsageError(f"hierarchy file not found: {args.hierarchy}")
        return ag.load_hierarchy(args.hierarchy, mesh), None
    m, M = args.order if args.order else (None, None)
    if args.strategy == "rtree":
        if args.by_material:
            t0 = time.perf_counter()
            h = ag.build_hierarchy(mesh, by_material=True, m=m, M=M)
            return h, {"build_s": time.perf_counter() - t0, "visit_s": 0.0, "flag_s": 0.0}
        return ag.build_hierarchy_timed(mesh, m, M)
    if args.strategy == "graph":
        if not args.parts:
            raise UsageError("--strategy graph needs --parts")
        part, timing = ag.graph_partition_timed(mesh, args.parts, args.seed)
        return ag.hierarchy_from_partition(mesh, part, "graph"), timing
    if not args.partition:
        raise UsageError("--strategy external needs --partition FILE")
    if not os.path.exists(args.partition):
        raise UsageError(f"partition file not found: {args.partition}")
    t0 = time.perf_counter()
    part = ag.import_partition(args.partition, mesh.n_cells, args.parts)
    timing = {"build_s": 0.0, "visit_s": 0.0, "flag_s": time.perf_counter() - t0}
    return ag.hierarchy_from_partition(mesh, part, "external"), timing


def select_level(hier, args) -> int:
    if args.agglomerates is not None:
        sizes = hier.sizes()
        if args.agglomerates not in sizes:
            raise UsageError(f"no level with {args.agglomerates} agglomerates; available {sizes}")
        return sizes.index(args.agglomerates)
    level = args.level if args.level is not None else min(1, len(hier.levels) - 1)
    if not 0 <= level < len(hier.levels):
        raise UsageError(f"level {level} out of range 0..{len(hier.levels) - 1}")
    return level


def outdir(args) -> Path:
    path = Path(args.outdir or os.environ.get(OUTDIR_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in header])


def _g(x):
    return f"{x:.6g}"


# -- commands ---------------------------------------------------------------------------


def cmd_agglomerate(args) -> int:
    mesh = load_mesh(args)
    hier, timing = build_hierarchy_from_args(args, mesh)
    out = outdir(args)
    ag.serialize_hierarchy(hier, out / "hierarchy.json")
    print(f"{'level':>5} {'agglomerates':>12}")
    for lvl, part in enumerate(hier.levels):
        print(f"{lvl:>5} {part.n_parts:>12}")
        if args.vtk:
            write_vtk(mesh, {"agglomerate": part.assignment}, out / f"level_{lvl}.vtk")
    if timing:
        total = sum(timing.values())
        print(
            f"timing [{hier.strategy}] build {_g(timing['build_s'])} s, visit {_g(timing['visit_s'])} s, "
            f"flag {_g(timing['flag_s'])} s, total {_g(total)} s"
        )
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .plotting import plot_metrics

    mesh = load_mesh(args)
    hier, _ = build_hierarchy_from_args(args, mesh)
    level = select_level(hier, args)
    pm = ag.build_polytopal_mesh(mesh, hier.levels[level])
    report = metrics_report(pm)
    out = outdir(args)
    stem = f"metrics_{hier.strategy}_level{level}"
    report.write_csv(out / f"{stem}.csv")
    plot_metrics(report.summary(), report.of, out / f"{stem}.png")
    print(f"level {level}: {pm.n} agglomerates, {len(pm.disconnected)} disconnected")
    s = report.summary()
    for name in ("uf", "cr", "br"):
        print(f"{name.upper()} min {_g(s[name]['min'])} max {_g(s[name]['max'])} avg {_g(s[name]['avg'])}")
    print(report.summary_line())
    return EXIT_OK


def _direct(space, case, args):
    return solve_direct(assemble(space, case, c_sigma=args.c_sigma))


def cmd_solve(args) -> int:
    mesh = load_mesh(args)
    hier, _ = build_hierarchy_from_args(args, mesh)
    level = select_level(hier, args)
    case = manufactured_case(mesh.dim)
    if args.solver == "direct":
        pm = ag.build_polytopal_mesh(mesh, hier.levels[level])
        space = build_space(pm, args.p, args.family)
        x = _direct(space, case, args)
        its = None
    else:
        n = args.levels[0] if args.levels else len(hier.levels) - level
        mg = build_mg(hier, args.p, args.family, case, levels=range(level, min(level + n, len(hier.levels))), c_sigma=args.c_sigma)
        space = mg.finest.space
        x, its = pcg(mg.finest.operator.matrix, mg.finest.operator.rhs, mg.precondition, args.abstol, args.reltol, args.maxit)
    l2, h1 = compute_errors(space, x, case)
    out = outdir(args)
    write_solution_vtk(space, x, out / f"solution_{space.family}{space.p}_level{level}.vtk", case)
    print(f"level {level}: {space.n_agglomerates} agglomerates, {space.family}{space.p}, DoFs {space.n_dofs}")
    if its is not None:
        print(f"PCG iterations {its}")
    print(f"L2 error {_g(l2)}  H1-seminorm error {_g(h1)}")
    return EXIT_OK


def _slope(h, err):
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def study_p_convergence(args, mesh, out):
    from .plotting import plot_p_convergence

    hier, _ = build_hierarchy_from_args(args, mesh)
    level = select_level(hier, args)
    pm = ag.build_polytopal_mesh(mesh, hier.levels[level])
    case = manufactured_case(mesh.dim)
    rows = []
    for p in args.degrees or [1, 2, 3, 4, 5]:
        space = build_space(pm, p, args.family)
        x = _direct(space, case, args)
        l2, h1 = compute_errors(space, x, case)
        rows.append({"p": p, "dofs": space.n_dofs, "l2": float(l2), "h1semi": float(h1)})
        print(f"p={p} DoFs {space.n_dofs} L2 {_g(l2)} H1-semi {_g(h1)}")
    write_rows(out / "p_convergence.csv", ["p", "dofs", "l2", "h1semi"], rows)
    plot_p_convergence(rows, out / "p_convergence.png", f"p-refinement, {pm.n} agglomerates")


def study_h_convergence(args, _mesh, out):
    from .plotting import plot_h_convergence

    sizes = args.sizes or [8, 16, 32, 64]
    level = args.level if args.level is not None else 1
    rows = []
    for n in sizes:
        spec = args.gen.split(":") if args.gen else ["quad"]
        spec[1:2] = [str(n)]
        mesh = parse_generator(":".join(spec))
        hier = ag.build_hierarchy(mesh, m=args.order[0] if args.order else None, M=args.order[1] if args.order else None)
        if level >= len(hier.levels):
            raise UsageError(f"mesh size {n} has no level {level}")
        pm = ag.build_polytopal_mesh(mesh, hier.levels[level])
        case = manufactured_case(mesh.dim)
        for p in args.degrees or [1, 2, 3]:
            space = build_space(pm, p, args.family)
            x = _direct(space, case, args)
            l2, h1 = compute_errors(space, x, case)
            rows.append({"h": float(pm.diameter.max()), "p": p, "dofs": space.n_dofs, "l2": float(l2), "h1semi": float(h1)})
    orders = {}
    for p in sorted({r["p"] for r in rows}):
        sel = [r for r in rows if r["p"] == p]
        h = [r["h"] for r in sel]
        orders[p] = {"l2": _slope(h, [r["l2"] for r in sel]), "h1semi": _slope(h, [r["h1semi"] for r in sel])}
        print(f"p={p} observed order L2 {_g(orders[p]['l2'])} H1-semi {_g(orders[p]['h1semi'])}")
    write_rows(out / "h_convergence.csv", ["h", "p", "dofs", "l2", "h1semi"], rows)
    write_rows(
        out / "h_convergence_orders.csv",
        ["p", "order_l2", "order_h1semi"],
        [{"p": p, "order_l2": o["l2"], "order_h1semi": o["h1semi"]} for p, o in orders.items()],
    )
    plot_h_convergence(rows, orders, out / "h_convergence.png")


def study_mg_levels(args, mesh, out):
    from .plotting import plot_mg_levels

    hier, _ = build_hierarchy_from_args(args, mesh)
    case = data_case(args.f, args.g)
    rows, plain = [], None
    for n in args.levels or [2, 3, 4]:
        mg = build_mg(hier, args.p, args.family, case, n_levels=n, c_sigma=args.c_sigma)
        A, b = mg.finest.operator.matrix, mg.finest.operator.rhs
        _, its = pcg(A, b, mg.precondition, args.abstol, args.reltol, args.maxit)
        if plain is None:
            _, plain = pcg(A, b, None, args.abstol, args.reltol, args.maxit)
        rows.append({"levels": n, "p": args.p, "dofs_finest": A.shape[0], "iters_pcg": its, "iters_plain_cg": plain})
        print(f"levels {n} DoFs/level {mg.dofs} PCG {its} plain CG {plain}")
    write_rows(out / "mg_levels.csv", ["levels", "p", "dofs_finest", "iters_pcg", "iters_plain_cg"], rows)
    plot_mg_levels(rows, out / "mg_levels.png")


def study_timing(args, mesh, out):
    from .plotting import plot_timing

    _, timing = build_hierarchy_from_args(args, mesh)
    row = {"strategy": args.strategy, "n_cells": mesh.n_cells, **timing, "total_s": sum(timing.values())}
    print(
        f"{row['strategy']} {row['n_cells']} cells: build {_g(row['build_s'])} s, visit {_g(row['visit_s'])} s, "
        f"flag {_g(row['flag_s'])} s, total {_g(row['total_s'])} s"
    )
    write_rows(out / "timing.csv", ["strategy", "n_cells", "build_s", "visit_s", "flag_s", "total_s"], [row])
    plot_timing([row], out / "timing.png")


STUDIES = {
    "p-convergence": study_p_convergence,
    "h-convergence": study_h_convergence,
    "mg-levels": study_mg_levels,
    "timing": study_timing,
}


def cmd_study(args) -> int:
    mesh = None if args.study == "h-convergence" else load_mesh(args)
    STUDIES[args.study](args, mesh, outdir(args))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gen", help="generated mesh: quad:N, quad:NxM, hex:N, pquad:N[xM]:amp:seed")
    common.add_argument("--mesh", help="ASCII MSH 2.2 mesh file")
    common.add_argument("--strategy", choices=ag.STRATEGIES, default="rtree")
    common.add_argument("--order", type=_order, help="R-tree order m,M")
    common.add_argument("--parts", type=int, help="part count for the graph baseline")
    common.add_argument("--partition", help="external partition file, one part id per line")
    common.add_argument("--by-material", action="store_true", help="one tree per material label")
    common.add_argument("--hierarchy", help="load a saved hierarchy instead of building one")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or .)")
    common.add_argument("--config", help="JSON file whose keys override the flags")

    level = argparse.ArgumentParser(add_help=False)
    level.add_argument("--level", type=int, help="hierarchy level (0 = fine mesh)")
    level.add_argument("--agglomerates", type=int, help="select the level with this many agglomerates")

    disc = argparse.ArgumentParser(add_help=False)
    disc.add_argument("--p", type=int, default=1)
    disc.add_argument("--degrees", type=_int_list)
    disc.add_argument("--family", choices=("Q", "P"), default="Q")
    disc.add_argument("--c-sigma", type=float, default=10.0)
    disc.add_argument("--solver", choices=("direct", "r3mg"), default="direct")
    disc.add_argument("--levels", type=_int_list, help="multigrid level counts")
    disc.add_argument("--sizes", type=_int_list, help="mesh sizes for h-refinement")
    disc.add_argument("--abstol", type=float, default=1e-12)
    disc.add_argument("--reltol", type=float, default=1e-9)
    disc.add_argument("--maxit", type=int, help="CG iteration cap (default 10 x DoFs)")
    disc.add_argument("--f", type=float, default=1.0, help="constant source for mg-levels")
    disc.add_argument("--g", type=float, default=0.0, help="constant boundary value for mg-levels")

    parser = argparse.ArgumentParser(prog="polyagglo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("agglomerate", parents=[common], help="build and save an agglomerate hierarchy")
    p.add_argument("--vtk", action="store_true", help="write one VTK file per level")
    p.set_defaults(func=cmd_agglomerate)
    p = sub.add_parser("metrics", parents=[common, level], help="quality metrics of one level")
    p.set_defaults(func=cmd_metrics)
    p = sub.add_parser("solve", parents=[common, level, disc], help="solve the manufactured problem")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("study", parents=[common, level, disc], help="run a parameter study")
    p.add_argument("study", choices=sorted(STUDIES))
    p.set_defaults(func=cmd_study)
    return parser


def apply_config(args, path):
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: {exc}") from None
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"config {path}: unknown keys {', '.join(unknown)}")
    for key, value in cfg.items():
        if key in ("order", "degrees", "levels", "sizes") and isinstance(value, str):
            value = _int_list(value)
        if key == "order" and value is not None:
            value = tuple(value)
        setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            apply_config(args, args.config)
        return args.func(args)
    except (UsageError, FileNotFoundError, MshParseError, MeshError, HierarchyError, PartitionError, DofLimitError) as exc:
        print(f"polyagglo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, BreakdownError, np.linalg.LinAlgError) as exc:
        print(f"polyagglo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"polyagglo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
