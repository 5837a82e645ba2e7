"""Figures for the study outputs; every function writes one image file."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_p_convergence(rows, path, title="p-refinement"):
    """Errors against sqrt(DoFs) on a semilog scale; rows carry p, dofs, l2, h1semi."""
    x = np.sqrt([r["dofs"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(x, [r["l2"] for r in rows], "o-", label=r"$\|e_h\|_{0}$")
    ax.semilogy(x, [r["h1semi"] for r in rows], "s--", label=r"$|e_h|_{1}$")
    for xi, r in zip(x, rows):
        ax.annotate(f"p={r['p']}", (xi, r["l2"]), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel(r"$\sqrt{\mathrm{DoFs}}$")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_h_convergence(rows, orders, path, title="h-refinement"):
    """Log-log L2 error against h for each degree, labelled with the fitted order."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for p in sorted({r["p"] for r in rows}):
        sel = [r for r in rows if r["p"] == p]
        h = [r["h"] for r in sel]
        ax.loglog(h, [r["l2"] for r in sel], "o-", label=f"Q{p}: order {orders[p]['l2']:.2f}")
    ax.set_xlabel("h")
    ax.set_ylabel(r"$\|e_h\|_{0}$")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_mg_levels(rows, path, title="multigrid iterations"):
    labels = [str(r["levels"]) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(x - 0.2, [r["iters_pcg"] for r in rows], 0.4, label="V-cycle PCG")
    ax.bar(x + 0.2, [r["iters_plain_cg"] for r in rows], 0.4, label="plain CG")
    ax.set_yscale("log")
    ax.set_xticks(x, labels)
    ax.set_xlabel("levels")
    ax.set_ylabel("iterations")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_timing(rows, path, title="agglomeration wall-clock time"):
    phases = ("build_s", "visit_s", "flag_s")
    labels = [f"{r['strategy']}\n{r['n_cells']}" for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    bottom = np.zeros(len(rows))
    for ph in phases:
        vals = np.array([r[ph] for r in rows])
        ax.bar(labels, vals, bottom=bottom, label=ph[:-2])
        bottom += vals
    ax.set_ylabel("seconds")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_metrics(summary, of, path, title="agglomerate quality"):
    """Min/max/avg bars per metric with the overlap factor in the title."""
    names = ("uf", "cr", "br")
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(5, 4))
    for j, stat in enumerate(("min", "avg", "max")):
        ax.bar(x + (j - 1) * 0.25, [summary[n][stat] for n in names], 0.25, label=stat)
    ax.set_xticks(x, [n.upper() for n in names])
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{title} (OF = {of:.4g})")
    ax.legend()
    _save(fig, path)
