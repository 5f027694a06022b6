"""Static PNG figures written next to the tabular outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sim.report import CATEGORIES, ROW_LABELS  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_analytic(rows, axis, path):
    """``rows``: (value, ratio, speedup) tuples."""
    xs = [str(int(r[0])) for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.bar(xs, [r[1] for r in rows], color="#4c72b0")
    a.axhline(1.0, color="k", lw=0.8, ls="--")
    a.set_xlabel(axis)
    a.set_ylabel("T_compute / T_prefetch")
    b.bar(xs, [r[2] for r in rows], color="#dd8452")
    b.axhline(1.0, color="k", lw=0.8, ls="--")
    b.set_xlabel(axis)
    b.set_ylabel("T_DEP / T_DWDP")
    return _save(fig, path)


def plot_breakdown(tables, path):
    """Stacked compute-stream categories per run; ``tables``: {label: Breakdown}."""
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(tables), 4))
    labels = list(tables)
    bottom = [0.0] * len(labels)
    for cat in CATEGORIES:
        if cat == "P2PCopy":
            continue
        vals = [tables[k][cat] / 1000.0 for k in labels]
        if not any(vals):
            continue
        ax.bar(labels, vals, bottom=bottom, label=ROW_LABELS[cat])
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("ms per iteration (rank mean)")
    ax.legend(fontsize=7, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return _save(fig, path)


def plot_sweep(rows, axis, path, ylabel="throughput (tokens/s/GPU)"):
    """``rows``: (value, y) pairs."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o")
    ax.set_xlabel(axis)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_contention(group_sizes, pmfs, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for n, pmf in zip(group_sizes, pmfs):
        cs = sorted(pmf.probs)
        ax.semilogy(cs, [max(pmf.probs[c], 1e-12) for c in cs], marker="o", label=f"N={n}")
    ax.set_xlabel("contention degree C")
    ax.set_ylabel("Pr[C = c]")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_timeline(report, path, max_rank=4):
    """Gantt view of the first measured iteration."""
    colors = {c: f"C{i}" for i, c in enumerate(CATEGORIES)}
    it = report.warmup
    evs = [e for e in report.events if e.iteration == it and e.rank < max_rank]
    fig, ax = plt.subplots(figsize=(10, 0.8 + 0.7 * min(report.num_ranks, max_rank)))
    seen = set()
    for e in evs:
        y = e.rank * 2 + (1 if e.stream == "copy_engine" else 0)
        lab = ROW_LABELS[e.category] if e.category not in seen else None
        seen.add(e.category)
        ax.barh(y, (e.end_ns - e.start_ns) / 1e6, left=e.start_ns / 1e6, height=0.8,
                color=colors[e.category], label=lab)
    ticks = [(r * 2 + s, f"r{r} {'ce' if s else 'sm'}") for r in range(min(report.num_ranks, max_rank))
             for s in (0, 1)]
    ax.set_yticks([t for t, _ in ticks], [n for _, n in ticks])
    ax.set_xlabel("ms")
    ax.legend(fontsize=6, ncol=4, loc="upper right")
    return _save(fig, path)
