"""Figure rendering for the CLI report paths.

Each report command can drop a PNG next to its CSV.  matplotlib is imported
lazily with the Agg backend so headless runs and library-only users never
touch a display.
"""

from __future__ import annotations

__all__ = ["render_curves", "render_timing", "render_training"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_curves(rows, path) -> None:
    """Two panels: parameters and flop counts against the rank sweep."""
    plt = _pyplot()
    formats = sorted({row[1] for row in rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for fmt in formats:
        pts = sorted((r, p, f) for r, f2, p, f in rows if f2 == fmt)
        rs = [p[0] for p in pts]
        axes[0].plot(rs, [p[1] for p in pts], marker="o", ms=3, label=fmt)
        axes[1].plot(rs, [p[2] for p in pts], marker="o", ms=3, label=fmt)
    for ax, title in zip(axes, ("parameters", "multiply cost")):
        ax.set_yscale("log")
        ax.set_xlabel("rank r")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_timing(rows, path) -> None:
    """Serial vs parallel wall clock against the rank sweep, one panel per shape."""
    plt = _pyplot()
    shapes = sorted({row["shape"] for row in rows})
    fig, axes = plt.subplots(1, len(shapes), figsize=(4.5 * len(shapes), 3.6), squeeze=False)
    for ax, shape in zip(axes[0], shapes):
        pts = [r for r in rows if r["shape"] == shape and r["status"] == "ok"]
        cs = [r["c"] for r in pts]
        ax.plot(cs, [r["serial_ms"] for r in pts], marker="o", ms=3, label="serial")
        ax.plot(cs, [r["parallel_ms"] for r in pts], marker="s", ms=3, label="parallel")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("rank C")
        ax.set_ylabel("ms (best of repeats)")
        ax.set_title(shape)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_training(log, path) -> None:
    """Loss and accuracy curves of a toy training run."""
    plt = _pyplot()
    epochs = [r["epoch"] for r in log]
    fig, ax1 = plt.subplots(figsize=(5.5, 3.6))
    ax1.plot(epochs, [r["loss"] for r in log], color="tab:red", label="loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(
        epochs, [r["train_accuracy"] for r in log], color="tab:blue", label="accuracy"
    )
    ax2.set_ylabel("train accuracy", color="tab:blue")
    ax2.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
