"""Report figures rendered straight to PNG files.

Figures are built on :class:`matplotlib.figure.Figure` objects, never through
pyplot, so no global backend state is touched and rendering is safe from
worker threads.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}

NORMAL_COLOR = "#1f77b4"
ATTACK_COLOR = "#ff7f0e"
POSITIVE_COLOR = "#2ca02c"
NEUTRAL_COLOR = "#9a9a9a"


@contextmanager
def figure(width=6.4, height=4.0, nrows=1, ncols=1, **kw):
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(width, height))
        FigureCanvasAgg(fig)
        axes = fig.subplots(nrows, ncols, **kw)
        yield fig, axes


def save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no software/date stamps, so reruns write identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def plot_global_importance(gi, path, top: int = 15):
    """Horizontal bars of mean accuracy drop with stddev whiskers, largest on top."""
    rows = gi.entries[:top][::-1]
    names = [e.feature_name for e in rows]
    means = np.array([e.mean_drop for e in rows])
    stds = np.array([e.stddev_drop for e in rows])
    colors = [POSITIVE_COLOR if m > 0 else NEUTRAL_COLOR for m in means]
    with figure(6.4, 0.3 * len(rows) + 1.2) as (fig, ax):
        ax.barh(names, means, xerr=stds, color=colors, ecolor="black", capsize=2)
        ax.set_xlabel("mean accuracy drop when permuted")
        ax.set_title(f"Permutation importance (n_iter={gi.n_iter}, baseline {gi.baseline_score:.4f})")
        ax.axvline(0, color="black", lw=0.6)
        return save(fig, path)


def plot_local_explanation(exp, path):
    """Class probabilities on the left, signed surrogate weights on the right."""
    entries = list(exp.entries)[::-1]
    with figure(9.0, 0.35 * max(len(entries), 3) + 1.4, 1, 2,
                gridspec_kw={"width_ratios": [1, 2.6]}) as (fig, (left, right)):
        left.barh(["MALICIOUS", "NORMAL"], [exp.predicted[1], exp.predicted[0]],
                  color=[ATTACK_COLOR, NORMAL_COLOR])
        left.set_xlim(0, 1)
        for i, v in enumerate([exp.predicted[1], exp.predicted[0]]):
            left.text(min(v + 0.02, 0.8), i, f"{v:.2f}", va="center")
        left.set_title("Prediction probabilities")
        w = [e.weight for e in entries]
        right.barh([e.condition for e in entries], w,
                   color=[ATTACK_COLOR if e.toward == "Attack" else NORMAL_COLOR for e in entries])
        right.axvline(0, color="black", lw=0.6)
        right.set_xlabel("weight toward NORMAL (left) / ATTACK (right)")
        right.set_title(f"instance {exp.instance_id}  Normal {exp.class_scores[0]:.2f}  "
                        f"Attack {exp.class_scores[1]:.2f}")
        return save(fig, path)


def plot_confusion(metrics, path):
    grid = np.array([[metrics.tn, metrics.fp], [metrics.fn, metrics.tp]])
    with figure(3.8, 3.4) as (fig, ax):
        ax.imshow(grid, cmap="Blues")
        for (i, j), v in np.ndenumerate(grid):
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > grid.max() / 2 else "black")
        ax.set_xticks([0, 1], ["Normal", "Attack"])
        ax.set_yticks([0, 1], ["Normal", "Attack"])
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        ax.set_title(f"accuracy {metrics.accuracy:.4f}")
        return save(fig, path)


def plot_class_distribution(table, path):
    """Grouped bars of attack/normal counts per split (``class_distribution`` frame)."""
    rows = table.set_index("category")
    x = np.arange(2)
    with figure(4.8, 3.4) as (fig, ax):
        for off, cat, color in ((-0.2, "Attack Packets", ATTACK_COLOR), (0.2, "Normal Packets", NORMAL_COLOR)):
            ax.bar(x + off, [rows.loc[cat, "train_size"], rows.loc[cat, "test_size"]], 0.4,
                   label=cat.split()[0], color=color)
        ax.set_xticks(x, ["train", "test"])
        ax.set_ylabel("records")
        ax.legend(frameon=False)
        return save(fig, path)


def plot_depth_scores(scores: dict, path, chosen: int | None = None):
    depths = sorted(scores)
    with figure(4.8, 3.2) as (fig, ax):
        ax.plot(depths, [scores[d] for d in depths], marker="o")
        if chosen is not None:
            ax.axvline(chosen, color=NEUTRAL_COLOR, ls="--")
        ax.set_xlabel("max depth")
        ax.set_ylabel("cross-validated accuracy")
        return save(fig, path)
