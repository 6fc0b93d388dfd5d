# sweep_plots.py

"""Standalone SVG line charts for sweep results (no external renderer needed)."""

import logging
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from evaluation import SweepResult  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed id salt and no date stamp keep repeated renders byte-identical
SVG_HASH_SALT = "idstyle-lab"


def plot_sweep(result: SweepResult, path: Union[str, Path]) -> Path:
    """Accuracy and identity similarity, one line per intensity over k (or per k over intensity)."""
    path = Path(path)
    frame = result.to_frame()
    if frame.empty:
        raise ValueError("cannot plot an empty sweep")

    by_k = frame["k"].nunique() > 1
    x_name, series_name = ("k", "intensity") if by_k else ("intensity", "k")

    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig, (ax_acc, ax_id) = plt.subplots(1, 2, figsize=(10, 4))
        for value, group in frame.groupby(series_name, sort=True):
            group = group.sort_values(x_name)
            label = f"{series_name} = {value:g}"
            ax_acc.plot(group[x_name], group["accuracy"], marker="o", label=label)
            ax_id.plot(group[x_name], group["identity_similarity"], marker="o", label=label)

        ax_acc.set_title("Manipulation accuracy")
        ax_acc.set_ylabel("accuracy")
        ax_id.set_title("Identity similarity")
        ax_id.set_ylabel("cosine similarity")
        for ax in (ax_acc, ax_id):
            ax.set_xlabel(x_name)
            ax.grid(True, alpha=0.3)
            ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    logger.info(f"Saved sweep chart to {path}")
    return path
