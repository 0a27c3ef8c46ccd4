# GraphicalMTPOptimizer/src/report.py
"""Report tables, comparison plot data and the optional comparison figure."""
import logging
from pathlib import Path
from typing import Dict

import pandas as pd

from src.storage import save_frame, save_json

COMPARISON_COLUMNS = ["method", "train_value", "train_se", "eval_value", "eval_se", "elapsed_minutes", "converged"]


def write_report(report, out: Path) -> Dict[str, str]:
    """
    Writes ``report.csv`` (one row per method) and ``report.json``.

    Returns:
        Dict[str, str]: Artifact name to path.
    """
    out = Path(out)
    paths = {
        "report_csv": str(save_frame(report.to_frame(), out / "report.csv")),
        "cv_table": str(out / "cv_table.csv"),
    }
    save_json({**report.to_dict(), "artifacts": paths}, out / "report.json")
    paths["report_json"] = str(out / "report.json")
    for row in report.rows:
        logging.info(
            f"{row['method']:>12}: train {100 * row['train_value']:.2f}% (se {100 * row['train_se']:.2f}), "
            f"held-out {100 * row['eval_value']:.2f}% (se {100 * row['eval_se']:.2f}), "
            f"{row['elapsed_minutes']:.2f} min"
        )
    return paths


def comparison_plot_data(report, residuals: pd.DataFrame) -> pd.DataFrame:
    """
    Long-format data for the comparison dot chart.

    One row per sampled graph (``kind="graph"``, ``label`` training or
    validation, its empirical objective) and one row per method
    (``kind="method"``, training-panel value).
    """
    graphs = pd.DataFrame({
        "kind": "graph",
        "label": residuals["part"].to_numpy(),
        "value": residuals["y"].to_numpy(),
        "prediction": residuals["prediction"].to_numpy(),
    })
    methods = pd.DataFrame({
        "kind": "method",
        "label": [row["method"] for row in report.rows],
        "value": [row["train_value"] for row in report.rows],
        "prediction": float("nan"),
    })
    return pd.concat([graphs, methods], ignore_index=True)


def plot_comparison(plot_data: pd.DataFrame, path: Path) -> Path:
    """Dot chart: sampled graphs by part, with a horizontal line per method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    graphs = plot_data[plot_data["kind"] == "graph"]
    for position, (part, group) in enumerate(graphs.groupby("label", sort=True)):
        ax.scatter([position] * len(group), 100 * group["value"], s=6, alpha=0.4, label=f"sampled ({part})")
    methods = plot_data[plot_data["kind"] == "method"]
    for _, row in methods.iterrows():
        ax.axhline(100 * row["value"], linestyle="--", linewidth=1, label=row["label"])
    ax.set_xticks(range(graphs["label"].nunique()))
    ax.set_xticklabels(sorted(graphs["label"].unique()))
    ax.set_ylabel("objective (%)")
    ax.legend(loc="lower right", fontsize="small")
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_comparison(report, plot_data: pd.DataFrame, out: Path, plot: bool = False) -> Dict[str, str]:
    out = Path(out)
    frame = report.to_frame()[COMPARISON_COLUMNS]
    paths = {
        "comparison_csv": str(save_frame(frame, out / "comparison.csv")),
        "plot_data": str(save_frame(plot_data, out / "plot_data.csv")),
    }
    if plot:
        paths["comparison_png"] = str(plot_comparison(plot_data, out / "comparison.png"))
    logging.info(f"Comparison written to {paths['comparison_csv']}")
    return paths
