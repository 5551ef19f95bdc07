"""Figure rendering for experiment outputs.

Figures are derived solely from the emitted CSVs, so re-running the report
step on unchanged CSVs regenerates identical image files.  Everything is
rendered headless to PNG next to the delimited output.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

_MARKERS = ("o", "s", "^", "d", "v", "*", "x")


def _save(fig, path: Path) -> None:
    tmp = path.with_suffix(".tmp.png")
    fig.savefig(tmp, dpi=150, bbox_inches="tight", metadata={"Software": "suster"})
    plt.close(fig)
    os.replace(tmp, path)


def render_sweep_plot(csv_path: str | os.PathLike, out_path: str | os.PathLike | None = None) -> Path:
    """Mean test MAE (with std error bars over runs) against the dropout
    rate, dropout axis log-scaled."""
    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_name("sweep_mae.png")
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (model, group) in enumerate(sorted(df.groupby("model"))):
        agg = group.groupby("dropout")["mae"].agg(["mean", "std", "count"]).reset_index()
        std = agg["std"].fillna(0.0)
        ax.errorbar(
            agg["dropout"], agg["mean"], yerr=std,
            marker=_MARKERS[i % len(_MARKERS)], capsize=3, label=model,
        )
    ax.set_xscale("log")
    ax.set_xlabel("dropout rate")
    ax.set_ylabel("test MAE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, out_path)
    return out_path


def render_fraction_plot(
    csv_path: str | os.PathLike, out_path: str | os.PathLike | None = None
) -> Path:
    """Test MAE against the training-set fraction."""
    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_name("fraction_mae.png")
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(df["fraction"], df["mae"], yerr=df.get("mae_std", 0.0), marker="o", capsize=3)
    ax.set_xlabel("fraction of training data")
    ax.set_ylabel("test MAE")
    ax.grid(True, alpha=0.3)
    _save(fig, out_path)
    return out_path


def render_history_plot(
    csv_path: str | os.PathLike, out_path: str | os.PathLike | None = None
) -> Path:
    """Per-epoch train/validation MAE curves."""
    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_name("history_mae.png")
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(df["epoch"], df["train_mae"], marker=".", label="train MAE")
    ax.plot(df["epoch"], df["val_mae"], marker=".", label="validation MAE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, out_path)
    return out_path


def render_reports(directory: str | os.PathLike) -> list[Path]:
    """Renders every figure whose source CSV exists in the directory."""
    directory = Path(directory)
    rendered: list[Path] = []
    if (directory / "sweep.csv").exists():
        rendered.append(render_sweep_plot(directory / "sweep.csv"))
    if (directory / "fraction.csv").exists():
        rendered.append(render_fraction_plot(directory / "fraction.csv"))
    if (directory / "history.csv").exists():
        rendered.append(render_history_plot(directory / "history.csv"))
    return rendered
