"""SVG chart panels with a companion data CSV per panel."""
from __future__ import annotations

import logging
import os
from typing import Dict, List, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from evaluation import POOLED  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "rcpg"
SMOOTHING_WINDOW = 50
TEST_METRICS = {"value": "Test value", "overshoot": "Test overshoot"}
TRAINING_METRICS = {"value": "Training value", "overshoot": "Training overshoot"}


def _save(fig, data: pd.DataFrame, chart_dir: str, name: str) -> str:
    os.makedirs(chart_dir, exist_ok=True)
    svg_path = os.path.join(chart_dir, f"{name}.svg")
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    data.to_csv(os.path.join(chart_dir, f"{name}.csv"), index=False, float_format="%.10g")
    return svg_path


def write_test_panels(summary: pd.DataFrame, chart_dir: str) -> List[str]:
    """One panel per (test, metric): mean and standard error over seeds against the setting."""
    frame = summary[summary["param_value"].astype(str) != POOLED]
    paths = []
    for (domain, test_id, param_name), test in frame.groupby(["domain", "test_id", "param_name"], sort=False):
        settings = list(pd.unique(test["param_value"].astype(str)))
        for metric, title in TEST_METRICS.items():
            fig, ax = plt.subplots(figsize=(6, 4))
            for algorithm, curve in test.groupby("algorithm", sort=True):
                x = [settings.index(str(v)) for v in curve["param_value"]]
                ax.errorbar(x, curve[f"mean_{metric}"], yerr=curve[f"stderr_{metric}"],
                            label=algorithm, marker="o", capsize=3)
            ax.set_xticks(range(len(settings)))
            ax.set_xticklabels(settings)
            ax.set_xlabel(param_name)
            ax.set_title(f"{title} ({domain}, test {test_id})")
            ax.legend(fontsize="small")
            data = test[["algorithm", "param_value", f"mean_{metric}", f"stderr_{metric}"]]
            paths.append(_save(fig, data, chart_dir, f"test_{test_id}_{metric}"))
    logger.info(f"Wrote {len(paths)} test panels to {chart_dir}")
    return paths


def _smoothed_curves(frames: Dict[Tuple[str, int], pd.DataFrame], metric: str,
                     window: int) -> pd.DataFrame:
    rows = []
    for (algorithm, seed), frame in sorted(frames.items()):
        smoothed = frame[metric].rolling(window, min_periods=1).mean()
        rows.append(pd.DataFrame({"algorithm": algorithm, "seed": seed,
                                  "episode": frame["episode"], metric: smoothed}))
    curves = pd.concat(rows, ignore_index=True)
    return (
        curves.groupby(["algorithm", "episode"])[metric]
        .agg(mean="mean", stderr=lambda v: float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0)
        .reset_index()
    )


def write_training_panels(frames: Dict[Tuple[str, int], pd.DataFrame], domain: str, chart_dir: str,
                          window: int = SMOOTHING_WINDOW) -> List[str]:
    """Training value and overshoot per algorithm, smoothed, mean and standard error over seeds."""
    if not frames:
        return []
    paths = []
    for metric, title in TRAINING_METRICS.items():
        data = _smoothed_curves(frames, metric, window)
        fig, ax = plt.subplots(figsize=(6, 4))
        for algorithm, curve in data.groupby("algorithm", sort=True):
            ax.plot(curve["episode"], curve["mean"], label=algorithm)
            ax.fill_between(curve["episode"], curve["mean"] - curve["stderr"],
                            curve["mean"] + curve["stderr"], alpha=0.2)
        ax.set_xlabel("episode")
        ax.set_title(f"{title} ({domain})")
        ax.legend(fontsize="small")
        paths.append(_save(fig, data, chart_dir, f"training_{domain}_{metric}"))
    logger.info(f"Wrote {len(paths)} training panels to {chart_dir}")
    return paths
