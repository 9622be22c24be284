"""Accuracy metrics on normalized pressure fields: RMSE, MAPE, R-squared.

Per-step curves feed max/avg/min aggregates over a declared horizon.
Steps whose MAPE mask is empty, or whose true field is constant, are
marked excluded and skipped by the aggregates of that metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAPE_THETA = 0.01


def _check(pred: np.ndarray, true: np.ndarray) -> None:
    if pred.shape != true.shape:
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs true {true.shape}")


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    _check(pred, true)
    d = np.asarray(pred, dtype=np.float64) - np.asarray(true, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def mape(pred: np.ndarray, true: np.ndarray, theta: float = MAPE_THETA) -> float:
    """Percent error over cells with true >= theta; NaN when none qualify."""
    _check(pred, true)
    true = np.asarray(true, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    mask = true >= theta
    if not mask.any():
        return float("nan")
    return float(100.0 * np.mean(np.abs(pred[mask] - true[mask]) / true[mask]))


def r2(pred: np.ndarray, true: np.ndarray) -> float:
    """Coefficient of determination; NaN for a constant true field."""
    _check(pred, true)
    true = np.asarray(true, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    ss_err = float(np.sum((pred - true) ** 2))
    return 1.0 - ss_err / ss_tot


@dataclass
class StepMetrics:
    step: int
    rmse: float
    mape: float
    r2: float

    @property
    def mape_included(self) -> bool:
        return np.isfinite(self.mape)

    @property
    def r2_included(self) -> bool:
        return np.isfinite(self.r2)


@dataclass
class AggregateMetrics:
    mape_max: float
    mape_avg: float
    rmse_max: float
    rmse_avg: float
    r2_min: float
    r2_max: float
    horizon: int
    steps_used: int

    def table_row(self) -> str:
        """Aggregates in the fixed report column order."""
        return (f"{self.mape_max:.4f} {self.mape_avg:.4f} "
                f"{self.rmse_max:.6f} {self.rmse_avg:.6f} {self.r2_min:.4f}")


def per_step_metrics(pred_frames: np.ndarray, true_frames: np.ndarray,
                     first_step: int = 0,
                     theta: float = MAPE_THETA) -> list[StepMetrics]:
    """Metric triple for each aligned (pred, true) frame pair."""
    if pred_frames.shape != true_frames.shape:
        raise ConfigError(f"shape mismatch: {pred_frames.shape} vs "
                          f"{true_frames.shape}")
    return [
        StepMetrics(step=first_step + k,
                    rmse=rmse(pred_frames[k], true_frames[k]),
                    mape=mape(pred_frames[k], true_frames[k], theta),
                    r2=r2(pred_frames[k], true_frames[k]))
        for k in range(pred_frames.shape[0])
    ]


def aggregate(series: list[StepMetrics], horizon: int | None = None) -> AggregateMetrics:
    """Max/avg/min aggregates over the first `horizon` steps of the series."""
    steps = series if horizon is None else series[:horizon]
    if not steps:
        raise ConfigError("no steps to aggregate")
    rmses = [s.rmse for s in steps]
    mapes = [s.mape for s in steps if s.mape_included]
    r2s = [s.r2 for s in steps if s.r2_included]
    if not mapes and not r2s and not rmses:
        raise ConfigError("every step excluded from aggregation")
    nan = float("nan")
    return AggregateMetrics(
        mape_max=max(mapes) if mapes else nan,
        mape_avg=float(np.mean(mapes)) if mapes else nan,
        rmse_max=max(rmses),
        rmse_avg=float(np.mean(rmses)),
        r2_min=min(r2s) if r2s else nan,
        r2_max=max(r2s) if r2s else nan,
        horizon=len(steps),
        steps_used=len(rmses),
    )


def write_step_csv(path: Path, series: list[StepMetrics]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "rmse", "mape", "r2", "included"])
        for s in series:
            included = s.mape_included and s.r2_included
            w.writerow([s.step, f"{s.rmse:.9e}", f"{s.mape:.9e}",
                        f"{s.r2:.9e}", int(included)])


def read_step_csv(path: Path) -> list[StepMetrics]:
    series = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            series.append(StepMetrics(step=int(row["step"]),
                                      rmse=float(row["rmse"]),
                                      mape=float(row["mape"]),
                                      r2=float(row["r2"])))
    return series


def aggregate_report(agg: AggregateMetrics, theta: float = MAPE_THETA) -> str:
    lines = [
        "MAPE_max MAPE_avg RMSE_max RMSE_avg R2_min",
        agg.table_row(),
        f"R2_max {agg.r2_max:.4f}",
        f"horizon {agg.horizon} steps_used {agg.steps_used} mape_theta {theta}",
    ]
    return "\n".join(lines) + "\n"


def save_curves(path: Path, series_by_case: dict[str, list[StepMetrics]]) -> None:
    """Line plots of per-step RMSE, MAPE, R2 (mean and spread across cases)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    names = ["rmse", "mape", "r2"]
    for ax, name in zip(axes, names):
        rows = []
        for case_id, series in series_by_case.items():
            vals = np.array([getattr(s, name) for s in series])
            steps = np.array([s.step for s in series])
            rows.append(vals)
            ax.plot(steps, vals, alpha=0.35, lw=0.8)
        stackable = len({len(r) for r in rows}) == 1
        if stackable and len(rows) > 1:
            arr = np.vstack(rows)
            ax.plot(steps, np.nanmean(arr, axis=0), "k-", lw=1.6, label="mean")
            ax.legend(fontsize=8)
        ax.set_xlabel("step")
        ax.set_title(name.upper() if name != "r2" else "R$^2$")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
