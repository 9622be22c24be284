"""P-I diagram damage assessment from pressure-time histories.

Peak overpressure and positive-phase impulse per cell, classified against
nested hyperbolic criteria: level (a, b, c) is satisfied when dp > a,
i > b, and (dp - a)(i - b) >= c, with dp in kPa and i in kPa s. The
highest satisfied level wins; nesting of the criteria is asserted at
construction so that "highest" is well defined.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError

AMBIENT_PRESSURE = 102_759.0  # Pa


class DamageLevel(IntEnum):
    NONE = 0
    MINOR = 1
    MODERATE = 2
    SEVERE = 3
    TOTAL = 4


LEVEL_NAMES = {lv: lv.name.capitalize() for lv in DamageLevel}


@dataclass(frozen=True)
class Criterion:
    level: DamageLevel
    a: float   # kPa pressure asymptote
    b: float   # kPa s impulse asymptote
    c: float   # kPa^2 s hyperbola constant

    def satisfied(self, dp: float, i: float) -> bool:
        return dp > self.a and i > self.b and (dp - self.a) * (i - self.b) >= self.c


DEFAULT_CRITERIA = (
    Criterion(DamageLevel.MINOR, 6.205, 0.517, 3.185),
    Criterion(DamageLevel.MODERATE, 11.721, 0.931, 10.934),
    Criterion(DamageLevel.SEVERE, 24.821, 1.827, 45.161),
    Criterion(DamageLevel.TOTAL, 48.263, 3.068, 147.367),
)


@dataclass(frozen=True)
class DamageConfig:
    ambient_pressure: float = AMBIENT_PRESSURE
    criteria: tuple[Criterion, ...] = DEFAULT_CRITERIA

    def __post_init__(self):
        levels = [c.level for c in self.criteria]
        if levels != sorted(levels) or len(set(levels)) != len(levels):
            raise ConfigError("criteria must be listed in ascending level order")
        for c in self.criteria:
            if min(c.a, c.b, c.c) <= 0:
                raise ConfigError(f"non-positive criterion constants for {c.level}")
        # Nesting: satisfying a higher curve must imply every lower curve,
        # otherwise "highest satisfied level" is ill defined. The worst case
        # of (dp-aL)(i-bL) on the higher hyperbola gives the closed form.
        for lo, hi in zip(self.criteria, self.criteria[1:]):
            if not (hi.a > lo.a and hi.b > lo.b):
                raise ConfigError(f"asymptotes not ordered: {lo.level} vs {hi.level}")
            da, db = hi.a - lo.a, hi.b - lo.b
            worst = (math.sqrt(da * db) + math.sqrt(hi.c)) ** 2
            if worst < lo.c:
                raise ConfigError(
                    f"criteria not nested: {hi.level} does not imply {lo.level}")


@dataclass
class PointLoadSummary:
    delta_p_plus: float            # kPa
    i_plus: float                  # kPa s
    arrival_index: int | None


@dataclass
class DamageMap:
    levels: np.ndarray             # int8 (H, W); -1 marks obstacle cells
    percentages: dict[str, float]  # per level name, over non-obstacle cells

    def counts(self) -> dict[str, int]:
        out = {}
        for lv in DamageLevel:
            out[LEVEL_NAMES[lv]] = int((self.levels == int(lv)).sum())
        return out


def peak_overpressure(history: np.ndarray, cfg: DamageConfig = DamageConfig()) -> float:
    """Max positive excursion above ambient, in kPa."""
    history = np.asarray(history, dtype=np.float64)
    if history.size == 0:
        raise ConfigError("empty pressure history")
    return max(float(history.max()) - cfg.ambient_pressure, 0.0) / 1000.0


def positive_impulse(history: np.ndarray, dt_out: float,
                     cfg: DamageConfig = DamageConfig()):
    """Trapezoidal integral of overpressure across the first positive phase.

    Returns (i_plus in kPa s, arrival_index or None). The phase runs from
    the first sample above ambient to the first later sample at or below
    ambient (inclusive), or to the series end.
    """
    history = np.asarray(history, dtype=np.float64)
    over = history - cfg.ambient_pressure
    above = over > 0.0
    if not above.any():
        return 0.0, None
    arrival = int(np.argmax(above))
    end = history.size - 1
    for k in range(arrival + 1, history.size):
        if over[k] <= 0.0:
            end = k
            break
    if end == arrival:
        return 0.0, arrival
    area = float(np.trapezoid(over[arrival:end + 1], dx=dt_out))
    return area / 1000.0, arrival


def point_load(history: np.ndarray, dt_out: float,
               cfg: DamageConfig = DamageConfig()) -> PointLoadSummary:
    i_plus, arrival = positive_impulse(history, dt_out, cfg)
    return PointLoadSummary(delta_p_plus=peak_overpressure(history, cfg),
                            i_plus=i_plus, arrival_index=arrival)


def classify(dp: float, i: float, cfg: DamageConfig = DamageConfig()) -> DamageLevel:
    """Highest damage level whose hyperbola the (dp, i) point satisfies."""
    level = DamageLevel.NONE
    for crit in cfg.criteria:
        if crit.satisfied(dp, i):
            level = crit.level
    return level


def damage_map(frames_pa: np.ndarray, layout_mask: np.ndarray, dt_out: float,
               cfg: DamageConfig = DamageConfig()) -> DamageMap:
    """Cell-wise damage classification of a pressure sequence in Pa."""
    if frames_pa.shape[1:] != layout_mask.shape:
        raise ConfigError(f"frames {frames_pa.shape[1:]} vs layout "
                          f"{layout_mask.shape} shape mismatch")
    H, W = layout_mask.shape
    obstacle = np.asarray(layout_mask) >= 0.5
    levels = np.full((H, W), -1, dtype=np.int8)
    for j in range(H):
        for i in range(W):
            if obstacle[j, i]:
                continue
            load = point_load(frames_pa[:, j, i], dt_out, cfg)
            levels[j, i] = int(classify(load.delta_p_plus, load.i_plus, cfg))
    n_free = int((~obstacle).sum())
    if n_free == 0:
        raise ConfigError("no non-obstacle cells to classify")
    percentages = {
        LEVEL_NAMES[lv]: 100.0 * float((levels == int(lv)).sum()) / n_free
        for lv in DamageLevel
    }
    return DamageMap(levels=levels, percentages=percentages)


def save_damage(out_dir: Path, dmap: DamageMap, image: bool = False) -> Path:
    """Raster + legend + area statistics; optional color-mapped PNG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dmap.levels.astype("<i1").tofile(out_dir / "damage.bin")
    legend = {str(int(lv)): LEVEL_NAMES[lv] for lv in DamageLevel}
    legend["-1"] = "Obstacle"
    (out_dir / "damage_legend.json").write_text(
        json.dumps(legend, indent=2, sort_keys=True))
    lines = ["level percent"]
    for name, pct in dmap.percentages.items():
        lines.append(f"{name} {pct:.6f}")
    (out_dir / "damage_stats.txt").write_text("\n".join(lines) + "\n")
    if image:
        _save_image(out_dir / "damage.png", dmap)
    return out_dir


def _save_image(path: Path, dmap: DamageMap) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import BoundaryNorm, ListedColormap

    cmap = ListedColormap(
        ["#444444", "#2c7bb6", "#abd9e9", "#ffffbf", "#fdae61", "#d7191c"])
    norm = BoundaryNorm([-1.5, -0.5, 0.5, 1.5, 2.5, 3.5, 4.5], cmap.N)
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(dmap.levels, cmap=cmap, norm=norm, origin="lower")
    cbar = fig.colorbar(im, ticks=[-1, 0, 1, 2, 3, 4])
    cbar.ax.set_yticklabels(["Obstacle", "None", "Minor", "Moderate",
                             "Severe", "Total"])
    ax.set_title("Damage map")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
