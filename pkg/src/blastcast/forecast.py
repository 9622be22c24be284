"""Sliding-window autoregressive rollout of the trained forecaster.

Each step encodes only the newest frame (encoder features of unchanged
frames are cached, which is exact because evaluation-mode encoding is
per-frame), rebuilds the GRU state from the current 10-frame window, and
feeds the prediction back in place of the oldest frame.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import (N_NOMINAL, CaseRecord, NormalizationStats, denormalize,
                      write_case)
from .errors import ConfigError
from .euler2d import FrameSequence
from .network import BlastNet
from .scenario import GridSpec

SEEDED = "seeded"
AUTOREGRESSIVE = "autoregressive"


@dataclass
class RolloutResult:
    frames_norm: np.ndarray        # (n_done, H, W) float32, normalized units
    start_index: int               # absolute index of the first predicted frame
    window_len: int = 10
    provenance: list[str] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    diverged_at: int | None = None  # 0-based step of the first non-finite output

    def denormalized(self, stats: NormalizationStats) -> np.ndarray:
        return denormalize(self.frames_norm, stats).astype(np.float32)


def _frame_tensor(pressure: np.ndarray, abs_index: int, distance: np.ndarray,
                  layout: np.ndarray, n_nominal: int) -> torch.Tensor:
    H, W = pressure.shape
    ch = np.empty((1, 4, H, W), dtype=np.float32)
    ch[0, 0] = pressure
    ch[0, 1] = abs_index / (n_nominal - 1)
    ch[0, 2] = distance
    ch[0, 3] = layout
    return torch.from_numpy(ch)


def rollout(model: BlastNet, initial_frames: np.ndarray, distance: np.ndarray,
            layout: np.ndarray, n_steps: int, start_index: int = 0,
            n_nominal: int = N_NOMINAL) -> RolloutResult:
    """Autoregressive forecast of n_steps frames after the seed window.

    initial_frames: (T, H, W) normalized ground-truth frames with absolute
    indices start_index .. start_index+T-1. Prediction k (0-based) carries
    absolute index start_index+T+k; once k >= T the window holds no ground
    truth. The GRU state is rebuilt from zero for every window.
    """
    T = model.config.window
    if initial_frames.shape[0] != T:
        raise ConfigError(
            f"need exactly {T} seed frames, got {initial_frames.shape[0]}")
    if n_steps < 1:
        raise ConfigError(f"n_steps must be positive, got {n_steps}")
    H, W = initial_frames.shape[1:]
    model.eval()
    preds = np.empty((n_steps, H, W), dtype=np.float32)
    result = RolloutResult(frames_norm=preds, start_index=start_index + T,
                           window_len=T)
    with torch.no_grad():
        window = deque(maxlen=T)
        for j in range(T):
            x = _frame_tensor(initial_frames[j], start_index + j,
                              distance, layout, n_nominal)
            window.append(model.encode(model.select_channels(x[None])[0]))
        for k in range(n_steps):
            t0 = time.perf_counter()
            latents = torch.stack([z for (_, _, z) in window], dim=1)
            hidden = model.temporal(latents)
            f1, f2, _ = window[-1]
            pred = model.decode(hidden, f1, f2)[0, 0].numpy()
            result.step_seconds.append(time.perf_counter() - t0)
            if not np.all(np.isfinite(pred)):
                result.diverged_at = k
                result.frames_norm = preds[:k].copy()
                break
            preds[k] = pred
            result.provenance.append(SEEDED if k < T else AUTOREGRESSIVE)
            x = _frame_tensor(preds[k], start_index + T + k,
                              distance, layout, n_nominal)
            window.append(model.encode(model.select_channels(x[None])[0]))
    return result


def save_rollout(out_dir: Path, result: RolloutResult, grid: GridSpec,
                 source_case: str, stats: NormalizationStats,
                 distance: np.ndarray, layout: np.ndarray, dt_out: float,
                 include_timings: bool = True) -> Path:
    """Persist a rollout in the shared case format plus a rollout manifest.

    Wall-clock timings go to a separate timings.json so the deterministic
    artifacts stay bit-reproducible; deterministic runs skip that file.
    """
    out_dir = Path(out_dir)
    case_id = f"rollout-{source_case}"
    seq = FrameSequence(frames=result.denormalized(stats), dt_out=dt_out,
                        grid=grid, case_id=case_id)
    d = write_case(out_dir, CaseRecord(seq=seq, layout=layout, distance=distance))
    manifest = {
        "source_case": source_case,
        "seed_window": [result.start_index - result.window_len,
                        result.start_index - 1],
        "start_index": result.start_index,
        "n_steps": int(result.frames_norm.shape[0]),
        "provenance": result.provenance,
        "diverged_at": result.diverged_at,
    }
    (d / "rollout.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if include_timings:
        (d / "timings.json").write_text(json.dumps(
            {"step_seconds": result.step_seconds,
             "total_seconds": float(np.sum(result.step_seconds))}, indent=2))
    return d
