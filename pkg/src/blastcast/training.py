"""Composite Scharr-gradient loss and the Adam training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import Sample
from .errors import ConfigError, TrainingError
from .network import BlastNet, save_weights

# Scharr derivative kernels, fixed constants applied by cross-correlation.
SCHARR_X = np.array([[-3.0, 0.0, 3.0],
                     [-10.0, 0.0, 10.0],
                     [-3.0, 0.0, 3.0]])
SCHARR_Y = np.array([[-3.0, -10.0, -3.0],
                     [0.0, 0.0, 0.0],
                     [3.0, 10.0, 3.0]])


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.8

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    max_iterations: int | None = None
    shuffle_seed: int = 0
    stop_l_data: float | None = None   # early stop on epoch-mean L_data
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("training hyperparameters must be positive")


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    """Accept (H,W), (B,H,W) or (B,1,H,W); return (B,1,H,W)."""
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t[:, None]
    if t.dim() == 4:
        return t
    raise ConfigError(f"expected a field tensor, got {t.dim()} dims")


def scharr_gradients(P: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-correlate with the Scharr kernels under replicate padding.

    Output shape equals input shape; non-trainable by construction since
    the kernels are constants.
    """
    x = _as_batch(P)
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ConfigError(f"field too small for a 3x3 kernel: {tuple(x.shape[-2:])}")
    kx = torch.as_tensor(SCHARR_X, dtype=x.dtype, device=x.device).view(1, 1, 3, 3)
    ky = torch.as_tensor(SCHARR_Y, dtype=x.dtype, device=x.device).view(1, 1, 3, 3)
    padded = torch.nn.functional.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = torch.nn.functional.conv2d(padded, kx)
    gy = torch.nn.functional.conv2d(padded, ky)
    return gx.view_as(P), gy.view_as(P)


def composite_loss(pred: torch.Tensor, true: torch.Tensor,
                   cfg: LossConfig = LossConfig()):
    """L_total = lambda1 * MAE + lambda2 * mean Scharr-gradient MAE.

    Returns (total, l_data, l_grad) as scalars connected to the graph.
    """
    if pred.shape != true.shape:
        raise ConfigError(f"shape mismatch: pred {tuple(pred.shape)} "
                          f"vs true {tuple(true.shape)}")
    l_data = torch.mean(torch.abs(pred - true))
    gx_p, gy_p = scharr_gradients(pred)
    gx_t, gy_t = scharr_gradients(true)
    l_grad = torch.mean(torch.abs(gx_p - gx_t)) + torch.mean(torch.abs(gy_p - gy_t))
    total = cfg.lambda1 * l_data + cfg.lambda2 * l_grad
    return total, l_data, l_grad


@dataclass
class LossRecord:
    iteration: int
    epoch: int
    l_data: float
    l_grad: float
    l_total: float


@dataclass
class TrainResult:
    history: list[LossRecord] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False
    wall_seconds: float = 0.0

    def epoch_mean_l_data(self, epoch: int) -> float:
        vals = [r.l_data for r in self.history if r.epoch == epoch]
        return float(np.mean(vals)) if vals else float("nan")


def _stack_batch(samples: list[Sample], idx: np.ndarray):
    windows = np.stack([samples[i].window for i in idx])
    targets = np.stack([samples[i].target for i in idx])[:, None]
    return torch.from_numpy(windows), torch.from_numpy(targets)


def train(model: BlastNet, samples: list[Sample], cfg: TrainConfig,
          loss_cfg: LossConfig = LossConfig(), out_dir: Path | None = None,
          log=None) -> TrainResult:
    """Adam training with per-epoch seeded shuffling and teacher forcing.

    Windows always come from ground-truth frames; autoregression is a
    test-time mechanism only. Emits a loss-history CSV and periodic
    checkpoints when out_dir is given.
    """
    if not samples:
        raise ConfigError("empty sample set")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                           weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.shuffle_seed)
    result = TrainResult()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    iteration = 0
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        epoch_l_data = []
        for lo in range(0, len(samples), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            windows, targets = _stack_batch(samples, idx)
            opt.zero_grad()
            pred = model(windows)
            total, l_data, l_grad = composite_loss(pred, targets, loss_cfg)
            if not torch.isfinite(total):
                if out_dir is not None:
                    save_weights(model, out_dir / "weights_last_finite.npz")
                raise TrainingError(
                    f"non-finite loss at iteration {iteration} (epoch {epoch})")
            total.backward()
            opt.step()
            iteration += 1
            rec = LossRecord(iteration=iteration, epoch=epoch,
                             l_data=l_data.detach().item(),
                             l_grad=l_grad.detach().item(),
                             l_total=total.detach().item())
            result.history.append(rec)
            epoch_l_data.append(rec.l_data)
            if log and iteration % 50 == 0:
                log(f"iter {iteration} epoch {epoch} "
                    f"L_data {rec.l_data:.3e} L_grad {rec.l_grad:.3e}")
            if cfg.checkpoint_every and out_dir is not None \
                    and iteration % cfg.checkpoint_every == 0:
                save_weights(model, out_dir / f"checkpoint_{iteration:06d}.npz")
            if cfg.max_iterations and iteration >= cfg.max_iterations:
                break
        result.epochs_run = epoch + 1
        if cfg.max_iterations and iteration >= cfg.max_iterations:
            break
        if cfg.stop_l_data is not None and epoch_l_data \
                and float(np.mean(epoch_l_data)) < cfg.stop_l_data:
            result.stopped_early = True
            break
    recalibrate_norm_stats(model, samples, cfg.batch_size)
    result.wall_seconds = time.perf_counter() - start
    model.eval()
    if out_dir is not None:
        write_history_csv(out_dir / "loss_history.csv", result.history)
        save_weights(model, out_dir / "weights.npz")
    return result


def recalibrate_norm_stats(model, samples, batch_size: int) -> None:
    """Re-estimate batch-norm running statistics over the full sample set.

    During training the running averages lag the weights and are skewed by
    whatever batches came last, which visibly degrades eval-mode predictions.
    A forward-only sweep in cumulative-average mode replaces them with the
    statistics of the final weights. Deterministic: fixed order, no updates
    to any learned parameter.
    """
    norms = [m for m in model.modules()
             if isinstance(m, torch.nn.BatchNorm2d)]
    if not norms:
        return
    saved_momentum = [m.momentum for m in norms]
    for m in norms:
        m.reset_running_stats()
        m.momentum = None
    model.train()
    with torch.no_grad():
        for lo in range(0, len(samples), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(samples)))
            windows, _ = _stack_batch(samples, idx)
            model(windows)
    for m, mom in zip(norms, saved_momentum):
        m.momentum = mom
    model.eval()


def write_history_csv(path: Path, history: list[LossRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "epoch", "l_data", "l_grad", "l_total"])
        for r in history:
            w.writerow([r.iteration, r.epoch,
                        f"{r.l_data:.9e}", f"{r.l_grad:.9e}", f"{r.l_total:.9e}"])
