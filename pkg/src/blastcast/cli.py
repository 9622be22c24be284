"""Command-line pipeline: gen, train, forecast, eval, damage, bench.

Configuration precedence: built-in defaults < --config file < environment
variables with the BLASTCAST_ prefix < explicit command-line flags. The
merged configuration is snapshotted into every output directory, and
--deterministic forces single-threaded execution with fixed seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import damage as damage_mod
from . import dataset as ds
from . import euler2d, metrics, scenario
from .errors import BlastcastError, ConfigError, MissingInputError

ENV_PREFIX = "BLASTCAST_"

DEFAULTS = {
    "seed": 0,
    "grid": 64,
    "frames": 290,
    "t_end": 0.15,
    "horizon": 280,
    "jobs": 1,
    "count": 5,
    "suite": "random_layout",
    "epochs": 100,
    "iters": None,
    "batch_size": 32,
    "learning_rate": 5e-4,
    "weight_decay": 1e-3,
    "lambda1": 1.0,
    "lambda2": 0.8,
    "stop_l_data": None,
    "widths": [32, 64],
    "gru_width": 64,
    "mape_theta": 0.01,
    "deterministic": False,
    "force": False,
    "plot": False,
    "image": False,
    "channels": ["pressure", "time", "distance", "layout"],
    "multiscale": True,
    "gru": True,
    "encoder_decoder": True,
    "case": None,
    "checkpoint_every": None,
}


def _coerce(value: str):
    try:
        return json.loads(value)
    except (json.JSONDecodeError, ValueError):
        return value


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid config file {path}: {err}") from err
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)} in {path}")
        cfg.update(file_cfg)
    for key in cfg:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            cfg[key] = _coerce(env)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _prepare_out(cfg: dict, out: str) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()) and not cfg["force"]:
        raise ConfigError(
            f"output directory {out_dir} is not empty; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {k: v for k, v in sorted(cfg.items())}
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2,
                                                    sort_keys=True))
    return out_dir


def _set_deterministic(cfg: dict) -> None:
    if not cfg["deterministic"]:
        return
    cfg["jobs"] = 1
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    try:
        import torch
        torch.set_num_threads(1)
        torch.manual_seed(int(cfg["seed"]))
    except ImportError:
        pass


def _simulate_case(case: scenario.ScenarioCase, grid_n: int, frames: int,
                   t_end: float):
    grid = scenario.GridSpec.square(grid_n)
    cfg = euler2d.make_config(t_end=t_end, n_out=frames)
    seq = euler2d.simulate(case, grid, cfg)
    layout = scenario.rasterize_layout(case, grid)
    distance = scenario.distance_field(case.source, grid)
    return ds.CaseRecord(seq=seq, layout=layout, distance=distance, case=case)


def cmd_gen(cfg: dict, out: str) -> int:
    out_dir = _prepare_out(cfg, out)
    cases = scenario.make_scenario_suite(cfg["suite"], int(cfg["count"]),
                                         int(cfg["seed"]))
    for case in cases:
        scenario.validate_case(case)
    jobs = max(1, int(cfg["jobs"]))
    work = [(c, int(cfg["grid"]), int(cfg["frames"]), float(cfg["t_end"]))
            for c in cases]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_simulate_star, work))
    else:
        records = [_simulate_star(w) for w in work]
    for rec in records:
        ds.write_case(out_dir, rec)
        print(f"wrote {rec.seq.case_id} ({rec.seq.frames.shape[0]} frames)")
    train_ids, test_ids = ds.split_cases([c.case_id for c in cases],
                                         int(cfg["seed"]))
    stats = ds.compute_stats(
        rec.seq for rec in records if rec.seq.case_id in set(train_ids))
    ds.write_stats(out_dir, stats, train_ids, test_ids)
    print(f"stats: p_min={stats.p_min:.6g} p_max={stats.p_max:.6g} "
          f"train={len(train_ids)} test={len(test_ids)}")
    return 0


def _simulate_star(work):
    return _simulate_case(*work)


def _model_config(cfg: dict):
    from .network import ModelConfig
    names = list(DEFAULTS["channels"])
    chosen = cfg["channels"]
    if isinstance(chosen, str):
        chosen = [c.strip() for c in chosen.split(",") if c.strip()]
    unknown = set(chosen) - set(names)
    if unknown:
        raise ConfigError(f"unknown channels {sorted(unknown)}")
    mask = tuple(n in chosen for n in names)
    widths = cfg["widths"]
    if isinstance(widths, str):
        widths = [int(w) for w in widths.split(",")]
    if len(widths) != 2:
        raise ConfigError(f"widths must have two entries, got {widths}")
    return ModelConfig(widths=tuple(int(w) for w in widths),
                       gru_width=int(cfg["gru_width"]),
                       use_multiscale=bool(cfg["multiscale"]),
                       use_gru=bool(cfg["gru"]),
                       use_encoder_decoder=bool(cfg["encoder_decoder"]),
                       channel_mask=mask)


def cmd_train(cfg: dict, data: str, out: str) -> int:
    import torch

    from .network import BlastNet
    from .training import LossConfig, TrainConfig, train

    _set_deterministic(cfg)
    out_dir = _prepare_out(cfg, out)
    stats, train_ids, _ = ds.read_stats(data)
    if not train_ids:
        raise ConfigError("no training cases in the split")
    samples = ds.load_samples(Path(data), train_ids, stats)
    torch.manual_seed(int(cfg["seed"]))
    model = BlastNet(_model_config(cfg))
    train_cfg = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        weight_decay=float(cfg["weight_decay"]),
        batch_size=int(cfg["batch_size"]),
        epochs=int(cfg["epochs"]),
        max_iterations=None if cfg["iters"] is None else int(cfg["iters"]),
        shuffle_seed=int(cfg["seed"]),
        stop_l_data=None if cfg["stop_l_data"] is None else float(cfg["stop_l_data"]),
        checkpoint_every=None if cfg["checkpoint_every"] is None
        else int(cfg["checkpoint_every"]),
    )
    loss_cfg = LossConfig(lambda1=float(cfg["lambda1"]),
                          lambda2=float(cfg["lambda2"]))
    result = train(model, samples, train_cfg, loss_cfg, out_dir=out_dir,
                   log=print)
    last = result.history[-1]
    print(f"trained {last.iteration} iterations ({result.epochs_run} epochs), "
          f"final L_data {last.l_data:.3e}, weights in {out_dir}")
    return 0


def cmd_forecast(cfg: dict, data: str, weights: str, out: str) -> int:
    from .forecast import rollout, save_rollout
    from .network import load_weights

    _set_deterministic(cfg)
    if not Path(weights).exists():
        raise MissingInputError(f"weights not found: {weights}")
    out_dir = _prepare_out(cfg, out)
    stats, train_ids, test_ids = ds.read_stats(data)
    case_id = cfg["case"] or (test_ids or train_ids)[0]
    rec = ds.read_case(Path(data) / case_id)
    model = load_weights(weights)
    T = model.config.window
    frames_norm = ds.normalize(rec.seq.frames, stats).astype(np.float32)
    horizon = int(cfg["horizon"])
    result = rollout(model, frames_norm[:T], rec.distance, rec.layout, horizon)
    d = save_rollout(out_dir, result, rec.seq.grid, case_id, stats,
                     rec.distance, rec.layout, rec.seq.dt_out,
                     include_timings=not cfg["deterministic"])
    msg = f"rollout of {result.frames_norm.shape[0]} steps -> {d}"
    if result.diverged_at is not None:
        msg += f" (diverged at step {result.diverged_at})"
    print(msg)
    return 0


def _load_rollout(rollout_dir: Path):
    sub = [p for p in Path(rollout_dir).iterdir()
           if p.is_dir() and (p / "rollout.json").exists()]
    if (Path(rollout_dir) / "rollout.json").exists():
        sub = [Path(rollout_dir)]
    if not sub:
        raise MissingInputError(f"no rollout found under {rollout_dir}")
    d = sorted(sub)[0]
    rec = ds.read_case(d)
    meta = json.loads((d / "rollout.json").read_text())
    return rec, meta


def cmd_eval(cfg: dict, data: str, rollout_dir: str, out: str) -> int:
    out_dir = _prepare_out(cfg, out)
    stats, _, _ = ds.read_stats(data)
    rec, meta = _load_rollout(Path(rollout_dir))
    truth = ds.read_case(Path(data) / meta["source_case"])
    start = int(meta["start_index"])
    horizon = min(int(cfg["horizon"]), rec.seq.frames.shape[0],
                  truth.seq.frames.shape[0] - start)
    if horizon < 1:
        raise ConfigError("nothing to evaluate: empty overlap with ground truth")
    pred = ds.normalize(rec.seq.frames[:horizon], stats)
    true = ds.normalize(truth.seq.frames[start:start + horizon], stats)
    theta = float(cfg["mape_theta"])
    series = metrics.per_step_metrics(pred, true, first_step=start, theta=theta)
    agg = metrics.aggregate(series, horizon)
    metrics.write_step_csv(out_dir / "per_step.csv", series)
    report = metrics.aggregate_report(agg, theta)
    (out_dir / "aggregates.txt").write_text(report)
    if cfg["plot"]:
        metrics.save_curves(out_dir / "curves.png",
                            {meta["source_case"]: series})
    print(report, end="")
    return 0


def cmd_damage(cfg: dict, data: str | None, rollout_dir: str | None,
               out: str) -> int:
    out_dir = _prepare_out(cfg, out)
    if rollout_dir:
        rec, _ = _load_rollout(Path(rollout_dir))
    elif data and cfg["case"]:
        rec = ds.read_case(Path(data) / cfg["case"])
    else:
        raise ConfigError("damage needs --rollout DIR or --data DIR with --case ID")
    dmap = damage_mod.damage_map(rec.seq.frames, rec.layout, rec.seq.dt_out)
    damage_mod.save_damage(out_dir, dmap, image=bool(cfg["image"]))
    for name, pct in dmap.percentages.items():
        print(f"{name} {pct:.3f}%")
    return 0


def cmd_bench(cfg: dict, data: str, weights: str, out: str) -> int:
    from .forecast import rollout
    from .network import load_weights

    _set_deterministic(cfg)
    out_dir = _prepare_out(cfg, out)
    stats, train_ids, test_ids = ds.read_stats(data)
    case_id = cfg["case"] or (test_ids or train_ids)[0]
    rec = ds.read_case(Path(data) / case_id)
    if rec.case is None:
        raise ConfigError(f"case {case_id} carries no scenario record")
    horizon = int(cfg["horizon"])
    n_frames = rec.seq.frames.shape[0]
    solver_cfg = euler2d.make_config(
        t_end=rec.seq.dt_out * (n_frames - 1), n_out=n_frames)
    t0 = time.perf_counter()
    euler2d.simulate(rec.case, rec.seq.grid, solver_cfg)
    solver_s = time.perf_counter() - t0
    model = load_weights(weights)
    frames_norm = ds.normalize(rec.seq.frames, stats).astype(np.float32)
    t0 = time.perf_counter()
    rollout(model, frames_norm[:model.config.window], rec.distance, rec.layout,
            horizon)
    rollout_s = time.perf_counter() - t0
    ratio = solver_s / rollout_s
    payload = {"case": case_id, "horizon": horizon,
               "solver_seconds": solver_s, "rollout_seconds": rollout_s,
               "speedup": ratio}
    (out_dir / "bench.json").write_text(json.dumps(payload, indent=2))
    print(f"solver_seconds={solver_s:.3f} rollout_seconds={rollout_s:.3f} "
          f"speedup={ratio:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="blastcast",
        description="Blast-wave surrogate pipeline: data generation, training, "
                    "forecasting, evaluation, damage assessment, benchmarking.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--deterministic", action="store_const", const=True)
        sp.add_argument("--force", action="store_const", const=True)

    g = sub.add_parser("gen", help="generate scenarios, simulate, build dataset")
    common(g)
    g.add_argument("--suite", choices=["random_layout", "variable_source",
                                       "variable_charge"])
    g.add_argument("--count", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--t-end", dest="t_end", type=float)

    t = sub.add_parser("train", help="train the forecaster")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--stop-l-data", dest="stop_l_data", type=float)
    t.add_argument("--widths")
    t.add_argument("--gru-width", dest="gru_width", type=int)
    t.add_argument("--channels")
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    for name in ("multiscale", "gru", "encoder-decoder"):
        t.add_argument(f"--no-{name}", dest=name.replace("-", "_"),
                       action="store_const", const=False)

    f = sub.add_parser("forecast", help="autoregressive rollout")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--weights", required=True)
    f.add_argument("--case")
    f.add_argument("--horizon", type=int)

    e = sub.add_parser("eval", help="per-step metrics and aggregates")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--rollout", required=True, dest="rollout_dir")
    e.add_argument("--horizon", type=int)
    e.add_argument("--mape-theta", dest="mape_theta", type=float)
    e.add_argument("--plot", action="store_const", const=True)

    d = sub.add_parser("damage", help="P-I damage map")
    common(d)
    d.add_argument("--data")
    d.add_argument("--rollout", dest="rollout_dir")
    d.add_argument("--case")
    d.add_argument("--image", action="store_const", const=True)

    b = sub.add_parser("bench", help="solver vs surrogate timing")
    common(b)
    b.add_argument("--data", required=True)
    b.add_argument("--weights", required=True)
    b.add_argument("--case")
    b.add_argument("--horizon", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_config(args)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.out)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.data, args.weights, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.data, args.rollout_dir, args.out)
        if args.command == "damage":
            return cmd_damage(cfg, getattr(args, "data", None),
                              getattr(args, "rollout_dir", None), args.out)
        if args.command == "bench":
            return cmd_bench(cfg, args.data, args.weights, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except BlastcastError as err:
        print(f"error: {err.exit_code}: {err}", file=sys.stderr)
        return err.exit_code


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
