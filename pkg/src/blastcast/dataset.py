"""Dataset persistence, global normalization, and sliding-window slicing.

On-disk layout: one directory per case holding `manifest.json`,
`frames.bin`, `layout.bin`, `distance.bin`; the dataset root holds
`stats.json` with the normalization constants and the train/test split.
All binaries are little-endian float32, frame-major, row-major, with the
y index outermost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptDatasetError, MissingInputError
from .euler2d import FrameSequence
from .scenario import GridSpec, ScenarioCase, case_from_dict, case_to_dict

BIN_DTYPE = np.dtype("<f4")
N_NOMINAL = 290
WINDOW_T = 10
CHANNELS = ("pressure", "time", "distance", "layout")


@dataclass(frozen=True)
class NormalizationStats:
    p_min: float
    p_max: float

    def __post_init__(self):
        if not self.p_max > self.p_min:
            raise ConfigError(
                f"degenerate normalization: p_min={self.p_min} p_max={self.p_max}")

    def to_dict(self) -> dict:
        return {"p_min": self.p_min, "p_max": self.p_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(p_min=float(d["p_min"]), p_max=float(d["p_max"]))


@dataclass
class Sample:
    """One training sample: a (T, 4, H, W) window and its next-frame target."""

    window: np.ndarray
    target: np.ndarray
    case_id: str
    target_step_index: int


@dataclass
class CaseRecord:
    """A fully loaded case: frames plus static channels and provenance."""

    seq: FrameSequence
    layout: np.ndarray
    distance: np.ndarray
    case: ScenarioCase | None = None


def compute_stats(sequences) -> NormalizationStats:
    """Global min/max over every pressure value of every training frame."""
    lo, hi = np.inf, -np.inf
    n = 0
    for seq in sequences:
        frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
        lo = min(lo, float(frames.min()))
        hi = max(hi, float(frames.max()))
        n += 1
    if n == 0:
        raise ConfigError("cannot compute stats over an empty training set")
    return NormalizationStats(p_min=lo, p_max=hi)


def normalize(field: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (field - stats.p_min) / (stats.p_max - stats.p_min)


def denormalize(field: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return field * (stats.p_max - stats.p_min) + stats.p_min


def channel_stack(frames_norm: np.ndarray, distance: np.ndarray,
                  layout: np.ndarray, start_index: int = 0,
                  n_nominal: int = N_NOMINAL) -> np.ndarray:
    """Stack (N, 4, H, W) channels: [pressure, time, distance, layout].

    The time channel for absolute frame j is the constant j / (n_nominal - 1).
    """
    N, H, W = frames_norm.shape
    out = np.empty((N, 4, H, W), dtype=np.float32)
    out[:, 0] = frames_norm
    steps = (np.arange(start_index, start_index + N, dtype=np.float32)
             / (n_nominal - 1))
    out[:, 1] = steps[:, None, None]
    out[:, 2] = distance
    out[:, 3] = layout
    return out


def window(frames_norm: np.ndarray, distance: np.ndarray, layout: np.ndarray,
           case_id: str = "", T: int = WINDOW_T,
           n_nominal: int = N_NOMINAL) -> list[Sample]:
    """Slice a normalized sequence into N - T one-step-ahead samples.

    Sample k covers frames k..k+T-1 and targets frame k+T. Windows are
    views into one shared channel stack, so the list is cheap to hold.
    """
    N = frames_norm.shape[0]
    if N <= T:
        raise ConfigError(f"sequence too short: {N} frames, window {T}")
    stack = channel_stack(frames_norm, distance, layout, 0, n_nominal)
    return [
        Sample(window=stack[k:k + T], target=frames_norm[k + T],
               case_id=case_id, target_step_index=k + T)
        for k in range(N - T)
    ]


def _write_bin(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=BIN_DTYPE).tofile(path)


def _read_bin(path: Path, count: int, shape) -> np.ndarray:
    if not path.exists():
        raise CorruptDatasetError(f"missing binary payload {path}")
    raw = np.fromfile(path, dtype=BIN_DTYPE)
    if raw.size != count:
        raise CorruptDatasetError(
            f"{path}: expected {count} float32 values, found {raw.size}")
    return raw.reshape(shape)


def write_case(root: Path, record: CaseRecord) -> Path:
    """Persist one case directory; returns its path."""
    root = Path(root)
    seq = record.seq
    d = root / seq.case_id
    d.mkdir(parents=True, exist_ok=True)
    g = seq.grid
    manifest = {
        "case_id": seq.case_id,
        "grid": {"nx": g.nx, "ny": g.ny, "dx": g.dx, "dy": g.dy},
        "dt_out": seq.dt_out,
        "n_frames": int(seq.frames.shape[0]),
        "units": "Pa",
        "dtype": "<f4",
        "order": "frame-major,row-major,y-outermost",
    }
    if record.case is not None:
        manifest["scenario"] = case_to_dict(record.case)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    _write_bin(d / "frames.bin", seq.frames)
    _write_bin(d / "layout.bin", record.layout)
    _write_bin(d / "distance.bin", record.distance)
    return d


def read_case(case_dir: Path) -> CaseRecord:
    """Load one case directory, validating the manifest against the payload."""
    case_dir = Path(case_dir)
    mpath = case_dir / "manifest.json"
    if not mpath.exists():
        raise MissingInputError(f"no manifest at {mpath}")
    m = json.loads(mpath.read_text())
    if m.get("dtype") != "<f4":
        raise CorruptDatasetError(f"{mpath}: unsupported dtype {m.get('dtype')!r}")
    g = m["grid"]
    grid = GridSpec(nx=int(g["nx"]), ny=int(g["ny"]),
                    dx=float(g["dx"]), dy=float(g["dy"]))
    n = int(m["n_frames"])
    frames = _read_bin(case_dir / "frames.bin", n * grid.ny * grid.nx,
                       (n, grid.ny, grid.nx))
    layout = _read_bin(case_dir / "layout.bin", grid.ny * grid.nx,
                       (grid.ny, grid.nx))
    distance = _read_bin(case_dir / "distance.bin", grid.ny * grid.nx,
                         (grid.ny, grid.nx))
    seq = FrameSequence(frames=frames, dt_out=float(m["dt_out"]),
                        grid=grid, case_id=m["case_id"])
    case = case_from_dict(m["scenario"]) if "scenario" in m else None
    return CaseRecord(seq=seq, layout=layout, distance=distance, case=case)


def split_cases(case_ids: list[str], seed: int, test_fraction: float = 0.1):
    """Deterministic 9:1 split by case; at least one case lands in each side
    when there are two or more cases."""
    ids = sorted(case_ids)
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_test = max(1, round(len(ids) * test_fraction)) if len(ids) > 1 else 0
    return sorted(order[n_test:]), sorted(order[:n_test])


def write_stats(root: Path, stats: NormalizationStats,
                train_cases: list[str], test_cases: list[str]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    payload = dict(stats.to_dict(), train_cases=sorted(train_cases),
                   test_cases=sorted(test_cases))
    path = root / "stats.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def read_stats(root: Path):
    path = Path(root) / "stats.json"
    if not path.exists():
        raise MissingInputError(f"no stats.json under {root}")
    d = json.loads(path.read_text())
    return NormalizationStats.from_dict(d), list(d["train_cases"]), list(d["test_cases"])


def load_samples(root: Path, case_ids: list[str], stats: NormalizationStats,
                 T: int = WINDOW_T, n_nominal: int = N_NOMINAL) -> list[Sample]:
    """Read, normalize, and window every listed case."""
    samples: list[Sample] = []
    for cid in case_ids:
        rec = read_case(Path(root) / cid)
        frames_norm = normalize(rec.seq.frames, stats).astype(np.float32)
        samples.extend(window(frames_norm, rec.distance, rec.layout,
                              case_id=cid, T=T, n_nominal=n_nominal))
    return samples
