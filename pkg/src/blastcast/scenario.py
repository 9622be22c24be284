"""Procedural blast scenarios: building layouts, sources, charges, static fields.

Scenarios live in a rectangular domain (default 64 m x 64 m) populated with
axis-aligned rectangular buildings. Everything is a pure function of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LayoutError

DEFAULT_DOMAIN = (64.0, 64.0)
DEFAULT_CHARGE_KG = 200.0
SOURCE_Z = 3.0


@dataclass(frozen=True)
class Building:
    """Axis-aligned rectangular footprint with a roof height in meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class BlastSource:
    x: float
    y: float
    z: float = SOURCE_Z
    charge_kg: float = DEFAULT_CHARGE_KG


@dataclass(frozen=True)
class ScenarioCase:
    case_id: str
    domain_size: tuple[float, float]
    buildings: tuple[Building, ...]
    source: BlastSource
    seed: int


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid covering the domain; cell centers at (i + 1/2) dx."""

    nx: int
    ny: int
    dx: float
    dy: float

    @classmethod
    def square(cls, n: int, extent: float = 64.0) -> "GridSpec":
        if n < 16:
            raise ConfigError(f"grid must be at least 16 cells per side, got {n}")
        return cls(nx=n, ny=n, dx=extent / n, dy=extent / n)

    def xs(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    def ys(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    def diagonal(self) -> float:
        return math.hypot(self.nx * self.dx, self.ny * self.dy)


@dataclass(frozen=True)
class LayoutParams:
    """Sampling bounds for the random-layout generator."""

    count_range: tuple[int, int] = (6, 15)
    side_range: tuple[float, float] = (5.0, 10.0)
    height_range: tuple[float, float] = (1.0, 3.0)
    clearance: float = 2.0
    boundary_margin: float = 2.0
    max_attempts: int = 10_000


def rect_distance(a: Building, b: Building) -> float:
    """Euclidean gap between two rectangles (0 when they touch or overlap)."""
    gx = max(a.x_min - b.x_max, b.x_min - a.x_max, 0.0)
    gy = max(a.y_min - b.y_max, b.y_min - a.y_max, 0.0)
    return math.hypot(gx, gy)


def point_rect_distance(x: float, y: float, b: Building) -> float:
    gx = max(b.x_min - x, x - b.x_max, 0.0)
    gy = max(b.y_min - y, y - b.y_max, 0.0)
    return math.hypot(gx, gy)


def _sample_building(rng: np.random.Generator, domain, params: LayoutParams) -> Building:
    w = rng.uniform(*params.side_range)
    h = rng.uniform(*params.side_range)
    m = params.boundary_margin
    x0 = rng.uniform(m, domain[0] - m - w)
    y0 = rng.uniform(m, domain[1] - m - h)
    roof = rng.uniform(*params.height_range)
    return Building(x0, y0, x0 + w, y0 + h, roof)


def generate_random_layout(
    seed: int,
    params: LayoutParams | None = None,
    domain: tuple[float, float] = DEFAULT_DOMAIN,
    source_xy: tuple[float, float] = (0.0, 0.0),
    charge_kg: float = DEFAULT_CHARGE_KG,
    case_id: str | None = None,
) -> ScenarioCase:
    """Rejection-sample a valid building layout from a seed.

    Buildings are placed one at a time; a placement is accepted when it keeps
    the clearance to every previous building and the source stays outside all
    footprints. A bounded attempt budget guards against infeasible draws.
    """
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    params = params or LayoutParams()
    rng = np.random.default_rng(seed)
    target = int(rng.integers(params.count_range[0], params.count_range[1] + 1))
    placed: list[Building] = []
    attempts = 0
    while len(placed) < target:
        if attempts >= params.max_attempts:
            raise LayoutError(
                f"layout infeasible for seed {seed}: "
                f"{len(placed)}/{target} buildings after {attempts} attempts"
            )
        attempts += 1
        cand = _sample_building(rng, domain, params)
        if point_rect_distance(*source_xy, cand) <= 0.0:
            continue
        if all(rect_distance(cand, b) >= params.clearance for b in placed):
            placed.append(cand)
    return ScenarioCase(
        case_id=case_id or f"random_layout-{seed:05d}",
        domain_size=domain,
        buildings=tuple(placed),
        source=BlastSource(source_xy[0], source_xy[1], SOURCE_Z, charge_kg),
        seed=seed,
    )


def sample_source_position(
    buildings: tuple[Building, ...],
    rng: np.random.Generator,
    domain: tuple[float, float] = DEFAULT_DOMAIN,
    clearance: float = 2.0,
    grid: GridSpec | None = None,
) -> tuple[float, float]:
    """Pick a source location uniformly over free cell centers.

    Free means at least `clearance` meters from every building footprint.
    """
    grid = grid or GridSpec.square(64, domain[0])
    xs, ys = grid.xs(), grid.ys()
    free = []
    for y in ys:
        for x in xs:
            if all(point_rect_distance(x, y, b) >= clearance for b in buildings):
                free.append((x, y))
    if not free:
        raise LayoutError("no free cell for source placement")
    return free[int(rng.integers(len(free)))]


def make_scenario_suite(
    kind: str,
    count: int,
    seed: int,
    params: LayoutParams | None = None,
    domain: tuple[float, float] = DEFAULT_DOMAIN,
) -> list[ScenarioCase]:
    """Build one of the three scenario suites.

    random_layout: distinct layouts, source at the origin corner, 200 kg.
    variable_source: one fixed layout, sampled source positions, 200 kg.
    variable_charge: one fixed layout, centered source, charges 50, 60, ... kg.
    """
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    params = params or LayoutParams()
    if kind == "random_layout":
        return [
            generate_random_layout(
                seed + i, params, domain,
                case_id=f"random_layout-{seed + i:05d}",
            )
            for i in range(count)
        ]
    if kind == "variable_source":
        base = generate_random_layout(seed, params, domain)
        cases = []
        for i in range(count):
            rng = np.random.default_rng([seed, i])
            x, y = sample_source_position(base.buildings, rng, domain, params.clearance)
            cases.append(ScenarioCase(
                case_id=f"variable_source-{seed:05d}-{i:03d}",
                domain_size=domain,
                buildings=base.buildings,
                source=BlastSource(x, y, SOURCE_Z, DEFAULT_CHARGE_KG),
                seed=seed,
            ))
        return cases
    if kind == "variable_charge":
        cx, cy = domain[0] / 2.0, domain[1] / 2.0
        base = _layout_with_free_point(seed, params, domain, cx, cy)
        cases = []
        for i in range(count):
            charge = 50.0 + 10.0 * i
            cases.append(ScenarioCase(
                case_id=f"variable_charge-{seed:05d}-w{int(charge):03d}",
                domain_size=domain,
                buildings=base.buildings,
                source=BlastSource(cx, cy, SOURCE_Z, charge),
                seed=seed,
            ))
        return cases
    raise ConfigError(f"unknown suite kind: {kind!r}")


def _layout_with_free_point(seed, params, domain, px, py, tries: int = 50) -> ScenarioCase:
    """Find a seeded layout that keeps (px, py) clear of every footprint."""
    for k in range(tries):
        case = generate_random_layout(seed + 10_007 * k, params, domain)
        if all(point_rect_distance(px, py, b) >= params.clearance for b in case.buildings):
            return case
    raise LayoutError(f"no layout with free center found from seed {seed}")


def rasterize_layout(case: ScenarioCase, grid: GridSpec) -> np.ndarray:
    """Binary obstacle mask: 1.0 where a cell center falls inside a footprint."""
    X, Y = np.meshgrid(grid.xs(), grid.ys())
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    for b in case.buildings:
        mask |= (X >= b.x_min) & (X <= b.x_max) & (Y >= b.y_min) & (Y <= b.y_max)
    return mask.astype(np.float32)


def distance_field(source: BlastSource, grid: GridSpec) -> np.ndarray:
    """Euclidean distance from the source to each cell center, over the diagonal."""
    X, Y = np.meshgrid(grid.xs(), grid.ys())
    d = np.hypot(X - source.x, Y - source.y)
    return (d / grid.diagonal()).astype(np.float32)


def validate_case(case: ScenarioCase, params: LayoutParams | None = None) -> None:
    """Independent brute-force validity check; raises LayoutError on violation."""
    params = params or LayoutParams()
    w, h = case.domain_size
    m = params.boundary_margin
    for b in case.buildings:
        if not (b.x_max > b.x_min and b.y_max > b.y_min):
            raise LayoutError(f"degenerate rectangle in {case.case_id}")
        for side in (b.x_max - b.x_min, b.y_max - b.y_min):
            if not (params.side_range[0] <= side <= params.side_range[1]):
                raise LayoutError(f"side {side:.3f} out of range in {case.case_id}")
        if not (params.height_range[0] <= b.height <= params.height_range[1]):
            raise LayoutError(f"height {b.height:.3f} out of range in {case.case_id}")
        if b.x_min < m or b.y_min < m or b.x_max > w - m or b.y_max > h - m:
            raise LayoutError(f"building violates boundary margin in {case.case_id}")
    n = len(case.buildings)
    for i in range(n):
        for j in range(i + 1, n):
            d = rect_distance(case.buildings[i], case.buildings[j])
            if d < params.clearance:
                raise LayoutError(
                    f"clearance {d:.3f} m < {params.clearance} m between "
                    f"buildings {i} and {j} in {case.case_id}"
                )
    s = case.source
    if not (0.0 <= s.x <= w and 0.0 <= s.y <= h):
        raise LayoutError(f"source outside domain in {case.case_id}")
    for b in case.buildings:
        if b.contains(s.x, s.y):
            raise LayoutError(f"source inside a building in {case.case_id}")
    if s.charge_kg <= 0:
        raise LayoutError(f"non-positive charge in {case.case_id}")


def case_to_dict(case: ScenarioCase) -> dict:
    return {
        "case_id": case.case_id,
        "domain": list(case.domain_size),
        "buildings": [
            {"x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max,
             "y_max": b.y_max, "height": b.height}
            for b in case.buildings
        ],
        "source": {"x": case.source.x, "y": case.source.y,
                   "z": case.source.z, "charge_kg": case.source.charge_kg},
        "seed": case.seed,
    }


def case_from_dict(d: dict) -> ScenarioCase:
    return ScenarioCase(
        case_id=d["case_id"],
        domain_size=tuple(d["domain"]),
        buildings=tuple(Building(**b) for b in d["buildings"]),
        source=BlastSource(**d["source"]),
        seed=int(d["seed"]),
    )
