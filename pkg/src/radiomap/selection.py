"""Choosing which RSS fragments to expose as model conditions.

Two strategies: an environment-aware method that ranks uniform subareas by
obstacle density (count of intersecting obstacles plus the fraction of
subarea cells they cover) and takes fragments centered on the densest
subareas, and a seeded random baseline that places non-overlapping windows
by rejection sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SelectionError
from .scenario import RadioMap, Scenario


@dataclass(frozen=True)
class Fragment:
    """A k x k window of RSS values copied verbatim from a radio map."""

    origin: tuple  # (row, col) of the top-left cell
    size_k: int
    values_dbm: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values_dbm", np.asarray(self.values_dbm, dtype=np.float32)
        )
        if self.values_dbm.shape != (self.size_k, self.size_k):
            raise ConfigurationError(
                f"fragment values must be {self.size_k}x{self.size_k}"
            )


@dataclass(frozen=True)
class SubareaRanking:
    subarea_index: int
    density: float
    bounds: tuple  # (row0, col0, row1, col1) inclusive


def obstacle_density(scenario: Scenario, bounds: tuple) -> float:
    """Obstacle count intersecting ``bounds`` plus covered-cell fraction."""
    row0, col0, row1, col1 = bounds
    n = scenario.grid_n
    if not (0 <= row0 <= row1 < n and 0 <= col0 <= col1 < n):
        raise ConfigurationError(f"bounds {bounds} outside the grid")
    covered = np.zeros((row1 - row0 + 1, col1 - col0 + 1), dtype=bool)
    count = 0
    for ob in scenario.obstacles:
        r0, r1 = max(ob.x0, row0), min(ob.x1, row1)
        c0, c1 = max(ob.y0, col0), min(ob.y1, col1)
        if r0 > r1 or c0 > c1:
            continue
        count += 1
        covered[r0 - row0 : r1 - row0 + 1, c0 - col0 : c1 - col0 + 1] = True
    return count + float(covered.mean())


def subarea_bounds(grid_n: int, n_subareas: int) -> list:
    """Inclusive bounds of the row-major tiling into sqrt(n) x sqrt(n) tiles."""
    side = math.isqrt(n_subareas)
    if side * side != n_subareas:
        raise ConfigurationError(f"n_subareas must be a perfect square, got {n_subareas}")
    if grid_n % side:
        raise ConfigurationError(
            f"{n_subareas} subareas do not tile a {grid_n}x{grid_n} grid"
        )
    s = grid_n // side
    out = []
    for i in range(side):
        for j in range(side):
            out.append((i * s, j * s, i * s + s - 1, j * s + s - 1))
    return out


def rank_subareas(scenario: Scenario, n_subareas: int) -> list:
    """Subareas sorted by descending density, ties by ascending index."""
    ranked = [
        SubareaRanking(idx, obstacle_density(scenario, b), b)
        for idx, b in enumerate(subarea_bounds(scenario.grid_n, n_subareas))
    ]
    ranked.sort(key=lambda r: (-r.density, r.subarea_index))
    return ranked


def _window_origin(center: tuple, k: int, grid_n: int) -> tuple:
    row = min(max(center[0] - k // 2, 0), grid_n - k)
    col = min(max(center[1] - k // 2, 0), grid_n - k)
    return row, col


def _cut(rmap: RadioMap, origin: tuple, k: int) -> Fragment:
    r, c = origin
    return Fragment((r, c), k, rmap.values_dbm[r : r + k, c : c + k].copy())


def environment_aware_select(
    scenario: Scenario,
    rmap: RadioMap,
    n_subareas: int,
    m: int,
    k: int,
) -> list:
    """Fragments centered on the ``m`` densest subareas (deterministic).

    Windows are clipped to the grid by shifting inward, so every fragment
    is exactly k x k.
    """
    if m > n_subareas:
        raise SelectionError(f"cannot select {m} fragments from {n_subareas} subareas")
    if k > scenario.grid_n:
        raise SelectionError(f"fragment size {k} exceeds the grid")
    ranked = rank_subareas(scenario, n_subareas)
    fragments = []
    for entry in ranked[:m]:
        row0, col0, row1, col1 = entry.bounds
        s = row1 - row0 + 1
        center = (row0 + s // 2, col0 + s // 2)
        fragments.append(_cut(rmap, _window_origin(center, k, scenario.grid_n), k))
    return fragments


def random_select(rmap: RadioMap, m: int, k: int, seed) -> list:
    """``m`` non-overlapping k x k windows, uniform by rejection sampling."""
    n = rmap.grid_n
    if m * k * k > n * n:
        raise SelectionError(f"{m} windows of {k}x{k} cannot fit a {n}x{n} grid")
    if k > n:
        raise SelectionError(f"fragment size {k} exceeds the grid")
    rng = np.random.default_rng(seed)
    chosen = []
    budget = 10 * m * 100
    attempts = 0
    while len(chosen) < m:
        if attempts >= budget:
            raise SelectionError(
                f"could not place {m} non-overlapping windows after {budget} attempts"
            )
        attempts += 1
        r = int(rng.integers(0, n - k + 1))
        c = int(rng.integers(0, n - k + 1))
        if all(abs(r - r2) >= k or abs(c - c2) >= k for r2, c2 in chosen):
            chosen.append((r, c))
    return [_cut(rmap, origin, k) for origin in chosen]


def fragment_budget(percent: float, grid_n: int, k: int) -> int:
    """Fragment count covering ``percent`` of the grid: ceil(p/100 * N^2 / k^2)."""
    if not 0 < percent <= 100:
        raise ConfigurationError(f"percent must be in (0, 100], got {percent}")
    return math.ceil(percent / 100.0 * grid_n * grid_n / (k * k))
