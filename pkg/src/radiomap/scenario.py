"""Synthetic network scenarios and ground-truth radio maps.

A scenario is a square grid of cells with rectangular obstacles and one or
two transmitters. Received signal strength at a cell is transmit power minus
free-space path loss, minus a regime-dependent excess beyond the reference
distance, minus the penetration loss of every obstacle the straight
transmitter-to-receiver segment crosses.

Coordinate convention used throughout the package: the first coordinate
(``x`` for obstacles/transmitters, ``row`` for fragments) indexes grid rows,
the second indexes columns, matching ``values_dbm[x, y]``.

The module also owns the on-disk dataset container (magic ``RMG1``,
little-endian): a header (regime, grid size, cell size, frequency, record
count, global min/max dBm) followed by per-record scenario tables and the
row-major float32 RSS grid.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, StorageError

INDOOR = "indoor"
OUTDOOR = "outdoor"

_MAGIC = b"RMG1"
_REGIME_CODE = {INDOOR: 0, OUTDOOR: 1}
_REGIME_NAME = {v: k for k, v in _REGIME_CODE.items()}


@dataclass(frozen=True)
class TxLocation:
    """Transmitter cell; ``x`` is the row index, ``y`` the column index."""

    x: int
    y: int


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned cell-index bounding box with a scalar penetration loss."""

    x0: int
    y0: int
    x1: int
    y1: int
    penetration_loss_db: float

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ConfigurationError("obstacle bounding box is inverted")
        if not math.isfinite(self.penetration_loss_db) or self.penetration_loss_db < 0:
            raise ConfigurationError("penetration loss must be finite and >= 0")


@dataclass
class Scenario:
    grid_n: int
    cell_size_m: float
    freq_ghz: float
    obstacles: list
    tx_list: list
    tx_power_dbm: float
    regime: str
    noise_floor_dbm: float = -120.0  # receiver sensitivity; RSS saturates here

    def validate(self):
        if self.grid_n < 2 or self.grid_n & (self.grid_n - 1):
            raise ConfigurationError(f"grid_n must be a power of two, got {self.grid_n}")
        if self.regime not in (INDOOR, OUTDOOR):
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        if not self.tx_list:
            raise ConfigurationError("scenario needs at least one transmitter")
        for tx in self.tx_list:
            if not (0 <= tx.x < self.grid_n and 0 <= tx.y < self.grid_n):
                raise ConfigurationError(f"transmitter {tx} outside the grid")
        for ob in self.obstacles:
            if not (0 <= ob.x0 <= ob.x1 < self.grid_n and 0 <= ob.y0 <= ob.y1 < self.grid_n):
                raise ConfigurationError(f"obstacle {ob} not fully inside the grid")
        return self


@dataclass
class RadioMap:
    """An N x N grid of RSS values in dBm."""

    values_dbm: np.ndarray
    scenario_id: str = ""
    tx_list: list = field(default_factory=list)

    def __post_init__(self):
        self.values_dbm = np.asarray(self.values_dbm, dtype=np.float32)
        if self.values_dbm.ndim != 2 or self.values_dbm.shape[0] != self.values_dbm.shape[1]:
            raise DimensionError(f"radio map must be square, got {self.values_dbm.shape}")

    @property
    def grid_n(self) -> int:
        return self.values_dbm.shape[0]


@dataclass(frozen=True)
class ScenarioParams:
    """Sampling ranges for random scenarios (inclusive bounds)."""

    n_obstacles: tuple
    n_tx: tuple
    obstacle_cells: tuple
    penetration_db: tuple
    tx_power_dbm: float
    grid_n: int = 32
    noise_floor_dbm: float = -120.0

    @classmethod
    def defaults(cls, regime: str, grid_n: int = 32) -> "ScenarioParams":
        if regime == INDOOR:
            return cls((3, 12), (1, 2), (1, 6), (15.0, 40.0), 20.0, grid_n, -120.0)
        if regime == OUTDOOR:
            return cls((4, 10), (1, 2), (2, 8), (10.0, 25.0), 40.0, grid_n, -120.0)
        raise ConfigurationError(f"unknown regime {regime!r}")

    def validate(self, grid_n: int):
        for name, rng_pair in (
            ("n_obstacles", self.n_obstacles),
            ("n_tx", self.n_tx),
            ("obstacle_cells", self.obstacle_cells),
            ("penetration_db", self.penetration_db),
        ):
            lo, hi = rng_pair
            if lo > hi or lo < 0:
                raise ConfigurationError(f"invalid range for {name}: {rng_pair}")
        if self.n_tx[0] < 1:
            raise ConfigurationError("at least one transmitter is required")
        if self.obstacle_cells[0] < 1 or self.obstacle_cells[1] > grid_n:
            raise ConfigurationError("obstacle size range must fit the grid")


def regime_settings(regime: str) -> tuple:
    """(cell_size_m, freq_ghz) for a regime."""
    if regime == INDOOR:
        return 0.5, 60.0
    if regime == OUTDOOR:
        return 10.0, 3.7
    raise ConfigurationError(f"unknown regime {regime!r}")


def random_scenario(regime: str, seed, params: ScenarioParams | None = None) -> Scenario:
    """Reproducible random scenario for a seed (int or SeedSequence)."""
    cell_size, freq = regime_settings(regime)
    params = params or ScenarioParams.defaults(regime)
    grid_n = params.grid_n
    params.validate(grid_n)
    rng = np.random.default_rng(seed)

    n_obs = int(rng.integers(params.n_obstacles[0], params.n_obstacles[1] + 1))
    obstacles = []
    for _ in range(n_obs):
        h = int(rng.integers(params.obstacle_cells[0], params.obstacle_cells[1] + 1))
        w = int(rng.integers(params.obstacle_cells[0], params.obstacle_cells[1] + 1))
        x0 = int(rng.integers(0, grid_n - h + 1))
        y0 = int(rng.integers(0, grid_n - w + 1))
        # quantized to float32 so the RMG1 container round-trips losslessly
        loss = float(
            np.float32(rng.uniform(params.penetration_db[0], params.penetration_db[1]))
        )
        obstacles.append(Obstacle(x0, y0, x0 + h - 1, y0 + w - 1, loss))

    covered = np.zeros((grid_n, grid_n), dtype=bool)
    for ob in obstacles:
        covered[ob.x0 : ob.x1 + 1, ob.y0 : ob.y1 + 1] = True

    n_tx = int(rng.integers(params.n_tx[0], params.n_tx[1] + 1))
    tx_list = []
    for _ in range(n_tx):
        for _ in range(200):  # keep transmitters out of obstacles when possible
            x = int(rng.integers(0, grid_n))
            y = int(rng.integers(0, grid_n))
            if not covered[x, y]:
                break
        tx_list.append(TxLocation(x, y))

    return Scenario(
        grid_n=grid_n,
        cell_size_m=cell_size,
        freq_ghz=freq,
        obstacles=obstacles,
        tx_list=tx_list,
        tx_power_dbm=params.tx_power_dbm,
        regime=regime,
        noise_floor_dbm=params.noise_floor_dbm,
    ).validate()


# ---------------------------------------------------------------------------
# propagation model
# ---------------------------------------------------------------------------

def fspl_db(distance_m: float, freq_ghz: float) -> float:
    """Free-space path loss 32.45 + 20 log10(d_km) + 20 log10(f_MHz)."""
    return 32.45 + 20.0 * math.log10(distance_m / 1000.0) + 20.0 * math.log10(freq_ghz * 1000.0)


def _excess_exponent(regime: str) -> float:
    # additional path-loss exponent beyond free space (exponent 3 outdoors)
    return 1.0 if regime == OUTDOOR else 0.6


def _segment_hits_rect(x0, y0, x1, y1, rx0, rx1, ry0, ry1):
    """Vectorized closed-rectangle test for segments (x0,y0) -> (x1[i],y1[i]).

    Liang-Barsky clipping on continuous coordinates; a zero-length segment
    never counts as a crossing.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    dx = x1 - x0
    dy = y1 - y0
    t0 = np.zeros_like(dx)
    t1 = np.ones_like(dx)
    hit = np.ones(dx.shape, dtype=bool)
    for d, lo, hi, p in ((dx, rx0, rx1, x0), (dy, ry0, ry1, y0)):
        parallel = d == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - p) / d
            tb = (hi - p) / d
        tmin = np.where(parallel, 0.0, np.minimum(ta, tb))
        tmax = np.where(parallel, 1.0, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
        hit &= np.where(parallel, (p >= lo) & (p <= hi), True)
    hit &= t0 <= t1
    hit &= (dx != 0.0) | (dy != 0.0)
    return hit


def crossings(scenario: Scenario, tx: TxLocation, rx: tuple) -> list:
    """Obstacles whose box the straight Tx-center to Rx-center segment crosses.

    Returns ``[(obstacle, 1), ...]``; penetration is counted once per
    obstacle. A zero-length segment (rx at the Tx cell) crosses nothing.
    """
    rx_x, rx_y = rx
    if not (0 <= rx_x < scenario.grid_n and 0 <= rx_y < scenario.grid_n):
        raise ConfigurationError(f"receiver {rx} outside the grid")
    cx0, cy0 = tx.x + 0.5, tx.y + 0.5
    cx1, cy1 = rx_x + 0.5, rx_y + 0.5
    out = []
    for ob in scenario.obstacles:
        if _segment_hits_rect(
            cx0, cy0, np.array([cx1]), np.array([cy1]), ob.x0, ob.x1 + 1.0, ob.y0, ob.y1 + 1.0
        )[0]:
            out.append((ob, 1))
    return out


def _rss_grid_for_tx(scenario: Scenario, tx: TxLocation) -> np.ndarray:
    """Float64 RSS grid contributed by a single transmitter."""
    n = scenario.grid_n
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cx, cy = rows + 0.5, cols + 0.5
    tx_x, tx_y = tx.x + 0.5, tx.y + 0.5

    d0 = scenario.cell_size_m
    dist = np.hypot(cx - tx_x, cy - tx_y) * scenario.cell_size_m
    dist = np.maximum(dist, d0 / 2.0)

    fspl = (
        32.45
        + 20.0 * np.log10(dist / 1000.0)
        + 20.0 * math.log10(scenario.freq_ghz * 1000.0)
    )
    # log-distance excess applies beyond the reference distance only
    excess = _excess_exponent(scenario.regime) * 10.0 * np.log10(np.maximum(dist, d0) / d0)

    obstruction = np.zeros((n, n), dtype=np.float64)
    flat_cx, flat_cy = cx.reshape(-1), cy.reshape(-1)
    for ob in scenario.obstacles:
        hits = _segment_hits_rect(
            tx_x, tx_y, flat_cx, flat_cy, ob.x0, ob.x1 + 1.0, ob.y0, ob.y1 + 1.0
        )
        obstruction += hits.reshape(n, n) * ob.penetration_loss_db

    rss = scenario.tx_power_dbm - fspl - excess - obstruction
    return np.maximum(rss, scenario.noise_floor_dbm)


def compute_rss(scenario: Scenario, rx: tuple) -> float:
    """RSS in dBm at a receiver cell (best transmitter wins)."""
    rx_x, rx_y = rx
    if not (0 <= rx_x < scenario.grid_n and 0 <= rx_y < scenario.grid_n):
        raise ConfigurationError(f"receiver {rx} outside the grid")
    best = -math.inf
    for tx in scenario.tx_list:
        d = math.hypot(rx_x - tx.x, rx_y - tx.y) * scenario.cell_size_m
        d = max(d, scenario.cell_size_m / 2.0)
        loss = fspl_db(d, scenario.freq_ghz)
        loss += _excess_exponent(scenario.regime) * 10.0 * math.log10(
            max(d, scenario.cell_size_m) / scenario.cell_size_m
        )
        loss += sum(ob.penetration_loss_db for ob, _ in crossings(scenario, tx, rx))
        best = max(best, scenario.tx_power_dbm - loss)
    return max(best, scenario.noise_floor_dbm)


def generate_map(scenario: Scenario, scenario_id: str = "") -> RadioMap:
    """Ground-truth map: ``compute_rss`` at every cell, vectorized per Tx."""
    grids = [_rss_grid_for_tx(scenario, tx) for tx in scenario.tx_list]
    values = grids[0]
    for g in grids[1:]:
        values = np.maximum(values, g)
    return RadioMap(values.astype(np.float32), scenario_id, list(scenario.tx_list))


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

@dataclass
class DatasetRecord:
    scenario: Scenario
    radio_map: RadioMap


@dataclass
class Dataset:
    regime: str
    grid_n: int
    cell_size_m: float
    freq_ghz: float
    min_dbm: float
    max_dbm: float
    records: list

    def __len__(self) -> int:
        return len(self.records)

    @property
    def bounds(self) -> tuple:
        return self.min_dbm, self.max_dbm

    def maps(self) -> list:
        return [r.radio_map for r in self.records]


def build_dataset(
    regime: str,
    count: int,
    seed: int,
    params: ScenarioParams | None = None,
    out_path=None,
) -> Dataset:
    """Generate ``count`` (scenario, map) pairs; optionally persist to disk.

    Record ``i`` derives from the spawned child ``i`` of the master seed, so
    the mapping seed -> dataset bytes is a pure function.
    """
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    cell_size, freq = regime_settings(regime)
    params = params or ScenarioParams.defaults(regime)
    children = np.random.SeedSequence(seed).spawn(count)

    records = []
    vmin, vmax = math.inf, -math.inf
    for i, child in enumerate(children):
        scn = random_scenario(regime, child, params)
        rmap = generate_map(scn, scenario_id=f"{regime}-{seed}-{i:05d}")
        vmin = min(vmin, float(rmap.values_dbm.min()))
        vmax = max(vmax, float(rmap.values_dbm.max()))
        records.append(DatasetRecord(scn, rmap))

    ds = Dataset(regime, params.grid_n, cell_size, freq, vmin, vmax, records)
    if out_path is not None:
        save_dataset(ds, out_path)
    return ds


def save_dataset(ds: Dataset, path):
    """Write the RMG1 binary container (little-endian)."""
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<B", _REGIME_CODE[ds.regime]))
            fh.write(struct.pack("<i", ds.grid_n))
            fh.write(struct.pack("<dd", ds.cell_size_m, ds.freq_ghz))
            fh.write(struct.pack("<i", len(ds.records)))
            fh.write(struct.pack("<dd", ds.min_dbm, ds.max_dbm))
            for rec in ds.records:
                scn = rec.scenario
                fh.write(
                    struct.pack(
                        "<iff", len(scn.obstacles), scn.tx_power_dbm, scn.noise_floor_dbm
                    )
                )
                for ob in scn.obstacles:
                    fh.write(
                        struct.pack("<iiiif", ob.x0, ob.y0, ob.x1, ob.y1, ob.penetration_loss_db)
                    )
                fh.write(struct.pack("<i", len(scn.tx_list)))
                for tx in scn.tx_list:
                    fh.write(struct.pack("<ii", tx.x, tx.y))
                fh.write(rec.radio_map.values_dbm.astype("<f4").tobytes(order="C"))
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    """Read an RMG1 container written by ``save_dataset``."""
    try:
        with open(path, "rb") as fh:
            return _parse_dataset(fh, path)
    except OSError as exc:
        raise StorageError(f"cannot read dataset from {path}: {exc}") from exc


def _parse_dataset(fh, path) -> Dataset:
    def read(fmt):
        size = struct.calcsize(fmt)
        buf = fh.read(size)
        if len(buf) != size:
            raise StorageError(f"truncated dataset file {path}")
        return struct.unpack(fmt, buf)

    magic = fh.read(4)
    if magic != _MAGIC:
        raise StorageError(f"{path} is not an RMG1 dataset (magic {magic!r})")
    (regime_code,) = read("<B")
    (grid_n,) = read("<i")
    cell_size, freq = read("<dd")
    (count,) = read("<i")
    vmin, vmax = read("<dd")
    regime = _REGIME_NAME.get(regime_code)
    if regime is None:
        raise StorageError(f"unknown regime code {regime_code} in {path}")

    records = []
    for i in range(count):
        n_obs, tx_power, noise_floor = read("<iff")
        obstacles = []
        for _ in range(n_obs):
            x0, y0, x1, y1, loss = read("<iiiif")
            obstacles.append(Obstacle(x0, y0, x1, y1, loss))
        (n_tx,) = read("<i")
        tx_list = [TxLocation(*read("<ii")) for _ in range(n_tx)]
        grid_bytes = fh.read(4 * grid_n * grid_n)
        if len(grid_bytes) != 4 * grid_n * grid_n:
            raise StorageError(f"truncated dataset file {path}")
        values = np.frombuffer(grid_bytes, dtype="<f4").reshape(grid_n, grid_n).copy()
        scn = Scenario(
            grid_n, cell_size, freq, obstacles, tx_list, tx_power, regime, noise_floor
        )
        records.append(DatasetRecord(scn, RadioMap(values, f"{regime}-loaded-{i:05d}", tx_list)))

    return Dataset(regime, grid_n, cell_size, freq, vmin, vmax, records)
