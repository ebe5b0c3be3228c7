"""DDPM core: noise schedule, forward process, training, ancestral sampling.

The schedule tables are float64 (``beta[i]`` is the value at step ``t = i+1``).
Training follows the standard recipe: draw a map with its condition, a
uniform step per batch element, Gaussian noise, and regress the U-Net output
onto that noise with an L2 loss. Sampling runs the reverse chain from pure
noise, with the posterior variance by default (``beta`` variance available
as a variant), then clamps to [-1, 1] and denormalizes to dBm.

The module also owns the checkpoint container (magic ``RMGC``,
little-endian): a fixed header (condition kind, grid size, schedule
endpoints, normalization bounds, encoder geometry), named float32 parameter
blocks, and the per-epoch loss trace.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import compute
from .compute import Tensor, adam_step
from .denoiser import UNet, UNetConfig
from .encoders import (
    FRAGMENT_CAPACITY,
    FRAGMENTS,
    TX_CAPACITY,
    TX_LOCATIONS,
    ConditionSet,
    FragmentEncoder,
    TxEncoder,
    normalize_dbm,
    denormalize_dbm,
)
from .errors import (
    ConditionError,
    ConfigurationError,
    DimensionError,
    StepError,
    StorageError,
    TrainingError,
)
from .layers import ParamStore
from .scenario import Dataset, RadioMap
from . import selection

_MAGIC = b"RMGC"
_KIND_CODE = {FRAGMENTS: 0, TX_LOCATIONS: 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}

POSTERIOR = "posterior"
BETA = "beta"


# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables; index i holds the value for step t = i+1."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    def check_step(self, t: int):
        if not 1 <= t <= self.T:
            raise StepError(f"step {t} outside [1, {self.T}]")


def linear_schedule(T: int, beta1: float, betaT: float) -> NoiseSchedule:
    """Linearly increasing betas with the derived alpha/alpha-bar/sigma tables."""
    if T < 2:
        raise ConfigurationError(f"schedule needs T >= 2, got {T}")
    if not 0.0 < beta1 < betaT < 1.0:
        raise ConfigurationError(
            f"need 0 < beta1 < betaT < 1, got beta1={beta1}, betaT={betaT}"
        )
    steps = np.arange(T, dtype=np.float64)
    beta = beta1 + steps / (T - 1) * (betaT - beta1)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    sigma2 = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(T, beta, alpha, alpha_bar, sigma2)


def sigma_variant(sched: NoiseSchedule, mode: str = POSTERIOR) -> np.ndarray:
    """Reverse-step variance table: the posterior form or plain beta."""
    if mode == POSTERIOR:
        return sched.sigma2.copy()
    if mode == BETA:
        return sched.beta.copy()
    raise ConfigurationError(f"unknown sigma mode {mode!r}")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Closed-form forward draw x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    sched.check_step(t)
    x0_arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float32)
    eps_arr = eps.data if isinstance(eps, Tensor) else np.asarray(eps, dtype=np.float32)
    if x0_arr.shape != eps_arr.shape:
        raise DimensionError(f"noise shape {eps_arr.shape} != data shape {x0_arr.shape}")
    ab = sched.alpha_bar[t - 1]
    out = np.float32(np.sqrt(ab)) * x0_arr + np.float32(np.sqrt(1.0 - ab)) * eps_arr
    return Tensor(out) if isinstance(x0, Tensor) else out


def forward_step(x_prev, t: int, eps, sched: NoiseSchedule):
    """Single-step kernel x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps."""
    sched.check_step(t)
    x_arr = x_prev.data if isinstance(x_prev, Tensor) else np.asarray(x_prev, dtype=np.float32)
    eps_arr = eps.data if isinstance(eps, Tensor) else np.asarray(eps, dtype=np.float32)
    if x_arr.shape != eps_arr.shape:
        raise DimensionError(f"noise shape {eps_arr.shape} != data shape {x_arr.shape}")
    b = sched.beta[t - 1]
    out = np.float32(np.sqrt(1.0 - b)) * x_arr + np.float32(np.sqrt(b)) * eps_arr
    return Tensor(out) if isinstance(x_prev, Tensor) else out


def training_loss(pred: Tensor, eps: Tensor) -> Tensor:
    """Mean squared error between predicted and true noise."""
    return compute.mean(compute.square(compute.sub(pred, eps)))


# ---------------------------------------------------------------------------
# model bundle and checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float
    epochs: int
    batch_size: int = 16
    seed: int = 0
    condition_kind: str = FRAGMENTS
    selection_method: str = "env"  # fragments only: "env" | "random"
    fragment_percent: float = 10.0
    fragment_k: int = 4
    n_subareas: int = 16
    d_cond: int = 64
    capacity: int | None = None  # None -> kind default

    def validate(self):
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.condition_kind not in (FRAGMENTS, TX_LOCATIONS):
            raise ConfigurationError(f"unknown condition kind {self.condition_kind!r}")
        if self.selection_method not in ("env", "random"):
            raise ConfigurationError(f"unknown selection method {self.selection_method!r}")
        return self


@dataclass
class ModelCheckpoint:
    """Serialized model: parameters plus the metadata sampling needs."""

    condition_kind: str
    grid_n: int
    T: int
    beta1: float
    betaT: float
    min_dbm: float
    max_dbm: float
    d_cond: int
    capacity: int
    fragment_k: int
    params: dict
    loss_trace: list = field(default_factory=list)

    @property
    def bounds(self) -> tuple:
        return self.min_dbm, self.max_dbm

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta1, self.betaT)


@dataclass
class ModelBundle:
    """A live (U-Net, encoder) pair sharing one parameter store."""

    unet: UNet
    encoder: object
    store: ParamStore
    condition_kind: str
    grid_n: int
    d_cond: int
    capacity: int
    fragment_k: int


def build_model(
    condition_kind: str,
    grid_n: int,
    seed,
    d_cond: int = 64,
    fragment_k: int = 4,
    capacity: int | None = None,
    unet_cfg: UNetConfig | None = None,
) -> ModelBundle:
    """Fresh model with seeded initialization (U-Net first, then encoder)."""
    store = ParamStore(np.random.default_rng(seed))
    cfg = unet_cfg or UNetConfig(grid_n=grid_n, cond_dim=d_cond)
    if cfg.grid_n != grid_n:
        raise ConfigurationError("unet config grid does not match dataset grid")
    unet = UNet(cfg, store=store)
    if condition_kind == FRAGMENTS:
        capacity = capacity or FRAGMENT_CAPACITY
        encoder = FragmentEncoder(store, k=fragment_k, capacity=capacity, d_cond=cfg.cond_dim)
    elif condition_kind == TX_LOCATIONS:
        capacity = capacity or TX_CAPACITY
        encoder = TxEncoder(store, capacity=capacity, d_cond=cfg.cond_dim)
    else:
        raise ConfigurationError(f"unknown condition kind {condition_kind!r}")
    return ModelBundle(
        unet, encoder, store, condition_kind, grid_n, cfg.cond_dim, capacity, fragment_k
    )


def checkpoint_from_bundle(
    bundle: ModelBundle, sched: NoiseSchedule, bounds: tuple, loss_trace: list
) -> ModelCheckpoint:
    params = {name: p.tensor.data.copy() for name, p in bundle.store.named_parameters().items()}
    return ModelCheckpoint(
        condition_kind=bundle.condition_kind,
        grid_n=bundle.grid_n,
        T=sched.T,
        beta1=float(sched.beta[0]),
        betaT=float(sched.beta[-1]),
        min_dbm=float(bounds[0]),
        max_dbm=float(bounds[1]),
        d_cond=bundle.d_cond,
        capacity=bundle.capacity,
        fragment_k=bundle.fragment_k,
        params=params,
        loss_trace=list(loss_trace),
    )


def load_model(ckpt: ModelCheckpoint, unet_cfg: UNetConfig | None = None) -> ModelBundle:
    """Rebuild a live model from checkpoint arrays.

    The U-Net width/depth is inferred from the stored parameter shapes; pass
    ``unet_cfg`` explicitly for non-default group counts.
    """
    if unet_cfg is None:
        base = ckpt.params["unet.stem.kernel"].shape[0]
        levels = 1 + max(
            (int(n[len("unet.down")]) for n in ckpt.params if n.startswith("unet.down")),
            default=1,
        )
        blocks = 1 + max(
            int(n.split(".b")[1].split(".")[0])
            for n in ckpt.params
            if n.startswith("unet.down0.b")
        )
        time_dim = ckpt.params["unet.time_mlp.weight"].shape[0]
        unet_cfg = UNetConfig(
            grid_n=ckpt.grid_n,
            base_channels=base,
            levels=levels,
            time_dim=time_dim,
            cond_dim=ckpt.d_cond,
            blocks_per_level=blocks,
        )
    bundle = build_model(
        ckpt.condition_kind,
        ckpt.grid_n,
        seed=0,
        d_cond=ckpt.d_cond,
        fragment_k=ckpt.fragment_k,
        capacity=ckpt.capacity,
        unet_cfg=unet_cfg,
    )
    bundle.store.load_arrays(ckpt.params)
    return bundle


# ---------------------------------------------------------------------------
# condition preparation (bridges selection/encoders for train and eval)
# ---------------------------------------------------------------------------

def build_condition(
    record,
    kind: str,
    bounds: tuple,
    selection_method: str = "env",
    percent: float = 10.0,
    k: int = 4,
    n_subareas: int = 16,
    capacity: int | None = None,
    select_seed=0,
) -> ConditionSet:
    """Condition set for one dataset record, per the configured strategy."""
    scn, rmap = record.scenario, record.radio_map
    if kind == FRAGMENTS:
        m = selection.fragment_budget(percent, scn.grid_n, k)
        if selection_method == "env":
            frags = selection.environment_aware_select(scn, rmap, n_subareas, m, k)
        else:
            frags = selection.random_select(rmap, m, k, seed=select_seed)
        return ConditionSet.from_fragments(frags, capacity=capacity or FRAGMENT_CAPACITY)
    if kind == TX_LOCATIONS:
        return ConditionSet.from_tx(scn.tx_list, capacity=capacity or TX_CAPACITY)
    raise ConfigurationError(f"unknown condition kind {kind!r}")


def prepare_condition_inputs(records, bundle: ModelBundle, bounds, cfg: TrainConfig, seed_seq):
    """Encoder input arrays for every record (selection randomness is seeded
    per record index so any record can be reproduced in isolation)."""
    kind = bundle.condition_kind
    children = seed_seq.spawn(len(records))
    conds = [
        build_condition(
            rec,
            kind,
            bounds,
            selection_method=cfg.selection_method,
            percent=cfg.fragment_percent,
            k=cfg.fragment_k,
            n_subareas=cfg.n_subareas,
            capacity=bundle.capacity,
            select_seed=children[i],
        )
        for i, rec in enumerate(records)
    ]
    if kind == FRAGMENTS:
        mat = np.stack(
            [bundle.encoder.input_vector(c, bounds, bundle.grid_n) for c in conds]
        )
        return conds, (mat,)
    coords, masks = zip(
        *(bundle.encoder.input_arrays(c, bundle.grid_n) for c in conds)
    )
    return conds, (np.stack(coords), np.stack(masks))


def _encode_indexed(bundle: ModelBundle, enc_inputs: tuple, idx) -> Tensor:
    if bundle.condition_kind == FRAGMENTS:
        return bundle.encoder.encode_batch(enc_inputs[0][idx])
    return bundle.encoder.encode_batch(enc_inputs[0][idx], enc_inputs[1][idx])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(
    dataset: Dataset,
    cfg: TrainConfig,
    sched: NoiseSchedule,
    unet_cfg: UNetConfig | None = None,
    log=None,
) -> ModelCheckpoint:
    """Train a conditional denoiser on every record of ``dataset``.

    Returns a checkpoint carrying the final parameters, the schedule
    endpoints, the dataset normalization bounds, and the per-epoch loss
    trace. Raises ``TrainingError`` if the loss turns non-finite.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigurationError("training dataset is empty")

    root = np.random.SeedSequence(cfg.seed)
    init_ss, select_ss, noise_ss, shuffle_ss = root.spawn(4)

    bundle = build_model(
        cfg.condition_kind,
        dataset.grid_n,
        seed=init_ss,
        d_cond=cfg.d_cond,
        fragment_k=cfg.fragment_k,
        capacity=cfg.capacity,
        unet_cfg=unet_cfg,
    )
    bounds = dataset.bounds
    records = dataset.records
    _, enc_inputs = prepare_condition_inputs(records, bundle, bounds, cfg, select_ss)

    x0 = np.stack(
        [normalize_dbm(r.radio_map.values_dbm, bounds) for r in records]
    )[:, None, :, :]

    noise_rng = np.random.default_rng(noise_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    params = list(bundle.store.named_parameters().values())

    sqrt_ab = np.sqrt(sched.alpha_bar).astype(np.float32)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar).astype(np.float32)

    n = len(records)
    trace = []
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            b = len(idx)
            t_vec = noise_rng.integers(1, sched.T + 1, size=b)
            eps = noise_rng.standard_normal((b, 1, dataset.grid_n, dataset.grid_n)).astype(
                np.float32
            )
            coef1 = sqrt_ab[t_vec - 1][:, None, None, None]
            coef2 = sqrt_1mab[t_vec - 1][:, None, None, None]
            x_t = coef1 * x0[idx] + coef2 * eps

            bundle.store.zero_grad()
            cond = _encode_indexed(bundle, enc_inputs, idx)
            pred = bundle.unet.forward(Tensor(x_t), t_vec, cond)
            loss = training_loss(pred, Tensor(eps))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingError(
                    f"non-finite loss {loss_val} at epoch {epoch + 1}, batch {lo // cfg.batch_size}"
                )
            loss.backward()
            adam_step(params, bundle.store.gradients(), lr=cfg.lr)
            total += loss_val * b
            seen += b
        trace.append(total / seen)
        if log is not None:
            log(epoch + 1, trace[-1])

    return checkpoint_from_bundle(bundle, sched, bounds, trace)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _reverse_chain(
    bundle: ModelBundle,
    sched: NoiseSchedule,
    cond_matrix: np.ndarray,
    rngs: list,
    sigma_mode: str,
) -> np.ndarray:
    """Run the ancestral loop for a batch; one noise stream per sample."""
    n = sched.T
    b = cond_matrix.shape[0]
    grid = bundle.grid_n
    sigma = np.sqrt(sigma_variant(sched, sigma_mode))
    inv_sqrt_alpha = (1.0 / np.sqrt(sched.alpha)).astype(np.float32)
    eps_coef = (sched.beta / np.sqrt(1.0 - sched.alpha_bar)).astype(np.float32)
    sigma32 = sigma.astype(np.float32)

    x = np.stack([r.standard_normal((1, grid, grid)).astype(np.float32) for r in rngs])
    cond_t = Tensor(cond_matrix)
    with compute.no_grad():
        for t in range(n, 0, -1):
            pred = bundle.unet.forward(Tensor(x), t, cond_t).data
            x = inv_sqrt_alpha[t - 1] * (x - eps_coef[t - 1] * pred)
            if t > 1:
                z = np.stack(
                    [r.standard_normal((1, grid, grid)).astype(np.float32) for r in rngs]
                )
                x = x + sigma32[t - 1] * z
    return x


def _condition_matrix(bundle: ModelBundle, cond: ConditionSet, bounds) -> np.ndarray:
    if cond.kind != bundle.condition_kind:
        raise ConditionError(
            f"checkpoint expects {bundle.condition_kind!r} conditions, got {cond.kind!r}"
        )
    with compute.no_grad():
        if cond.kind == FRAGMENTS:
            vec = bundle.encoder.input_vector(cond, bounds, bundle.grid_n)
            return bundle.encoder.encode_batch(vec[None]).data
        coords, mask = bundle.encoder.input_arrays(cond, bundle.grid_n)
        return bundle.encoder.encode_batch(coords[None], mask[None]).data


def sample(
    cond: ConditionSet,
    ckpt: ModelCheckpoint | ModelBundle,
    seed,
    sched: NoiseSchedule | None = None,
    bounds: tuple | None = None,
    sigma_mode: str = POSTERIOR,
) -> RadioMap:
    """Generate one radio map for a condition (deterministic per seed)."""
    if isinstance(ckpt, ModelBundle):
        bundle = ckpt
        if sched is None or bounds is None:
            raise ConfigurationError("sampling from a bundle needs sched and bounds")
    else:
        bundle = load_model(ckpt)
        sched = ckpt.schedule()
        bounds = ckpt.bounds
    cond_matrix = _condition_matrix(bundle, cond, bounds)
    rng = np.random.default_rng(seed)
    x = _reverse_chain(bundle, sched, cond_matrix, [rng], sigma_mode)[0, 0]
    values = denormalize_dbm(np.clip(x, -1.0, 1.0), bounds)
    tx_list = list(cond.tx_list) if cond.kind == TX_LOCATIONS else []
    return RadioMap(values, scenario_id="generated", tx_list=tx_list)


def sample_batch(
    conds: list,
    ckpt: ModelCheckpoint | ModelBundle,
    seed,
    sched: NoiseSchedule | None = None,
    bounds: tuple | None = None,
    sigma_mode: str = POSTERIOR,
) -> list:
    """Vectorized sampling; sample ``i`` uses spawned child stream ``i`` and
    equals ``sample(conds[i], ..., seed=SeedSequence(seed).spawn(n)[i])``."""
    if isinstance(ckpt, ModelBundle):
        bundle = ckpt
        if sched is None or bounds is None:
            raise ConfigurationError("sampling from a bundle needs sched and bounds")
    else:
        bundle = load_model(ckpt)
        sched = ckpt.schedule()
        bounds = ckpt.bounds
    if not conds:
        return []
    cond_matrix = np.concatenate(
        [_condition_matrix(bundle, c, bounds) for c in conds], axis=0
    )
    children = np.random.SeedSequence(seed).spawn(len(conds))
    rngs = [np.random.default_rng(c) for c in children]
    xs = _reverse_chain(bundle, sched, cond_matrix, rngs, sigma_mode)
    out = []
    for i, cond in enumerate(conds):
        values = denormalize_dbm(np.clip(xs[i, 0], -1.0, 1.0), bounds)
        tx_list = list(cond.tx_list) if cond.kind == TX_LOCATIONS else []
        out.append(RadioMap(values, scenario_id=f"generated-{i:04d}", tx_list=tx_list))
    return out


# ---------------------------------------------------------------------------
# checkpoint persistence (RMGC)
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: ModelCheckpoint, path):
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<Biiddddiii",
                    _KIND_CODE[ckpt.condition_kind],
                    ckpt.grid_n,
                    ckpt.T,
                    ckpt.beta1,
                    ckpt.betaT,
                    ckpt.min_dbm,
                    ckpt.max_dbm,
                    ckpt.d_cond,
                    ckpt.capacity,
                    ckpt.fragment_k,
                )
            )
            fh.write(struct.pack("<i", len(ckpt.params)))
            for name, arr in ckpt.params.items():
                raw = name.encode("utf-8")
                arr = np.asarray(arr, dtype="<f4")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<i", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
                fh.write(arr.tobytes(order="C"))
            fh.write(struct.pack("<i", len(ckpt.loss_trace)))
            fh.write(np.asarray(ckpt.loss_trace, dtype="<f4").tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        with open(path, "rb") as fh:
            return _parse_checkpoint(fh, path)
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint from {path}: {exc}") from exc


def _parse_checkpoint(fh, path) -> ModelCheckpoint:
    def read(fmt):
        size = struct.calcsize(fmt)
        buf = fh.read(size)
        if len(buf) != size:
            raise StorageError(f"truncated checkpoint file {path}")
        return struct.unpack(fmt, buf)

    if fh.read(4) != _MAGIC:
        raise StorageError(f"{path} is not an RMGC checkpoint")
    kind_code, grid_n, T, beta1, betaT, vmin, vmax, d_cond, capacity, k = read("<Biiddddiii")
    kind = _KIND_NAME.get(kind_code)
    if kind is None:
        raise StorageError(f"unknown condition kind code {kind_code} in {path}")
    (n_params,) = read("<i")
    params = {}
    for _ in range(n_params):
        (name_len,) = read("<H")
        name = fh.read(name_len).decode("utf-8")
        (rank,) = read("<i")
        dims = read(f"<{rank}i") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        buf = fh.read(4 * count)
        if len(buf) != 4 * count:
            raise StorageError(f"truncated checkpoint file {path}")
        params[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    (n_epochs,) = read("<i")
    trace_buf = fh.read(4 * n_epochs)
    if len(trace_buf) != 4 * n_epochs:
        raise StorageError(f"truncated checkpoint file {path}")
    trace = np.frombuffer(trace_buf, dtype="<f4").tolist()
    return ModelCheckpoint(
        kind, grid_n, T, beta1, betaT, vmin, vmax, d_cond, capacity, k, params, trace
    )
