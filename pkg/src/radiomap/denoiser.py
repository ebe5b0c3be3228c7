"""Conditional U-Net noise predictor.

Downsampling path, bottleneck, and upsampling path with channel-concat skip
connections; two residual blocks per resolution level. Conditioning (the
sinusoidal time embedding after a learned affine block, plus the projected
condition embedding) enters every residual block as an additive per-channel
bias. Single input channel: the noisy map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compute
from .compute import Tensor
from .encoders import ConditionEmbedding
from .errors import ConfigurationError, DimensionError, StepError
from .layers import Conv, GroupNorm, Linear, ParamStore


@dataclass(frozen=True)
class UNetConfig:
    grid_n: int = 32
    base_channels: int = 32
    levels: int = 2
    time_dim: int = 64
    cond_dim: int = 64
    groups: int = 8
    blocks_per_level: int = 2

    def validate(self):
        if self.grid_n % (1 << self.levels):
            raise ConfigurationError(
                f"grid_n {self.grid_n} not divisible by 2^{self.levels}"
            )
        if self.time_dim % 2:
            raise ConfigurationError("time_dim must be even")
        return self


@dataclass
class TimeEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).reshape(-1)


def sinusoidal_features(t, time_dim: int) -> np.ndarray:
    """Raw [sin(t w_j), cos(t w_j)] features, w_j = 10000^(-2j/time_dim).

    ``t`` may be an int (returns [time_dim]) or an int array (returns
    [len(t), time_dim]). Steps must be >= 1.
    """
    if time_dim % 2:
        raise ConfigurationError("time_dim must be even")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 1):
        raise StepError(f"diffusion step must be >= 1, got {t}")
    half = time_dim // 2
    omega = 10000.0 ** (-2.0 * np.arange(half) / time_dim)
    angles = t_arr[..., None] * omega
    feats = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    return feats.astype(np.float32)


class _ResBlock:
    """Pre-activation residual block with additive conditioning bias."""

    def __init__(self, store, name, c_in, c_out, emb_dim, groups):
        self.c_out = c_out
        self.norm1 = GroupNorm(store, f"{name}.norm1", c_in, groups)
        self.conv1 = Conv(store, f"{name}.conv1", c_in, c_out)
        self.emb_proj = Linear(store, f"{name}.emb", emb_dim, c_out)
        self.norm2 = GroupNorm(store, f"{name}.norm2", c_out, groups)
        self.conv2 = Conv(store, f"{name}.conv2", c_out, c_out)
        self.skip = Conv(store, f"{name}.skip", c_in, c_out, k=1) if c_in != c_out else None

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(compute.silu(self.norm1(x)))
        bias = compute.reshape(self.emb_proj(emb), (-1, self.c_out, 1, 1))
        h = compute.add(h, bias)
        h = self.conv2(compute.silu(self.norm2(h)))
        residual = self.skip(x) if self.skip is not None else x
        return compute.add(h, residual)


class UNet:
    """Noise predictor epsilon(x_t, t, condition embedding)."""

    def __init__(self, config: UNetConfig, store: ParamStore | None = None, seed: int = 0):
        self.config = config.validate()
        if store is None:
            store = ParamStore(np.random.default_rng(np.random.SeedSequence(seed)))
        self.store = store
        cfg = config

        self.time_mlp = Linear(store, "unet.time_mlp", cfg.time_dim, cfg.time_dim)
        self.cond_proj = Linear(store, "unet.cond_proj", cfg.cond_dim, cfg.time_dim)
        self.stem = Conv(store, "unet.stem", 1, cfg.base_channels)

        chans = [cfg.base_channels * (1 << i) for i in range(cfg.levels)]
        mid = cfg.base_channels * (1 << cfg.levels)

        self.down = []
        c_prev = cfg.base_channels
        for lvl, c in enumerate(chans):
            blocks = []
            for b in range(cfg.blocks_per_level):
                blocks.append(
                    _ResBlock(store, f"unet.down{lvl}.b{b}", c_prev, c, cfg.time_dim, cfg.groups)
                )
                c_prev = c
            self.down.append(blocks)

        self.mid = [
            _ResBlock(store, "unet.mid.b0", c_prev, mid, cfg.time_dim, cfg.groups),
            _ResBlock(store, "unet.mid.b1", mid, mid, cfg.time_dim, cfg.groups),
        ]
        c_prev = mid

        self.up = []
        for lvl in reversed(range(cfg.levels)):
            c = chans[lvl]
            blocks = []
            for b in range(cfg.blocks_per_level):
                c_in = c_prev + c if b == 0 else c
                blocks.append(
                    _ResBlock(store, f"unet.up{lvl}.b{b}", c_in, c, cfg.time_dim, cfg.groups)
                )
                c_prev = c
            self.up.append(blocks)

        self.head_norm = GroupNorm(store, "unet.head.norm", cfg.base_channels, cfg.groups)
        # small-scale head keeps the initial prediction near zero without
        # silencing the conditioning pathway
        self.head_conv = Conv(store, "unet.head.conv", cfg.base_channels, 1, scale=0.1)

    def named_parameters(self) -> dict:
        return self.store.named_parameters()

    def time_embed(self, t) -> TimeEmbedding:
        """Learned time embedding for an integer step (>= 1)."""
        with compute.no_grad():
            out = self._time_vectors(np.atleast_1d(np.asarray(t)))
        return TimeEmbedding(out.data[0])

    def _time_vectors(self, t_vec: np.ndarray) -> Tensor:
        feats = sinusoidal_features(t_vec, self.config.time_dim)
        return compute.silu(self.time_mlp(Tensor(feats)))

    def forward(self, x: Tensor, t, cond: Tensor) -> Tensor:
        """Batched prediction: x [b,1,N,N], t int or [b] ints, cond [b,d_cond]."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionError(f"expected [b,1,N,N] input, got {x.shape}")
        if x.shape[2] != cfg.grid_n or x.shape[3] != cfg.grid_n:
            raise DimensionError(
                f"input grid {x.shape[2]}x{x.shape[3]} != configured {cfg.grid_n}"
            )
        b = x.shape[0]
        t_vec = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
        if cond.ndim != 2 or cond.shape != (b, cfg.cond_dim):
            raise DimensionError(
                f"condition embedding must be [{b},{cfg.cond_dim}], got {cond.shape}"
            )

        emb = compute.add(self._time_vectors(t_vec), self.cond_proj(cond))

        h = self.stem(x)
        skips = []
        for blocks in self.down:
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            h = compute.avgpool2x(h)
        for block in self.mid:
            h = block(h, emb)
        for lvl, blocks in enumerate(self.up):
            h = compute.upsample2x(h)
            h = compute.concat([h, skips[len(skips) - 1 - lvl]], axis=1)
            for block in blocks:
                h = block(h, emb)
        return self.head_conv(compute.silu(self.head_norm(h)))

    def predict_noise(self, x_t, t: int, cond) -> Tensor:
        """Single-map contract: [1,N,N] in -> [1,N,N] out (batch also accepted)."""
        if isinstance(cond, ConditionEmbedding):
            cond = cond.vector
        if not isinstance(x_t, Tensor):
            x_t = Tensor(x_t)
        single = x_t.ndim == 3
        x4 = compute.reshape(x_t, (1, *x_t.shape)) if single else x_t
        b = x4.shape[0]
        cond_arr = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=np.float32)
        if cond_arr.ndim == 1:
            cond_arr = np.broadcast_to(cond_arr, (b, cond_arr.shape[0]))
        out = self.forward(x4, t, Tensor(cond_arr))
        return compute.reshape(out, out.shape[1:]) if single else out
