"""Small trainable building blocks shared by the encoders and the denoiser.

Every block registers its parameters under a dotted name in a ``ParamStore``
so checkpoints can serialize them as named arrays.
"""

from __future__ import annotations

import numpy as np

from . import compute
from .compute import Parameter, Tensor
from .errors import ConfigurationError


class ParamStore:
    """Ordered name -> Parameter registry with a seeded init stream."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict = {}

    def add(self, name: str, array: np.ndarray) -> Parameter:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(array, dtype=np.float32))
        self.params[name] = p
        return p

    def named_parameters(self) -> dict:
        return dict(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def gradients(self) -> list:
        out = []
        for name, p in self.params.items():
            if p.tensor.grad is None:
                out.append(np.zeros_like(p.tensor.data))
            else:
                out.append(p.tensor.grad)
        return out

    def load_arrays(self, arrays: dict):
        """Overwrite parameter values from ``{name: ndarray}``."""
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigurationError(
                f"parameter names do not match (missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]})"
            )
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if arr.shape != p.tensor.shape:
                raise ConfigurationError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.tensor.shape}"
                )
            p.tensor.data = arr.copy()
            p.first_moment.data[:] = 0.0
            p.second_moment.data[:] = 0.0
            p.step_count = 0


class Linear:
    """Affine map [b, d_in] -> [b, d_out]."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, scale: float = 1.0):
        std = scale * np.sqrt(1.0 / d_in)
        self.weight = store.add(f"{name}.weight", store.rng.normal(0.0, std, (d_in, d_out)))
        self.bias = store.add(f"{name}.bias", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return compute.add(compute.matmul(x, self.weight.tensor), self.bias.tensor)


class Conv:
    """Same-padding square convolution with a per-channel bias."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int = 3, scale: float = 1.0):
        std = scale * np.sqrt(2.0 / (c_in * k * k))
        self.k = k
        self.kernel = store.add(f"{name}.kernel", store.rng.normal(0.0, std, (c_out, c_in, k, k)))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return compute.conv2d(
            x, self.kernel.tensor, stride=1, padding=self.k // 2, bias=self.bias.tensor
        )


class GroupNorm:
    """Group normalization with learned per-channel scale and shift."""

    def __init__(self, store: ParamStore, name: str, channels: int, groups: int):
        if channels % groups:
            raise ConfigurationError(f"{channels} channels not divisible by {groups} groups")
        self.groups = groups
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return compute.group_norm(x, self.gamma.tensor, self.beta.tensor, self.groups)
