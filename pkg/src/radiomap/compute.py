"""Minimal differentiable compute backend.

Dense float32 arrays with reverse-mode automatic differentiation over a
dynamically recorded tape, plus the small operator set the denoiser and
condition encoders need (matmul, conv2d, pooling, upsampling, activations,
group normalization) and an Adam optimizer.

Spatial operators accept either a single item ``[c, h, w]`` or a batch
``[b, c, h, w]``; the batch form is what the training loop uses.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (used while sampling)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float32 array with an optional gradient.

    ``data`` is always a C-contiguous float32 ndarray; ``grad`` (same shape)
    is populated by ``backward``. Operations record their inputs on a tape
    when any input has ``requires_grad`` set and recording is enabled.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-mode pass from this tensor through the recorded tape."""
        if seed is None:
            if self.size != 1:
                raise DimensionError(
                    "backward() without an explicit seed needs a scalar output"
                )
            seed = np.ones_like(self.data)
        else:
            # private copy: the buffer may be adopted and mutated downstream
            seed = np.array(seed, dtype=np.float32)
            if seed.shape != self.shape:
                raise DimensionError("seed gradient shape must match the tensor")

        order = _toposort(self)
        self.grad = seed
        for node in reversed(order):
            if node._backward_fn is None:
                continue
            if node.grad is not None:
                node._backward_fn(node.grad)
            # free the tape eagerly: interior grads and captured buffers are
            # dead once the node has propagated
            node._backward_fn = None
            node._parents = ()
            node.grad = None

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _toposort(root: Tensor) -> list:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _record(out: Tensor, parents: tuple, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray, own: bool = False):
    """Add ``g`` into ``t.grad``; ``own=True`` promises ``g`` is a freshly
    allocated array no one else references, so it can be adopted in place of
    an initial copy."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if own and g.dtype == np.float32 and g.base is None and g.flags.writeable:
            t.grad = g
        else:
            t.grad = g.astype(np.float32, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bw(g):
        # the incoming buffer is dead after this node; at most one parent may
        # adopt it, the other gets a copy
        ga = _unbroadcast(g, a.shape)
        _accumulate(a, ga, own=True)
        gb = _unbroadcast(g, b.shape)
        if gb is g and a.grad is g:
            gb = g.copy()
        _accumulate(b, gb, own=True)

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape), own=True)
        _accumulate(b, -_unbroadcast(g, b.shape), own=True)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape), own=True)
        _accumulate(b, _unbroadcast(g * a.data, b.shape), own=True)

    return _record(out, (a, b), bw)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)

    def bw(g):
        _accumulate(a, g * (2.0 * a.data), own=True)

    return _record(out, (a,), bw)


def mean(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.mean(dtype=np.float64), dtype=np.float32))
    inv = 1.0 / a.size

    def bw(g):
        gval = float(np.asarray(g).reshape(-1)[0])
        _accumulate(a, np.full(a.shape, gval * inv, dtype=np.float32), own=True)

    return _record(out, (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements (64-bit accumulation, float32 result)."""
    out = Tensor(np.asarray(a.data.sum(dtype=np.float64), dtype=np.float32))

    def bw(g):
        gval = float(np.asarray(g).reshape(-1)[0])
        _accumulate(a, np.full(a.shape, gval, dtype=np.float32), own=True)

    return _record(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _record(out, (a,), bw)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _record(out, tuple(tensors), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors [m,k] x [k,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D tensors, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T, own=True)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g, own=True)

    return _record(out, (a, b), bw)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def bw(g):
        _accumulate(a, g * (a.data > 0.0), own=True)

    return _record(out, (a,), bw)


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s)

    def bw(g):
        _accumulate(a, g * (s * (1.0 + a.data * (1.0 - s))), own=True)

    return _record(out, (a,), bw)


def activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity, ``kind`` in {"relu", "silu"}."""
    if kind == "relu":
        return relu(a)
    if kind == "silu":
        return silu(a)
    raise ConfigurationError(f"unknown activation kind: {kind!r}")


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def _spatial_view(a: Tensor):
    """Return (data as [b,c,h,w], had_batch_dim)."""
    if a.ndim == 3:
        return a.data[None], False
    if a.ndim == 4:
        return a.data, True
    raise DimensionError(f"expected [c,h,w] or [b,c,h,w], got shape {a.shape}")


def _im2col_T(x4: np.ndarray, k: int, stride: int, padding: int):
    """Padded sliding windows as a [cin*k*k, b*ho*wo] matrix (plus ho, wo).

    The K-major layout keeps every copy a leading-axis swap with contiguous
    row chunks, which is far cheaper than gathering (k, k) windows.
    """
    bsz, cin, h, w = x4.shape
    if padding:
        xp = np.zeros((bsz, cin, h + 2 * padding, w + 2 * padding), dtype=np.float32)
        xp[:, :, padding : padding + h, padding : padding + w] = x4
    else:
        xp = x4
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    colt = np.empty((cin, k, k, bsz, ho, wo), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            src = xp[:, :, i : i + 1 + stride * (ho - 1) : stride,
                     j : j + 1 + stride * (wo - 1) : stride]
            colt[:, i, j] = src.transpose(1, 0, 2, 3)
    return colt.reshape(cin * k * k, bsz * ho * wo), ho, wo


def _corr(x4: np.ndarray, k4: np.ndarray, stride: int, padding: int):
    """Raw cross-correlation; returns ([b,cout,ho,wo], K-major im2col matrix)."""
    bsz = x4.shape[0]
    cout, _, k, _ = k4.shape
    cmat, ho, wo = _im2col_T(x4, k, stride, padding)
    out_nhwc = cmat.T @ k4.reshape(cout, -1).T
    out = np.ascontiguousarray(
        out_nhwc.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    )
    return out, cmat


def conv2d(
    a: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None
) -> Tensor:
    """Cross-correlation with a square odd kernel and zero padding.

    ``a`` is [c_in,h,w] or [b,c_in,h,w]; ``kernel`` is [c_out,c_in,k,k];
    ``bias``, when given, is one value per output channel (fused here so the
    hot path avoids an extra broadcast node).
    """
    xd, batched = _spatial_view(a)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"kernel must be [c_out,c_in,k,k], got {kernel.shape}")
    bsz, cin, h, w = xd.shape
    cout, cin_k, k, _ = kernel.shape
    if k % 2 != 1:
        raise DimensionError(f"kernel size must be odd, got {k}")
    if cin_k != cin:
        raise DimensionError(f"kernel expects {cin_k} input channels, input has {cin}")
    if (h + 2 * padding - k) % stride or (w + 2 * padding - k) % stride:
        raise DimensionError(
            f"conv2d output size is not integral for input {h}x{w}, "
            f"k={k}, stride={stride}, padding={padding}"
        )
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.shape}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    cmat, _, _ = _im2col_T(xd, k, stride, padding)
    out_nhwc = cmat.T @ kernel.data.reshape(cout, -1).T
    if bias is not None:
        out_nhwc += bias.data
    out_data = np.ascontiguousarray(
        out_nhwc.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    )
    out = Tensor(out_data if batched else out_data[0])

    def bw(g):
        g4 = g if batched else g[None]
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g4.sum(axis=(0, 2, 3), dtype=np.float32), own=True)
        if kernel.requires_grad:
            g_nhwc = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(
                bsz * ho * wo, cout
            )
            dkt = cmat @ g_nhwc
            dk = np.ascontiguousarray(dkt.T).reshape(cout, cin, k, k)
            _accumulate(kernel, dk, own=True)
        if a.requires_grad:
            if stride == 1:
                # input gradient is a correlation with the flipped kernel,
                # channels swapped; one GEMM instead of a scatter-add
                kflip = np.ascontiguousarray(
                    kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                )
                dx, _ = _corr(g4, kflip, 1, k - 1 - padding)
            else:
                kmat = kernel.data.reshape(cout, -1)
                g_nhwc = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(
                    bsz * ho * wo, cout
                )
                dcols = (g_nhwc @ kmat).reshape(bsz, ho, wo, cin, k, k)
                dxp = np.zeros(
                    (bsz, cin, h + 2 * padding, w + 2 * padding), dtype=np.float32
                )
                for i in range(k):
                    for j in range(k):
                        dxp[
                            :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                        ] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                dx = (
                    dxp[:, :, padding : padding + h, padding : padding + w]
                    if padding
                    else dxp
                )
            _accumulate(a, dx if batched else dx[0], own=True)

    parents = (a, kernel) if bias is None else (a, kernel, bias)
    return _record(out, parents, bw)


def avgpool2x(a: Tensor) -> Tensor:
    """2x2 mean pooling; spatial dimensions must be even."""
    xd, batched = _spatial_view(a)
    bsz, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    pooled = xd.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(pooled if batched else pooled[0])

    def bw(g):
        g4 = g if batched else g[None]
        dx = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * np.float32(0.25)
        _accumulate(a, dx if batched else dx[0], own=True)

    return _record(out, (a,), bw)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling (each cell duplicated into 2x2)."""
    xd, batched = _spatial_view(a)
    bsz, c, h, w = xd.shape
    up = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)
    out = Tensor(up if batched else up[0])

    def bw(g):
        g4 = g if batched else g[None]
        dx = g4.reshape(bsz, c, h, 2, w, 2).sum(axis=(3, 5))
        _accumulate(a, dx if batched else dx[0], own=True)

    return _record(out, (a,), bw)


def group_norm(a: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-sample group normalization over [b,c,h,w] with per-channel affine."""
    xd, batched = _spatial_view(a)
    bsz, c, h, w = xd.shape
    if c % groups:
        raise DimensionError(f"{c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError("gamma/beta must have one entry per channel")
    n = (c // groups) * h * w
    xg = xd.reshape(bsz, groups, n)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    y = ((xg - mu) * inv).reshape(bsz, c, h, w)
    out_data = y * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    out = Tensor(out_data if batched else out_data[0])

    def bw(g):
        g4 = g if batched else g[None]
        if beta.requires_grad:
            _accumulate(beta, g4.sum(axis=(0, 2, 3)), own=True)
        if gamma.requires_grad:
            _accumulate(gamma, (g4 * y).sum(axis=(0, 2, 3)), own=True)
        if a.requires_grad:
            dy = (g4 * gamma.data[None, :, None, None]).reshape(bsz, groups, n)
            yg = y.reshape(bsz, groups, n)
            dot = (dy * yg).mean(axis=2, keepdims=True)
            dx = np.empty((bsz, c, h, w), dtype=np.float32)
            dx.reshape(bsz, groups, n)[:] = inv * (
                dy - dy.mean(axis=2, keepdims=True) - yg * dot
            )
            _accumulate(a, dx if batched else dx[0], own=True)

    return _record(out, (a, gamma, beta), bw)


# ---------------------------------------------------------------------------
# parameters and the Adam optimizer
# ---------------------------------------------------------------------------

class Parameter:
    """A trainable tensor bundled with its Adam moment estimates."""

    __slots__ = ("tensor", "first_moment", "second_moment", "step_count")

    def __init__(self, data):
        self.tensor = Tensor(data, requires_grad=True)
        self.first_moment = Tensor(np.zeros_like(self.tensor.data))
        self.second_moment = Tensor(np.zeros_like(self.tensor.data))
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    def zero_grad(self):
        self.tensor.grad = None


def adam_step(
    params: list,
    grads: list,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One Adam update (with bias correction) applied in place.

    ``grads[i]`` must have the same shape as ``params[i]``; pass the
    gradients accumulated by ``backward`` (``p.tensor.grad``).
    """
    if len(params) != len(grads):
        raise DimensionError("params and grads must align one-to-one")
    for p, g in zip(params, grads):
        gd = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float32)
        if gd.shape != p.tensor.shape:
            raise DimensionError(f"gradient shape {gd.shape} != parameter {p.tensor.shape}")
        p.step_count += 1
        m = p.first_moment.data
        v = p.second_moment.data
        m *= beta1
        m += (1.0 - beta1) * gd
        v *= beta2
        v += (1.0 - beta2) * (gd * gd)
        m_hat = m / (1.0 - beta1 ** p.step_count)
        v_hat = v / (1.0 - beta2 ** p.step_count)
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
