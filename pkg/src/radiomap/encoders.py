"""Condition encoders: map fragments or Tx locations to a fixed embedding.

The fragment encoder flattens each k x k fragment row-major, normalizes the
dBm values to [-1, 1] with the dataset bounds, appends the fragment origin
as two grid-relative coordinates, concatenates all fragments, zero-pads to
the encoder capacity, and applies a 3-layer MLP. The Tx encoder embeds each
normalized coordinate pair through a shared two-layer block, concatenates
the per-Tx embeddings (zero for empty slots), and projects to the embedding
size. Both produce vectors of exactly ``d_cond`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import compute
from .compute import Tensor
from .errors import ConditionError, ConfigurationError
from .layers import Linear, ParamStore
from .selection import Fragment

FRAGMENTS = "fragments"
TX_LOCATIONS = "tx_locations"

FRAGMENT_CAPACITY = 10
TX_CAPACITY = 2
TX_EMBED_DIM = 32


@dataclass
class ConditionSet:
    """Either a set of RSS fragments or a set of Tx coordinates."""

    kind: str
    fragments: list = field(default_factory=list)
    tx_list: list = field(default_factory=list)
    capacity: int = FRAGMENT_CAPACITY

    def __post_init__(self):
        if self.kind not in (FRAGMENTS, TX_LOCATIONS):
            raise ConditionError(f"unknown condition kind {self.kind!r}")
        populated = self.fragments if self.kind == FRAGMENTS else self.tx_list
        other = self.tx_list if self.kind == FRAGMENTS else self.fragments
        if other:
            raise ConditionError(f"condition kind {self.kind!r} with mismatched payload")
        if len(populated) > self.capacity:
            raise ConditionError(
                f"{len(populated)} entries exceed encoder capacity {self.capacity}"
            )

    @classmethod
    def from_fragments(cls, fragments, capacity: int = FRAGMENT_CAPACITY):
        return cls(FRAGMENTS, fragments=list(fragments), capacity=capacity)

    @classmethod
    def from_tx(cls, tx_list, capacity: int = TX_CAPACITY):
        return cls(TX_LOCATIONS, tx_list=list(tx_list), capacity=capacity)


@dataclass
class ConditionEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).reshape(-1)


def normalize_dbm(values, bounds) -> np.ndarray:
    """Map dBm values to [-1, 1] using dataset (min, max) bounds."""
    vmin, vmax = bounds
    span = max(vmax - vmin, 1e-6)
    return (2.0 * (np.asarray(values, dtype=np.float64) - vmin) / span - 1.0).astype(
        np.float32
    )


def denormalize_dbm(values, bounds) -> np.ndarray:
    vmin, vmax = bounds
    span = max(vmax - vmin, 1e-6)
    return ((np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * span + vmin).astype(
        np.float32
    )


def flatten_fragment(fragment: Fragment, bounds, grid_n: int) -> np.ndarray:
    """Row-major normalized values with the origin appended as (row/N, col/N)."""
    flat = normalize_dbm(fragment.values_dbm, bounds).reshape(-1)
    origin = np.array(
        [fragment.origin[0] / grid_n, fragment.origin[1] / grid_n], dtype=np.float32
    )
    return np.concatenate([flat, origin])


class FragmentEncoder:
    """flatten -> concat -> zero-pad -> 3-layer MLP (two hidden, linear out)."""

    def __init__(
        self,
        store: ParamStore,
        k: int = 4,
        capacity: int = FRAGMENT_CAPACITY,
        d_cond: int = 64,
        hidden: int = 128,
        name: str = "frag_enc",
    ):
        self.k = k
        self.capacity = capacity
        self.d_cond = d_cond
        self.in_dim = capacity * (k * k + 2)
        self.l1 = Linear(store, f"{name}.l1", self.in_dim, hidden)
        self.l2 = Linear(store, f"{name}.l2", hidden, hidden)
        self.l3 = Linear(store, f"{name}.l3", hidden, d_cond)

    def input_vector(self, cond: ConditionSet, bounds, grid_n: int) -> np.ndarray:
        """Fixed-size MLP input for one condition set (zero-padded)."""
        if cond.kind != FRAGMENTS:
            raise ConditionError(f"fragment encoder got kind {cond.kind!r}")
        if len(cond.fragments) > self.capacity:
            raise ConditionError(
                f"{len(cond.fragments)} fragments exceed capacity {self.capacity}"
            )
        out = np.zeros(self.in_dim, dtype=np.float32)
        width = self.k * self.k + 2
        for i, frag in enumerate(cond.fragments):
            if frag.size_k != self.k:
                raise ConditionError(
                    f"fragment size {frag.size_k} != encoder size {self.k}"
                )
            out[i * width : (i + 1) * width] = flatten_fragment(frag, bounds, grid_n)
        return out

    def encode_batch(self, inputs: np.ndarray) -> Tensor:
        """MLP over a [batch, in_dim] matrix of prepared input vectors."""
        x = Tensor(np.atleast_2d(inputs))
        h = compute.silu(self.l1(x))
        h = compute.silu(self.l2(h))
        return self.l3(h)

    def encode(self, cond: ConditionSet, bounds, grid_n: int) -> ConditionEmbedding:
        vec = self.input_vector(cond, bounds, grid_n)
        with compute.no_grad():
            out = self.encode_batch(vec[None])
        return ConditionEmbedding(out.data[0])


class TxEncoder:
    """Shared per-Tx coordinate embedding, concatenated then projected."""

    def __init__(
        self,
        store: ParamStore,
        capacity: int = TX_CAPACITY,
        d_cond: int = 64,
        embed_dim: int = TX_EMBED_DIM,
        name: str = "tx_enc",
    ):
        self.capacity = capacity
        self.d_cond = d_cond
        self.embed_dim = embed_dim
        self.l1 = Linear(store, f"{name}.l1", 2, embed_dim)
        self.l2 = Linear(store, f"{name}.l2", embed_dim, embed_dim)
        self.out = Linear(store, f"{name}.out", capacity * embed_dim, d_cond)

    def input_arrays(self, cond: ConditionSet, grid_n: int) -> tuple:
        """(coords [capacity, 2] in [0,1), slot mask [capacity]) for one set."""
        if cond.kind != TX_LOCATIONS:
            raise ConditionError(f"tx encoder got kind {cond.kind!r}")
        if len(cond.tx_list) > self.capacity:
            raise ConditionError(
                f"{len(cond.tx_list)} transmitters exceed capacity {self.capacity}"
            )
        coords = np.zeros((self.capacity, 2), dtype=np.float32)
        mask = np.zeros(self.capacity, dtype=np.float32)
        for i, tx in enumerate(cond.tx_list):
            coords[i] = (tx.x / grid_n, tx.y / grid_n)
            mask[i] = 1.0
        return coords, mask

    def encode_batch(self, coords: np.ndarray, mask: np.ndarray) -> Tensor:
        """Encode [batch, capacity, 2] coordinates with [batch, capacity] mask."""
        coords = np.asarray(coords, dtype=np.float32)
        mask = np.asarray(mask, dtype=np.float32)
        if coords.ndim == 2:
            coords, mask = coords[None], mask[None]
        b = coords.shape[0]
        flat = Tensor(coords.reshape(b * self.capacity, 2))
        emb = self.l2(compute.silu(self.l1(flat)))
        # zero out padded slots so absent transmitters contribute nothing
        emb = compute.mul(emb, Tensor(mask.reshape(b * self.capacity, 1)))
        stacked = compute.reshape(emb, (b, self.capacity * self.embed_dim))
        return self.out(stacked)

    def encode(self, cond: ConditionSet, grid_n: int) -> ConditionEmbedding:
        coords, mask = self.input_arrays(cond, grid_n)
        with compute.no_grad():
            out = self.encode_batch(coords, mask)
        return ConditionEmbedding(out.data[0])


def build_encoder(kind: str, store: ParamStore, k: int = 4, d_cond: int = 64, capacity: int | None = None):
    """Encoder factory for a condition kind with canonical capacities."""
    if kind == FRAGMENTS:
        return FragmentEncoder(store, k=k, capacity=capacity or FRAGMENT_CAPACITY, d_cond=d_cond)
    if kind == TX_LOCATIONS:
        return TxEncoder(store, capacity=capacity or TX_CAPACITY, d_cond=d_cond)
    raise ConfigurationError(f"unknown condition kind {kind!r}")
