"""Condition encoder tests."""

import numpy as np
import pytest

from radiomap import compute, encoders
from radiomap.encoders import ConditionSet, FragmentEncoder, TxEncoder
from radiomap.errors import ConditionError
from radiomap.layers import ParamStore
from radiomap.scenario import TxLocation
from radiomap.selection import Fragment


BOUNDS = (-120.0, -40.0)


def store(seed=0):
    return ParamStore(np.random.default_rng(seed))


def frag(values, origin=(0, 0)):
    values = np.asarray(values, dtype=np.float32)
    return Fragment(origin, values.shape[0], values)


class TestFlattenFragment:
    def test_row_major_with_origin(self):
        f = frag([[-50.0, -60.0], [-70.0, -80.0]])
        vec = encoders.flatten_fragment(f, BOUNDS, grid_n=32)
        expected_vals = encoders.normalize_dbm([-50, -60, -70, -80], BOUNDS)
        np.testing.assert_allclose(vec[:4], expected_vals)
        np.testing.assert_array_equal(vec[4:], [0.0, 0.0])

    def test_dataset_min_maps_to_minus_one(self):
        f = frag(np.full((2, 2), BOUNDS[0]))
        vec = encoders.flatten_fragment(f, BOUNDS, grid_n=32)
        np.testing.assert_allclose(vec[:4], -1.0, atol=1e-6)

    def test_dataset_max_maps_to_plus_one(self):
        f = frag(np.full((2, 2), BOUNDS[1]))
        vec = encoders.flatten_fragment(f, BOUNDS, grid_n=32)
        np.testing.assert_allclose(vec[:4], 1.0, atol=1e-6)

    def test_origin_normalization(self):
        f = frag(np.zeros((2, 2)), origin=(16, 8))
        vec = encoders.flatten_fragment(f, BOUNDS, grid_n=32)
        np.testing.assert_allclose(vec[4:], [0.5, 0.25])

    def test_normalize_roundtrip(self):
        vals = np.linspace(BOUNDS[0], BOUNDS[1], 7)
        back = encoders.denormalize_dbm(encoders.normalize_dbm(vals, BOUNDS), BOUNDS)
        np.testing.assert_allclose(back, vals, atol=1e-4)


class TestFragmentEncoder:
    def test_output_length_fixed(self):
        enc = FragmentEncoder(store(), k=2, capacity=4, d_cond=16)
        for n in range(4):
            frags = [frag(np.full((2, 2), -60.0 - i)) for i in range(n)]
            cond = ConditionSet.from_fragments(frags, capacity=4)
            emb = enc.encode(cond, BOUNDS, grid_n=32)
            assert emb.vector.shape == (16,)

    def test_empty_list_is_bias_path(self):
        enc = FragmentEncoder(store(), k=2, capacity=4, d_cond=8)
        cond = ConditionSet.from_fragments([], capacity=4)
        a = enc.encode(cond, BOUNDS, 32).vector
        b = enc.encode(cond, BOUNDS, 32).vector
        np.testing.assert_array_equal(a, b)
        zero_in = enc.encode_batch(np.zeros((1, enc.in_dim), dtype=np.float32))
        np.testing.assert_array_equal(a, zero_in.data[0])

    def test_padding_beyond_first_fragment_is_zero(self):
        enc = FragmentEncoder(store(), k=2, capacity=8, d_cond=8)
        cond = ConditionSet.from_fragments([frag(np.full((2, 2), -77.0))], capacity=8)
        vec = enc.input_vector(cond, BOUNDS, 32)
        width = 2 * 2 + 2
        assert vec[width:].any() == False  # noqa: E712 - all padding zero
        assert vec[:width].any()

    def test_capacity_enforced(self):
        enc = FragmentEncoder(store(), k=2, capacity=2, d_cond=8)
        frags = [frag(np.zeros((2, 2))) for _ in range(3)]
        with pytest.raises(ConditionError):
            ConditionSet.from_fragments(frags, capacity=2)
        cond = ConditionSet.from_fragments(frags, capacity=3)
        with pytest.raises(ConditionError):
            enc.input_vector(cond, BOUNDS, 32)

    def test_order_sensitivity(self):
        # concatenation is order sensitive by design; document that here
        enc = FragmentEncoder(store(), k=2, capacity=4, d_cond=16)
        f1 = frag(np.full((2, 2), -50.0), origin=(0, 0))
        f2 = frag(np.full((2, 2), -90.0), origin=(8, 8))
        a = enc.encode(ConditionSet.from_fragments([f1, f2], 4), BOUNDS, 32).vector
        b = enc.encode(ConditionSet.from_fragments([f2, f1], 4), BOUNDS, 32).vector
        assert np.linalg.norm(a - b) > 0

    def test_gradients_reach_all_layers(self):
        enc = FragmentEncoder(store(), k=2, capacity=4, d_cond=8)
        st = enc.l1.weight  # any parameter handle works via the store
        x = np.random.default_rng(0).normal(size=(3, enc.in_dim)).astype(np.float32)
        out = enc.encode_batch(x)
        compute.mean(compute.square(out)).backward()
        assert st.tensor.grad is not None
        assert np.isfinite(st.tensor.grad).all()
        assert np.abs(st.tensor.grad).sum() > 0


class TestTxEncoder:
    def test_coordinate_normalization(self):
        enc = TxEncoder(store(), capacity=2, d_cond=16)
        cond = ConditionSet.from_tx([TxLocation(0, 0), TxLocation(31, 31)])
        coords, mask = enc.input_arrays(cond, grid_n=32)
        np.testing.assert_allclose(coords[0], [0.0, 0.0])
        np.testing.assert_allclose(coords[1], [31 / 32, 31 / 32])
        np.testing.assert_array_equal(mask, [1.0, 1.0])

    def test_shared_weights_identical_slots(self):
        enc = TxEncoder(store(), capacity=2, d_cond=16)
        coords = np.array([[0.25, 0.5], [0.25, 0.5]], dtype=np.float32)
        slots = enc.l2(compute.silu(enc.l1(compute.Tensor(coords))))
        np.testing.assert_array_equal(slots.data[0], slots.data[1])

    def test_output_length(self):
        enc = TxEncoder(store(), capacity=2, d_cond=32)
        for txs in ([TxLocation(1, 2)], [TxLocation(1, 2), TxLocation(30, 5)]):
            emb = enc.encode(ConditionSet.from_tx(txs), grid_n=32)
            assert emb.vector.shape == (32,)

    def test_padding_slot_contributes_nothing(self):
        # one Tx vs one Tx plus an absent slot must agree exactly
        enc = TxEncoder(store(), capacity=2, d_cond=16)
        coords, mask = enc.input_arrays(
            ConditionSet.from_tx([TxLocation(4, 9)]), grid_n=32
        )
        out1 = enc.encode_batch(coords, mask).data
        coords2 = coords.copy()
        coords2[1] = (0.9, 0.9)  # garbage in a masked slot
        out2 = enc.encode_batch(coords2, mask).data
        np.testing.assert_array_equal(out1, out2)

    def test_capacity_enforced(self):
        enc = TxEncoder(store(), capacity=2, d_cond=16)
        txs = [TxLocation(i, i) for i in range(3)]
        cond = ConditionSet(encoders.TX_LOCATIONS, tx_list=txs, capacity=3)
        with pytest.raises(ConditionError):
            enc.input_arrays(cond, grid_n=32)


class TestConditionSet:
    def test_kind_payload_mismatch(self):
        with pytest.raises(ConditionError):
            ConditionSet(encoders.FRAGMENTS, tx_list=[TxLocation(0, 0)])

    def test_unknown_kind(self):
        with pytest.raises(ConditionError):
            ConditionSet("weird")

    def test_capacity_check(self):
        with pytest.raises(ConditionError):
            ConditionSet.from_tx([TxLocation(0, 0)] * 5, capacity=2)
