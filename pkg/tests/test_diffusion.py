"""Diffusion core tests: schedule algebra, forward process, train, sample."""

import numpy as np
import pytest

from radiomap import diffusion as dif
from radiomap import scenario as sc
from radiomap.compute import Tensor
from radiomap.denoiser import UNetConfig
from radiomap.encoders import ConditionSet
from radiomap.errors import (
    ConditionError,
    ConfigurationError,
    DimensionError,
    StepError,
    TrainingError,
)
from radiomap.scenario import TxLocation


SMALL_UNET = UNetConfig(
    grid_n=16, base_channels=8, levels=2, time_dim=16, cond_dim=16, groups=4
)


def small_dataset(count=8, seed=5, regime=sc.INDOOR):
    params = sc.ScenarioParams.defaults(regime, grid_n=16)
    return sc.build_dataset(regime, count=count, seed=seed, params=params)


def small_train_config(**kw):
    base = dict(
        lr=1e-3,
        epochs=2,
        batch_size=4,
        seed=3,
        condition_kind=dif.FRAGMENTS,
        fragment_percent=10.0,
        fragment_k=4,
        n_subareas=16,
        d_cond=16,
    )
    base.update(kw)
    return dif.TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_run():
    """One tiny end-to-end training run shared by the cheaper assertions."""
    ds = small_dataset()
    sched = dif.linear_schedule(25, 1e-4, 0.2)
    cfg = small_train_config()
    ckpt = dif.train(ds, cfg, sched, unet_cfg=SMALL_UNET)
    return ds, sched, cfg, ckpt


class TestLinearSchedule:
    def test_paper_endpoints(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        assert sched.beta[0] == 1e-4
        assert sched.beta[-1] == 0.02
        assert sched.T == 400

    def test_alpha_bar_first_entry(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        assert sched.alpha_bar[0] == 1.0 - 1e-4

    def test_alpha_bar_matches_running_product_oracle(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        running = 1.0
        for i in range(400):
            running *= 1.0 - (1e-4 + i / 399 * (0.02 - 1e-4))
            assert abs(sched.alpha_bar[i] - running) < 1e-12

    def test_beta_strictly_increasing_in_unit_interval(self):
        sched = dif.linear_schedule(100, 1e-4, 0.08)
        assert np.all(np.diff(sched.beta) > 0)
        assert sched.beta[0] > 0 and sched.beta[-1] < 1

    def test_alpha_bar_strictly_decreasing(self):
        sched = dif.linear_schedule(100, 1e-4, 0.08)
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_invalid_bounds(self):
        with pytest.raises(ConfigurationError):
            dif.linear_schedule(100, 0.02, 1e-4)
        with pytest.raises(ConfigurationError):
            dif.linear_schedule(1, 1e-4, 0.02)
        with pytest.raises(ConfigurationError):
            dif.linear_schedule(100, 0.0, 0.02)


class TestSigmaVariant:
    def test_sigma1_is_zero_under_posterior(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        assert dif.sigma_variant(sched, "posterior")[0] == 0.0

    def test_posterior_below_beta_everywhere(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        post = dif.sigma_variant(sched, "posterior")
        beta = dif.sigma_variant(sched, "beta")
        assert np.all(post <= beta + 1e-18)

    def test_tables_differ_most_at_small_t(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        gap = dif.sigma_variant(sched, "beta") - dif.sigma_variant(sched, "posterior")
        rel = gap / sched.beta
        assert rel[0] == pytest.approx(1.0)
        assert np.argmax(rel) == 0
        assert rel[-1] < 0.05

    def test_unknown_mode(self):
        sched = dif.linear_schedule(10, 1e-4, 0.02)
        with pytest.raises(ConfigurationError):
            dif.sigma_variant(sched, "learned")


class TestForwardSample:
    def test_zero_noise_scales_signal(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        x0 = np.full((4, 4), 0.5, dtype=np.float32)
        out = dif.forward_sample(x0, 123, np.zeros_like(x0), sched)
        expected = np.float32(np.sqrt(sched.alpha_bar[122])) * x0
        np.testing.assert_array_equal(out, expected)

    def test_signal_coefficient_small_at_final_step(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        # independent oracle: running product in python floats
        running = 1.0
        for i in range(400):
            running *= float(1.0 - sched.beta[i])
        assert np.sqrt(running) == pytest.approx(np.sqrt(sched.alpha_bar[-1]), rel=1e-9)
        assert np.sqrt(sched.alpha_bar[-1]) < 0.2

    def test_monte_carlo_moments(self):
        sched = dif.linear_schedule(400, 1e-4, 0.02)
        rng = np.random.default_rng(77)
        x0 = np.full(4096, 0.8, dtype=np.float32)
        for t in (1, 200, 400):
            draws = np.stack(
                [
                    dif.forward_sample(
                        x0, t, rng.standard_normal(4096).astype(np.float32), sched
                    )
                    for _ in range(8)
                ]
            )
            mean = draws.mean()
            var = draws.var()
            assert mean == pytest.approx(np.sqrt(sched.alpha_bar[t - 1]) * 0.8, rel=0.03)
            assert var == pytest.approx(1.0 - sched.alpha_bar[t - 1], rel=0.03)

    def test_tensor_in_tensor_out(self):
        sched = dif.linear_schedule(10, 1e-4, 0.02)
        out = dif.forward_sample(
            Tensor(np.ones((2, 2), dtype=np.float32)), 5, Tensor(np.zeros((2, 2))), sched
        )
        assert isinstance(out, Tensor)

    def test_shape_and_step_validation(self):
        sched = dif.linear_schedule(10, 1e-4, 0.02)
        with pytest.raises(DimensionError):
            dif.forward_sample(np.zeros((2, 2)), 5, np.zeros((3, 3)), sched)
        with pytest.raises(StepError):
            dif.forward_sample(np.zeros((2, 2)), 11, np.zeros((2, 2)), sched)
        with pytest.raises(StepError):
            dif.forward_sample(np.zeros((2, 2)), 0, np.zeros((2, 2)), sched)


class TestForwardStep:
    def test_composition_matches_closed_form_moments(self):
        sched = dif.linear_schedule(50, 1e-3, 0.2)
        rng = np.random.default_rng(5)
        x = np.full((2000,), 0.9, dtype=np.float32)
        t_target = 50
        for t in range(1, t_target + 1):
            x = dif.forward_step(x, t, rng.standard_normal(2000).astype(np.float32), sched)
        assert x.mean() == pytest.approx(
            np.sqrt(sched.alpha_bar[t_target - 1]) * 0.9, abs=0.08
        )
        assert x.var() == pytest.approx(1.0 - sched.alpha_bar[t_target - 1], rel=0.1)


class TestTrainingLoss:
    def test_oracle_denoiser_gives_exactly_zero(self):
        rng = np.random.default_rng(0)
        eps = rng.standard_normal((4, 1, 8, 8)).astype(np.float32)
        loss = dif.training_loss(Tensor(eps.copy()), Tensor(eps.copy()))
        assert float(loss.data) == 0.0

    def test_positive_otherwise(self):
        loss = dif.training_loss(
            Tensor(np.ones((2, 2), dtype=np.float32)),
            Tensor(np.zeros((2, 2), dtype=np.float32)),
        )
        assert float(loss.data) == 1.0


class TestTrain:
    def test_loss_trace_length_and_finite(self, tiny_run):
        _, _, cfg, ckpt = tiny_run
        assert len(ckpt.loss_trace) == cfg.epochs
        assert all(np.isfinite(v) for v in ckpt.loss_trace)

    def test_lr_zero_leaves_parameters_at_init(self):
        ds = small_dataset()
        sched = dif.linear_schedule(25, 1e-4, 0.2)
        cfg = small_train_config(lr=0.0, epochs=1)
        ckpt = dif.train(ds, cfg, sched, unet_cfg=SMALL_UNET)
        init_ss = np.random.SeedSequence(cfg.seed).spawn(4)[0]
        fresh = dif.build_model(
            cfg.condition_kind,
            ds.grid_n,
            seed=init_ss,
            d_cond=cfg.d_cond,
            fragment_k=cfg.fragment_k,
            unet_cfg=SMALL_UNET,
        )
        for name, p in fresh.store.named_parameters().items():
            np.testing.assert_array_equal(ckpt.params[name], p.tensor.data)

    def test_same_seed_same_checkpoint(self):
        ds = small_dataset(count=6)
        sched = dif.linear_schedule(25, 1e-4, 0.2)
        a = dif.train(ds, small_train_config(epochs=1), sched, unet_cfg=SMALL_UNET)
        b = dif.train(ds, small_train_config(epochs=1), sched, unet_cfg=SMALL_UNET)
        assert a.loss_trace == b.loss_trace
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_tx_condition_kind(self):
        ds = small_dataset(count=6)
        sched = dif.linear_schedule(25, 1e-4, 0.2)
        cfg = small_train_config(condition_kind=dif.TX_LOCATIONS, epochs=1)
        ckpt = dif.train(ds, cfg, sched, unet_cfg=SMALL_UNET)
        assert ckpt.condition_kind == dif.TX_LOCATIONS

    def test_empty_dataset_rejected(self):
        ds = small_dataset(count=1)
        ds.records = []
        with pytest.raises(ConfigurationError):
            dif.train(ds, small_train_config(), dif.linear_schedule(10, 1e-4, 0.02))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts(self):
        ds = small_dataset(count=4)
        sched = dif.linear_schedule(25, 1e-4, 0.2)
        cfg = small_train_config(lr=1e6, epochs=40)
        with pytest.raises(TrainingError):
            dif.train(ds, cfg, sched, unet_cfg=SMALL_UNET)


class TestCheckpointRoundtrip:
    def test_save_load_lossless(self, tiny_run, tmp_path):
        _, _, _, ckpt = tiny_run
        path = tmp_path / "model.rmgc"
        dif.save_checkpoint(ckpt, path)
        loaded = dif.load_checkpoint(path)
        assert loaded.condition_kind == ckpt.condition_kind
        assert loaded.grid_n == ckpt.grid_n
        assert loaded.T == ckpt.T
        assert loaded.beta1 == ckpt.beta1 and loaded.betaT == ckpt.betaT
        assert loaded.min_dbm == ckpt.min_dbm and loaded.max_dbm == ckpt.max_dbm
        assert (loaded.d_cond, loaded.capacity, loaded.fragment_k) == (
            ckpt.d_cond,
            ckpt.capacity,
            ckpt.fragment_k,
        )
        assert set(loaded.params) == set(ckpt.params)
        for name in ckpt.params:
            np.testing.assert_array_equal(loaded.params[name], ckpt.params[name])
        np.testing.assert_allclose(loaded.loss_trace, ckpt.loss_trace, rtol=1e-6)

    def test_loaded_model_predicts_identically(self, tiny_run, tmp_path):
        ds, sched, cfg, ckpt = tiny_run
        path = tmp_path / "model.rmgc"
        dif.save_checkpoint(ckpt, path)
        loaded = dif.load_checkpoint(path)
        cond = dif.build_condition(ds.records[0], dif.FRAGMENTS, ds.bounds)
        a = dif.sample(cond, ckpt, seed=9, sigma_mode=dif.POSTERIOR)
        b = dif.sample(cond, loaded, seed=9, sigma_mode=dif.POSTERIOR)
        np.testing.assert_array_equal(a.values_dbm, b.values_dbm)


class TestSample:
    def test_deterministic_per_seed(self, tiny_run):
        ds, _, _, ckpt = tiny_run
        cond = dif.build_condition(ds.records[1], dif.FRAGMENTS, ds.bounds)
        a = dif.sample(cond, ckpt, seed=4)
        b = dif.sample(cond, ckpt, seed=4)
        np.testing.assert_array_equal(a.values_dbm, b.values_dbm)
        c = dif.sample(cond, ckpt, seed=5)
        assert np.any(c.values_dbm != a.values_dbm)

    def test_output_range_and_shape(self, tiny_run):
        ds, _, _, ckpt = tiny_run
        cond = dif.build_condition(ds.records[2], dif.FRAGMENTS, ds.bounds)
        out = dif.sample(cond, ckpt, seed=1)
        assert out.values_dbm.shape == (ds.grid_n, ds.grid_n)
        assert out.values_dbm.min() >= ckpt.min_dbm - 1e-3
        assert out.values_dbm.max() <= ckpt.max_dbm + 1e-3

    def test_condition_kind_mismatch(self, tiny_run):
        _, _, _, ckpt = tiny_run
        cond = ConditionSet.from_tx([TxLocation(1, 1)])
        with pytest.raises(ConditionError):
            dif.sample(cond, ckpt, seed=1)

    def test_batch_matches_individual_child_streams(self, tiny_run):
        ds, _, _, ckpt = tiny_run
        conds = [
            dif.build_condition(rec, dif.FRAGMENTS, ds.bounds) for rec in ds.records[:3]
        ]
        batch = dif.sample_batch(conds, ckpt, seed=21)
        children = np.random.SeedSequence(21).spawn(3)
        for i, cond in enumerate(conds):
            single = dif.sample(cond, ckpt, seed=children[i])
            np.testing.assert_array_equal(batch[i].values_dbm, single.values_dbm)

    def test_beta_sigma_mode_changes_result(self, tiny_run):
        ds, _, _, ckpt = tiny_run
        cond = dif.build_condition(ds.records[0], dif.FRAGMENTS, ds.bounds)
        a = dif.sample(cond, ckpt, seed=2, sigma_mode=dif.POSTERIOR)
        b = dif.sample(cond, ckpt, seed=2, sigma_mode=dif.BETA)
        assert np.any(a.values_dbm != b.values_dbm)
