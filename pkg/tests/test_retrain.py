import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from chanest.dataset import Dataset
from chanest.errors import InvalidParameter
from chanest.nn import NeuralNet, TrainConfig, evaluate_mse, grids_to_tensor
from chanest.retrain import (RetrainConfig, fgsm_perturb, fgsm_perturbation, retrain_loop, score_uncertainty,
                             select_uncertain)
from chanest.uncertainty import VARIANCE_FLOOR, McConfig, mc_predict, summarize
from helpers import toy_dataset

ARCH = "conv3x3:4,relu,dropout:0.2,conv3x3:2"
MC = McConfig(num_passes=4, seed=3)


def small_net(seed=0, arch=ARCH):
    net = NeuralNet.from_architecture(arch, seed=seed)
    net.input_scale = 1.0
    return net


class TestSelect:
    def test_fraction_one(self):
        assert_array_equal(select_uncertain([0.3, 0.1, 0.2], 1.0), [0, 1, 2])

    def test_argmax(self):
        assert_array_equal(select_uncertain([0.1, 0.9, 0.5], 0.3), [1])

    def test_tie_goes_to_lower_index(self):
        assert_array_equal(select_uncertain([0.5, 0.7, 0.5, 0.5], 0.5), [0, 1])

    def test_count_is_ceiling(self):
        assert len(select_uncertain(np.arange(52.0), 0.2)) == math.ceil(0.2 * 52)

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(InvalidParameter):
            select_uncertain([1.0, 2.0], fraction)


class TestScores:
    def test_length_and_recompute(self):
        ds = toy_dataset(5)
        net = small_net()
        scores = score_uncertainty(net, ds, MC)
        assert scores.shape == (5,)
        for s, e in zip(scores, ds):
            expected = summarize(mc_predict(net, grids_to_tensor(e.input), MC), MC.alpha).scalar_entropy
            assert abs(s - expected) < 1e-12

    def test_zero_rates_give_floor(self):
        net = small_net(arch="conv3x3:4,relu,dropout:0.0,conv3x3:2")
        scores = score_uncertainty(net, toy_dataset(4), MC)
        assert np.all(scores == 0.5 * math.log(2 * math.pi * math.e * VARIANCE_FLOOR))


class TestFgsm:
    def test_zero_epsilon(self):
        e = toy_dataset(1)[0]
        out = fgsm_perturb(small_net(), e, 0.0)
        assert_array_equal(out.input, e.input)
        assert out.meta.adversarial

    def test_sign_range_and_target_kept(self):
        e = toy_dataset(1)[0]
        eps = 0.01
        out = fgsm_perturb(small_net(), e, eps)
        delta = (out.input - e.input).astype(np.complex128)
        for part in (delta.real, delta.imag):
            assert np.all(np.isclose(np.abs(part), eps, atol=1e-6) | (part == 0))
        assert out.target is e.target and out.input.shape == e.input.shape

    def test_increases_loss_of_linear_model(self):
        rng = np.random.default_rng(2)
        net = NeuralNet.from_architecture("conv1x1:2", residual=False, seed=0, dtype=np.float64)
        net.layers[0].weight[...] = rng.standard_normal((1, 1, 2, 2))
        net.input_scale = 1.0
        for seed in range(10):
            x = rng.standard_normal((6, 5, 2))
            t = rng.standard_normal((6, 5, 2))
            before = np.mean((net.forward(x) - t) ** 2)
            after = np.mean((net.forward(x + fgsm_perturbation(net, x, t, 0.05)) - t) ** 2)
            assert after >= before

    def test_negative_epsilon(self):
        with pytest.raises(InvalidParameter):
            fgsm_perturb(small_net(), toy_dataset(1)[0], -1.0)


class TestLoop:
    train_cfg = TrainConfig(max_epochs=2, batch_size=8)

    def _run(self, **kwargs):
        kwargs.setdefault("train", self.train_cfg)
        d, v = toy_dataset(16, seed=1), toy_dataset(6, seed=2)
        return d, v, retrain_loop(small_net(), d, v, RetrainConfig(**kwargs), MC)

    def test_iteration_bound_and_sizes(self):
        d, v, (net, records) = self._run(max_iterations=3, uncertain_fraction=0.5)
        assert 1 <= len(records) <= 3
        for i, r in enumerate(records, start=1):
            assert r.iteration == i
            assert r.num_selected == 3
            assert r.trainset_size == len(d) + 3
            assert r.val_mse_after <= r.val_mse_before
        assert evaluate_mse(net, v) == pytest.approx(records[-1].val_mse_after, rel=1e-12)

    def test_infinite_tolerance_breaks_after_first(self):
        _, _, (_, records) = self._run(max_iterations=4, tolerance=math.inf)
        assert len(records) == 1

    def test_tolerance_exit_is_exact(self):
        _, _, (_, probe) = self._run(max_iterations=3)
        # A tolerance just above the second iteration's result stops there.
        tol = probe[1].val_mse_after * (1 + 1e-9)
        assert all(r.val_mse_after >= tol for r in probe[:1])
        _, _, (_, records) = self._run(max_iterations=3, tolerance=tol)
        assert len(records) == 2

    def test_literal_mode_uses_validation_set(self):
        d, v, (_, records) = self._run(max_iterations=1, augmentation_mode="literal_D_union_V")
        assert records[0].trainset_size == len(d) + len(v)

    def test_inputs_untouched(self):
        d, v = toy_dataset(16, seed=1), toy_dataset(6, seed=2)
        before = [e.input.copy() for e in d] + [e.input.copy() for e in v]
        n = len(d)
        retrain_loop(small_net(), d, v, RetrainConfig(max_iterations=1, train=self.train_cfg), MC)
        assert len(d) == n
        for a, e in zip(before, list(d) + list(v)):
            assert_array_equal(a, e.input)

    def test_deterministic(self):
        a = self._run(max_iterations=2)[2][1]
        b = self._run(max_iterations=2)[2][1]
        assert a == b

    def test_config_validation(self):
        with pytest.raises(InvalidParameter):
            RetrainConfig(augmentation_mode="sideways")
        with pytest.raises(InvalidParameter):
            RetrainConfig(max_iterations=0)
        with pytest.raises(InvalidParameter):
            retrain_loop(small_net(), Dataset([]), toy_dataset(2))
