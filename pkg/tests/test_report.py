import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from chanest.errors import DegenerateInput, InvalidParameter, IoError, ShapeMismatch
from chanest.nn import NeuralNet
from chanest.report import EvalResult, emit_report, evaluate, mse, pearson
from chanest.retrain import IterationRecord
from chanest.uncertainty import McConfig
from helpers import toy_dataset

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestMse:
    def test_identical(self):
        g = np.arange(6).reshape(3, 2) * (1 + 2j)
        assert mse(g, g) == 0.0

    def test_constant_offset(self):
        g = np.zeros((4, 3), complex)
        assert mse(g + (3 - 4j), g) == pytest.approx(25.0)

    def test_hand_value(self):
        assert mse(np.array([[1], [0]]), np.zeros((2, 1))) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=30)
    @given(seed=st.integers(0, 2**32 - 1), c=st.complex_numbers(max_magnitude=100))
    def test_metric_properties(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b = (rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)) for _ in range(2))
        assert mse(a, b) == pytest.approx(mse(b, a))
        assert mse(a + c, b + c) == pytest.approx(mse(a, b), rel=1e-6)
        assert mse(a, b) > 0


class TestPearson:
    def test_self(self):
        x = [0.3, 1.2, -0.7, 2.0]
        assert pearson(x, x) == pytest.approx(1.0)
        assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)

    def test_affine(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(DegenerateInput):
            pearson([1], [2])

    @settings(max_examples=40)
    @given(st.lists(st.tuples(finite, finite), min_size=3, max_size=20),
           st.floats(0.1, 10), st.floats(-5, 5))
    def test_affine_invariance(self, pairs, scale, shift):
        x, y = map(np.array, zip(*pairs))
        assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
        r = pearson(x, y)
        assert -1 <= r <= 1
        assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-9)
        assert pearson(-scale * x + shift, y) == pytest.approx(-r, abs=1e-9)
        assert r == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-9)


class TestEvaluate:
    def test_perfect_net(self):
        ds = toy_dataset(4, noise=0.0)
        net = NeuralNet.from_architecture("conv3x3:2,relu,dropout:0.1,conv3x3:2", seed=0)
        for p in net.params:
            p[...] = 0
        net.input_scale = 1.0
        res = evaluate(net, ds, McConfig(num_passes=4))
        assert res.mean_nn_mse == 0.0
        assert res.mean_baseline_mse == 0.0

    def test_lengths_and_aggregates(self):
        ds = toy_dataset(6)
        net = NeuralNet.from_architecture("conv3x3:2,relu,dropout:0.1,conv3x3:2", seed=0)
        net.input_scale = 1.0
        res = evaluate(net, ds, McConfig(num_passes=4))
        assert len(res.baseline_mse) == len(res.nn_mse) == len(res.uncertainty) == 6
        assert res.mean_nn_mse == pytest.approx(sum(res.nn_mse) / 6, abs=1e-12)
        assert res.mean_baseline_mse == pytest.approx(sum(res.baseline_mse) / 6, abs=1e-12)
        assert res.pearson_r == pytest.approx(np.corrcoef(res.uncertainty, res.nn_mse)[0, 1], abs=1e-12)
        assert res.mean_baseline_mse == pytest.approx(np.mean([mse(e.input, e.target) for e in ds]))

    def test_single_pass_warns(self):
        net = NeuralNet.from_architecture("conv1x1:2", seed=0)
        net.input_scale = 1.0
        with pytest.warns(RuntimeWarning):
            res = evaluate(net, toy_dataset(3), McConfig(num_passes=1))
        assert not np.any(res.uncertainty)
        assert math.isnan(res.pearson_r)

    def test_empty(self):
        with pytest.raises(InvalidParameter):
            evaluate(NeuralNet.from_architecture("conv1x1:2", seed=0), [])


def _result():
    return EvalResult(np.array([0.5, 0.25, 0.1]), np.array([0.2, 0.1, 0.05]), np.array([-1.0, -1.5, -2.0]))


def _records():
    return [IterationRecord(i, (0, 2), 0.3 / i, 0.25 / i, -1.0, -1.1, 10) for i in (1, 2, 3)]


class TestEmit:
    def test_eval_files(self, tmp_path):
        paths = emit_report(_result(), tmp_path)
        assert sorted(p.name for p in paths) == ["eval.csv", "uncertainty_vs_error.svg"]
        rows = list(csv.reader((tmp_path / "eval.csv").open()))
        assert rows[0] == ["example", "baseline_mse", "nn_mse", "uncertainty"]
        assert len(rows) == 3 + 1
        assert float(rows[2][2]) == 0.1
        svg = (tmp_path / "uncertainty_vs_error.svg").read_bytes()
        assert svg.startswith(b"<?xml") and ET.fromstring(svg).tag.endswith("svg")

    def test_iteration_files(self, tmp_path):
        emit_report(_records(), tmp_path)
        rows = list(csv.reader((tmp_path / "iterations.csv").open()))
        assert rows[0] == ["iteration", "val_mse_before", "val_mse_after", "mean_uncertainty_before",
                           "mean_uncertainty_after", "num_selected", "trainset_size"]
        assert len(rows) == 4 and rows[1][5] == "2"
        ET.parse(tmp_path / "mse_per_iteration.svg")

    def test_deterministic(self, tmp_path):
        emit_report(_result(), tmp_path / "a")
        emit_report(_result(), tmp_path / "b")
        for name in ("eval.csv", "uncertainty_vs_error.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_constant_and_nan_values_render(self, tmp_path):
        res = EvalResult(np.ones(3), np.ones(3), np.zeros(3))
        emit_report(res, tmp_path)
        ET.parse(tmp_path / "uncertainty_vs_error.svg")

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(IoError):
            emit_report(_result(), blocker / "sub")
