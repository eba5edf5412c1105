import math

import numpy as np
import pytest

from fracdil.fracconv import ConvParams, ScalePair, frac_conv2d_backward, integer_dilated_conv2d
from fracdil.graph import toy_graph
from fracdil.gsl import (GSLBlock, LayerScaleStats, apply_frozen_scales, collect_scale_stats,
                         freeze_scales, gsl_backward, gsl_forward, stats_from_csv, stats_to_csv)
from fracdil.tensor import LinearParams
from tests.helpers import central_diff, rel_err


def _block(rng, c_in=3, c_out=4, pred_w=None, pred_b=(0.0, 0.0)):
    conv = ConvParams(rng.standard_normal((c_out, c_in, 3, 3)), rng.standard_normal(c_out))
    w = np.zeros((2, c_in)) if pred_w is None else np.asarray(pred_w, np.float64)
    return GSLBlock(conv, LinearParams(w, np.asarray(pred_b, np.float64)))


def test_zero_predictor_is_plain_conv(rng):
    b = _block(rng)
    x = rng.standard_normal((2, 3, 7, 7))
    y, s = gsl_forward(x, b)
    np.testing.assert_array_equal(s, np.ones((2, 2)))
    np.testing.assert_allclose(y, integer_dilated_conv2d(x, b.conv, (1, 1)), atol=1e-10)


def test_bias_path_sets_scale(rng):
    b = _block(rng, pred_b=(math.log(2), math.log(3)))
    _, s = gsl_forward(rng.standard_normal((3, 3, 9, 9)), b)
    np.testing.assert_allclose(s, np.tile([2.0, 3.0], (3, 1)), rtol=1e-12)


def test_same_channel_means_same_scale(rng):
    b = _block(rng, pred_w=rng.standard_normal((2, 3)), pred_b=(0.3, -0.2))
    x1 = rng.standard_normal((1, 3, 6, 6))
    x2 = rng.permutation(x1.reshape(1, 3, 36), axis=2).reshape(1, 3, 6, 6)
    np.testing.assert_allclose(gsl_forward(x1, b)[1], gsl_forward(x2, b)[1], rtol=1e-12)


def test_zero_grad(rng):
    b = _block(rng, pred_w=rng.standard_normal((2, 3)) * 0.1)
    x = rng.standard_normal((2, 3, 5, 5))
    for g in gsl_backward(x, b, np.zeros((2, 4, 5, 5))):
        assert not np.any(g)


def test_channel_mismatch(rng):
    with pytest.raises(ValueError):
        gsl_forward(np.zeros((1, 2, 4, 4)), _block(rng))
    with pytest.raises(ValueError):
        GSLBlock(ConvParams(np.ones((1, 3, 3, 3))), LinearParams(np.zeros((2, 4)), np.zeros(2)))


def test_backward_matches_finite_differences(rng):
    b = _block(rng, c_in=2, c_out=2, pred_w=rng.standard_normal((2, 2)) * 0.3, pred_b=(0.4, 0.2))
    x = rng.standard_normal((2, 2, 6, 6))
    gy = rng.standard_normal((2, 2, 6, 6))
    loss = lambda: float(np.sum(gy * gsl_forward(x, b)[0]))
    g = gsl_backward(x, b, gy)
    assert rel_err(g.grad_pred_weight, central_diff(loss, b.predictor.weight, 1e-6)) <= 1e-5
    assert rel_err(g.grad_pred_bias, central_diff(loss, b.predictor.bias, 1e-6)) <= 1e-5
    assert rel_err(g.grad_weight, central_diff(loss, b.conv.weight, 1e-6)) <= 1e-6
    assert rel_err(g.grad_x, central_diff(loss, x, 1e-6)) <= 1e-5


class TestScaleStats:
    def test_untrained_model_has_unit_scales(self, rng):
        g = toy_graph("gsl", seed=3)
        st = collect_scale_stats(g, rng.standard_normal((20, 1, 16, 16)).astype(np.float32), 16)
        assert [s.layer for s in st] == ["conv1", "conv2", "conv3"]
        for s in st:
            assert (s.mean_h, s.std_h, s.mean_w, s.std_w, s.n) == (1.0, 0.0, 1.0, 0.0, 16)

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            collect_scale_stats(toy_graph("gsl"), np.zeros((0, 1, 8, 8), np.float32))

    def test_population_std(self):
        s = LayerScaleStats.from_samples("l", [[1.0, 2.0], [3.0, 2.0]])
        assert (s.mean_h, s.std_h, s.mean_w, s.std_w, s.n) == (2.0, 1.0, 2.0, 0.0, 2)
        assert s.relative_std() == (0.5, 0.0)

    def test_freeze(self):
        frozen = freeze_scales([LayerScaleStats("a", 1.7, 0.1, 2.9, 0.1, 10),
                                LayerScaleStats("b", 1.0, 0.0, 1.0, 0.0, 10)])
        assert frozen == {"a": ScalePair(1.7, 2.9), "b": ScalePair(1.0, 1.0)}

    def test_freeze_needs_samples(self):
        with pytest.raises(ValueError):
            freeze_scales([LayerScaleStats("a", 1.0, 0.0, 1.0, 0.0, 1)])

    def test_apply_frozen(self):
        g = apply_frozen_scales(toy_graph("gsl"), {"conv2": ScalePair(2.5, 1.5)})
        assert g.layer("conv2").scale == (2.5, 1.5)
        assert g.layer("conv1").scale is None

    def test_csv_round_trip(self):
        stats = [LayerScaleStats("conv1", 1 / 3, 0.1, 2.5, 1e-17, 512),
                 LayerScaleStats("conv2", 3.57, 0.02, 3.45, 0.03, 256)]
        text = stats_to_csv(stats)
        assert text.splitlines()[0] == "layer,mean_h,std_h,mean_w,std_w,n"
        assert stats_from_csv(text) == stats

    def test_csv_rejects_other_header(self):
        with pytest.raises(ValueError):
            stats_from_csv("a,b\n1,2\n")


def test_bias_gradient_chains_through_exp(rng):
    b = _block(rng, pred_b=(math.log(1.5), math.log(2.5)))
    x = rng.standard_normal((1, 3, 8, 8))
    gy = rng.standard_normal((1, 4, 8, 8))
    g = gsl_backward(x, b, gy)
    gs = frac_conv2d_backward(x, b.conv, ScalePair(1.5, 2.5), gy).grad_scale
    np.testing.assert_allclose(g.grad_pred_bias, gs * [1.5, 2.5], rtol=1e-9)
