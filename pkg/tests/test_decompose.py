import pytest

from fracdil.decompose import (BranchSpec, DecompositionError, count_flops, decompose_graph,
                               decompose_scale, round_half_up, split_factor)
from fracdil.graph import LayerSpec, ModelGraph, plain_baseline, toy_graph
from fracdil.gsl import apply_frozen_scales
from fracdil.fracconv import ScalePair


def _branches(res):
    return [(b.dilation, b.kernel, b.out_channel_range) for b in res.branches]


class TestSplitFactor:
    def test_both_active(self):
        alpha, active = split_factor((1.7, 2.9))
        assert alpha == pytest.approx(0.8, abs=1e-12) and active == {"h", "w"}

    def test_one_near_integer(self):
        alpha, active = split_factor((2.02, 1.7))
        assert alpha == pytest.approx(0.7, abs=1e-12) and active == {"w"}

    def test_integral(self):
        assert split_factor((3.0, 2.0)) == (0.0, frozenset())

    @pytest.mark.parametrize("s", [(2.05, 1.0), (1.96, 3.0), (4.0, 0.95)])
    def test_threshold_is_inclusive(self, s):
        assert split_factor(s)[1] == frozenset()

    def test_size_one_kernel_never_splits(self):
        assert split_factor((1.5, 2.5), kernel=(1, 3))[1] == {"w"}


class TestDecomposeScale:
    def test_two_directions(self):
        res = decompose_scale((1.7, 2.9), 10)
        assert _branches(res) == [((1, 2), (3, 3), (0, 2)), ((2, 3), (3, 3), (2, 10))]

    def test_near_integer_rounds_to_nearest(self):
        res = decompose_scale((2.02, 1.7), 10)
        assert res.alpha == pytest.approx(0.7)
        assert _branches(res) == [((2, 1), (3, 3), (0, 3)), ((2, 2), (3, 3), (3, 10))]

    def test_sub_one_collapses_kernel(self):
        res = decompose_scale((0.6, 1.4), 8)
        assert res.alpha == pytest.approx(0.5)
        assert _branches(res) == [((1, 1), (1, 3), (0, 4)), ((1, 2), (3, 3), (4, 8))]

    def test_integral_single_branch(self):
        assert _branches(decompose_scale((3.0, 2.0), 6)) == [((3, 2), (3, 3), (0, 6))]

    def test_rounded_sub_one_scale_collapses(self):
        # 0.98 snaps to 1; 0.02 would snap to 0, which is a size-1 kernel
        assert _branches(decompose_scale((0.98, 4.03), 4)) == [((1, 4), (3, 3), (0, 4))]

    def test_insufficient_channels(self):
        with pytest.raises(DecompositionError, match="insufficient channels for split"):
            decompose_scale((1.5, 1.5), 1)

    def test_extreme_alpha_keeps_both_branches(self):
        res = decompose_scale((1.06, 1.06), 4)
        assert [b.channels for b in res.branches] == [3, 1]

    def test_round_half_up(self):
        assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.49)] == [1, 2, 3, 2]

    def test_branch_dict_round_trip(self):
        b = BranchSpec((1, 2), (3, 3), (0, 2))
        assert BranchSpec.from_dict(b.to_dict()) == b


def _single(scale, c_out=10):
    g = ModelGraph([LayerSpec("c", "gsl_conv", 3, c_out, kernel=(3, 3), scale=scale)])
    return decompose_graph(g)


class TestDecomposeGraph:
    def test_fractional_layer_becomes_branch_group(self):
        fd = _single((1.7, 2.9))
        layer = fd.layer("c")
        assert layer.kind == "fd_branch_group"
        assert layer.decomposition["alpha"] == pytest.approx(0.8)
        assert [b["dilation"] for b in layer.decomposition["branches"]] == [[1, 2], [2, 3]]

    def test_integral_layer_becomes_conv(self):
        layer = _single((2.0, 3.0)).layer("c")
        assert (layer.kind, layer.dilation, layer.kernel) == ("conv", (2, 3), (3, 3))
        assert layer.decomposition["branches"][0]["out_channel_range"] == [0, 10]

    def test_missing_scale(self):
        with pytest.raises(DecompositionError, match="missing frozen scale"):
            decompose_graph(toy_graph("gsl"))

    def test_already_decomposed(self):
        fd = _single((1.7, 2.9))
        with pytest.raises(DecompositionError):
            decompose_graph(fd)

    def test_other_layers_untouched(self):
        g = apply_frozen_scales(toy_graph("gsl"), {f"conv{i}": ScalePair(2.0, 2.0) for i in (1, 2, 3)})
        fd = decompose_graph(g)
        assert [l.kind for l in fd.layers] == ["conv", "relu"] * 3 + ["pool", "linear"]
        assert fd.layer("fc") == g.layer("fc")


class TestFlops:
    def test_pointwise_conv(self):
        g = ModelGraph([LayerSpec("c", "conv", 1, 1, kernel=(1, 1), dilation=(1, 1))])
        assert count_flops(g, (4, 4)) == 16

    def test_strided(self):
        g = ModelGraph([LayerSpec("c", "conv", 2, 3, kernel=(3, 3), dilation=(1, 1), stride=(2, 2))])
        assert count_flops(g, (5, 5)) == 2 * 3 * 9 * 3 * 3

    def test_gsl_counts_predictor(self):
        g = ModelGraph([LayerSpec("c", "gsl_conv", 4, 2, kernel=(3, 3))])
        assert count_flops(g, (2, 2)) == 4 * 2 * 9 * 4 + 2 * 4

    def test_collapse_reduces_flops(self):
        fd = _single((0.6, 1.4), 8)
        plain = plain_baseline(fd)
        assert count_flops(fd, (8, 8)) < count_flops(plain, (8, 8))
