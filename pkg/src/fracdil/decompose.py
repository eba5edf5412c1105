"""Rewrite fractional-scale convolutions into integral-dilation branches.

A layer with frozen scale ``(d_h, d_w)`` becomes at most two ordinary dilated
convolutions sharing the input: the lower branch uses the floor dilations and
owns the first ``round((1 - alpha) * C_out)`` output channels, the upper
branch uses the ceiling dilations and owns the rest. A direction whose scale
is within ``threshold`` of an integer is snapped to that integer and does not
split. A lower-bound dilation of 0 (scale below 1) collapses the kernel to
size 1 in that direction.
"""
import copy
import math
from dataclasses import dataclass, field

from .fracconv import ScalePair, output_size
from .graph import CONV_KINDS, GraphError, LayerSpec, ModelGraph

DEFAULT_THRESHOLD = 0.05


class DecompositionError(ValueError):
    pass


def round_half_up(v):
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class BranchSpec:
    dilation: tuple
    kernel: tuple
    out_channel_range: tuple

    @property
    def channels(self):
        return self.out_channel_range[1] - self.out_channel_range[0]

    def to_dict(self):
        return {"dilation": list(self.dilation), "kernel": list(self.kernel),
                "out_channel_range": list(self.out_channel_range)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["dilation"]), tuple(d["kernel"]), tuple(d["out_channel_range"]))


@dataclass
class DecompositionResult:
    alpha: float
    branches: list
    source_scale: ScalePair
    near_integer_threshold: float = DEFAULT_THRESHOLD
    active: frozenset = field(default_factory=frozenset)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "source_scale": list(self.source_scale.as_tuple()),
            "threshold": self.near_integer_threshold,
            "active": sorted(self.active),
            "branches": [b.to_dict() for b in self.branches],
        }


def _frac(d):
    return d - math.floor(d)


def _near_integer(d, threshold):
    f = _frac(d)
    return f <= threshold or f >= 1.0 - threshold


def split_factor(s, threshold=DEFAULT_THRESHOLD, kernel=(3, 3)):
    """Return ``(alpha, active_directions)`` for scale pair ``s``.

    Directions whose kernel size is 1 never split.
    """
    if not isinstance(s, ScalePair):
        s = ScalePair(*s)
    dirs = {}
    for name, d, k in (("h", s.d_h, kernel[0]), ("w", s.d_w, kernel[1])):
        if k > 1 and not _near_integer(d, threshold):
            dirs[name] = _frac(d)
    if not dirs:
        return 0.0, frozenset()
    return sum(dirs.values()) / len(dirs), frozenset(dirs)


def _collapse(dil, k):
    # Lower-bound dilation 0 is a kernel of size 1 in that direction.
    return (1, 1) if dil == 0 or k == 1 else (dil, k)


def decompose_scale(s, c_out, threshold=DEFAULT_THRESHOLD, kernel=(3, 3)):
    """Split one frozen scale into integral-dilation branches."""
    if not isinstance(s, ScalePair):
        s = ScalePair(*s)
    alpha, active = split_factor(s, threshold, kernel)
    per_dir = []
    for name, d, k in (("h", s.d_h, kernel[0]), ("w", s.d_w, kernel[1])):
        if name in active:
            per_dir.append((math.floor(d), math.floor(d) + 1, k))
        else:
            r = round_half_up(d) if k > 1 else 1
            per_dir.append((r, r, k))
    if not active:
        (dh, kh), (dw, kw) = (_collapse(per_dir[0][0], per_dir[0][2]),
                              _collapse(per_dir[1][0], per_dir[1][2]))
        branch = BranchSpec((dh, dw), (kh, kw), (0, c_out))
        return DecompositionResult(0.0, [branch], s, threshold, active)
    if c_out < 2:
        raise DecompositionError("insufficient channels for split")
    n_lower = min(max(round_half_up((1.0 - alpha) * c_out), 1), c_out - 1)
    lo_h, lo_kh = _collapse(per_dir[0][0], per_dir[0][2])
    lo_w, lo_kw = _collapse(per_dir[1][0], per_dir[1][2])
    hi_h, hi_kh = _collapse(per_dir[0][1], per_dir[0][2])
    hi_w, hi_kw = _collapse(per_dir[1][1], per_dir[1][2])
    branches = [
        BranchSpec((lo_h, lo_w), (lo_kh, lo_kw), (0, n_lower)),
        BranchSpec((hi_h, hi_w), (hi_kh, hi_kw), (n_lower, c_out)),
    ]
    return DecompositionResult(alpha, branches, s, threshold, active)


def decompose_layer(layer, threshold=DEFAULT_THRESHOLD):
    if layer.scale is None:
        raise DecompositionError(f"{layer.name}: missing frozen scale")
    res = decompose_scale(ScalePair(*layer.scale), layer.c_out, threshold, layer.kernel)
    annotation = res.to_dict()
    if len(res.branches) == 1:
        b = res.branches[0]
        return LayerSpec(layer.name, "conv", layer.c_in, layer.c_out, kernel=b.kernel,
                         dilation=b.dilation, stride=layer.stride, decomposition=annotation)
    return LayerSpec(layer.name, "fd_branch_group", layer.c_in, layer.c_out, kernel=layer.kernel,
                     stride=layer.stride, decomposition=annotation)


def decompose_graph(graph, threshold=DEFAULT_THRESHOLD):
    """Return the FD form of ``graph`` (layers only; weights come from transfer)."""
    if any(l.kind == "fd_branch_group" for l in graph.layers):
        raise DecompositionError("graph is already decomposed")
    layers = []
    for l in graph.layers:
        if l.kind == "gsl_conv":
            layers.append(decompose_layer(l, threshold))
        else:
            layers.append(copy.deepcopy(l))
    try:
        return ModelGraph(layers)
    except GraphError as e:  # pragma: no cover - rewrite preserves channels
        raise DecompositionError(str(e)) from e


def layer_branches(layer):
    """Integral branches of a conv-like layer as ``BranchSpec`` objects."""
    if layer.kind == "fd_branch_group":
        return [BranchSpec.from_dict(b) for b in layer.decomposition["branches"]]
    if layer.kind == "conv":
        return [BranchSpec(tuple(layer.dilation), tuple(layer.kernel), (0, layer.c_out))]
    raise ValueError(f"{layer.name}: {layer.kind} has no integral branches")


def count_flops(graph, input_hw):
    """Multiply-accumulate count of one forward pass at spatial size ``input_hw``.

    Convs count ``C_in * C_out * k_h * k_w * H_out * W_out`` (branches with
    their own channel slice and kernel); scale predictors and linear layers
    count ``in * out``; pooling and ReLU count zero.
    """
    hw = tuple(input_hw)
    total = 0
    for l in graph.layers:
        if l.kind in CONV_KINDS:
            out_hw = output_size(hw, l.stride)
            if l.kind == "gsl_conv":
                kh, kw = l.kernel
                total += l.c_in * l.c_out * kh * kw * out_hw[0] * out_hw[1] + 2 * l.c_in
            else:
                for b in layer_branches(l):
                    total += l.c_in * b.channels * b.kernel[0] * b.kernel[1] * out_hw[0] * out_hw[1]
            hw = out_hw
        elif l.kind == "pool":
            hw = (1, 1)
        elif l.kind == "linear":
            total += l.c_in * l.c_out
    return total
