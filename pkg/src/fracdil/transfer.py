"""Initialise a decomposed (FD) graph from the trained scale-learning graph.

Split layers hand output-channel rows ``[0, n_lower)`` of the source kernel
to the lower-dilation branch and ``[n_lower, C_out)`` to the upper one; biases
are split the same way. A branch whose kernel collapsed to size 1 in some
direction keeps the source's centre row / column / element. Scale predictor
parameters have no FD counterpart and are dropped.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .decompose import layer_branches
from .fracconv import ConvParams, ScalePair, frac_conv2d, integer_dilated_conv2d
from .graph import param_names
from .network import conv_params, forward


class TransferError(ValueError):
    pass


@dataclass
class WeightMap:
    entries: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({"entries": self.entries, "dropped": self.dropped}, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["entries"], d.get("dropped", []))


def _kernel_index(src_k, dst_k):
    if dst_k == src_k:
        return list(range(src_k))
    if dst_k == 1:
        return [(src_k - 1) // 2]
    raise TransferError(f"graph/decomposition mismatch: cannot map kernel size {src_k} to {dst_k}")


def _mismatch(msg):
    return TransferError(f"graph/decomposition mismatch: {msg}")


def slice_branch(weight, bias, branch):
    """Source rows and kernel positions feeding one branch."""
    lo, hi = branch.out_channel_range
    rows = _kernel_index(weight.shape[2], branch.kernel[0])
    cols = _kernel_index(weight.shape[3], branch.kernel[1])
    w = weight[lo:hi][:, :, rows][:, :, :, cols]
    b = bias[lo:hi] if bias is not None else None
    kmap = [[si, sj, di, dj] for di, si in enumerate(rows) for dj, sj in enumerate(cols)]
    return np.ascontiguousarray(w), b, kmap


def transfer_weights(gsl_graph, fd_graph):
    """Return ``(fd_weights, weight_map)`` derived from ``gsl_graph.weights``."""
    if len(gsl_graph.layers) != len(fd_graph.layers):
        raise _mismatch("layer counts differ")
    src = gsl_graph.weights
    out = {}
    wmap = WeightMap()
    for sl, dl in zip(gsl_graph.layers, fd_graph.layers):
        if sl.name != dl.name or sl.c_in != dl.c_in or sl.c_out != dl.c_out:
            raise _mismatch(f"layer {sl.name!r} vs {dl.name!r}")
        if sl.kind == "gsl_conv":
            if dl.kind not in ("conv", "fd_branch_group") or dl.decomposition is None:
                raise _mismatch(f"{sl.name}: FD layer lacks a decomposition annotation")
            weight, bias = src[f"{sl.name}.weight"], src.get(f"{sl.name}.bias")
            branches = layer_branches(dl)
            covered = []
            for i, br in enumerate(branches):
                covered.extend(range(*br.out_channel_range))
                prefix = dl.name if dl.kind == "conv" else f"{dl.name}.b{i}"
                w, b, kmap = slice_branch(weight, bias, br)
                out[f"{prefix}.weight"] = w
                wmap.entries.append({"dst": f"{prefix}.weight", "src": f"{sl.name}.weight",
                                     "out_channel_range": list(br.out_channel_range),
                                     "kernel_map": kmap})
                if b is not None:
                    out[f"{prefix}.bias"] = b.copy()
                    wmap.entries.append({"dst": f"{prefix}.bias", "src": f"{sl.name}.bias",
                                         "out_channel_range": list(br.out_channel_range),
                                         "kernel_map": None})
            if sorted(covered) != list(range(sl.c_out)):
                raise _mismatch(f"{sl.name}: branch ranges do not partition the output channels")
            wmap.dropped += [f"{sl.name}.pred_weight", f"{sl.name}.pred_bias"]
        elif sl.kind == dl.kind:
            if sl.kind == "conv" and (sl.kernel != dl.kernel or sl.dilation != dl.dilation):
                raise _mismatch(f"{sl.name}: conv structure changed")
            for k in param_names(sl):
                out[k] = src[k].copy()
                wmap.entries.append({"dst": k, "src": k, "out_channel_range": None, "kernel_map": None})
        else:
            raise _mismatch(f"{sl.name}: kind {sl.kind} cannot become {dl.kind}")
    return out, wmap


def _fd_layer_output(fd_graph, layer, weights, x):
    parts = []
    for i, br in enumerate(layer_branches(layer)):
        prefix = layer.name if layer.kind == "conv" else f"{layer.name}.b{i}"
        p = ConvParams(weights[f"{prefix}.weight"], weights.get(f"{prefix}.bias"), stride=layer.stride)
        parts.append(integer_dilated_conv2d(x, p, br.dilation))
    return np.concatenate(parts, axis=1)


def _reference_scale(dl):
    """Source scale with non-split directions snapped to their integers."""
    ann = dl.decomposition
    s = list(ann["source_scale"])
    br = layer_branches(dl)
    for axis, name in ((0, "h"), (1, "w")):
        if name not in ann.get("active", []):
            s[axis] = float(br[0].dilation[axis]) if br[0].kernel[axis] > 1 else s[axis]
    return ScalePair(*s)


def verify_transfer(gsl_graph, fd_graph, fd_weights, probe_inputs, atol_identical=1e-5,
                    atol_mean=1e-4):
    """Audit a transfer layer by layer; returns a list of result dicts.

    Each scale-learning layer is probed with the activations that reach it
    when the source graph runs at its frozen scales:

    * single-branch (integral) layers must reproduce the source output;
    * split layers with one active direction and an exact channel split are
      checked for the channel-mean identity using channel-uniform weights;
    * split layers with the real transferred weights are reported as an
      expected per-channel divergence.
    """
    _, trace = forward(gsl_graph, probe_inputs, scale_mode="frozen", keep_cache=True)
    report = []
    for idx, (sl, dl) in enumerate(zip(gsl_graph.layers, fd_graph.layers)):
        if sl.kind != "gsl_conv":
            continue
        x = trace.inputs[idx].astype(np.float64)
        branches = layer_branches(dl)
        src = conv_params(gsl_graph, sl)
        if len(branches) == 1:
            ref = frac_conv2d(x, src, _reference_scale(dl))
            got = _fd_layer_output(fd_graph, dl, fd_weights, x)
            diff = float(np.max(np.abs(ref - got)))
            report.append({"layer": sl.name, "check": "identical output",
                           "status": "pass" if diff <= atol_identical else "fail",
                           "max_abs_diff": diff})
            continue
        ann = dl.decomposition
        alpha = ann["alpha"]
        n_lower = branches[0].channels
        exact_split = abs((1.0 - alpha) * sl.c_out - n_lower) < 1e-9
        collapsed = any(b.kernel != tuple(sl.kernel) for b in branches)
        if len(ann.get("active", [])) == 1 and exact_split and not collapsed:
            uniform = np.broadcast_to(src.weight.mean(axis=0, keepdims=True), src.weight.shape)
            u_src = ConvParams(np.ascontiguousarray(uniform, dtype=np.float64), None, src.stride)
            ref = frac_conv2d(x, u_src, _reference_scale(dl))
            u_w = {}
            for i, br in enumerate(branches):
                w, _, _ = slice_branch(u_src.weight, None, br)
                u_w[f"{dl.name}.b{i}.weight"] = w
            got = _fd_layer_output(fd_graph, dl, u_w, x).mean(axis=1)
            diff = float(np.max(np.abs(ref[:, 0] - got)))
            report.append({"layer": sl.name, "check": "channel-mean identity",
                           "status": "pass" if diff <= atol_mean else "fail",
                           "max_abs_diff": diff})
        else:
            report.append({"layer": sl.name, "check": "channel-mean identity",
                           "status": "not applicable", "max_abs_diff": None})
        ref = frac_conv2d(x, src, ScalePair(*ann["source_scale"]))
        got = _fd_layer_output(fd_graph, dl, fd_weights, x)
        diff = float(np.max(np.abs(ref - got)))
        report.append({"layer": sl.name, "check": "per-channel output",
                       "status": "expected divergence", "max_abs_diff": diff})
    return report
