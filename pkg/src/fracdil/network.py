"""Forward and backward execution of a :class:`~fracdil.graph.ModelGraph`."""
from dataclasses import dataclass, field

import numpy as np

from .fracconv import (ConvParams, ScalePair, branch_conv2d, columns_matmul, dilated_columns, frac_conv2d,
                       integer_dilated_conv2d, integer_dilated_conv2d_backward)
from .gsl import GSLBlock, gsl_backward, gsl_forward
from .tensor import (LinearParams, global_avg_pool, global_avg_pool_backward, linear,
                     linear_backward, relu, relu_backward)


@dataclass
class Trace:
    scales: dict = field(default_factory=dict)  # gsl layer name -> (N, 2) scales
    inputs: list = field(default_factory=list)
    caches: list = field(default_factory=list)


def conv_params(graph, layer, prefix=None):
    prefix = prefix or layer.name
    return ConvParams(graph.weights[f"{prefix}.weight"], graph.weights.get(f"{prefix}.bias"),
                      stride=layer.stride)


def gsl_block(graph, layer):
    w = graph.weights
    n = layer.name
    return GSLBlock(conv_params(graph, layer),
                    LinearParams(w[f"{n}.pred_weight"], w[f"{n}.pred_bias"]))


def _branches(layer):
    for i, b in enumerate(layer.decomposition["branches"]):
        lo, hi = b["out_channel_range"]
        yield i, tuple(b["dilation"]), lo, hi


def _conv_forward(graph, layer, x, scale_mode, trace, keep):
    cache = {}
    if layer.kind == "conv":
        p = conv_params(graph, layer)
        if keep:
            cache["cols"] = dilated_columns(x, p, layer.dilation)
            y = columns_matmul(cache["cols"], p.weight, p.bias)
        else:
            y = integer_dilated_conv2d(x, p, layer.dilation)
    elif layer.kind == "gsl_conv":
        if scale_mode == "frozen":
            if layer.scale is None:
                raise ValueError(f"{layer.name}: no frozen scale set")
            y = frac_conv2d(x, conv_params(graph, layer), ScalePair(*layer.scale))
            trace.scales[layer.name] = np.tile(np.array(layer.scale), (x.shape[0], 1))
        else:
            y, s = gsl_forward(x, gsl_block(graph, layer), cache if keep else None)
            trace.scales[layer.name] = s
    else:
        # Branch outputs are disjoint channel slices written in range order.
        branches = [(conv_params(graph, layer, f"{layer.name}.b{i}"), dil)
                    for i, dil, _, _ in _branches(layer)]
        if keep:
            parts = []
            for i, (p, dil) in enumerate(branches):
                cache[i] = dilated_columns(x, p, dil)
                parts.append(columns_matmul(cache[i], p.weight, p.bias))
            y = np.concatenate(parts, axis=1)
        elif layer.stride == (1, 1):
            y = branch_conv2d(x, branches)
        else:
            y = np.concatenate([integer_dilated_conv2d(x, p, d) for p, d in branches], axis=1)
    return y, cache


def forward(graph, x, scale_mode="predict", keep_cache=False):
    """Run the chain on batch ``x``; returns ``(output, trace)``.

    ``scale_mode`` is ``"predict"`` (per-sample predicted scales) or
    ``"frozen"`` (each scale-learning layer uses its stored frozen scale).
    """
    trace = Trace()
    for layer in graph.layers:
        if keep_cache:
            trace.inputs.append(x)
        cache = None
        if layer.kind in ("conv", "gsl_conv", "fd_branch_group"):
            x, cache = _conv_forward(graph, layer, x, scale_mode, trace, keep_cache)
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "pool":
            x = global_avg_pool(x)
        elif layer.kind == "linear":
            p = LinearParams(graph.weights[f"{layer.name}.weight"], graph.weights[f"{layer.name}.bias"])
            x = linear(x.reshape(x.shape[0], -1), p).astype(x.dtype, copy=False)
        if keep_cache:
            trace.caches.append(cache)
    return x, trace


def backward(graph, trace, grad_out):
    """Parameter gradients for a forward run made with ``keep_cache=True``."""
    grads = {}
    g = grad_out
    for idx in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[idx]
        x = trace.inputs[idx]
        cache = trace.caches[idx]
        n = layer.name
        need_gx = idx > 0
        if layer.kind == "linear":
            p = LinearParams(graph.weights[f"{n}.weight"], graph.weights[f"{n}.bias"])
            x2 = x.reshape(x.shape[0], -1)
            gx, grads[f"{n}.weight"], grads[f"{n}.bias"] = linear_backward(x2, p, g)
            g = gx.reshape(x.shape)
        elif layer.kind == "pool":
            g = global_avg_pool_backward(g, x.shape[2:])
        elif layer.kind == "relu":
            g = relu_backward(x, g)
        elif layer.kind == "conv":
            gx, grads[f"{n}.weight"], grads[f"{n}.bias"] = integer_dilated_conv2d_backward(
                x, conv_params(graph, layer), layer.dilation, g, cols=cache.get("cols"))
            g = gx
        elif layer.kind == "gsl_conv":
            r = gsl_backward(x, gsl_block(graph, layer), g, cache)
            grads[f"{n}.weight"], grads[f"{n}.bias"] = r.grad_weight, r.grad_bias
            grads[f"{n}.pred_weight"], grads[f"{n}.pred_bias"] = r.grad_pred_weight, r.grad_pred_bias
            g = r.grad_x
        elif layer.kind == "fd_branch_group":
            gx_total = None
            for i, dil, lo, hi in _branches(layer):
                p = conv_params(graph, layer, f"{n}.b{i}")
                gx, grads[f"{n}.b{i}.weight"], grads[f"{n}.b{i}.bias"] = integer_dilated_conv2d_backward(
                    x, p, dil, np.ascontiguousarray(g[:, lo:hi]), cols=cache.get(i))
                gx_total = gx if gx_total is None else gx_total + gx
            g = gx_total
        if not need_gx:
            break
    return grads


def predict(graph, x, batch=128, scale_mode="predict"):
    """Logits for ``x`` computed in batches."""
    outs = [forward(graph, x[i:i + batch], scale_mode)[0] for i in range(0, len(x), batch)]
    return np.concatenate(outs) if outs else np.zeros((0, graph.layers[-1].c_out), np.float32)
