"""Global scale learner: pooled features -> linear -> exp -> per-sample scales.

The predicted pair ``(d_h, d_w)`` drives :func:`fracdil.fracconv.frac_conv2d`
for that sample. A zero-initialised predictor yields scale (1, 1), so an
untrained block behaves exactly like a plain 3x3 convolution.
"""
import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fracconv import (MAX_SCALE, MIN_SCALE, ConvParams, ScalePair, columns_matmul,
                       frac_columns, frac_conv2d, frac_conv2d_backward)
from .tensor import LinearParams, global_avg_pool, linear, linear_backward

# exp() argument guard; the conv clamps scales to [0.1, 16] anyway.
_Z_LIMIT = 30.0


@dataclass
class GSLBlock:
    conv: ConvParams
    predictor: LinearParams

    def __post_init__(self):
        if self.predictor.out_features != 2:
            raise ValueError("scale predictor must have 2 outputs")
        if self.predictor.in_features != self.conv.c_in:
            raise ValueError("scale predictor input size must equal conv C_in")


class GSLGrads(NamedTuple):
    grad_x: np.ndarray
    grad_weight: np.ndarray
    grad_bias: np.ndarray
    grad_pred_weight: np.ndarray
    grad_pred_bias: np.ndarray


def predict_scales(x, b):
    """(N, 2) scales ``exp(linear(global_avg_pool(x)))``."""
    pooled = global_avg_pool(x)[:, :, 0, 0]
    z = linear(pooled, b.predictor)
    return np.exp(np.clip(z.astype(np.float64), -_Z_LIMIT, _Z_LIMIT))


def gsl_forward(x, b, cache=None):
    """Return ``(y, scales)`` with per-sample scales of shape (N, 2).

    If ``cache`` is a dict, the sampled columns are stored in it for
    :func:`gsl_backward`.
    """
    if x.shape[1] != b.predictor.in_features:
        raise ValueError(f"channel mismatch: input has {x.shape[1]} channels, block expects "
                         f"{b.predictor.in_features}")
    s = predict_scales(x, b)
    if cache is None:
        return frac_conv2d(x, b.conv, s), s
    cols = frac_columns(x, b.conv, s)
    y = columns_matmul(cols, b.conv.weight.astype(x.dtype, copy=False), b.conv.bias)
    cache["cols"] = cols
    cache["scales"] = s
    return y, s


def gsl_backward(x, b, grad_y, cache=None):
    """Chain the conv's scale gradient through exp and the linear predictor."""
    cache = cache or {}
    s = cache.get("scales")
    if s is None:
        s = predict_scales(x, b)
    fc = frac_conv2d_backward(x, b.conv, s, grad_y, cols=cache.get("cols"))
    gz = fc.grad_scale * s
    pooled = global_avg_pool(x)[:, :, 0, 0]
    g_pooled, gpw, gpb = linear_backward(pooled, b.predictor, gz.astype(x.dtype))
    h, w = x.shape[2:]
    gx = fc.grad_x + (g_pooled / (h * w))[:, :, None, None].astype(x.dtype)
    bias_grad = fc.grad_bias if fc.grad_bias is not None else np.zeros(b.conv.c_out, x.dtype)
    return GSLGrads(gx, fc.grad_weight, bias_grad, gpw, gpb)


@dataclass
class LayerScaleStats:
    layer: str
    mean_h: float
    std_h: float
    mean_w: float
    std_w: float
    n: int

    @classmethod
    def from_samples(cls, layer, scales):
        s = np.asarray(scales, dtype=np.float64)
        return cls(layer, float(s[:, 0].mean()), float(s[:, 0].std()),
                   float(s[:, 1].mean()), float(s[:, 1].std()), int(s.shape[0]))

    def relative_std(self):
        return self.std_h / self.mean_h, self.std_w / self.mean_w


def collect_scale_stats(graph, images, sample_limit=512, batch=64):
    """Per-layer mean and population std of the predicted scales.

    Runs the graph on the first ``min(sample_limit, len(images))`` images.
    Scales are reported as the conv applies them, i.e. clamped to
    ``[MIN_SCALE, MAX_SCALE]``.
    """
    from .network import forward

    n = min(int(sample_limit), len(images))
    if n == 0:
        raise ValueError("empty dataset")
    gsl_names = [l.name for l in graph.layers if l.kind == "gsl_conv"]
    if not gsl_names:
        raise ValueError("graph has no scale-learning layers")
    collected = {name: [] for name in gsl_names}
    for start in range(0, n, batch):
        _, trace = forward(graph, images[start:min(n, start + batch)])
        for name in gsl_names:
            collected[name].append(np.clip(trace.scales[name], MIN_SCALE, MAX_SCALE))
    return [LayerScaleStats.from_samples(name, np.concatenate(collected[name])) for name in gsl_names]


def freeze_scales(stats):
    """Mean predicted scale of each layer as a fixed :class:`ScalePair`."""
    out = {}
    for st in stats:
        if st.n < 2:
            raise ValueError(f"{st.layer}: need at least 2 samples to freeze a scale")
        out[st.layer] = ScalePair(st.mean_h, st.mean_w)
    return out


def apply_frozen_scales(graph, frozen):
    """Write frozen scales into the graph's ``gsl_conv`` layer specs (in place)."""
    for l in graph.layers:
        if l.kind == "gsl_conv" and l.name in frozen:
            l.scale = frozen[l.name].as_tuple()
    return graph


STATS_HEADER = ["layer", "mean_h", "std_h", "mean_w", "std_w", "n"]


def stats_to_csv(stats):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for s in stats:
        w.writerow([s.layer, repr(s.mean_h), repr(s.std_h), repr(s.mean_w), repr(s.std_w), s.n])
    return buf.getvalue()


def stats_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != STATS_HEADER:
        raise ValueError("not a scale statistics CSV")
    return [LayerScaleStats(r[0], float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5]))
            for r in rows[1:] if r]
