"""Density of connections between an output neuron and its inputs.

``D(dp)`` counts the paths from the input at relative offset ``dp = (dh, dw)``
to one output neuron with every weight set to 1, summed over all input and
output channels. A fractional tap spreads its ``C_in * C_out`` mass over the
surrounding integer offsets with the bilinear weights (tensor product of the
two directions).
"""
import csv
import io
import math
import warnings

import numpy as np

from .decompose import layer_branches
from .fracconv import ConvParams, ScalePair, frac_conv2d, integer_dilated_conv2d, tap_grid


class DensityMap(dict):
    """Mapping ``(dh, dw) -> density``; zero entries are omitted."""

    def add(self, key, value):
        value = float(value)
        if value != 0.0:
            key = (int(key[0]), int(key[1]))
            self[key] = self.get(key, 0.0) + value

    def total(self):
        return math.fsum(self.values())

    def marginal(self, axis):
        """1-D density along ``axis`` (0 for h, 1 for w) keyed by offset."""
        out = {}
        for (dh, dw), v in self.items():
            k = dh if axis == 0 else dw
            out[k] = out.get(k, 0.0) + v
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dh", "dw", "density"])
        for (dh, dw) in sorted(self):
            w.writerow([dh, dw, repr(self[(dh, dw)])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["dh", "dw", "density"]:
            raise ValueError("not a density CSV")
        return cls({(int(r[0]), int(r[1])): float(r[2]) for r in rows[1:] if r})


def fractional_density(kernel, c_in, c_out, scale):
    """Density of one bilinear-sampled conv at ``scale``."""
    s = scale if isinstance(scale, ScalePair) else ScalePair(*scale)
    mass = float(c_in * c_out)
    ih, iw = tap_grid(*kernel)
    d = DensityMap()
    for i, j in zip(ih, iw):
        ph, pw = i * s.d_h, j * s.d_w
        fh, fw = math.floor(ph), math.floor(pw)
        ah, aw = ph - fh, pw - fw
        for dh, wh in ((fh, 1.0 - ah), (fh + 1, ah)):
            for dw, ww in ((fw, 1.0 - aw), (fw + 1, aw)):
                if wh * ww != 0.0:
                    d.add((dh, dw), mass * wh * ww)
    return d


def branch_density(c_in, branches):
    """Density of a set of integral-dilation branches sharing one input."""
    d = DensityMap()
    for b in branches:
        ih, iw = tap_grid(*b.kernel)
        mass = float(c_in * b.channels)
        for i, j in zip(ih, iw):
            d.add((int(i * b.dilation[0]), int(j * b.dilation[1])), mass)
    return d


def layer_density(layer):
    """Density of a conv-like graph layer (frozen scale for ``gsl_conv``)."""
    if layer.kind == "gsl_conv":
        if layer.scale is None:
            raise ValueError(f"{layer.name}: density needs a frozen scale")
        return fractional_density(layer.kernel, layer.c_in, layer.c_out, layer.scale)
    if layer.kind in ("conv", "fd_branch_group"):
        return branch_density(layer.c_in, layer_branches(layer))
    raise ValueError(f"{layer.name}: {layer.kind} has no connection density")


def compose_density(a, b, c_mid):
    """Density of two stacked layers whose weights are uniform across channels.

    ``a`` feeds ``b`` through ``c_mid`` intermediate channels.
    """
    out = DensityMap()
    for (ah, aw), va in a.items():
        for (bh, bw), vb in b.items():
            out.add((ah + bh, aw + bw), va * vb / c_mid)
    return out


def compare_density(a, b):
    """``(max_abs_diff, total_mass_diff)`` over the union of offsets."""
    keys = set(a) | set(b)
    diff = max((abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys), default=0.0)
    return float(diff), abs(a.total() - b.total())


def _reach(layer):
    if layer.kind == "gsl_conv":
        kh, kw = layer.kernel
        return (math.ceil((kh - 1) // 2 * layer.scale[0]) + 1, math.ceil((kw - 1) // 2 * layer.scale[1]) + 1)
    rh = rw = 0
    for b in layer_branches(layer):
        rh = max(rh, (b.kernel[0] - 1) // 2 * b.dilation[0])
        rw = max(rw, (b.kernel[1] - 1) // 2 * b.dilation[1])
    return rh, rw


def _ones_forward(layer, x):
    if layer.kind == "gsl_conv":
        p = ConvParams(np.ones((layer.c_out, layer.c_in) + tuple(layer.kernel)))
        return frac_conv2d(x, p, ScalePair(*layer.scale))
    parts = []
    for b in layer_branches(layer):
        p = ConvParams(np.ones((b.channels, layer.c_in) + tuple(b.kernel)))
        parts.append(integer_dilated_conv2d(x, p, b.dilation))
    return np.concatenate(parts, axis=1)


def density_bruteforce(graph, max_offset):
    """Density of a linear conv chain read off its impulse responses.

    Every weight is set to 1 and biases are dropped; for each offset ``dp``
    with ``|dh|, |dw| <= max_offset`` a unit impulse (on every input channel)
    is placed at ``centre + dp`` and the summed response of the centre output
    neuron is recorded. Runs in float64.
    """
    convs = []
    for l in graph.layers:
        if l.kind not in ("conv", "gsl_conv", "fd_branch_group"):
            raise ValueError(f"{l.name}: brute-force density needs a pure conv chain, got {l.kind}")
        if l.stride != (1, 1):
            raise ValueError(f"{l.name}: brute-force density supports stride 1 only")
        convs.append(l)
    if not convs:
        raise ValueError("graph has no conv layers")
    reach_h = sum(_reach(l)[0] for l in convs)
    reach_w = sum(_reach(l)[1] for l in convs)
    if reach_h > max_offset or reach_w > max_offset:
        warnings.warn(f"receptive field ({reach_h}, {reach_w}) exceeds max_offset {max_offset}; "
                      "outer offsets are truncated", stacklevel=2)
    m = int(max_offset)
    pad_h, pad_w = m + reach_h + 1, m + reach_w + 1
    size = (2 * pad_h + 1, 2 * pad_w + 1)
    offsets = [(dh, dw) for dh in range(-m, m + 1) for dw in range(-m, m + 1)]
    x = np.zeros((len(offsets), convs[0].c_in) + size)
    for n, (dh, dw) in enumerate(offsets):
        x[n, :, pad_h + dh, pad_w + dw] = 1.0
    for l in convs:
        x = _ones_forward(l, x)
    response = x[:, :, pad_h, pad_w].sum(axis=1)
    d = DensityMap()
    for (dh, dw), v in zip(offsets, response):
        d.add((dh, dw), float(v))
    return d
