"""Convolution with a continuous, globally shared dilation pair.

A kernel tap at relative index ``(i, j)`` reads the input at
``(h0 + i * d_h, w0 + j * d_w)``; fractional coordinates are resolved by
bilinear interpolation against an implicitly zero-extended input. At integral
scales this is exactly an ordinary dilated convolution, which is provided here
as the reference operator.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg.blas import get_blas_funcs

from . import kernels
from .tensor import check_tensor

MIN_SCALE = 0.1
MAX_SCALE = 16.0


@dataclass(frozen=True)
class ScalePair:
    d_h: float
    d_w: float

    def __post_init__(self):
        for v in (self.d_h, self.d_w):
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"invalid scale ({self.d_h}, {self.d_w})")

    def as_tuple(self):
        return (float(self.d_h), float(self.d_w))


@dataclass
class ConvParams:
    weight: np.ndarray  # (C_out, C_in, k_h, k_w)
    bias: Optional[np.ndarray] = None
    stride: tuple = (1, 1)

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 4:
            raise ValueError("conv weight must be 4-D (C_out, C_in, k_h, k_w)")
        kh, kw = self.weight.shape[2:]
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel sizes must be odd and >= 1, got {kh}x{kw}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError("bias length must equal C_out")
        self.stride = tuple(int(s) for s in self.stride)
        if len(self.stride) != 2 or min(self.stride) < 1:
            raise ValueError("stride must be a positive integer pair")

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]


class FracConvGrads(NamedTuple):
    grad_x: np.ndarray
    grad_weight: np.ndarray
    grad_bias: Optional[np.ndarray]
    grad_scale: np.ndarray  # (2,) for a shared ScalePair, (N, 2) for per-sample scales


def tap_grid(kh, kw):
    """Relative tap indices in row-major kernel order, as two int arrays."""
    ih = np.repeat(np.arange(kh) - (kh - 1) // 2, kw)
    iw = np.tile(np.arange(kw) - (kw - 1) // 2, kh)
    return ih, iw


def output_size(in_hw, stride):
    return tuple(-(-n // s) for n, s in zip(in_hw, stride))


def bilinear_sample(fmap, h, w):
    """Bilinearly interpolate a 2-D map at real coordinates ``(h, w)``.

    Neighbours outside the map contribute zero.
    """
    fmap = np.asarray(fmap)
    rows, cols = fmap.shape
    h0, w0 = math.floor(h), math.floor(w)
    total = 0.0
    for hs in (h0, h0 + 1):
        lam_h = max(0.0, 1.0 - abs(hs - h))
        if lam_h == 0.0 or not 0 <= hs < rows:
            continue
        for ws in (w0, w0 + 1):
            lam_w = max(0.0, 1.0 - abs(ws - w))
            if lam_w == 0.0 or not 0 <= ws < cols:
                continue
            total += lam_h * lam_w * float(fmap[hs, ws])
    return total


def _check_input(x, p):
    check_tensor(x)
    if x.shape[1] != p.c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[1]} channels, weight expects {p.c_in}")


def _scale_matrix(s, n):
    """Per-sample (N, 2) float64 scales plus a mask of entries left unclamped."""
    if isinstance(s, ScalePair):
        raw = np.tile(np.array(s.as_tuple()), (n, 1))
    else:
        raw = np.asarray(s, dtype=np.float64)
        if raw.shape == (2,):
            raw = np.tile(raw, (n, 1))
        if raw.shape != (n, 2):
            raise ValueError(f"scales must be a pair or an (N, 2) array, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise ValueError("invalid scale")
    clamped = np.clip(raw, MIN_SCALE, MAX_SCALE)
    return clamped, clamped == raw


def _tap_offsets(scales, kh, kw):
    ih, iw = tap_grid(kh, kw)
    return scales[:, :1] * ih[None, :], scales[:, 1:] * iw[None, :], ih, iw


def columns_matmul(cols, weight, bias):
    """Contract (N, C, K, Ho, Wo) columns with a (C_out, C, kh, kw) weight."""
    n, c, k, ho, wo = cols.shape
    w2 = weight.reshape(weight.shape[0], c * k)
    y = np.matmul(w2, cols.reshape(n, c * k, ho * wo))
    if bias is not None:
        y += bias[:, None]
    return y.reshape(n, weight.shape[0], ho, wo)


def columns_matmul_backward(cols, weight, grad_out, with_bias):
    """Return (grad_cols, grad_weight, grad_bias) of :func:`columns_matmul`."""
    n, c, k, ho, wo = cols.shape
    c_out = weight.shape[0]
    g2 = grad_out.reshape(n, c_out, ho * wo)
    c2 = cols.reshape(n, c * k, ho * wo)
    # Per-sample GEMMs, cross-sample accumulation in float64.
    gw = np.matmul(g2, c2.transpose(0, 2, 1)).sum(axis=0, dtype=np.float64)
    gw = gw.reshape(weight.shape).astype(weight.dtype)
    gb = g2.sum(axis=(0, 2), dtype=np.float64).astype(weight.dtype) if with_bias else None
    gcols = np.matmul(weight.reshape(c_out, c * k).T, g2).reshape(cols.shape)
    return gcols, gw, gb


def frac_columns(x, p, s):
    """Sampled input columns for ``frac_conv2d`` (reused by the backward pass)."""
    _check_input(x, p)
    scales, _ = _scale_matrix(s, x.shape[0])
    offs_h, offs_w, _, _ = _tap_offsets(scales, *p.kernel)
    out_hw = output_size(x.shape[2:], p.stride)
    return kernels.bilinear_columns(x, offs_h, offs_w, p.stride, out_hw)


def frac_conv2d(x, p, s):
    """Convolve ``x`` with taps spread by the (possibly per-sample) scale ``s``.

    ``s`` is a :class:`ScalePair`, a pair, or an (N, 2) array of per-sample
    scales. Stride-1 output keeps the input's spatial size; stride ``s``
    gives ``ceil(H / s)``. Scales are clamped to [0.1, 16].
    """
    cols = frac_columns(x, p, s)
    return columns_matmul(cols, p.weight.astype(x.dtype, copy=False), p.bias)


def frac_conv2d_backward(x, p, s, grad_out, cols=None):
    """Exact reverse-mode gradients of :func:`frac_conv2d`.

    The scale gradient uses the floor-based linear piece of the bilinear
    weights, i.e. the right derivative at integral sample coordinates.
    Clamped scales receive zero gradient.
    """
    _check_input(x, p)
    n = x.shape[0]
    out_hw = output_size(x.shape[2:], p.stride)
    if grad_out.shape != (n, p.c_out) + out_hw:
        raise ValueError(f"grad_out shape {grad_out.shape} does not match output {(n, p.c_out) + out_hw}")
    scales, free = _scale_matrix(s, n)
    offs_h, offs_w, ih, iw = _tap_offsets(scales, *p.kernel)
    if cols is None:
        cols = kernels.bilinear_columns(x, offs_h, offs_w, p.stride, out_hw)
    weight = p.weight.astype(x.dtype, copy=False)
    gcols, gw, gb = columns_matmul_backward(cols, weight, grad_out.astype(x.dtype, copy=False),
                                            p.bias is not None)
    gx, g_oh, g_ow = kernels.bilinear_columns_adjoint(x, gcols, offs_h, offs_w, p.stride)
    g_scale = np.stack([g_oh @ ih, g_ow @ iw], axis=1) * free
    if isinstance(s, ScalePair) or np.shape(s) == (2,):
        g_scale = g_scale.sum(axis=0)
    return FracConvGrads(gx, gw, gb, g_scale)


def _dilation_pair(dilation):
    d = tuple(int(v) for v in dilation)
    if len(d) != 2 or min(d) < 1 or tuple(dilation) != d:
        raise ValueError(f"dilation must be a positive integer pair, got {dilation}")
    return d


def dilated_columns(x, p, dilation):
    _check_input(x, p)
    dh, dw = _dilation_pair(dilation)
    ih, iw = tap_grid(*p.kernel)
    out_hw = output_size(x.shape[2:], p.stride)
    return kernels.dilated_columns(x, ih * dh, iw * dw, p.stride, out_hw)


def branch_conv2d(x, branches):
    """Stride-1 dilated convs sharing one input, outputs concatenated on channels.

    ``branches`` is a sequence of ``(ConvParams, dilation)``. The input is
    padded once, in channels-last layout, so every kernel tap reads a
    contiguous window and becomes one accumulating GEMM; there is no
    per-branch column buffer.
    """
    x = check_tensor(x)
    n, c, h, w = x.shape
    specs = []
    for p, dilation in branches:
        _check_input(x, p)
        if p.stride != (1, 1):
            raise ValueError("branch_conv2d needs stride 1")
        specs.append((p, _dilation_pair(dilation)))
    ph = max((p.kernel[0] - 1) // 2 * d[0] for p, d in specs)
    pw = max((p.kernel[1] - 1) // 2 * d[1] for p, d in specs)
    wp = w + 2 * pw
    # one spare row so the last tap's window stays in bounds
    xp = np.zeros((n, h + 2 * ph + 1, wp, c), x.dtype)
    xp[:, ph:ph + h, pw:pw + w] = x.transpose(0, 2, 3, 1)
    xf = xp.reshape(n, -1, c)
    span = h * wp
    gemm = get_blas_funcs("gemm", (xf,))
    out = np.empty((n, sum(p.c_out for p, _ in specs), h, w), x.dtype)
    lo = 0
    for p, (dh, dw) in specs:
        ih, iw = tap_grid(*p.kernel)
        starts = (ih * dh + ph) * wp + iw * dw + pw
        taps = [np.asfortranarray(t, dtype=x.dtype)
                for t in p.weight.reshape(p.c_out, c, -1).transpose(2, 0, 1)]
        hi = lo + p.c_out
        for s in range(n):
            acc = np.zeros((p.c_out, span), x.dtype, order="F")
            for t, st in zip(taps, starts):
                acc = gemm(1.0, t, xf[s, st:st + span].T, beta=1.0, c=acc, overwrite_c=True)
            out[s, lo:hi] = acc.T.reshape(h, wp, p.c_out)[:, :w].transpose(2, 0, 1)
        if p.bias is not None:
            out[:, lo:hi] += p.bias.astype(x.dtype)[:, None, None]
        lo = hi
    return out


def integer_dilated_conv2d(x, p, dilation=(1, 1)):
    """Standard dilated convolution, zero padded so stride 1 preserves H x W."""
    if p.stride == (1, 1):
        return branch_conv2d(x, [(p, dilation)])
    cols = dilated_columns(x, p, dilation)
    return columns_matmul(cols, p.weight.astype(x.dtype, copy=False), p.bias)


def integer_dilated_conv2d_backward(x, p, dilation, grad_out, cols=None):
    """Return (grad_x, grad_weight, grad_bias) of :func:`integer_dilated_conv2d`."""
    if cols is None:
        cols = dilated_columns(x, p, dilation)
    if grad_out.shape != (x.shape[0], p.c_out) + cols.shape[-2:]:
        raise ValueError("grad_out shape does not match the convolution output")
    dh, dw = _dilation_pair(dilation)
    ih, iw = tap_grid(*p.kernel)
    weight = p.weight.astype(x.dtype, copy=False)
    gcols, gw, gb = columns_matmul_backward(cols, weight, grad_out.astype(x.dtype, copy=False),
                                            p.bias is not None)
    gx = kernels.dilated_columns_adjoint(gcols, ih * dh, iw * dw, p.stride, x.shape[2:])
    return gx, gw, gb
