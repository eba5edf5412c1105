"""Numba twins of :mod:`fracdil.kernels_numpy` (same signatures and results)."""
import math

import numpy as np

from ._accel import njit


@njit
def _valid_range(off, stride, length, count):
    """``[lo, hi)`` of output positions ``o`` with ``0 <= o * stride + off < length``."""
    lo = 0 if off >= 0 else (-off + stride - 1) // stride
    hi = (length - off + stride - 1) // stride if length > off else 0
    return min(lo, count), max(min(hi, count), min(lo, count))


@njit
def _bilinear_point(x, s, ch, r, q, w00, w01, w10, w11):
    h, w = x.shape[2], x.shape[3]
    v = 0.0
    if 0 <= r < h:
        if 0 <= q < w:
            v += w00 * x[s, ch, r, q]
        if 0 <= q + 1 < w:
            v += w01 * x[s, ch, r, q + 1]
    if 0 <= r + 1 < h:
        if 0 <= q < w:
            v += w10 * x[s, ch, r + 1, q]
        if 0 <= q + 1 < w:
            v += w11 * x[s, ch, r + 1, q + 1]
    return v


@njit
def _bilinear_fill(x, offs_h, offs_w, sh, sw, cols):
    n, c, h, w = x.shape
    k = offs_h.shape[1]
    ho, wo = cols.shape[3], cols.shape[4]
    for s in range(n):
        for t in range(k):
            fh = math.floor(offs_h[s, t])
            fw = math.floor(offs_w[s, t])
            ah = offs_h[s, t] - fh
            aw = offs_w[s, t] - fw
            w00 = (1.0 - ah) * (1.0 - aw)
            w01 = (1.0 - ah) * aw
            w10 = ah * (1.0 - aw)
            w11 = ah * aw
            # q and q + 1 both inside [0, w) for ow in [lo, hi)
            lo, hi = _valid_range(fw, sw, w - 1, wo)
            for ch in range(c):
                for oh in range(ho):
                    r = oh * sh + fh
                    if 0 <= r and r + 1 < h and sw == 1:
                        for ow in range(lo, hi):
                            cols[s, ch, t, oh, ow] = (w00 * x[s, ch, r, ow + fw]
                                                      + w01 * x[s, ch, r, ow + fw + 1]
                                                      + w10 * x[s, ch, r + 1, ow + fw]
                                                      + w11 * x[s, ch, r + 1, ow + fw + 1])
                        for ow in range(lo):
                            cols[s, ch, t, oh, ow] = _bilinear_point(x, s, ch, r, ow + fw,
                                                                     w00, w01, w10, w11)
                        for ow in range(hi, wo):
                            cols[s, ch, t, oh, ow] = _bilinear_point(x, s, ch, r, ow + fw,
                                                                     w00, w01, w10, w11)
                    elif 0 <= r and r + 1 < h:
                        for ow in range(lo, hi):
                            q = ow * sw + fw
                            cols[s, ch, t, oh, ow] = (w00 * x[s, ch, r, q] + w01 * x[s, ch, r, q + 1]
                                                      + w10 * x[s, ch, r + 1, q]
                                                      + w11 * x[s, ch, r + 1, q + 1])
                        for ow in range(lo):
                            cols[s, ch, t, oh, ow] = _bilinear_point(x, s, ch, r, ow * sw + fw,
                                                                     w00, w01, w10, w11)
                        for ow in range(hi, wo):
                            cols[s, ch, t, oh, ow] = _bilinear_point(x, s, ch, r, ow * sw + fw,
                                                                     w00, w01, w10, w11)
                    else:
                        for ow in range(wo):
                            cols[s, ch, t, oh, ow] = _bilinear_point(x, s, ch, r, ow * sw + fw,
                                                                     w00, w01, w10, w11)


def bilinear_columns(x, offs_h, offs_w, stride, out_hw):
    n, c = x.shape[:2]
    cols = np.empty((n, c, offs_h.shape[1]) + tuple(out_hw), dtype=x.dtype)
    _bilinear_fill(np.ascontiguousarray(x), offs_h, offs_w, stride[0], stride[1], cols)
    return cols


@njit
def _bilinear_adjoint(x, g, offs_h, offs_w, sh, sw, gx, g_oh, g_ow):
    n, c, h, w = x.shape
    k = offs_h.shape[1]
    ho, wo = g.shape[3], g.shape[4]
    for s in range(n):
        for t in range(k):
            fh = math.floor(offs_h[s, t])
            fw = math.floor(offs_w[s, t])
            ah = offs_h[s, t] - fh
            aw = offs_w[s, t] - fw
            acc_h = 0.0
            acc_w = 0.0
            for ch in range(c):
                for oh in range(ho):
                    r = oh * sh + fh
                    r_ok0 = 0 <= r < h
                    r_ok1 = 0 <= r + 1 < h
                    for ow in range(wo):
                        gv = np.float64(g[s, ch, t, oh, ow])
                        if gv == 0.0:
                            continue
                        q = ow * sw + fw
                        q_ok0 = 0 <= q < w
                        q_ok1 = 0 <= q + 1 < w
                        x00 = x[s, ch, r, q] if (r_ok0 and q_ok0) else 0.0
                        x01 = x[s, ch, r, q + 1] if (r_ok0 and q_ok1) else 0.0
                        x10 = x[s, ch, r + 1, q] if (r_ok1 and q_ok0) else 0.0
                        x11 = x[s, ch, r + 1, q + 1] if (r_ok1 and q_ok1) else 0.0
                        acc_h += gv * ((1.0 - aw) * (x10 - x00) + aw * (x11 - x01))
                        acc_w += gv * ((1.0 - ah) * (x01 - x00) + ah * (x11 - x10))
                        if r_ok0 and q_ok0:
                            gx[s, ch, r, q] += (1.0 - ah) * (1.0 - aw) * gv
                        if r_ok0 and q_ok1:
                            gx[s, ch, r, q + 1] += (1.0 - ah) * aw * gv
                        if r_ok1 and q_ok0:
                            gx[s, ch, r + 1, q] += ah * (1.0 - aw) * gv
                        if r_ok1 and q_ok1:
                            gx[s, ch, r + 1, q + 1] += ah * aw * gv
            g_oh[s, t] = acc_h
            g_ow[s, t] = acc_w


def bilinear_columns_adjoint(x, gcols, offs_h, offs_w, stride):
    n, k = offs_h.shape
    gx = np.zeros(x.shape, dtype=np.float64)
    g_oh = np.zeros((n, k))
    g_ow = np.zeros((n, k))
    _bilinear_adjoint(np.ascontiguousarray(x), np.ascontiguousarray(gcols), offs_h, offs_w,
                      stride[0], stride[1], gx, g_oh, g_ow)
    return gx.astype(x.dtype), g_oh, g_ow


@njit
def _dilated_fill(x, taps_h, taps_w, sh, sw, cols):
    n, c, h, w = x.shape
    k = taps_h.shape[0]
    ho, wo = cols.shape[3], cols.shape[4]
    for s in range(n):
        for ch in range(c):
            for t in range(k):
                lo, hi = _valid_range(taps_w[t], sw, w, wo)
                for oh in range(ho):
                    r = oh * sh + taps_h[t]
                    if r < 0 or r >= h:
                        for ow in range(wo):
                            cols[s, ch, t, oh, ow] = 0.0
                        continue
                    for ow in range(lo):
                        cols[s, ch, t, oh, ow] = 0.0
                    for ow in range(lo, hi):
                        cols[s, ch, t, oh, ow] = x[s, ch, r, ow * sw + taps_w[t]]
                    for ow in range(hi, wo):
                        cols[s, ch, t, oh, ow] = 0.0


def dilated_columns(x, taps_h, taps_w, stride, out_hw):
    n, c = x.shape[:2]
    cols = np.empty((n, c, taps_h.shape[0]) + tuple(out_hw), dtype=x.dtype)
    _dilated_fill(np.ascontiguousarray(x), taps_h.astype(np.int64), taps_w.astype(np.int64),
                  stride[0], stride[1], cols)
    return cols


@njit
def _dilated_adjoint(g, taps_h, taps_w, sh, sw, gx):
    n, c, k, ho, wo = g.shape
    h, w = gx.shape[2], gx.shape[3]
    for s in range(n):
        for ch in range(c):
            for t in range(k):
                for oh in range(ho):
                    r = oh * sh + taps_h[t]
                    if r < 0 or r >= h:
                        continue
                    for ow in range(wo):
                        q = ow * sw + taps_w[t]
                        if 0 <= q < w:
                            gx[s, ch, r, q] += g[s, ch, t, oh, ow]


def dilated_columns_adjoint(gcols, taps_h, taps_w, stride, in_hw):
    n, c = gcols.shape[:2]
    gx = np.zeros((n, c) + tuple(in_hw), dtype=np.float64)
    _dilated_adjoint(np.ascontiguousarray(gcols), taps_h.astype(np.int64), taps_w.astype(np.int64),
                     stride[0], stride[1], gx)
    return gx.astype(gcols.dtype)
