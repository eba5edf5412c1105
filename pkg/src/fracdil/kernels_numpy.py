"""Pure-numpy column kernels.

Every kernel works on a batch ``x`` of shape (N, C, H, W) and produces or
consumes "columns" of shape (N, C, K, Ho, Wo): one sampled copy of the input
per kernel tap ``k``. Offsets are tap displacements in input pixels (tap
index times dilation); output pixel ``(oh, ow)`` reads input position
``(oh * stride_h + off_h, ow * stride_w + off_w)``. Reads outside the image
return zero.
"""
import numpy as np


def _pad_for(offs):
    return int(np.max(np.abs(np.floor(offs)))) + 1 if offs.size else 1


def _groups(offs_h, offs_w):
    # Samples sharing one scale are sampled as a single batched slice.
    if np.all(offs_h == offs_h[:1]) and np.all(offs_w == offs_w[:1]):
        return [(slice(None), 0)]
    return [(slice(n, n + 1), n) for n in range(offs_h.shape[0])]


def _corners(off):
    f = int(np.floor(off))
    a = off - f
    return f, ((0, 1.0 - a, -1.0), (1, a, 1.0))


def bilinear_columns(x, offs_h, offs_w, stride, out_hw):
    n, c, h, w = x.shape
    k = offs_h.shape[1]
    sh, sw = stride
    ho, wo = out_hw
    ph, pw = _pad_for(offs_h), _pad_for(offs_w)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.zeros((n, c, k, ho, wo), dtype=x.dtype)
    for sel, row in _groups(offs_h, offs_w):
        for t in range(k):
            fh, hc = _corners(offs_h[row, t])
            fw, wc = _corners(offs_w[row, t])
            for da, wa, _ in hc:
                if wa == 0.0:
                    continue
                r0 = ph + fh + da
                for db, wb, _ in wc:
                    if wb == 0.0:
                        continue
                    c0 = pw + fw + db
                    patch = xp[sel, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw]
                    cols[sel, :, t] += x.dtype.type(wa * wb) * patch
    return cols


def bilinear_columns_adjoint(x, gcols, offs_h, offs_w, stride):
    """Return (grad_x, grad_offs_h, grad_offs_w).

    Offset derivatives use the floor-based linear piece, i.e. the right
    derivative in sample coordinate when the coordinate is integral.
    """
    n, c, h, w = x.shape
    k = offs_h.shape[1]
    sh, sw = stride
    ho, wo = gcols.shape[-2:]
    ph, pw = _pad_for(offs_h), _pad_for(offs_w)
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    g64 = gcols.astype(np.float64)
    gxp = np.zeros_like(xp)
    g_oh = np.zeros((n, k))
    g_ow = np.zeros((n, k))
    for sel, row in _groups(offs_h, offs_w):
        for t in range(k):
            fh, hc = _corners(offs_h[row, t])
            fw, wc = _corners(offs_w[row, t])
            g = g64[sel, :, t]
            for da, wa, sa in hc:
                r0 = ph + fh + da
                for db, wb, sb in wc:
                    c0 = pw + fw + db
                    rs = slice(r0, r0 + sh * (ho - 1) + 1, sh)
                    cs = slice(c0, c0 + sw * (wo - 1) + 1, sw)
                    dot = np.einsum("ncij,ncij->n", g, xp[sel, :, rs, cs])
                    g_oh[sel, t] += sa * wb * dot
                    g_ow[sel, t] += wa * sb * dot
                    if wa * wb != 0.0:
                        gxp[sel, :, rs, cs] += (wa * wb) * g
    gx = gxp[:, :, ph:ph + h, pw:pw + w].astype(x.dtype)
    return gx, g_oh, g_ow


def dilated_columns(x, taps_h, taps_w, stride, out_hw):
    n, c, h, w = x.shape
    k = taps_h.shape[0]
    sh, sw = stride
    ho, wo = out_hw
    ph = int(np.max(np.abs(taps_h))) if k else 0
    pw = int(np.max(np.abs(taps_w))) if k else 0
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, k, ho, wo), dtype=x.dtype)
    for t in range(k):
        r0 = ph + int(taps_h[t])
        c0 = pw + int(taps_w[t])
        cols[:, :, t] = xp[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw]
    return cols


def dilated_columns_adjoint(gcols, taps_h, taps_w, stride, in_hw):
    n, c, k, ho, wo = gcols.shape
    sh, sw = stride
    h, w = in_hw
    ph = int(np.max(np.abs(taps_h))) if k else 0
    pw = int(np.max(np.abs(taps_w))) if k else 0
    gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for t in range(k):
        r0 = ph + int(taps_h[t])
        c0 = pw + int(taps_w[t])
        gxp[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw] += gcols[:, :, t]
    return gxp[:, :, ph:ph + h, pw:pw + w].astype(gcols.dtype)
