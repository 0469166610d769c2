"""JIT-compiled inner loops for depthwise convolution.

Row-major inner loops keep the innermost dimension contiguous so LLVM can
vectorize them; parallel ranges only split independent (batch, channel) or
channel slices, so results are bitwise deterministic regardless of
scheduling. The numpy tap-loop fallback in ops.py is algebraically identical.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - soft dependency, numpy path remains
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(fn):
            return fn

        return deco

    prange = range


@njit(parallel=True, cache=True)
def dw_fwd(xp, w, out, sh, sw, dh, dw):
    b, c, hp, wp = xp.shape
    kh, kw = w.shape[1], w.shape[2]
    ho, wo = out.shape[2], out.shape[3]
    for bc in prange(b * c):
        bi = bc // c
        ci = bc % c
        if sh == 1 and sw == 1:
            for oh in range(ho):
                row = out[bi, ci, oh]
                row[:] = 0.0
                for i in range(kh):
                    src = xp[bi, ci, oh + i * dh]
                    for j in range(kw):
                        wv = w[ci, i, j]
                        off = j * dw
                        for ow in range(wo):
                            row[ow] += src[ow + off] * wv
        else:
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[bi, ci, oh * sh + i * dh, ow * sw + j * dw] * w[ci, i, j]
                    out[bi, ci, oh, ow] = acc


@njit(parallel=True, cache=True)
def dw_gx(g, w, gxp, sh, sw, dh, dw):
    b, c, ho, wo = g.shape
    kh, kw = w.shape[1], w.shape[2]
    for bc in prange(b * c):
        bi = bc // c
        ci = bc % c
        for oh in range(ho):
            grow = g[bi, ci, oh]
            for i in range(kh):
                dst = gxp[bi, ci, oh * sh + i * dh]
                for j in range(kw):
                    wv = w[ci, i, j]
                    if sw == 1:
                        off = j * dw
                        for ow in range(wo):
                            dst[ow + off] += grow[ow] * wv
                    else:
                        for ow in range(wo):
                            dst[ow * sw + j * dw] += grow[ow] * wv


@njit(parallel=True, cache=True)
def dw_gw(xp, g, gw, sh, sw, dh, dw):
    b, c, ho, wo = g.shape
    kh, kw = gw.shape[1], gw.shape[2]
    for ci in prange(c):
        for i in range(kh):
            for j in range(kw):
                acc = 0.0
                for bi in range(b):
                    for oh in range(ho):
                        grow = g[bi, ci, oh]
                        src = xp[bi, ci, oh * sh + i * dh]
                        if sw == 1:
                            off = j * dw
                            for ow in range(wo):
                                acc += src[ow + off] * grow[ow]
                        else:
                            for ow in range(wo):
                                acc += src[ow * sw + j * dw] * grow[ow]
                gw[ci, i, j] = acc