"""Structured tensor primitives: convolution, normalization, resampling,
token gather/scatter.

Convolution is cross-correlation in the CNN convention, implemented with
strided im2col views plus one BLAS matmul (grouped and depthwise paths are
specialized). Reflect padding follows numpy's multi-reflection semantics so
that kernels wider than the map (deep pyramid levels on tiny grids) remain
well defined.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _fastconv, opcount
from .tensor import DiffTensor, ShapeError, _make

__all__ = [
    "conv2d",
    "layer_norm",
    "avg_pool_same",
    "upsample_nearest2x",
    "depth_to_space",
    "space_to_depth",
    "gather_rows",
    "scatter_rows",
    "take_tokens",
    "argsort_stable",
    "reflect_index",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source index of each position of a reflect-padded length-n axis."""
    return np.pad(np.arange(n), pad, mode="reflect")


def _scatter_matrix(idx: np.ndarray, n: int, dtype) -> np.ndarray:
    s = np.zeros((idx.size, n), dtype=dtype)
    s[np.arange(idx.size), idx] = 1.0
    return s


def _pad_input(x: np.ndarray, ph: int, pw: int, mode: str):
    """Pad H/W axes; returns (padded, unpad_fn) where unpad_fn is the adjoint."""
    if ph == 0 and pw == 0:
        return x, lambda g: g
    B, C, H, W = x.shape
    if mode == "zero":
        xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=x.dtype)
        xp[:, :, ph : ph + H, pw : pw + W] = x

        def unpad(g):
            return g[:, :, ph : ph + H, pw : pw + W]

        return xp, unpad
    if mode == "reflect":
        ih = reflect_index(H, ph)
        iw = reflect_index(W, pw)
        xp = x[:, :, ih][:, :, :, iw]
        sh = _scatter_matrix(ih, H, x.dtype)
        sw = _scatter_matrix(iw, W, x.dtype)

        def unpad(g):
            # adjoint of the gather: accumulate padded positions onto sources
            g = np.matmul(g, sw)  # reduce last axis Wp -> W
            g = np.matmul(g.transpose(0, 1, 3, 2), sh).transpose(0, 1, 3, 2)
            return g

        return xp, unpad
    raise ValueError(f"unknown padding mode {mode!r} (expected 'zero' or 'reflect')")


def _patches(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, dh: int, dw: int):
    B, C, Hp, Wp = xp.shape
    ho = (Hp - dh * (kh - 1) - 1) // sh + 1
    wo = (Wp - dw * (kw - 1) - 1) // sw + 1
    stB, stC, stH, stW = xp.strides
    return as_strided(
        xp,
        shape=(B, C, kh, kw, ho, wo),
        strides=(stB, stC, dh * stH, dw * stW, sh * stH, sw * stW),
        writeable=False,
    ), ho, wo


def _col2im(g_patches: np.ndarray, shape, kh, kw, sh, sw, dh, dw) -> np.ndarray:
    """Adjoint of patch extraction: scatter-add (B,C,kh,kw,Ho,Wo) back."""
    B, C, Hp, Wp = shape
    ho, wo = g_patches.shape[-2:]
    gx = np.zeros(shape, dtype=g_patches.dtype)
    for i in range(kh):
        hs = slice(i * dh, i * dh + sh * ho, sh)
        for j in range(kw):
            ws = slice(j * dw, j * dw + sw * wo, sw)
            gx[:, :, hs, ws] += g_patches[:, :, i, j]
    return gx


def conv2d(
    x: DiffTensor,
    weight: DiffTensor,
    bias: DiffTensor | None = None,
    stride=1,
    padding=0,
    pad_mode: str = "reflect",
    dilation=1,
    groups: int = 1,
) -> DiffTensor:
    """2-D convolution (cross-correlation) over (B, C, H, W).

    ``padding`` is the per-axis pad amount (int or pair); ``pad_mode`` selects
    zero or reflect semantics. Groups must divide the input channels; kernel
    extents must be odd. Differentiable w.r.t. input, weight and bias.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4 (B,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be rank 4 (C_out,C_in/g,kh,kw), got {weight.shape}")
    B, C, H, W = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got ({kh},{kw})")
    if C % groups != 0:
        raise ShapeError(f"input channels {C} not divisible by groups {groups}")
    if c_out % groups != 0:
        raise ShapeError(f"output channels {c_out} not divisible by groups {groups}")
    if c_in_g != C // groups:
        raise ShapeError(
            f"weight channel dim {c_in_g} does not match input channels per group {C // groups}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match output channels ({c_out},)")
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    ph, pw = _pair(padding)

    xp, unpad = _pad_input(x.data, ph, pw, pad_mode)
    pshape = xp.shape
    need_w = weight.requires_grad
    wdat = weight.data

    depthwise = groups == C and c_out == C and groups > 1
    if depthwise and _fastconv.HAVE_NUMBA:
        Hp, Wp = xp.shape[2], xp.shape[3]
        ho = (Hp - dh * (kh - 1) - 1) // sh + 1
        wo = (Wp - dw * (kw - 1) - 1) // sw + 1
        xp = np.ascontiguousarray(xp)
        wtap = np.ascontiguousarray(wdat[:, 0])
        out = np.empty((B, C, ho, wo), dtype=xp.dtype)
        _fastconv.dw_fwd(xp, wtap, out, sh, sw, dh, dw)
        opcount.add_macs(B * c_out * kh * kw * ho * wo)

        def backward_core(g):
            g = np.ascontiguousarray(g)
            gw = None
            if need_w:
                gw = np.empty((C, kh, kw), dtype=g.dtype)
                _fastconv.dw_gw(xp, g, gw, sh, sw, dh, dw)
                gw = gw[:, None]
            gxp = np.zeros(pshape, dtype=g.dtype)
            _fastconv.dw_gx(g, wtap, gxp, sh, sw, dh, dw)
            return unpad(gxp), gw

    elif depthwise:
        Hp, Wp = xp.shape[2], xp.shape[3]
        ho = (Hp - dh * (kh - 1) - 1) // sh + 1
        wo = (Wp - dw * (kw - 1) - 1) // sw + 1
        taps = [
            (i, j, slice(i * dh, i * dh + sh * ho, sh), slice(j * dw, j * dw + sw * wo, sw))
            for i in range(kh)
            for j in range(kw)
        ]
        # per-tap fused multiply-add beats a generic einsum on strided views
        out = np.zeros((B, C, ho, wo), dtype=xp.dtype)
        for i, j, hs, ws in taps:
            out += xp[:, :, hs, ws] * wdat[None, :, 0, i, j, None, None]
        opcount.add_macs(B * c_out * kh * kw * ho * wo)

        def backward_core(g):
            gw = None
            if need_w:
                gw = np.empty((C, 1, kh, kw), dtype=g.dtype)
                for i, j, hs, ws in taps:
                    gw[:, 0, i, j] = (xp[:, :, hs, ws] * g).sum(axis=(0, 2, 3))
            gxp = np.zeros(pshape, dtype=g.dtype)
            for i, j, hs, ws in taps:
                gxp[:, :, hs, ws] += g * wdat[None, :, 0, i, j, None, None]
            return unpad(gxp), gw

    elif groups == 1 and kh == 1 and kw == 1 and sh == 1 and sw == 1:
        Hp, Wp = xp.shape[2], xp.shape[3]
        cols = xp.reshape(B, C, Hp * Wp)
        wmat = wdat.reshape(c_out, C)
        out = np.matmul(wmat, cols).reshape(B, c_out, Hp, Wp)
        opcount.add_macs(B * c_out * C * Hp * Wp)

        def backward_core(g):
            gf = g.reshape(B, c_out, Hp * Wp)
            gw = None
            if need_w:
                gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wdat.shape)
            gx = unpad(np.matmul(wmat.T, gf).reshape(B, C, Hp, Wp))
            return gx, gw

    elif groups == 1:
        patches, ho, wo = _patches(xp, kh, kw, sh, sw, dh, dw)
        cols = patches.reshape(B, C * kh * kw, ho * wo)
        wmat = wdat.reshape(c_out, -1)
        out = np.matmul(wmat, cols).reshape(B, c_out, ho, wo)
        opcount.add_macs(B * c_out * C * kh * kw * ho * wo)

        def backward_core(g):
            gf = g.reshape(B, c_out, ho * wo)
            gw = None
            if need_w:
                gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wdat.shape)
            gcols = np.matmul(wmat.T, gf).reshape(B, C, kh, kw, ho, wo)
            gx = unpad(_col2im(gcols, pshape, kh, kw, sh, sw, dh, dw))
            return gx, gw

    else:
        cg, cog = C // groups, c_out // groups
        patches, ho, wo = _patches(xp, kh, kw, sh, sw, dh, dw)
        outs = []
        cols_list = []
        for gi in range(groups):
            cols = patches[:, gi * cg : (gi + 1) * cg].reshape(B, cg * kh * kw, ho * wo)
            wmat = wdat[gi * cog : (gi + 1) * cog].reshape(cog, -1)
            outs.append(np.matmul(wmat, cols))
            cols_list.append(cols)
        out = np.concatenate(outs, axis=1).reshape(B, c_out, ho, wo)
        opcount.add_macs(B * c_out * cg * kh * kw * ho * wo)

        def backward_core(g):
            gf = g.reshape(B, c_out, ho * wo)
            gw = np.zeros_like(wdat) if need_w else None
            gp = np.empty((B, C, kh, kw, ho, wo), dtype=g.dtype)
            for gi in range(groups):
                go = gf[:, gi * cog : (gi + 1) * cog]
                wmat = wdat[gi * cog : (gi + 1) * cog].reshape(cog, -1)
                if need_w:
                    gw[gi * cog : (gi + 1) * cog] = np.einsum(
                        "bol,bkl->ok", go, cols_list[gi], optimize=True
                    ).reshape(cog, cg, kh, kw)
                gp[:, gi * cg : (gi + 1) * cg] = np.matmul(wmat.T, go).reshape(
                    B, cg, kh, kw, ho, wo
                )
            gx = unpad(_col2im(gp, pshape, kh, kw, sh, sw, dh, dw))
            return gx, gw

    if bias is not None:
        out = out + bias.data[None, :, None, None]

        def backward(g):
            gx, gw = backward_core(g)
            return gx, gw, g.sum(axis=(0, 2, 3))

        return _make(out, (x, weight, bias), backward)

    def backward(g):
        gx, gw = backward_core(g)
        return gx, gw

    return _make(out, (x, weight), backward)


def layer_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, eps: float = 1e-6) -> DiffTensor:
    """Channel-wise normalization of (B, C, H, W): at every (b, h, w) position
    the C-vector is standardized, then scaled and shifted per channel."""
    if x.ndim != 4:
        raise ShapeError(f"layer_norm expects rank-4 input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match channels ({C},)"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gdat = gamma.data[None, :, None, None]
    out = gdat * xhat + beta.data[None, :, None, None]

    def backward(g):
        gxh = g * gdat
        # d/dx of (x - mean)/sqrt(var + eps) over the channel axis
        m1 = gxh.mean(axis=1, keepdims=True)
        m2 = (gxh * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gxh - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward)


def avg_pool_same(x: DiffTensor, k: int = 3) -> DiffTensor:
    """Stride-1 average pooling with reflect padding (shape preserving)."""
    C = x.shape[1]
    kern = DiffTensor(np.full((C, 1, k, k), 1.0 / (k * k), dtype=x.dtype))
    return conv2d(x, kern, stride=1, padding=(k - 1) // 2, pad_mode="reflect", groups=C)


def upsample_nearest2x(x: DiffTensor) -> DiffTensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample expects rank-4 input, got {x.shape}")
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = x.shape

    def backward(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _make(data, (x,), backward)


def depth_to_space(x: DiffTensor, r: int = 2) -> DiffTensor:
    B, C, H, W = x.shape
    if C % (r * r) != 0:
        raise ShapeError(f"channels {C} not divisible by r^2 = {r * r}")
    c = C // (r * r)
    data = (
        x.data.reshape(B, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, c, H * r, W * r)
    )

    def backward(g):
        return (
            g.reshape(B, c, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C, H, W),
        )

    return _make(data, (x,), backward)


def space_to_depth(x: DiffTensor, r: int = 2) -> DiffTensor:
    B, C, H, W = x.shape
    if H % r != 0 or W % r != 0:
        raise ShapeError(f"spatial extents ({H},{W}) not divisible by r = {r}")
    h, w = H // r, W // r
    data = x.data.reshape(B, C, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, h, w)

    def backward(g):
        return (
            g.reshape(B, C, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H, W),
        )

    return _make(data, (x,), backward)


def gather_rows(x: DiffTensor, idx: np.ndarray) -> DiffTensor:
    """Select rows of a (J, C) matrix by index; gradient scatter-adds back.

    The index array is a fixed constant of the forward pass (sorting is not
    differentiated); only the gathered values carry gradient.
    """
    idx = np.asarray(idx)
    data = x.data[idx]
    J = x.shape[0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(data, (x,), backward)


def scatter_rows(x: DiffTensor, idx: np.ndarray, out_rows: int) -> DiffTensor:
    """Place row i of x at position idx[i] of a zero-initialized output."""
    idx = np.asarray(idx)
    data = np.zeros((out_rows,) + x.shape[1:], dtype=x.dtype)
    np.add.at(data, idx, x.data)

    def backward(g):
        return (g[idx],)

    return _make(data, (x,), backward)


def take_tokens(x: DiffTensor, idx: np.ndarray) -> DiffTensor:
    """Batched row gather: x (B, J, C), idx (B, K) -> (B, K, C)."""
    idx = np.asarray(idx)
    B = x.shape[0]
    batch_ix = np.arange(B)[:, None]
    data = x.data[batch_ix, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch_ix, idx), g)
        return (gx,)

    return _make(data, (x,), backward)


def argsort_stable(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable ascending argsort (ties keep original order)."""
    return np.argsort(values, axis=axis, kind="stable")
