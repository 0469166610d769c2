"""Feed-forward networks: the two-path multi-scale variant and the plain
two-layer fallback used by the ablation harness.

The multi-scale variant expands channels, runs parallel 3x3 and 5x5 depthwise
paths, cross-feeds their concatenations through a second depthwise stage, and
fuses back down. Concatenation order is [3x3-path, 5x5-path] into the second
3x3 stage and [5x5-path, 3x3-path] into the second 5x5 stage; tests pin this
ordering with asymmetric probes.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ops import conv2d, layer_norm
from .params import ones_param, uniform_fanin, zeros_param
from .rng import Rng
from .tensor import DiffTensor, add, concat, relu

__all__ = [
    "SdfnWeights",
    "PlainFfnWeights",
    "init_sdfn_weights",
    "init_plain_ffn_weights",
    "sdfn_forward",
    "plain_ffn_forward",
]


@dataclass
class SdfnWeights:
    ln_gamma: DiffTensor  # (C,)
    ln_beta: DiffTensor
    expand: DiffTensor  # (rC, C, 1, 1)
    expand_bias: DiffTensor
    dw3_a: DiffTensor  # (rC, 1, 3, 3)
    dw5_a: DiffTensor  # (rC, 1, 5, 5)
    dw3_b: DiffTensor  # (2rC, 1, 3, 3)
    dw5_b: DiffTensor  # (2rC, 1, 5, 5)
    fuse: DiffTensor  # (C, 4rC, 1, 1)
    fuse_bias: DiffTensor
    ratio: int


def init_sdfn_weights(rng: Rng, channels: int, ratio: int = 2) -> SdfnWeights:
    if ratio < 1:
        raise ValueError(f"expansion ratio must be >= 1, got {ratio}")
    rc = ratio * channels
    return SdfnWeights(
        ln_gamma=ones_param((channels,)),
        ln_beta=zeros_param((channels,)),
        expand=uniform_fanin(rng.substream("expand"), (rc, channels, 1, 1), channels),
        expand_bias=zeros_param((rc,)),
        dw3_a=uniform_fanin(rng.substream("dw3a"), (rc, 1, 3, 3), 9),
        dw5_a=uniform_fanin(rng.substream("dw5a"), (rc, 1, 5, 5), 25),
        dw3_b=uniform_fanin(rng.substream("dw3b"), (2 * rc, 1, 3, 3), 9),
        dw5_b=uniform_fanin(rng.substream("dw5b"), (2 * rc, 1, 5, 5), 25),
        fuse=uniform_fanin(rng.substream("fuse"), (channels, 4 * rc, 1, 1), 4 * rc),
        fuse_bias=zeros_param((channels,)),
        ratio=ratio,
    )


def _dw(x: DiffTensor, w: DiffTensor) -> DiffTensor:
    k = w.shape[2]
    return conv2d(x, w, padding=(k - 1) // 2, pad_mode="reflect", groups=x.shape[1])


def sdfn_forward(f_s: DiffTensor, w: SdfnWeights) -> DiffTensor:
    """Normalize, expand, two cross-fed depthwise stages, fuse, residual add.

    With the fuse kernel and bias zeroed the output equals the input exactly.
    """
    fh = conv2d(layer_norm(f_s, w.ln_gamma, w.ln_beta), w.expand, bias=w.expand_bias)
    p1 = relu(_dw(fh, w.dw3_a))
    s1 = relu(_dw(fh, w.dw5_a))
    p2 = relu(_dw(concat([p1, s1], axis=1), w.dw3_b))
    s2 = relu(_dw(concat([s1, p1], axis=1), w.dw5_b))
    out = conv2d(concat([p2, s2], axis=1), w.fuse, bias=w.fuse_bias)
    return add(out, f_s)


@dataclass
class PlainFfnWeights:
    ln_gamma: DiffTensor
    ln_beta: DiffTensor
    w1: DiffTensor  # (rC, C, 1, 1)
    b1: DiffTensor
    w2: DiffTensor  # (C, rC, 1, 1)
    b2: DiffTensor


def init_plain_ffn_weights(rng: Rng, channels: int, ratio: int = 2) -> PlainFfnWeights:
    rc = ratio * channels
    return PlainFfnWeights(
        ln_gamma=ones_param((channels,)),
        ln_beta=zeros_param((channels,)),
        w1=uniform_fanin(rng.substream("w1"), (rc, channels, 1, 1), channels),
        b1=zeros_param((rc,)),
        w2=uniform_fanin(rng.substream("w2"), (channels, rc, 1, 1), rc),
        b2=zeros_param((channels,)),
    )


def plain_ffn_forward(f_s: DiffTensor, w: PlainFfnWeights) -> DiffTensor:
    """Conventional point-wise feed-forward with the same expansion ratio."""
    h = relu(conv2d(layer_norm(f_s, w.ln_gamma, w.ln_beta), w.w1, bias=w.b1))
    return add(conv2d(h, w.w2, bias=w.b2), f_s)
