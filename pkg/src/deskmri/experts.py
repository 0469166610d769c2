"""Expert-gated convolutional refinement.

A fixed bank of eight shape-preserving convolutional experts (average pool,
separable convolutions at three kernel sizes, dilated convolutions at three
rates, and a pointwise conv) is blended per sample by coefficients computed
from the channel descriptor of the input; the blend passes a final pointwise
conv and adds back residually.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ops import avg_pool_same, conv2d
from .params import uniform_fanin, zeros_param
from .rng import Rng
from .tensor import (
    DiffTensor,
    add,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    spatial_mean,
    stack,
    sum_axis,
    transpose,
)

__all__ = [
    "HefrWeights",
    "init_hefr_weights",
    "channel_descriptor",
    "expert_coefficients",
    "hefr_forward",
    "EXPERT_NAMES",
]

EXPERT_NAMES = (
    "avg_pool3",
    "separable3",
    "separable5",
    "separable7",
    "dilated2",
    "dilated3",
    "dilated5",
    "pointwise",
)


@dataclass
class SeparableConv:
    depthwise: DiffTensor  # (C, 1, k, k)
    pointwise: DiffTensor  # (C, C, 1, 1)
    bias: DiffTensor


@dataclass
class HefrWeights:
    gate_w1: DiffTensor  # (D, C)
    gate_w2: DiffTensor  # (E, D)
    sep3: SeparableConv
    sep5: SeparableConv
    sep7: SeparableConv
    dil2: DiffTensor  # (C, C, 3, 3) dilation 2
    dil2_bias: DiffTensor
    dil3: DiffTensor
    dil3_bias: DiffTensor
    dil5: DiffTensor
    dil5_bias: DiffTensor
    pw: DiffTensor  # (C, C, 1, 1)
    pw_bias: DiffTensor
    final: DiffTensor  # (C, C, 1, 1)
    final_bias: DiffTensor
    expert_count: int
    hidden: int


def _sep(rng: Rng, channels: int, k: int) -> SeparableConv:
    return SeparableConv(
        depthwise=uniform_fanin(rng.substream("dw"), (channels, 1, k, k), k * k),
        pointwise=uniform_fanin(rng.substream("pw"), (channels, channels, 1, 1), channels),
        bias=zeros_param((channels,)),
    )


def init_hefr_weights(
    rng: Rng, channels: int, expert_count: int = 8, hidden: int = 32
) -> HefrWeights:
    if expert_count != len(EXPERT_NAMES):
        raise ValueError(f"fixed expert bank has {len(EXPERT_NAMES)} members, got {expert_count}")
    if hidden < 1:
        raise ValueError(f"gate hidden width must be >= 1, got {hidden}")

    def dil(name):
        return uniform_fanin(rng.substream(name), (channels, channels, 3, 3), channels * 9)

    return HefrWeights(
        gate_w1=uniform_fanin(rng.substream("gate1"), (hidden, channels), channels),
        gate_w2=uniform_fanin(rng.substream("gate2"), (expert_count, hidden), hidden),
        sep3=_sep(rng.substream("sep3"), channels, 3),
        sep5=_sep(rng.substream("sep5"), channels, 5),
        sep7=_sep(rng.substream("sep7"), channels, 7),
        dil2=dil("dil2"),
        dil2_bias=zeros_param((channels,)),
        dil3=dil("dil3"),
        dil3_bias=zeros_param((channels,)),
        dil5=dil("dil5"),
        dil5_bias=zeros_param((channels,)),
        pw=uniform_fanin(rng.substream("pwx"), (channels, channels, 1, 1), channels),
        pw_bias=zeros_param((channels,)),
        final=uniform_fanin(rng.substream("final"), (channels, channels, 1, 1), channels),
        final_bias=zeros_param((channels,)),
        expert_count=expert_count,
        hidden=hidden,
    )


def channel_descriptor(f_h: DiffTensor) -> DiffTensor:
    """Per-sample C-vector: spatial average of every channel."""
    return spatial_mean(f_h)


def expert_coefficients(k: DiffTensor, w: HefrWeights) -> DiffTensor:
    """softmax(W2 relu(W1 k)): a per-sample point on the expert simplex."""
    hidden = relu(matmul(k, transpose(w.gate_w1, (1, 0))))
    return softmax(matmul(hidden, transpose(w.gate_w2, (1, 0))))


def _run_experts(f_h: DiffTensor, w: HefrWeights) -> list[DiffTensor]:
    def sep(sc: SeparableConv):
        k = sc.depthwise.shape[2]
        y = conv2d(f_h, sc.depthwise, padding=(k - 1) // 2, pad_mode="reflect",
                   groups=f_h.shape[1])
        return conv2d(y, sc.pointwise, bias=sc.bias)

    def dilated(kern, bias, rate):
        return conv2d(f_h, kern, bias=bias, padding=rate, pad_mode="reflect", dilation=rate)

    return [
        avg_pool_same(f_h, 3),
        sep(w.sep3),
        sep(w.sep5),
        sep(w.sep7),
        dilated(w.dil2, w.dil2_bias, 2),
        dilated(w.dil3, w.dil3_bias, 3),
        dilated(w.dil5, w.dil5_bias, 5),
        conv2d(f_h, w.pw, bias=w.pw_bias),
    ]


def hefr_forward(f_h: DiffTensor, w: HefrWeights) -> DiffTensor:
    """Coefficient-weighted expert blend, pointwise-mixed, residual add.

    With the final kernel and bias zeroed the output equals the input exactly.
    Gradients flow through the coefficients as well as the experts.
    """
    coeffs = expert_coefficients(channel_descriptor(f_h), w)  # (B, E)
    outs = stack(_run_experts(f_h, w), axis=1)  # (B, E, C, H, W)
    b, e = coeffs.shape
    weighted = mul(outs, reshape(coeffs, (b, e, 1, 1, 1)))
    blended = sum_axis(weighted, axis=1)  # (B, C, H, W)
    return add(conv2d(blended, w.final, bias=w.final_bias), f_h)
