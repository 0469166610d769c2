"""The two attention branches of the restoration block and their fusion.

Frequency branch: per-level attention scores over a band-pass pyramid of the
normalized input, summed across heads and levels, applied to one shared value
projection of the input.

Grouped branch: tokens are bucketed by a random-projection integer hash,
stably sorted, chunked into equal groups, and self-attention runs inside each
group only. Sorting is a fixed index computation of the forward pass;
gradients flow through the gathers, never through the comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import opcount
from .ops import argsort_stable, conv2d, gather_rows, take_tokens
from .params import uniform_fanin, zeros_param
from .pyramid import build_frequency_pyramid, build_gaussian_stack
from .rng import Rng
from .tensor import (
    DiffTensor,
    ShapeError,
    concat,
    const_add,
    matmul,
    reshape,
    scale,
    softmax,
    stack,
    sum_axis,
    transpose,
)

__all__ = [
    "FmamWeights",
    "SpamWeights",
    "FusionWeights",
    "HashParams",
    "Grouping",
    "init_fmam_weights",
    "init_spam_weights",
    "init_fusion_weights",
    "make_hash_params",
    "fmam_forward",
    "hash_tokens",
    "group_tokens",
    "within_group_msa",
    "spam_forward",
    "dense_msa",
    "fuse",
    "attention_op_count",
    "to_tokens",
    "from_tokens",
]


def to_tokens(x: DiffTensor) -> DiffTensor:
    """(B, C, H, W) -> (B, H*W, C) row-major spatial flattening."""
    b, c, h, w = x.shape
    return transpose(reshape(x, (b, c, h * w)), (0, 2, 1))


def from_tokens(t: DiffTensor, h: int, w: int) -> DiffTensor:
    b, j, c = t.shape
    if j != h * w:
        raise ShapeError(f"token count {j} does not match spatial extents {h}x{w}")
    return reshape(transpose(t, (0, 2, 1)), (b, c, h, w))


# ---------------------------------------------------------------------------
# frequency-pyramid attention
# ---------------------------------------------------------------------------

@dataclass
class FmamWeights:
    q_proj: DiffTensor  # (M, C, C): per-level query projection, d*heads = C
    k_proj: DiffTensor  # (M, C, C)
    v_proj: DiffTensor  # (C, C): one shared value projection of the input
    out_proj: DiffTensor  # (C, C)
    heads: int


def init_fmam_weights(rng: Rng, channels: int, heads: int, levels: int) -> FmamWeights:
    if channels % heads != 0:
        raise ValueError(f"channels {channels} not divisible by heads {heads}")
    return FmamWeights(
        q_proj=uniform_fanin(rng.substream("q"), (levels, channels, channels), channels),
        k_proj=uniform_fanin(rng.substream("k"), (levels, channels, channels), channels),
        v_proj=uniform_fanin(rng.substream("v"), (channels, channels), channels),
        out_proj=uniform_fanin(rng.substream("out"), (channels, channels), channels),
        heads=heads,
    )


def fmam_forward(
    f_in: DiffTensor,
    w: FmamWeights,
    sigmas,
    normalize: bool = False,
    cap: int = 4096,
) -> DiffTensor:
    """Pyramid-level attention scores, summed, applied to the shared value.

    Per level m and head i the score block is softmax(Q K^T / sqrt(d)) over
    all spatial token pairs; scores are summed over heads then levels (no
    normalization unless ``normalize``), and each level's sum is applied to
    the value projection of the (unblurred) input.
    """
    b, c, h, wdt = f_in.shape
    j = h * wdt
    if j > cap:
        raise ShapeError(
            f"{j} tokens exceed the attention size cap ({cap}); "
            "reduce the input resolution or raise the cap"
        )
    heads = w.heads
    if c % heads != 0:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")
    d = c // heads
    m = w.q_proj.shape[0]
    if len(sigmas) != m + 1:
        raise ShapeError(f"need {m + 1} sigmas for {m} pyramid levels, got {len(sigmas)}")

    stack_x = build_gaussian_stack(f_in, sigmas)
    pyr = build_frequency_pyramid(stack_x, sigmas)
    lvl = stack([to_tokens(t) for t in pyr.levels], axis=1)  # (B, M, J, C)

    q = scale(matmul(lvl, w.q_proj), 1.0 / math.sqrt(d))  # fold in the score scaling
    k = matmul(lvl, w.k_proj)
    qh = transpose(reshape(q, (b, m, j, heads, d)), (0, 1, 3, 2, 4))
    kh = transpose(reshape(k, (b, m, j, heads, d)), (0, 1, 3, 4, 2))
    with opcount.scope("freq_attention"):
        logits = matmul(qh, kh)  # (B, M, I, J, J)
    probs = softmax(logits)
    scores = sum_axis(probs, axis=2)  # heads summed -> (B, M, J, J)

    v = matmul(to_tokens(f_in), w.v_proj)  # (B, J, C)
    with opcount.scope("freq_attention"):
        applied = matmul(scores, reshape(v, (b, 1, j, c)))  # per level
    agg = sum_axis(applied, axis=1)  # (B, J, C)
    if normalize:
        agg = scale(agg, 1.0 / (m * heads))
    return from_tokens(matmul(agg, w.out_proj), h, wdt)


# ---------------------------------------------------------------------------
# hash-grouped sparse attention
# ---------------------------------------------------------------------------

@dataclass
class HashParams:
    a: np.ndarray  # (C,) standard-normal projection, frozen after construction
    b: float  # uniform offset in [0, r)
    r: float  # bucket width


def make_hash_params(rng: Rng, channels: int, r: float = 1.0) -> HashParams:
    if r <= 0:
        raise ValueError(f"bucket width r must be positive, got {r}")
    sub = rng.substream("hash")
    return HashParams(a=sub.normal((channels,)), b=float(sub.uniform(0.0, r)), r=float(r))


def hash_tokens(tokens, hp: HashParams) -> np.ndarray:
    """Integer bucket codes floor((a . f + b) / r) per token (last axis = C)."""
    y = tokens.data if isinstance(tokens, DiffTensor) else np.asarray(tokens)
    return np.floor((y @ hp.a + hp.b) / hp.r).astype(np.int64)


@dataclass
class Grouping:
    permutation: np.ndarray  # bijection on {0..J+pad-1}; first J entries sort real tokens
    group_size: int
    group_count: int
    pad_count: int
    token_count: int
    pad_flags: np.ndarray  # (N, g) bool, True where the slot is a zero pad

    def inverse(self) -> np.ndarray:
        """Position of each real token inside the grouped (flattened) layout."""
        return np.argsort(self.permutation)[: self.token_count]


@dataclass
class SpamWeights:
    q_proj: DiffTensor  # (C, C): head i occupies columns i*d:(i+1)*d
    k_proj: DiffTensor
    v_proj: DiffTensor
    out_proj: DiffTensor  # (C, C): rows i*d:(i+1)*d are the transposed per-head mix
    heads: int


def init_spam_weights(rng: Rng, channels: int, heads: int) -> SpamWeights:
    if channels % heads != 0:
        raise ValueError(f"channels {channels} not divisible by heads {heads}")
    return SpamWeights(
        q_proj=uniform_fanin(rng.substream("q"), (channels, channels), channels),
        k_proj=uniform_fanin(rng.substream("k"), (channels, channels), channels),
        v_proj=uniform_fanin(rng.substream("v"), (channels, channels), channels),
        out_proj=uniform_fanin(rng.substream("out"), (channels, channels), channels),
        heads=heads,
    )


def group_tokens(tokens: DiffTensor, codes: np.ndarray, n_groups: int):
    """Stable-sort a (J, C) token matrix by code and chunk into equal groups.

    Ties keep original order; zero tokens (flagged) pad the tail to a multiple
    of the group count. Returns the Grouping record and the (N, g, C) tensor.
    """
    if n_groups < 1:
        raise ValueError(f"group count must be >= 1, got {n_groups}")
    j, c = tokens.shape
    order = argsort_stable(np.asarray(codes))
    g = -(-j // n_groups)  # ceil
    pad = n_groups * g - j
    perm = np.concatenate([order, np.arange(j, j + pad)])
    if pad:
        padded = concat([tokens, DiffTensor(np.zeros((pad, c), dtype=tokens.dtype))], axis=0)
    else:
        padded = tokens
    grouped = reshape(gather_rows(padded, perm), (n_groups, g, c))
    grouping = Grouping(
        permutation=perm,
        group_size=g,
        group_count=n_groups,
        pad_count=pad,
        token_count=j,
        pad_flags=(perm >= j).reshape(n_groups, g),
    )
    return grouping, grouped


def within_group_msa(
    groups: DiffTensor, w: SpamWeights, pad_flags: np.ndarray | None = None
) -> DiffTensor:
    """Scaled dot-product MSA run independently inside each (g-token) group.

    Pad slots are excluded from the softmax with large negative logits (their
    exponentials underflow to exactly zero against any real key); a group of
    only pads degrades to a uniform mix of zero tokens, which the caller
    drops. Heads are combined concat-then-project, algebraically the per-head
    mix-and-sum.
    """
    gcount, g, c = groups.shape
    heads = w.heads
    if c % heads != 0:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")
    d = c // heads

    def split_heads(t, perm):
        return transpose(reshape(t, (gcount, g, heads, d)), perm)

    qh = split_heads(scale(matmul(groups, w.q_proj), 1.0 / math.sqrt(d)), (0, 2, 1, 3))
    kh = split_heads(matmul(groups, w.k_proj), (0, 2, 3, 1))  # (G, I, d, g)
    vh = split_heads(matmul(groups, w.v_proj), (0, 2, 1, 3))
    with opcount.scope("group_attention"):
        logits = matmul(qh, kh)
    if pad_flags is not None and pad_flags.any():
        bias = np.where(pad_flags, -1e9, 0.0).astype(groups.dtype)[:, None, None, :]
        logits = const_add(logits, bias)
    probs = softmax(logits)
    with opcount.scope("group_attention"):
        mixed = matmul(probs, vh)  # (G, I, g, d)
    out = reshape(transpose(mixed, (0, 2, 1, 3)), (gcount, g, c))
    return matmul(out, w.out_proj)


def spam_forward(
    f_in: DiffTensor, w: SpamWeights, hp: HashParams, n_groups: int
) -> DiffTensor:
    """flatten -> hash -> stable sort -> equal groups -> per-group MSA -> unsort."""
    b, c, h, wdt = f_in.shape
    j = h * wdt
    tokens = to_tokens(f_in)  # (B, J, C)
    codes = hash_tokens(tokens, hp)  # (B, J)
    order = argsort_stable(codes, axis=1)
    g = -(-j // n_groups)
    pad = n_groups * g - j
    if pad:
        padded = concat(
            [tokens, DiffTensor(np.zeros((b, 1, c), dtype=tokens.dtype))], axis=1
        )
        idx = np.concatenate([order, np.full((b, pad), j)], axis=1)
    else:
        padded = tokens
        idx = order
    grouped = reshape(take_tokens(padded, idx), (b * n_groups, g, c))
    pad_flags = (idx >= j).reshape(b * n_groups, g) if pad else None
    updated = within_group_msa(grouped, w, pad_flags)
    flat = reshape(updated, (b, n_groups * g, c))
    inverse = np.argsort(order, axis=1)  # rank of each original token
    return from_tokens(take_tokens(flat, inverse), h, wdt)


def dense_msa(f_in: DiffTensor, w: SpamWeights, cap: int = 4096) -> DiffTensor:
    """Global MSA over all spatial tokens (the ungrouped fallback branch)."""
    b, c, h, wdt = f_in.shape
    j = h * wdt
    if j > cap:
        raise ShapeError(
            f"{j} tokens exceed the attention size cap ({cap}); "
            "reduce the input resolution or raise the cap"
        )
    tokens = reshape(to_tokens(f_in), (b, j, c))
    out = within_group_msa(tokens, w, None)
    return from_tokens(reshape(out, (b, j, c)), h, wdt)


# ---------------------------------------------------------------------------
# branch fusion
# ---------------------------------------------------------------------------

@dataclass
class FusionWeights:
    depthwise: DiffTensor  # (2C, 1, 3, 3)
    pointwise: DiffTensor  # (C, 2C, 1, 1)
    bias: DiffTensor  # (C,)


def init_fusion_weights(rng: Rng, channels: int) -> FusionWeights:
    return FusionWeights(
        depthwise=uniform_fanin(rng.substream("dw"), (2 * channels, 1, 3, 3), 9),
        pointwise=uniform_fanin(
            rng.substream("pw"), (channels, 2 * channels, 1, 1), 2 * channels
        ),
        bias=zeros_param((channels,)),
    )


def fuse(f_p: DiffTensor, f_f: DiffTensor, w: FusionWeights) -> DiffTensor:
    """Concat the two branch outputs on channels, 3x3 depthwise, 1x1 pointwise."""
    if f_p.shape != f_f.shape:
        raise ShapeError(f"branch shapes differ: {f_p.shape} vs {f_f.shape}")
    cat = concat([f_p, f_f], axis=1)
    mixed = conv2d(cat, w.depthwise, padding=1, pad_mode="reflect", groups=cat.shape[1])
    return conv2d(mixed, w.pointwise, bias=w.bias)


# ---------------------------------------------------------------------------
# operation-count bookkeeping
# ---------------------------------------------------------------------------

def attention_op_count(j: int, c: int, heads: int, n_groups: int, m: int):
    """Closed-form multiply-accumulate counts of the score+apply matmuls.

    Returns (dense_ops, fmam_ops, spam_ops). Projections are excluded: they
    are identical across the three layouts and independent of the grouping.
    """
    g = -(-j // n_groups)
    dense = 2 * j * j * c
    spam = 2 * j * g * c
    fmam = m * 2 * j * j * c
    return dense, fmam, spam
