"""The reconstruction network: patch embedding, expert-refined entry and exit
stages, a four-level encoder-decoder of dual-attention blocks with skip
connections, a global residual, and a terminal k-space data-consistency
projection.

Each block: f' = f_in + fuse(grouped_attention(LN(f_in)), freq_attention(LN(f_in)));
f_out = feed_forward(f') (the feed-forward normalizes internally and adds its
own residual). Ablation switches swap branches for fallbacks without changing
any shape.
"""
from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    FmamWeights,
    FusionWeights,
    HashParams,
    SpamWeights,
    dense_msa,
    fmam_forward,
    fuse,
    init_fmam_weights,
    init_fusion_weights,
    init_spam_weights,
    make_hash_params,
    spam_forward,
)
from .configs import ModelConfig
from .experts import HefrWeights, hefr_forward, init_hefr_weights
from .feedforward import (
    PlainFfnWeights,
    SdfnWeights,
    init_plain_ffn_weights,
    init_sdfn_weights,
    plain_ffn_forward,
    sdfn_forward,
)
from .fft import check_power_of_two, fft2, ifft2
from .ops import conv2d, layer_norm, upsample_nearest2x
from .params import collect, ones_param, uniform_fanin, zeros_param
from .rng import Rng
from .tensor import DiffTensor, ShapeError, add, concat, const_add, const_mul
from .tensorio import MAGIC, read_fpt1, write_fpt1

__all__ = [
    "BlockWeights",
    "ModelWeights",
    "init_weights",
    "fps_block",
    "data_consistency",
    "forward",
    "count_params",
    "cast_weights",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class BlockWeights:
    ln_gamma: DiffTensor
    ln_beta: DiffTensor
    fmam: FmamWeights | None
    spam: SpamWeights
    fusion: FusionWeights
    ffn: SdfnWeights | PlainFfnWeights


@dataclass
class ConvWeights:
    kernel: DiffTensor
    bias: DiffTensor


@dataclass
class LevelWeights:
    blocks: list  # BlockWeights


@dataclass
class ModelWeights:
    patch_embed: ConvWeights  # 3x3, 2 -> C0
    entry_refine: list  # HefrWeights
    encoder: list  # LevelWeights per level
    downs: list  # ConvWeights: 3x3 stride 2, C -> 2C
    decoder: list  # LevelWeights per level (deepest first)
    ups: list  # ConvWeights: 1x1 after nearest 2x, C -> C/2
    skip_reduce: list  # ConvWeights: 1x1, 2C -> C
    exit_refine: list  # HefrWeights
    out_conv: ConvWeights  # 3x3, C0 -> 2
    hash_params: list  # HashParams per level (shared by the level's blocks)

    def named(self):
        yield from collect(self, "")


def _conv_w(rng: Rng, c_out: int, c_in: int, k: int) -> ConvWeights:
    return ConvWeights(
        kernel=uniform_fanin(rng.substream("w"), (c_out, c_in, k, k), c_in * k * k),
        bias=zeros_param((c_out,)),
    )


def _block(rng: Rng, cfg: ModelConfig, channels: int, heads: int) -> BlockWeights:
    fmam = (
        init_fmam_weights(rng.substream("fmam"), channels, heads, cfg.pyramid_levels)
        if cfg.fmam_on
        else None
    )
    if cfg.sdfn_on:
        ffn = init_sdfn_weights(rng.substream("ffn"), channels, cfg.ffn_ratio)
    else:
        ffn = init_plain_ffn_weights(rng.substream("ffn"), channels, cfg.ffn_ratio)
    return BlockWeights(
        ln_gamma=ones_param((channels,)),
        ln_beta=zeros_param((channels,)),
        fmam=fmam,
        spam=init_spam_weights(rng.substream("spam"), channels, heads),
        fusion=init_fusion_weights(rng.substream("fusion"), channels),
        ffn=ffn,
    )


def init_weights(cfg: ModelConfig, seed: int) -> ModelWeights:
    """Deterministic per seed; every component draws from its own substream."""
    cfg.validate()
    root = Rng(seed).substream("weights")
    chans = cfg.level_channels
    levels = len(chans)

    def stage(rng, count, c):
        return [
            init_hefr_weights(rng.substream(f"{i}"), c, cfg.expert_count, cfg.expert_hidden)
            for i in range(count)
        ]

    refine_n = cfg.refine_stages if cfg.hefr_on else 0
    encoder = []
    decoder = []
    hash_params = []
    for li in range(levels):
        lrng = root.substream(f"level{li}")
        encoder.append(
            LevelWeights(
                blocks=[
                    _block(lrng.substream(f"enc{i}"), cfg, chans[li], cfg.heads_per_level[li])
                    for i in range(cfg.blocks_per_level[li])
                ]
            )
        )
        decoder.append(
            LevelWeights(
                blocks=[
                    _block(lrng.substream(f"dec{i}"), cfg, chans[li], cfg.heads_per_level[li])
                    for i in range(cfg.blocks_per_level[li])
                ]
            )
        )
        hash_params.append(make_hash_params(lrng, chans[li], cfg.hash_bucket_width))

    return ModelWeights(
        patch_embed=_conv_w(root.substream("embed"), chans[0], 2, 3),
        entry_refine=stage(root.substream("entry"), refine_n, chans[0]),
        encoder=encoder,
        downs=[
            _conv_w(root.substream(f"down{i}"), chans[i + 1], chans[i], 3)
            for i in range(levels - 1)
        ],
        decoder=decoder,
        ups=[
            _conv_w(root.substream(f"up{i}"), chans[i], chans[i + 1], 1)
            for i in range(levels - 1)
        ],
        skip_reduce=[
            _conv_w(root.substream(f"skip{i}"), chans[i], 2 * chans[i], 1)
            for i in range(levels - 1)
        ],
        exit_refine=stage(root.substream("exit"), refine_n, chans[0]),
        out_conv=_conv_w(root.substream("out"), 2, chans[0], 3),
        hash_params=hash_params,
    )


def fps_block(
    x: DiffTensor, bw: BlockWeights, cfg: ModelConfig, hp: HashParams
) -> DiffTensor:
    """Dual-branch attention with fusion, then the feed-forward, both residual."""
    normed = layer_norm(x, bw.ln_gamma, bw.ln_beta)
    if cfg.spam_on:
        f_p = spam_forward(normed, bw.spam, hp, cfg.group_count)
    else:
        f_p = dense_msa(normed, bw.spam, cfg.attention_cap)
    if cfg.fmam_on:
        f_f = fmam_forward(normed, bw.fmam, cfg.sigmas, cfg.fmam_normalize, cfg.attention_cap)
    else:
        f_f = f_p  # single-branch: the fusion sees the grouped output twice
    f1 = add(x, fuse(f_p, f_f, bw.fusion))
    if cfg.sdfn_on:
        return sdfn_forward(f1, bw.ffn)
    return plain_ffn_forward(f1, bw.ffn)


def data_consistency(x: DiffTensor, y: np.ndarray, mask: np.ndarray) -> DiffTensor:
    """Replace predicted k-space values with measured ones where sampled.

    x is a (B, 2, H, W) spatial prediction; y the measured (B, 2, H, W)
    k-space; mask an (H, W) binary array. Gradient w.r.t. x flows only
    through unsampled locations. Idempotent by construction.
    """
    y = np.asarray(y)
    mask = np.asarray(mask)
    if x.shape[-2:] != mask.shape[-2:] or x.shape != tuple(y.shape):
        raise ShapeError(
            f"data_consistency shapes disagree: x {x.shape}, y {tuple(y.shape)}, mask {mask.shape}"
        )
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError(f"mask must be binary, found values {vals[:5]}")
    m = mask[None, None].astype(x.dtype)
    k = fft2(x)
    kept = const_mul(k, 1.0 - m)
    return ifft2(const_add(kept, (m * y).astype(x.dtype)))


def _check_resolution(h: int, w: int, cfg: ModelConfig) -> None:
    check_power_of_two(h, w)
    if h < 16 or w < 16:
        raise ShapeError(f"spatial extents ({h},{w}) must be >= 16")
    for li in range(len(cfg.level_channels)):
        j = (h >> li) * (w >> li)
        if j > cfg.attention_cap:
            raise ShapeError(
                f"level {li + 1} has {j} tokens, exceeding the attention cap "
                f"({cfg.attention_cap}); reduce the input resolution"
            )


def forward(
    zero_filled: DiffTensor,
    y: np.ndarray,
    mask: np.ndarray,
    weights: ModelWeights,
    cfg: ModelConfig,
    capture: dict | None = None,
) -> DiffTensor:
    """Full reconstruction pass: 2-channel zero-filled image in, DC-projected
    2-channel image out. ``capture``, when given, receives named intermediate
    activations (currently 'last_encoder')."""
    b, c, h, w = zero_filled.shape
    if c != 2:
        raise ShapeError(f"expected a 2-channel (real, imag) input, got {c} channels")
    _check_resolution(h, w, cfg)

    x = conv2d(zero_filled, weights.patch_embed.kernel, bias=weights.patch_embed.bias,
               padding=1, pad_mode="reflect")
    if cfg.hefr_on:
        for hw in weights.entry_refine:
            x = hefr_forward(x, hw)

    levels = len(weights.encoder)
    skips = []
    for li in range(levels):
        for bw in weights.encoder[li].blocks:
            x = fps_block(x, bw, cfg, weights.hash_params[li])
        if li < levels - 1:
            skips.append(x)
            x = conv2d(x, weights.downs[li].kernel, bias=weights.downs[li].bias,
                       stride=2, padding=1, pad_mode="reflect")

    for bw in weights.decoder[levels - 1].blocks:
        x = fps_block(x, bw, cfg, weights.hash_params[levels - 1])
    if capture is not None:
        capture["last_encoder"] = x.data.copy()
    for li in range(levels - 2, -1, -1):
        x = upsample_nearest2x(x)
        x = conv2d(x, weights.ups[li].kernel, bias=weights.ups[li].bias)
        x = concat([x, skips[li]], axis=1)
        x = conv2d(x, weights.skip_reduce[li].kernel, bias=weights.skip_reduce[li].bias)
        for bw in weights.decoder[li].blocks:
            x = fps_block(x, bw, cfg, weights.hash_params[li])

    if cfg.hefr_on:
        for hw in weights.exit_refine:
            x = hefr_forward(x, hw)
    out = conv2d(x, weights.out_conv.kernel, bias=weights.out_conv.bias,
                 padding=1, pad_mode="reflect")
    out = add(out, zero_filled)  # global residual
    return data_consistency(out, y, mask)


def count_params(weights) -> int:
    return sum(t.data.size for _, t in collect(weights, ""))


def cast_weights(weights, dtype) -> None:
    """In-place precision change of every parameter array."""
    for _, t in collect(weights, ""):
        t.data = t.data.astype(dtype)


# ---------------------------------------------------------------------------
# checkpoints: zip of named FPT1 entries plus a plain-text config block
# ---------------------------------------------------------------------------

def save_checkpoint(path, weights: ModelWeights, cfg: ModelConfig, seed: int = 0) -> None:
    """Byte-deterministic archive: sorted entries, fixed timestamps."""
    entries = sorted((name, t.data) for name, t in collect(weights, ""))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("config.txt", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, f"seed = {seed}\n" + cfg.to_text())
        for name, arr in entries:
            buf = io.BytesIO()
            _write_fpt1_stream(buf, arr)
            info = zipfile.ZipInfo(f"weights/{name}.fpt1", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _write_fpt1_stream(fh, arr) -> None:
    import struct

    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_fpt1_bytes(raw: bytes) -> np.ndarray:
    import struct

    if raw[:4] != MAGIC:
        raise ValueError("checkpoint entry is not an FPT1 tensor")
    (rank,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    data = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)) if rank else 1,
                         offset=8 + 4 * rank)
    return data.reshape(shape).copy()


def load_checkpoint(path, dtype="float32"):
    """Returns (weights, config, seed); arrays are placed by hierarchical name."""
    from .configs import parse_config_text

    with zipfile.ZipFile(path, "r") as zf:
        cfg_items = parse_config_text(zf.read("config.txt").decode("utf-8"))
        seed = int(cfg_items.pop("seed", 0))
        cfg = ModelConfig.from_items(cfg_items)
        weights = init_weights(cfg, seed)
        stored = {
            n[len("weights/") : -len(".fpt1")]: zf.read(n)
            for n in zf.namelist()
            if n.startswith("weights/")
        }
    expected = dict(collect(weights, ""))
    missing = set(expected) - set(stored)
    extra = set(stored) - set(expected)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for name, t in expected.items():
        arr = _read_fpt1_bytes(stored[name]).astype(dtype)
        if arr.shape != t.data.shape:
            raise ValueError(f"checkpoint entry {name} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr
    return weights, cfg, seed
