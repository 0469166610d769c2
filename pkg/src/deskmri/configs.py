"""Configuration dataclasses for the model and the training loop, plus the
plain-text `key = value` format they serialize to (one key per line, `#`
comments allowed, unknown keys rejected)."""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields


@dataclass
class ModelConfig:
    base_channels: int = 16
    blocks_per_level: tuple = (1, 2, 2, 1)
    heads_per_level: tuple = (1, 2, 4, 8)
    refine_stages: int = 4  # expert-refinement blocks at entry and at exit
    pyramid_levels: int = 3  # M band-pass levels (M+1 blur widths)
    group_count: int = 4  # token groups in the hash-grouped attention branch
    ffn_ratio: int = 2  # channel expansion of the feed-forward network
    expert_count: int = 8
    expert_hidden: int = 32
    hash_bucket_width: float = 1.0
    attention_cap: int = 4096  # max tokens a dense-score attention will accept
    fmam_normalize: bool = False  # divide summed scores by M*heads
    # ablation switches
    fmam_on: bool = True
    spam_on: bool = True
    sdfn_on: bool = True
    hefr_on: bool = True

    @property
    def level_channels(self) -> tuple:
        return tuple(self.base_channels * (2**i) for i in range(len(self.blocks_per_level)))

    @property
    def sigmas(self) -> tuple:
        # geometric blur widths 1, 2, 4, ... (M+1 of them)
        return tuple(float(2**m) for m in range(self.pyramid_levels + 1))

    def validate(self) -> None:
        for c, h in zip(self.level_channels, self.heads_per_level):
            if c % h != 0:
                raise ValueError(f"level channels {c} not divisible by heads {h}")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_items(cls, items: dict) -> "ModelConfig":
        return _build_from_items(cls, items)


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr_init: float = 1e-4
    lr_final: float = 1e-6
    # fraction of steps at fixed lr_init before the cosine segment;
    # 0.30667 keeps the 92K/300K split of the reference schedule
    warm_fraction: float = 92.0 / 300.0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 200
    dtype: str = "float32"  # training precision; tests use float64
    data_dir: str = ""
    out_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.lr_final > self.lr_init:
            raise ValueError("lr_final must not exceed lr_init")
        if not (0.0 < self.warm_fraction < 1.0):
            raise ValueError("warm_fraction must lie in (0, 1)")
        self.model.validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "model":
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)!r}\n")
        lines.extend(f"model.{f.name} = {getattr(self.model, f.name)!r}\n" for f in fields(ModelConfig))
        return "".join(lines)

    @classmethod
    def from_items(cls, items: dict) -> "TrainConfig":
        model_items = {k[len("model.") :]: v for k, v in items.items() if k.startswith("model.")}
        own = {k: v for k, v in items.items() if not k.startswith("model.")}
        cfg = _build_from_items(cls, own)
        cfg.model = ModelConfig.from_items(model_items)
        return cfg


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines into a string->string dict."""
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in items:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value.strip()
    return items


def _coerce(field_obj, raw: str):
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw  # bare string
    ftype = field_obj.type
    if ftype in ("int",):
        return int(value)
    if ftype in ("float",):
        return float(value)
    if ftype in ("bool",):
        if isinstance(value, bool):
            return value
        raise ValueError(f"{field_obj.name}: expected a boolean, got {raw!r}")
    if ftype in ("tuple",):
        return tuple(value)
    if ftype in ("str",):
        return str(value)
    return value


def _build_from_items(cls, items: dict):
    known = {f.name: f for f in fields(cls) if f.name != "model"}
    unknown = set(items) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: _coerce(known[k], v) for k, v in items.items()}
    return cls(**kwargs)
