"""Weight creation and traversal helpers.

Weights are DiffTensors with requires_grad set; initialization is fan-in
scaled uniform, drawn from named substreams so each weight is reproducible in
isolation. ``collect`` walks nested weight dataclasses / lists / dicts and
yields (hierarchical name, tensor) pairs in a deterministic order.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .rng import Rng
from .tensor import DiffTensor

__all__ = ["uniform_fanin", "zeros_param", "ones_param", "collect", "fanin_of"]


def uniform_fanin(rng: Rng, shape, fan_in: int) -> DiffTensor:
    bound = 1.0 / np.sqrt(fan_in)
    return DiffTensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def fanin_of(shape) -> int:
    """Fan-in convention: conv (C_out, C_in/g, kh, kw) -> C_in/g*kh*kw;
    projection (C_in, C_out) -> C_in; vector -> its length."""
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 2:
        return shape[0]
    return shape[0]


def zeros_param(shape) -> DiffTensor:
    return DiffTensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> DiffTensor:
    return DiffTensor(np.ones(shape), requires_grad=True)


def collect(obj, prefix: str = ""):
    """Yield (name, DiffTensor) for every tensor reachable from obj."""
    if isinstance(obj, DiffTensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from collect(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from collect(item, f"{prefix}.{i}")
    elif isinstance(obj, dict):
        for k in obj:
            yield from collect(obj[k], f"{prefix}.{k}" if prefix else str(k))
    # scalars / arrays that are not weights are skipped
