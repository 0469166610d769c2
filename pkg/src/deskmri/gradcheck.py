"""Finite-difference verification of reverse-mode gradients.

The harness projects the (possibly tensor-valued) output onto a fixed random
direction, obtains the projection's gradient from one reverse pass, and
compares it against central differences at randomly probed input coordinates.
Double precision inputs are assumed; the default step is tuned for it.
"""
from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import DiffTensor, no_grad

__all__ = ["grad_check"]


def grad_check(
    fn,
    inputs: list[DiffTensor],
    probes: int = 8,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(*inputs)`` must return a single DiffTensor. ``probes`` coordinates
    are drawn per input. Relative error uses max(|a|, |b|, 1e-8) as the
    denominator. Non-finite values encountered anywhere raise ValueError.
    """
    rng = Rng(seed).substream("grad-check")
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise ValueError("non-finite forward output during gradient check")
    u = rng.normal(out.data.shape)
    out.backward(seed=u.astype(out.data.dtype))

    def project(arrays) -> float:
        with no_grad():
            vals = [t.data for t in inputs]
            saved = vals[:]
            try:
                for t, a in zip(inputs, arrays):
                    t.data = a
                y = fn(*inputs).data
            finally:
                for t, a in zip(inputs, saved):
                    t.data = a
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite value during finite-difference probing")
        return float(np.sum(u * y))

    max_rel = 0.0
    for t in inputs:
        if t.grad is None:
            grad = np.zeros_like(t.data)
        else:
            grad = t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        count = min(probes, n)
        coords = rng.choice_without_replacement(n, count)
        for c in coords:
            base = [np.array(s.data, copy=True) for s in inputs]
            i = inputs.index(t)
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[i].reshape(-1)[c] += step
            minus[i].reshape(-1)[c] -= step
            num = (project(plus) - project(minus)) / (2.0 * step)
            ana = float(grad.reshape(-1)[c])
            if not (np.isfinite(num) and np.isfinite(ana)):
                raise ValueError("non-finite gradient value during probing")
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel
