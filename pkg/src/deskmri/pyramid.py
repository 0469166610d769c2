"""Gaussian stacks and band-pass (difference-of-Gaussian) pyramids.

All levels stay at full resolution: the stack is a set of increasingly
blurred copies of the feature map, and each pyramid level is the difference
of adjacent blurs, so the levels telescope back to coarse minus finest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import reflect_index
from .tensor import DiffTensor, matmul, sub, transpose

__all__ = [
    "gaussian_kernel",
    "gaussian_kernel_1d",
    "build_gaussian_stack",
    "build_frequency_pyramid",
    "FrequencyPyramid",
]


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Truncated isotropic Gaussian on a (2*ceil(3*sigma)+1)^2 support,
    renormalized to sum exactly 1. Symmetric under reflection and 90-degree
    rotation by construction (outer product of an even 1-D profile)."""
    k1 = gaussian_kernel_1d(sigma)
    k2 = np.outer(k1, k1)
    return k2 / k2.sum()


_BLUR_CACHE: dict[tuple, np.ndarray] = {}


def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """Dense (n, n) operator of 1-D Gaussian filtering with reflect padding.

    Row o holds the weights the filter places on each source sample: applying
    it is identical to reflect-pad + valid correlation with the truncated
    kernel, but runs as one BLAS matmul.
    """
    key = (n, float(sigma))
    cached = _BLUR_CACHE.get(key)
    if cached is None:
        k1 = gaussian_kernel_1d(sigma)
        radius = (k1.size - 1) // 2
        idx = reflect_index(n, radius)
        mat = np.zeros((n, n), dtype=np.float64)
        rows = np.arange(n)
        for t in range(k1.size):
            np.add.at(mat, (rows, idx[rows + t]), k1[t])
        cached = _BLUR_CACHE[key] = mat
    return cached


def _depthwise_blur(x: DiffTensor, sigma: float) -> DiffTensor:
    """Separable depthwise Gaussian blur with reflect padding.

    The truncated 2-D kernel factors exactly into the outer product of its
    normalized 1-D profile, so one pass per axis equals the 2-D depthwise
    convolution to roundoff. Each pass is a fixed banded matrix applied with
    a matmul (kernels are constants, so no weight gradient is needed).
    """
    h, w = x.shape[2], x.shape[3]
    mh = DiffTensor(blur_matrix(h, sigma).astype(x.dtype))
    mw = DiffTensor(blur_matrix(w, sigma).T.astype(x.dtype))
    return matmul(matmul(mh, x), mw)


def build_gaussian_stack(f_in: DiffTensor, sigmas) -> list[DiffTensor]:
    """Blur the input feature map once per sigma; sigmas strictly increasing."""
    sigmas = [float(s) for s in sigmas]
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError(f"sigmas must be strictly increasing, got {sigmas}")
    return [_depthwise_blur(f_in, s) for s in sigmas]


@dataclass
class FrequencyPyramid:
    levels: list  # M band-pass maps, finest first, each shaped like the input
    sigmas: list  # the M+1 blur widths that produced them
    coarse: DiffTensor  # the widest blur (residual low-pass)


def build_frequency_pyramid(stack: list[DiffTensor], sigmas=None) -> FrequencyPyramid:
    """Adjacent differences of the Gaussian stack: level m = X_{m+1} - X_m."""
    if len(stack) < 2:
        raise ValueError(f"stack must have at least 2 entries, got {len(stack)}")
    levels = [sub(stack[m + 1], stack[m]) for m in range(len(stack) - 1)]
    return FrequencyPyramid(
        levels=levels,
        sigmas=list(sigmas) if sigmas is not None else [],
        coarse=stack[-1],
    )
