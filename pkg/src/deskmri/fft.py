"""Orthonormal 2-D Fourier transforms on 2-channel (real, imag) tensors.

Both directions scale by 1/sqrt(HW), so the transform is unitary: roundtrip
is the identity and energy is preserved. The gradient of the forward
transform is the inverse transform of the upstream gradient (and vice versa),
which is exactly the adjoint of a unitary real-linear map.
"""
from __future__ import annotations

import numpy as np

from .tensor import DiffTensor, ShapeError, _make

__all__ = ["fft2", "ifft2", "fft2_array", "ifft2_array", "check_power_of_two"]


def check_power_of_two(*extents: int) -> None:
    for n in extents:
        if n < 1 or (n & (n - 1)) != 0:
            raise ShapeError(f"extent {n} is not a power of two")


def _split(z: np.ndarray, dtype) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=1).astype(dtype, copy=False)


def _join(x: np.ndarray) -> np.ndarray:
    return x[:, 0] + 1j * x[:, 1]


def fft2(x: DiffTensor) -> DiffTensor:
    """(B, 2, H, W) spatial -> (B, 2, H, W) k-space, orthonormal scaling."""
    if x.ndim != 4 or x.shape[1] != 2:
        raise ShapeError(f"fft2 expects (B, 2, H, W), got {x.shape}")
    check_power_of_two(x.shape[2], x.shape[3])
    data = _split(np.fft.fft2(_join(x.data), norm="ortho"), x.dtype)

    def backward(g):
        return (_split(np.fft.ifft2(_join(g), norm="ortho"), g.dtype),)

    return _make(data, (x,), backward)


def ifft2(x: DiffTensor) -> DiffTensor:
    if x.ndim != 4 or x.shape[1] != 2:
        raise ShapeError(f"ifft2 expects (B, 2, H, W), got {x.shape}")
    check_power_of_two(x.shape[2], x.shape[3])
    data = _split(np.fft.ifft2(_join(x.data), norm="ortho"), x.dtype)

    def backward(g):
        return (_split(np.fft.fft2(_join(g), norm="ortho"), g.dtype),)

    return _make(data, (x,), backward)


def fft2_array(z: np.ndarray) -> np.ndarray:
    """Plain complex-array transform for the simulation side (same scaling)."""
    check_power_of_two(z.shape[-2], z.shape[-1])
    return np.fft.fft2(z, norm="ortho")


def ifft2_array(z: np.ndarray) -> np.ndarray:
    check_power_of_two(z.shape[-2], z.shape[-1])
    return np.fft.ifft2(z, norm="ortho")
