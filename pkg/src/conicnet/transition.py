"""Convolutional-to-fully-connected transition with a shift-invariant readout.

The transition takes the final feature map a (M x M x d, M odd) and K
weight tensors of the same shape, and emits the K x 4R grid of inner
products of a with each weight tensor at each of the 4R rotations. A
quarter-turn rotation of a circularly shifts that grid along the rotation
axis, so the elementwise magnitude of its (unnormalized) 2D DFT is exactly
invariant to input rotation. The flattened magnitudes feed dense layers.

The DFT has two routes: a literal double-sum reference lives in
reference.naive_dft2, while this module factors the transform per axis,
using an iterative radix-2 FFT when the axis length is a power of two and
a DFT-matrix multiply otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .conic import Activation
from .geometry import InterpScheme, sampling_plans

MAGNITUDE_EPS = 1e-12  # bins with |spectrum| below this get zero gradient


@dataclass
class TransitionLayer:
    """K weight tensors of shape (M, M, d) matching the incoming feature map."""

    weights: np.ndarray  # (K, M, M, d), M odd
    subdivisions: int = 1
    interp: InterpScheme = InterpScheme.BILINEAR

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 4:
            raise ValueError("weights must be (K, M, M, d)")
        if self.weights.shape[1] != self.weights.shape[2] or self.weights.shape[1] % 2 == 0:
            raise ValueError("weight tensors must be square with odd extent")
        if self.subdivisions < 1:
            raise ValueError("subdivisions must be >= 1")

    @property
    def dtype(self):
        return self.weights.dtype

    @property
    def filter_count(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return self.weights.shape[1]

    @property
    def depth(self) -> int:
        return self.weights.shape[3]

    def param_count(self) -> int:
        return self.weights.size


class TransitionCache(NamedTuple):
    inputs: np.ndarray  # (B, M, M, d)
    bank: np.ndarray  # (4R, K, M*M*d)
    layer: TransitionLayer
    squeeze: bool


def _weight_bank(layer: TransitionLayer) -> np.ndarray:
    """Rotated weight tensors, (4R, K, M*M*d); rotation r samples at +theta_r."""
    K, M, _, d = layer.weights.shape
    plans = sampling_plans(M, layer.subdivisions, layer.interp)
    stacked = layer.weights.transpose(1, 2, 0, 3).reshape(M, M, K * d)
    bank = np.empty((len(plans), K, M * M * d), dtype=layer.dtype)
    for r, plan in enumerate(plans):
        rotated = plan.apply(stacked).reshape(M, M, K, d)
        bank[r] = rotated.transpose(2, 0, 1, 3).reshape(K, M * M * d)
    return bank


def transition_forward(
    a: np.ndarray, layer: TransitionLayer, want_cache: bool = False
):
    """Inner products with every rotated weight tensor.

    Input (M, M, d) or (B, M, M, d); output (K, 4R) or (B, K, 4R). Rotating
    the input by a quarter turn circularly shifts the output along its last
    axis by +subdivisions.
    """
    squeeze = a.ndim == 3
    if squeeze:
        a = a[None]
    K, M, _, d = layer.weights.shape
    if a.shape[1:] != (M, M, d):
        raise ValueError(f"input shape {a.shape[1:]} does not match weights {(M, M, d)}")
    a = a.astype(layer.dtype, copy=False)
    bank = _weight_bank(layer)
    nrot = bank.shape[0]
    flat = a.reshape(a.shape[0], M * M * d)
    z = (flat @ bank.reshape(nrot * K, -1).T).reshape(a.shape[0], nrot, K)
    z = z.transpose(0, 2, 1).copy()  # (B, K, 4R)
    if squeeze:
        z = z[0]
    if not want_cache:
        return z
    return z, TransitionCache(a, bank, layer, squeeze)


def transition_input_gradient(grad_z: np.ndarray, cache: TransitionCache):
    """Gradients of sum(grad_z * z) w.r.t. the inputs and the weight tensors."""
    layer = cache.layer
    K, M, _, d = layer.weights.shape
    squeeze = grad_z.ndim == 2
    if squeeze:
        grad_z = grad_z[None]
    nrot = cache.bank.shape[0]
    gz = grad_z.transpose(0, 2, 1).reshape(grad_z.shape[0], nrot * K)
    gz = gz.astype(layer.dtype, copy=False)
    grad_a = (gz @ cache.bank.reshape(nrot * K, -1)).reshape(cache.inputs.shape)
    grad_bank = np.tensordot(gz, cache.inputs.reshape(cache.inputs.shape[0], -1), axes=(0, 0))
    grad_bank = grad_bank.reshape(nrot, K, M, M, d)
    plans = sampling_plans(M, layer.subdivisions, layer.interp)
    acc = np.zeros((M, M, K * d), dtype=layer.dtype)
    for r, plan in enumerate(plans):
        acc += plan.apply_adjoint(grad_bank[r].transpose(1, 2, 0, 3).reshape(M, M, K * d))
    grad_weights = acc.reshape(M, M, K, d).transpose(2, 0, 1, 3)
    if squeeze:
        grad_a = grad_a[0]
    return grad_a, grad_weights


# ---------------------------------------------------------------------------
# 2D DFT


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2_last_axis(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    n = x.shape[-1]
    out = x[..., _bit_reverse_permutation(n)].astype(np.complex128)
    half = 1
    while half < n:
        tw = np.exp(-1j * math.pi * np.arange(half) / half)
        step = out.reshape(*out.shape[:-1], n // (2 * half), 2 * half)
        even = step[..., :half].copy()
        odd = step[..., half:] * tw
        step[..., :half] = even + odd
        step[..., half:] = even - odd
        half *= 2
    return out


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    jk = np.outer(np.arange(n), np.arange(n))
    return np.exp(-2j * math.pi * jk / n)


def _dft_last_axis(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n >= 2 and (n & (n - 1)) == 0:
        return _fft_pow2_last_axis(x)
    return x @ _dft_matrix(n).T


def dft2(z: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes (complex output)."""
    z = np.asarray(z)
    out = _dft_last_axis(z.astype(np.complex128))
    out = _dft_last_axis(np.swapaxes(out, -1, -2))
    return np.swapaxes(out, -1, -2)


def dft2_magnitude(z: np.ndarray) -> np.ndarray:
    """Elementwise magnitude of the unnormalized 2D DFT.

    Invariant to circular shifts of z along both of its last two axes.
    """
    return np.abs(dft2(z))


class MagnitudeCache(NamedTuple):
    spectrum: np.ndarray
    dtype: np.dtype


def dft2_magnitude_with_cache(z: np.ndarray):
    spectrum = dft2(z)
    return np.abs(spectrum).astype(np.asarray(z).dtype), MagnitudeCache(spectrum, np.asarray(z).dtype)


def dft2_magnitude_vjp(grad_mag: np.ndarray, cache: MagnitudeCache) -> np.ndarray:
    """Backward through |DFT2(z)| for real z.

    d|Z|/dz routes grad * conj(Z)/|Z| through the transposed transform; the
    unnormalized DFT is symmetric per axis, so the transpose is the forward
    transform again, and the real part is the gradient w.r.t. real input.
    Bins with |Z| < MAGNITUDE_EPS contribute nothing (subgradient at 0).
    """
    mag = np.abs(cache.spectrum)
    safe = np.where(mag < MAGNITUDE_EPS, 1.0, mag)
    u = np.where(mag < MAGNITUDE_EPS, 0.0, grad_mag * np.conj(cache.spectrum) / safe)
    return np.real(dft2(u)).astype(cache.dtype)


def transition_backward(grad_mag: np.ndarray, cache: TransitionCache, mag_cache: MagnitudeCache):
    """Full backward of dft2_magnitude(transition_forward(a)).

    grad_mag has the shape of the magnitude grid (K, 4R) (or batched);
    returns (grad_a, grad_weights).
    """
    grad_z = dft2_magnitude_vjp(np.asarray(grad_mag, dtype=np.float64), mag_cache)
    return transition_input_gradient(grad_z.astype(cache.layer.dtype), cache)


def fc_head(z: np.ndarray, W: np.ndarray, c: np.ndarray, f: Activation = Activation.IDENTITY):
    """Dense layer: f(W @ z + c) for a flat vector (or batch of rows)."""
    z = np.asarray(z)
    if W.shape[1] != z.shape[-1]:
        raise ValueError(f"weight shape {W.shape} does not accept input {z.shape}")
    if c.shape != (W.shape[0],):
        raise ValueError("offset shape must match the output width")
    return f.apply(z @ W.T + c)
