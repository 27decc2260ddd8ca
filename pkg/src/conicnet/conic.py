"""Rotation-equivariant convolution over conic regions, forward and backward.

Each output pixel is the correlation of the input with one rotation of the
filter, chosen by the pixel's region: cone pixels use the rotation aligned
with their region's angle, boundary pixels max-pool the two adjacent
rotations, and the origin max-pools all of them. The composition with
centered subsampling, bias and an elementwise activation commutes exactly
with quarter-turn rotations of the input.

Everything is computed densely: all 4R rotated correlations are evaluated
for every pixel and the per-pixel case then selects among them, which is
the vectorization-friendly layout. Selections are cached so the backward
pass routes gradients through exactly the branch the forward pass took.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import InterpScheme, RegionKind, RegionMap, alignment_plans, build_region_map


class Activation(enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0)
        return x

    def derivative(self, pre: np.ndarray) -> np.ndarray:
        # subgradient 0 at the ReLU kink
        if self is Activation.RELU:
            return (pre > 0).astype(pre.dtype)
        return np.ones_like(pre)


def downsampled_extent(size: int, downsample: int) -> int:
    """Odd output extent of centered subsampling by stride `downsample`."""
    return 2 * ((size - 1) // (2 * downsample)) + 1


@dataclass
class ConicConvLayer:
    """K filters of shape (h, h, d) with biases, applied per conic region.

    filters: (K, h, h, d), h odd, d equal to the input feature depth.
    """

    filters: np.ndarray
    biases: np.ndarray
    subdivisions: int = 1
    downsample: int = 1
    activation: Activation = Activation.RELU
    interp: InterpScheme = InterpScheme.BILINEAR
    origin_pool_all: bool = True  # False reproduces the broken literal case split

    def __post_init__(self):
        self.filters = np.asarray(self.filters)
        self.biases = np.asarray(self.biases, dtype=self.filters.dtype)
        if self.filters.ndim != 4:
            raise ValueError("filters must be (K, h, h, d)")
        K, h, w, _ = self.filters.shape
        if h != w or h % 2 == 0:
            raise ValueError("filters must be square with odd extent")
        if self.biases.shape != (K,):
            raise ValueError("need one bias per filter")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if self.subdivisions < 1:
            raise ValueError("subdivisions must be >= 1")

    @property
    def dtype(self):
        return self.filters.dtype

    @property
    def filter_count(self) -> int:
        return self.filters.shape[0]

    @property
    def filter_size(self) -> int:
        return self.filters.shape[1]

    @property
    def depth(self) -> int:
        return self.filters.shape[3]

    def param_count(self) -> int:
        return self.filters.size + self.biases.size


class ConicCache(NamedTuple):
    inputs: np.ndarray  # (B, M, M, d)
    patches: np.ndarray  # (B, M*M, h*h*d)
    bank: np.ndarray  # (4R*K, h*h*d) rotated filters
    chosen: np.ndarray  # (B, M', M', K) rotation index used per output pixel
    pre: np.ndarray  # (B, M', M', K) pre-activation values
    layer: ConicConvLayer
    region_map: RegionMap
    squeeze: bool


def _im2col(a: np.ndarray, h: int) -> np.ndarray:
    """Zero-padded sliding windows: (B, M, M, d) -> (B, M*M, h*h*d)."""
    B, M, _, d = a.shape
    hh = (h - 1) // 2
    ap = np.pad(a, ((0, 0), (hh, hh), (hh, hh), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(ap, (h, h), axis=(1, 2))
    # view is (B, M, M, d, h, h); one contiguous copy into tap-major order
    patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return patches.reshape(B, M * M, h * h * d)


def _col2im(gpatches: np.ndarray, M: int, h: int, d: int) -> np.ndarray:
    """Adjoint of _im2col: scatter window gradients back onto the input grid."""
    B = gpatches.shape[0]
    hh = (h - 1) // 2
    g = gpatches.reshape(B, M, M, h * h, d)
    gap = np.zeros((B, M + 2 * hh, M + 2 * hh, d), dtype=gpatches.dtype)
    for u in range(h):
        for v in range(h):
            gap[:, u : u + M, v : v + M, :] += g[:, :, :, u * h + v, :]
    return gap[:, hh : hh + M, hh : hh + M, :]


def _rotation_bank(layer: ConicConvLayer) -> np.ndarray:
    """All 4R rotated copies of the filters, flattened to (4R*K, h*h*d)."""
    K, h, _, d = layer.filters.shape
    plans = alignment_plans(h, layer.subdivisions, layer.interp)
    stacked = layer.filters.transpose(1, 2, 0, 3).reshape(h, h, K * d)
    rows = []
    for plan in plans:
        rotated = plan.apply(stacked).reshape(h, h, K, d)
        rows.append(rotated.transpose(2, 0, 1, 3).reshape(K, h * h * d))
    return np.concatenate(rows, axis=0).astype(layer.dtype, copy=False)


def _bank_gradient(grad_bank: np.ndarray, layer: ConicConvLayer) -> np.ndarray:
    """Adjoint of _rotation_bank: (4R*K, h*h*d) -> (K, h, h, d)."""
    K, h, _, d = layer.filters.shape
    plans = alignment_plans(h, layer.subdivisions, layer.interp)
    grad_bank = grad_bank.reshape(len(plans), K, h, h, d)
    acc = np.zeros((h, h, K * d), dtype=grad_bank.dtype)
    for r, plan in enumerate(plans):
        acc += plan.apply_adjoint(grad_bank[r].transpose(1, 2, 0, 3).reshape(h, h, K * d))
    return acc.reshape(h, h, K, d).transpose(2, 0, 1, 3)


def _downsample_indices(M: int, D: int) -> np.ndarray:
    Mp = downsampled_extent(M, D)
    c = (M - 1) // 2
    m = (Mp - 1) // 2
    return c + D * (np.arange(Mp) - m)


def _check_input(a: np.ndarray, layer: ConicConvLayer, region_map: RegionMap | None):
    squeeze = a.ndim == 3
    if squeeze:
        a = a[None]
    if a.ndim != 4:
        raise ValueError("input must be (M, M, d) or (B, M, M, d)")
    M = a.shape[1]
    if a.shape[2] != M:
        raise ValueError("spatial extents must match")
    if M % 2 == 0:
        raise ValueError(f"conic layers need an odd extent, got {M}")
    if a.shape[3] != layer.depth:
        raise ValueError(
            f"depth mismatch: input has {a.shape[3]}, filters expect {layer.depth}"
        )
    if region_map is None:
        region_map = build_region_map(M, layer.subdivisions)
    if region_map.size != M or region_map.subdivisions != layer.subdivisions:
        raise ValueError("region map does not match input extent / subdivisions")
    return a, region_map, squeeze


def conic_forward(
    a: np.ndarray,
    layer: ConicConvLayer,
    region_map: RegionMap | None = None,
    want_cache: bool = False,
):
    """Apply the layer. Input (M, M, d) or (B, M, M, d); output extent is
    downsampled_extent(M, layer.downsample) with K channels."""
    a, region_map, squeeze = _check_input(a, layer, region_map)
    a = a.astype(layer.dtype, copy=False)
    B, M, _, _ = a.shape
    K = layer.filter_count
    nrot = region_map.rotations

    patches = _im2col(a, layer.filter_size)
    bank = _rotation_bank(layer)
    corr = (patches @ bank.T).reshape(B, M * M, nrot, K)

    kind = region_map.kind.reshape(-1)
    index = region_map.index.reshape(-1).astype(np.int64)
    sel1 = index
    sel2 = np.where(kind == RegionKind.BOUNDARY, (index + 1) % nrot, index)

    val1 = np.take_along_axis(corr, sel1[None, :, None, None], axis=2)[:, :, 0, :]
    val2 = np.take_along_axis(corr, sel2[None, :, None, None], axis=2)[:, :, 0, :]
    pooled = np.maximum(val1, val2)
    s1 = np.broadcast_to(sel1[None, :, None], val1.shape)
    s2 = np.broadcast_to(sel2[None, :, None], val2.shape)
    # deterministic tie-break: lowest rotation index wins
    chosen = np.where(val1 > val2, s1, np.where(val2 > val1, s2, np.minimum(s1, s2)))

    c = region_map.center
    opos = c * M + c
    pool_n = nrot if layer.origin_pool_all else layer.subdivisions
    ocorr = corr[:, opos, :pool_n, :]
    pooled[:, opos, :] = ocorr.max(axis=1)
    chosen[:, opos, :] = ocorr.argmax(axis=1)

    ds = _downsample_indices(M, layer.downsample)
    pooled = pooled.reshape(B, M, M, K)[:, ds[:, None], ds[None, :], :]
    chosen = chosen.reshape(B, M, M, K)[:, ds[:, None], ds[None, :], :]

    pre = pooled + layer.biases
    out = layer.activation.apply(pre)
    if squeeze:
        out = out[0]
    if not want_cache:
        return out
    cache = ConicCache(a, patches, bank, chosen, pre, layer, region_map, squeeze)
    return out, cache


def conic_backward(grad_out: np.ndarray, cache: ConicCache):
    """Vector-Jacobian product of conic_forward.

    Returns (grad_input, grad_filters, grad_biases); max cases route the
    gradient to the rotation recorded in the cache.
    """
    layer = cache.layer
    B, M = cache.inputs.shape[0], cache.inputs.shape[1]
    K, h, _, d = layer.filters.shape
    nrot = cache.region_map.rotations
    grad_out = np.asarray(grad_out, dtype=layer.dtype)
    if cache.squeeze:
        grad_out = grad_out[None]
    if grad_out.shape != cache.pre.shape:
        raise ValueError(
            f"grad shape {grad_out.shape} does not match forward output {cache.pre.shape}"
        )

    g = grad_out * layer.activation.derivative(cache.pre)
    grad_biases = g.sum(axis=(0, 1, 2))

    Mp = g.shape[1]
    grad_sel = np.zeros((B, Mp, Mp, nrot, K), dtype=layer.dtype)
    np.put_along_axis(grad_sel, cache.chosen[:, :, :, None, :], g[:, :, :, None, :], axis=3)

    ds = _downsample_indices(M, layer.downsample)
    grad_corr = np.zeros((B, M, M, nrot, K), dtype=layer.dtype)
    grad_corr[:, ds[:, None], ds[None, :], :, :] = grad_sel
    grad_corr = grad_corr.reshape(B, M * M, nrot * K)

    grad_bank = np.tensordot(grad_corr, cache.patches, axes=([0, 1], [0, 1]))
    grad_filters = _bank_gradient(grad_bank, layer)

    grad_patches = grad_corr @ cache.bank
    grad_input = _col2im(grad_patches, M, h, d)
    if cache.squeeze:
        grad_input = grad_input[0]
    return grad_input, grad_filters, grad_biases


def conic_pool_gaps(a: np.ndarray, layer: ConicConvLayer, region_map: RegionMap | None = None) -> float:
    """Smallest margin of any max-pooling decision the layer makes on `a`.

    Verification aid: gradient checks against finite differences are only
    meaningful away from pooling ties, so instances are screened with this.
    Returns +inf when the layer makes no pooling decisions (M == 1 grids
    have only the origin, which still pools unless 4R == 1; boundaries
    exist for every M >= 3).
    """
    a, region_map, _ = _check_input(a, layer, region_map)
    a = a.astype(layer.dtype, copy=False)
    B, M = a.shape[0], a.shape[1]
    nrot = region_map.rotations
    corr = (_im2col(a, layer.filter_size) @ _rotation_bank(layer).T).reshape(
        B, M * M, nrot, layer.filter_count
    )
    kind = region_map.kind.reshape(-1)
    index = region_map.index.reshape(-1).astype(np.int64)
    gap = np.inf
    bmask = kind == RegionKind.BOUNDARY
    if bmask.any():
        v1 = np.take_along_axis(corr, index[None, :, None, None], axis=2)[:, bmask, 0, :]
        v2 = np.take_along_axis(
            corr, ((index + 1) % nrot)[None, :, None, None], axis=2
        )[:, bmask, 0, :]
        gap = min(gap, float(np.abs(v1 - v2).min()))
    c = region_map.center
    pool_n = nrot if layer.origin_pool_all else layer.subdivisions
    if pool_n > 1:
        ocorr = np.sort(corr[:, c * M + c, :pool_n, :], axis=1)
        gap = min(gap, float((ocorr[:, -1, :] - ocorr[:, -2, :]).min()))
    return gap


def region_conv(
    a: np.ndarray,
    w: np.ndarray,
    r: int,
    region_map: RegionMap,
    scheme: InterpScheme = InterpScheme.BILINEAR,
) -> np.ndarray:
    """Correlation of `a` with the filter aligned to region r's angle,
    evaluated over the whole (zero-padded) plane.

    This is the per-region building block of conic_forward: the filter
    content is rotated *to* angle theta_r (sampling at coordinates rotated
    by -theta_r), which is the orientation the equivariance property
    requires. Input (M, M, d), filter (h, h, d); returns (M, M).
    """
    if a.ndim != 3 or w.ndim != 3:
        raise ValueError("expected (M, M, d) input and (h, h, d) filter")
    if a.shape[2] != w.shape[2]:
        raise ValueError("depth mismatch between input and filter")
    h = w.shape[0]
    if h != w.shape[1] or h % 2 == 0:
        raise ValueError("filters must be square with odd extent")
    plans = alignment_plans(h, region_map.subdivisions, scheme)
    rotated = plans[r % region_map.rotations].apply(w)
    patches = _im2col(a[None].astype(np.result_type(a, w)), h)
    return (patches @ rotated.reshape(-1))[0].reshape(a.shape[0], a.shape[1])
