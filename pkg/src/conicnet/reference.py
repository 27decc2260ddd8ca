"""Slow, literal reference implementations used to cross-check the fast paths.

Everything here is written as plain per-element loops over the defining
sums and case analyses, deliberately sharing no machinery with the
vectorized implementations (filter rotation excepted, where noted). The
verification suites and the test suite compare the two routes.
"""

from __future__ import annotations

import math

import numpy as np

from .conic import Activation, ConicConvLayer, downsampled_extent
from .geometry import InterpScheme, RegionKind, RegionMap, classify_point, rotate_filter


def naive_correlate(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_{x'} w(x') * a(x + x'), zero padding, same-size output."""
    M, N, d = a.shape
    h, hw, _ = w.shape
    hh, hw2 = (h - 1) // 2, (hw - 1) // 2
    out = np.zeros((M, N), dtype=np.float64)
    for i in range(M):
        for j in range(N):
            s = 0.0
            for u in range(h):
                for v in range(hw):
                    ii, jj = i + u - hh, j + v - hw2
                    if 0 <= ii < M and 0 <= jj < N:
                        s += float(np.dot(w[u, v], a[ii, jj]))
            out[i, j] = s
    return out


def naive_conic_forward(a: np.ndarray, layer: ConicConvLayer) -> np.ndarray:
    """Direct per-pixel evaluation of the cased conic layer.

    Rotated filters come from rotate_filter at angle -theta_r (the alignment
    orientation); the convolution, case selection, pooling, subsampling,
    bias and activation are all evaluated literally.
    """
    M = a.shape[0]
    R = layer.subdivisions
    nrot = 4 * R
    planes = []
    for r in range(nrot):
        theta = -2.0 * math.pi * r / nrot
        per_filter = []
        for k in range(layer.filter_count):
            wk = rotate_filter(layer.filters[k].astype(np.float64), theta, layer.interp)
            per_filter.append(naive_correlate(a.astype(np.float64), wk))
        planes.append(per_filter)

    c = (M - 1) // 2
    Mp = downsampled_extent(M, layer.downsample)
    m = (Mp - 1) // 2
    out = np.zeros((Mp, Mp, layer.filter_count), dtype=np.float64)
    pool_n = nrot if layer.origin_pool_all else R
    for oi in range(Mp):
        for oj in range(Mp):
            i = c + layer.downsample * (oi - m)
            j = c + layer.downsample * (oj - m)
            label = classify_point(i - c, j - c, R)
            for k in range(layer.filter_count):
                if label.kind == RegionKind.CONE:
                    val = planes[label.index][k][i, j]
                elif label.kind == RegionKind.BOUNDARY:
                    val = max(
                        planes[label.index][k][i, j],
                        planes[(label.index + 1) % nrot][k][i, j],
                    )
                else:
                    val = max(planes[r][k][i, j] for r in range(pool_n))
                pre = val + float(layer.biases[k])
                out[oi, oj, k] = max(pre, 0.0) if layer.activation is Activation.RELU else pre
    return out


def naive_dft2(z: np.ndarray) -> np.ndarray:
    """Literal double-sum 2D DFT (unnormalized), O(N^2) per output bin."""
    K, L = z.shape
    out = np.zeros((K, L), dtype=np.complex128)
    for k in range(K):
        for i in range(L):
            acc = 0.0 + 0.0j
            for h in range(K):
                for r in range(L):
                    acc += z[h, r] * np.exp(-2j * math.pi * (h * k / K + r * i / L))
            out[k, i] = acc
    return out


def naive_matvec(W: np.ndarray, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    out = np.zeros(W.shape[0], dtype=np.float64)
    for i in range(W.shape[0]):
        s = float(c[i])
        for j in range(W.shape[1]):
            s += float(W[i, j]) * float(x[j])
        out[i] = s
    return out


def bilinear_sample(img: np.ndarray, x: float, y: float) -> float:
    """Scalar bilinear lookup on a 2D array, zero outside the support."""
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    total = 0.0
    for dx, wx in ((0, 1.0 - fx), (1, fx)):
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            xi, yi = x0 + dx, y0 + dy
            if 0 <= xi < img.shape[0] and 0 <= yi < img.shape[1]:
                total += wx * wy * float(img[xi, yi])
    return total


def naive_rotate_filter(w2d: np.ndarray, theta: float) -> np.ndarray:
    """Bilinear resample of a 2D filter at coordinates rotated by +theta."""
    size = w2d.shape[0]
    c = (size - 1) / 2.0
    out = np.zeros_like(w2d, dtype=np.float64)
    for i in range(size):
        for j in range(size):
            x, y = i - c, j - c
            sx = math.cos(theta) * x - math.sin(theta) * y + c
            sy = math.sin(theta) * x + math.cos(theta) * y + c
            out[i, j] = bilinear_sample(w2d, sx, sy)
    return out
