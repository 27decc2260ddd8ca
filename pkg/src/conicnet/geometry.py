"""Conic partition of the centered grid and filter rotation.

The centered M x M grid (M odd) is split, for a subdivision count R, into
4R open cones C_r = {theta_r < phi < theta_{r+1}}, their boundaries
B_r = {phi = theta_r} with theta_r = 2*pi*r/(4R), and the origin. phi is
the polar angle of (x, y) in [0, 2*pi). On the integer lattice the only
angles that can exactly equal some theta_r are the axes and (for even R)
the diagonals, so boundary membership is decided by exact integer tests;
a 1e-12 angle tolerance is kept as a documented safety net for other R.

Rotating a point by a quarter turn adds R to its cone/boundary index
(mod 4R); this is the invariant the equivariant convolution relies on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .tensors import rot90

_ANGLE_TOL = 1e-12


class RegionKind(enum.IntEnum):
    ORIGIN = 0
    CONE = 1
    BOUNDARY = 2


class RegionLabel(NamedTuple):
    kind: RegionKind
    index: int  # rotation index r in [0, 4R); 0 for the origin


class InterpScheme(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


def classify_point(x: int, y: int, subdivisions: int) -> RegionLabel:
    """Label a lattice point as Origin, Cone(r) or Boundary(r)."""
    R = subdivisions
    if R < 1:
        raise ValueError("subdivisions must be >= 1")
    if x == 0 and y == 0:
        return RegionLabel(RegionKind.ORIGIN, 0)

    # Exact boundary tests: the point's angle is k*pi/4 for some octant k
    # iff it lies on an axis or diagonal; that angle is a theta_r iff k*R
    # is even (Niven: no other lattice angle is a rational multiple of pi).
    k = None
    if y == 0:
        k = 0 if x > 0 else 4
    elif x == 0:
        k = 2 if y > 0 else 6
    elif x == y:
        k = 1 if x > 0 else 5
    elif x == -y:
        k = 3 if y > 0 else 7
    if k is not None and (k * R) % 2 == 0:
        return RegionLabel(RegionKind.BOUNDARY, (k * R) // 2)

    phi = math.atan2(y, x) % (2.0 * math.pi)
    step = math.pi / (2.0 * R)
    nearest = round(phi / step)
    if abs(phi - nearest * step) < _ANGLE_TOL:
        return RegionLabel(RegionKind.BOUNDARY, nearest % (4 * R))
    return RegionLabel(RegionKind.CONE, int(phi // step) % (4 * R))


@dataclass(frozen=True)
class RegionMap:
    """Per-pixel region labels for a centered size x size grid.

    kind and index are (size, size) arrays; index holds the rotation index
    r for cones and boundaries and 0 at the origin. Instances are immutable
    and safe to share.
    """

    size: int
    subdivisions: int
    kind: np.ndarray
    index: np.ndarray

    @property
    def rotations(self) -> int:
        return 4 * self.subdivisions

    @property
    def center(self) -> int:
        return (self.size - 1) // 2

    def label_at(self, x: int, y: int) -> RegionLabel:
        c = self.center
        return RegionLabel(
            RegionKind(int(self.kind[x + c, y + c])), int(self.index[x + c, y + c])
        )


@lru_cache(maxsize=None)
def build_region_map(size: int, subdivisions: int) -> RegionMap:
    """Classify every pixel of the centered grid. size must be odd."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"region map needs an odd extent, got {size}")
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")
    kind = np.empty((size, size), dtype=np.uint8)
    index = np.zeros((size, size), dtype=np.int32)
    c = (size - 1) // 2
    for i in range(size):
        for j in range(size):
            label = classify_point(i - c, j - c, subdivisions)
            kind[i, j] = label.kind
            index[i, j] = label.index
    kind.setflags(write=False)
    index.setflags(write=False)
    return RegionMap(size, subdivisions, kind, index)


class _ResampleTable(NamedTuple):
    """Sparse sampler: out.flat[p] = sum_s weight[p, s] * in.flat[src[p, s]]."""

    src: np.ndarray  # (P, S) int32 flat source indices
    weight: np.ndarray  # (P, S) float64


@dataclass(frozen=True)
class RotationPlan:
    """Filter rotation as exact quarter turns around one optional resample.

    apply(w) = rot90(resample(rot90(w, pre)), post). Keeping the fractional
    part as a single resample and the quarter turns as exact index maps is
    what makes plans for angles differing by n*pi/2 agree exactly, which
    the equivariance property depends on.
    """

    size: int
    pre: int
    table: _ResampleTable | None
    post: int

    def apply(self, w: np.ndarray) -> np.ndarray:
        out = rot90(w, self.pre) if self.pre % 4 else w
        if self.table is not None:
            flat = out.reshape(self.size * self.size, -1)
            gathered = flat[self.table.src]  # (P, S, d)
            wgt = self.table.weight.astype(flat.dtype)
            out = (gathered * wgt[:, :, None]).sum(axis=1)
            out = out.reshape(w.shape)
        return rot90(out, self.post) if self.post % 4 else np.ascontiguousarray(out)

    def apply_adjoint(self, g: np.ndarray) -> np.ndarray:
        """Transpose of apply, for routing gradients back to the filter."""
        out = rot90(g, -self.post) if self.post % 4 else g
        if self.table is not None:
            flat = out.reshape(self.size * self.size, -1)
            acc = np.zeros_like(flat)
            wgt = self.table.weight.astype(flat.dtype)
            np.add.at(acc, self.table.src.reshape(-1),
                      (flat[:, None, :] * wgt[:, :, None]).reshape(-1, flat.shape[1]))
            out = acc.reshape(g.shape)
        return rot90(out, -self.pre) if self.pre % 4 else np.ascontiguousarray(out)


def _resample_table(size: int, angle: float, scheme: InterpScheme) -> _ResampleTable:
    """Sampler at coordinates rotated by `angle`; outside the support reads 0."""
    c = (size - 1) / 2.0
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    x = ii - c
    y = jj - c
    sx = cos_a * x - sin_a * y + c
    sy = sin_a * x + cos_a * y + c
    P = size * size
    sx = sx.reshape(P)
    sy = sy.reshape(P)
    if scheme is InterpScheme.NEAREST:
        xi = np.floor(sx + 0.5).astype(np.int64)
        yi = np.floor(sy + 0.5).astype(np.int64)
        ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
        src = np.where(ok, xi * size + yi, 0).astype(np.int32).reshape(P, 1)
        weight = ok.astype(np.float64).reshape(P, 1)
        return _ResampleTable(src, weight)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    src = np.zeros((P, 4), dtype=np.int32)
    weight = np.zeros((P, 4), dtype=np.float64)
    for s, (dx, dy) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        xi = x0 + dx
        yi = y0 + dy
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
        src[:, s] = np.where(ok, xi * size + yi, 0)
        weight[:, s] = np.where(ok, wx * wy, 0.0)
    return _ResampleTable(src, weight)


def _plan(size: int, pre: int, frac: float, post: int, scheme: InterpScheme) -> RotationPlan:
    table = None if abs(frac) < _ANGLE_TOL else _resample_table(size, frac, scheme)
    return RotationPlan(size, pre % 4, table, post % 4)


def rotate_filter(
    w: np.ndarray, theta: float, scheme: InterpScheme = InterpScheme.BILINEAR
) -> np.ndarray:
    """Rotate a centered odd filter; exact index remap at multiples of pi/2.

    The output at centered (x, y) samples w at the coordinates rotated by
    +theta; at theta = n*pi/2 this is exactly rot90(w, n) for either
    interpolation scheme. Other angles resample (square filters only), with
    samples falling outside the support treated as zero.
    """
    if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise ValueError("filters must have odd spatial extents")
    theta = float(theta) % (2.0 * math.pi)
    n = round(theta / (math.pi / 2.0))
    frac = theta - n * (math.pi / 2.0)
    if abs(frac) < _ANGLE_TOL:
        return rot90(w, n)
    if w.shape[0] != w.shape[1]:
        raise ValueError("fractional rotations need square filters")
    return _plan(w.shape[0], n, frac, 0, scheme).apply(w)


@lru_cache(maxsize=None)
def alignment_plans(size: int, subdivisions: int, scheme: InterpScheme) -> tuple[RotationPlan, ...]:
    """Rotation plans used by the conic layer: plan r aligns filter content
    with angle theta_r (a content rotation by +theta_r, i.e. sampling at
    coordinates rotated by -theta_r).

    Built so that plans r and r + n*subdivisions share the identical
    fractional resample and differ only by exact quarter turns; the layer's
    equivariance under quarter-turn input rotations is exact because of this.
    """
    R = subdivisions
    plans = []
    for r in range(4 * R):
        q, rem = divmod(r, R)
        plans.append(_plan(size, 0, -rem * math.pi / (2.0 * R), -q, scheme))
    return tuple(plans)


@lru_cache(maxsize=None)
def sampling_plans(size: int, subdivisions: int, scheme: InterpScheme) -> tuple[RotationPlan, ...]:
    """Plans realizing rotate_filter(w, theta_r) for r in [0, 4R), with the
    same exact quarter-turn consistency as alignment_plans. Used by the
    transition layer's rotated weight tensors."""
    R = subdivisions
    plans = []
    for r in range(4 * R):
        q, rem = divmod(r, R)
        plans.append(_plan(size, 0, rem * math.pi / (2.0 * R), q, scheme))
    return tuple(plans)
