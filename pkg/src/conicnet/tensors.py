"""Dense-array primitives shared by every other module.

All values are plain numpy arrays (row-major, depth innermost). Centered
coordinates: a spatial extent M maps array index i to x = i - (M-1)/2, so
odd extents have a center pixel at (0, 0). Two precisions are used
throughout the project: float32 for training, float64 for verification.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

TRAIN_DTYPE = np.float32
VERIFY_DTYPE = np.float64

_MAGIC = b"RTNS"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(Exception):
    """Raised when a binary tensor/label file does not match its format."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 (permuted congruential) with a fixed seed.

    Equal seeds produce equal streams on every platform; all randomness in
    this package flows through generators created here or spawned from them.
    """
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent, reproducible child streams of a root seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def quarter_turn_coords(n: int, x: int, y: int) -> tuple[int, int]:
    """Index map for an exact rotation by n quarter turns about the origin."""
    n %= 4
    if n == 0:
        return (x, y)
    if n == 1:
        return (-y, x)
    if n == 2:
        return (-x, -y)
    return (y, -x)


def rot90(t: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Exact rotation of the two leading (spatial) axes about the grid center.

    The output at centered coordinate (x, y) equals the input at the
    quarter-turn image of (x, y); trailing axes (depth, ...) are carried
    along unchanged. Rectangular extents swap for odd turn counts. Four
    applications compose to the identity, bitwise.
    """
    if t.ndim < 2:
        raise ValueError("rot90 needs at least two spatial dimensions")
    # out[i, j] = in[H-1-j, i] for one turn, which is numpy's k=-1
    return np.rot90(t, k=-quarter_turns, axes=(0, 1)).copy()


def circular_shift(t: np.ndarray, axis: int, amount: int) -> np.ndarray:
    """out[i] = in[(i - amount) mod extent] along the given axis."""
    return np.roll(t, amount, axis=axis)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient oracle, evaluated in float64.

    Raises ValueError if f returns a non-finite value at any probe point.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite objective at element {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def pad_spatial_to_odd(t: np.ndarray) -> np.ndarray:
    """Zero-pad even spatial extents by one pixel on the right/bottom.

    Accepts (H, W, C) or (N, H, W, C); returns the input unchanged when both
    spatial extents are already odd. Note the grid center moves by half a
    pixel for padded inputs; no recentering shift is applied.
    """
    if t.ndim == 3:
        axes = (0, 1)
    elif t.ndim == 4:
        axes = (1, 2)
    else:
        raise ValueError("expected (H, W, C) or (N, H, W, C)")
    pad = [(0, 0)] * t.ndim
    changed = False
    for ax in axes:
        if t.shape[ax] % 2 == 0:
            pad[ax] = (0, 1)
            changed = True
    return np.pad(t, pad) if changed else t


def save_tensor(path, arr: np.ndarray) -> None:
    """Write the binary tensor container.

    Layout: magic "RTNS", u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank,
    rank little-endian u32 extents, then raw little-endian scalars row-major.
    """
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.float32:
        code = 0
    elif arr.dtype == np.float64:
        code = 1
    else:
        raise FormatError(f"unsupported dtype {arr.dtype} for {path}")
    if arr.ndim > 255:
        raise FormatError("rank too large")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBB", 1, code, arr.ndim))
        for extent in arr.shape:
            fh.write(struct.pack("<I", extent))
        fh.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(7)
        if len(head) != 7 or head[:4] != _MAGIC:
            raise FormatError(f"{path}: not a tensor file (bad magic)")
        version, code, rank = struct.unpack("<BBB", head[4:])
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        raw = fh.read(4 * rank)
        if len(raw) != 4 * rank:
            raise FormatError(f"{path}: truncated shape header")
        shape = struct.unpack(f"<{rank}I", raw) if rank else ()
        if any(e < 1 for e in shape):
            raise FormatError(f"{path}: extents must be >= 1, got {shape}")
        dtype = _DTYPE_CODES[code]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = fh.read(count * dtype.itemsize)
        if len(data) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated data section")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after data")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()
