"""Voxel quantization and Morton (Z-order) coding for signed 3D keys.

World points are floored into integer voxel keys, each key component is
shifted by +2^20 into unsigned 21-bit range, and the three coordinates are
bit-interleaved (x at bit 0, y at bit 1, z at bit 2 of every triad) into a
63-bit code. Interleaving uses constant-time magic-mask bit spreading; a
naive per-bit loop is kept as the reference oracle.

Everything here is vectorized numpy operating on int64 keys / uint64 codes;
scalar convenience wrappers sit on top. The numba kernels re-implement the
same spreading for use inside compiled loops.
"""
from __future__ import annotations

import numpy as np

KEY_BITS = 21
KEY_OFFSET = 1 << (KEY_BITS - 1)  # +2^20 shift making signed keys unsigned
KEY_MIN = -KEY_OFFSET
KEY_MAX = KEY_OFFSET - 1

_U = np.uint64
_MASK0 = _U(0x1FFFFF)
_MASK1 = _U(0x1F00000000FFFF)
_MASK2 = _U(0x1F0000FF0000FF)
_MASK3 = _U(0x100F00F00F00F00F)
_MASK4 = _U(0x10C30C30C30C30C3)
_MASK5 = _U(0x1249249249249249)

_AXIS_NAMES = ("x", "y", "z")


class KeyRangeError(ValueError):
    """Voxel key component outside the representable 21-bit signed range."""


def quantize(points: np.ndarray, edge: float) -> np.ndarray:
    """Floor world points into integer voxel keys at the given edge length.

    True floor division: negative coordinates round toward -infinity.
    """
    if edge <= 0.0:
        raise ValueError(f"voxel edge must be positive, got {edge}")
    pts = np.asarray(points, dtype=np.float64)
    return np.floor(pts / edge).astype(np.int64)


def in_range(keys: np.ndarray) -> np.ndarray:
    """Boolean mask of keys whose components all fit the 21-bit range."""
    k = np.asarray(keys, dtype=np.int64)
    return np.all((k >= KEY_MIN) & (k <= KEY_MAX), axis=-1)


def check_range(keys: np.ndarray) -> None:
    """Raise KeyRangeError naming the first offending axis."""
    k = np.atleast_2d(np.asarray(keys, dtype=np.int64))
    bad = (k < KEY_MIN) | (k > KEY_MAX)
    if bad.any():
        axis = int(np.argmax(bad.any(axis=0)))
        value = int(k[bad[:, axis], axis][0])
        raise KeyRangeError(
            f"voxel key {_AXIS_NAMES[axis]}={value} outside "
            f"[{KEY_MIN}, {KEY_MAX}]"
        )


def spread_bits(x: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of x so bit i lands at bit 3i (magic masks)."""
    x = np.asarray(x, dtype=np.uint64) & _MASK0
    x = (x | (x << _U(32))) & _MASK1
    x = (x | (x << _U(16))) & _MASK2
    x = (x | (x << _U(8))) & _MASK3
    x = (x | (x << _U(4))) & _MASK4
    x = (x | (x << _U(2))) & _MASK5
    return x


def compact_bits(x: np.ndarray) -> np.ndarray:
    """Inverse of spread_bits: gather every third bit back together."""
    x = np.asarray(x, dtype=np.uint64) & _MASK5
    x = (x ^ (x >> _U(2))) & _MASK4
    x = (x ^ (x >> _U(4))) & _MASK3
    x = (x ^ (x >> _U(8))) & _MASK2
    x = (x ^ (x >> _U(16))) & _MASK1
    x = (x ^ (x >> _U(32))) & _MASK0
    return x


def spread_bits_naive(x: int) -> int:
    # per-bit reference oracle for the magic-mask spreader
    out = 0
    for i in range(KEY_BITS):
        out |= ((int(x) >> i) & 1) << (3 * i)
    return out


def encode_unsigned(kx, ky, kz) -> np.ndarray:
    """Interleave non-negative 21-bit coordinates; no sign offset applied.

    This is the textbook-illustration convention: encode_unsigned(1, 1, 0)
    is 3. Production code paths go through encode(), which offsets signed
    keys first.
    """
    return (
        spread_bits(kx)
        | (spread_bits(ky) << _U(1))
        | (spread_bits(kz) << _U(2))
    )


def encode(keys: np.ndarray) -> np.ndarray:
    """Signed voxel keys (..., 3) -> 63-bit Morton codes (...,)."""
    k = np.asarray(keys, dtype=np.int64)
    off = (k + KEY_OFFSET).astype(np.uint64)
    return encode_unsigned(off[..., 0], off[..., 1], off[..., 2])


def decode(codes: np.ndarray) -> np.ndarray:
    """Exact inverse of encode: Morton codes (...,) -> signed keys (..., 3)."""
    c = np.asarray(codes, dtype=np.uint64)
    out = np.empty(c.shape + (3,), dtype=np.int64)
    out[..., 0] = compact_bits(c).astype(np.int64) - KEY_OFFSET
    out[..., 1] = compact_bits(c >> _U(1)).astype(np.int64) - KEY_OFFSET
    out[..., 2] = compact_bits(c >> _U(2)).astype(np.int64) - KEY_OFFSET
    return out


def encode_key(kx: int, ky: int, kz: int) -> int:
    """Scalar encode with range checking."""
    key = np.array([kx, ky, kz], dtype=np.int64)
    check_range(key)
    return int(encode(key))


def decode_code(code: int) -> tuple[int, int, int]:
    k = decode(np.uint64(code))
    return int(k[0]), int(k[1]), int(k[2])


def parent_key(keys: np.ndarray) -> np.ndarray:
    """Fine-level key -> coarse-level key: componentwise floor division by 3."""
    return np.floor_divide(np.asarray(keys, dtype=np.int64), 3)


def child_slot(fine_keys: np.ndarray) -> np.ndarray:
    """Index 0..26 of a fine key within its coarse cell's 3x3x3 block."""
    k = np.asarray(fine_keys, dtype=np.int64)
    d = k - 3 * parent_key(k)
    return d[..., 0] + 3 * d[..., 1] + 9 * d[..., 2]


def cell_centers(keys: np.ndarray, edge: float) -> np.ndarray:
    """World coordinates of voxel cell centers."""
    return (np.asarray(keys, dtype=np.float64) + 0.5) * edge
