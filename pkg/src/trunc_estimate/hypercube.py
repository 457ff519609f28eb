"""Bit-vector plumbing for the d-dimensional Boolean hypercube.

Points are numpy arrays of {0,1} (single points are 1-D of length d, batches
are (n, d) matrices).  For enumeration and hashing a point is packed into one
integer with coordinate i at bit i, which keeps full enumeration practical up
to the word-size limit.
"""

from __future__ import annotations

import functools

import numpy as np

from .errors import CapabilityError, DimensionMismatchError, DomainError

# Exact operations enumerate all 2^d points; beyond this the cost/memory is
# no longer negligible and callers must opt in explicitly.
ENUM_LIMIT = 20

# Packing uses one uint64 word per point.
PACK_LIMIT = 63


def check_dim(d):
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise DomainError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


def ensure_enumerable(d, limit=ENUM_LIMIT):
    """Raise CapabilityError when 2^d enumeration would exceed the ceiling."""
    d = check_dim(d)
    if d > limit:
        raise CapabilityError(
            f"exact enumeration over 2^{d} points exceeds the ceiling d <= {limit}"
        )
    return d


@functools.lru_cache(maxsize=32)
def _cube_cache(d):
    codes = np.arange(1 << d, dtype=np.uint64)
    bits = ((codes[:, None] >> np.arange(d, dtype=np.uint64)) & 1).astype(np.uint8)
    bits.setflags(write=False)
    return bits


def enumerate_cube(d, limit=ENUM_LIMIT):
    """All 2^d points as a read-only (2^d, d) uint8 matrix, row c = unpack(c)."""
    d = ensure_enumerable(d, limit)
    return _cube_cache(d)


def as_point(x, d=None):
    """Validate a single point of the hypercube and return it as uint8."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise DomainError(f"expected a 1-D bit vector, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise DomainError("bit vector entries must be 0 or 1")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatchError(
            f"bit vector has length {arr.shape[0]}, expected {d}"
        )
    return arr.astype(np.uint8)


def as_batch(x, d=None):
    """Validate a batch of points and return it as an (n, d) uint8 matrix."""
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DomainError(f"expected an (n, d) bit matrix, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise DimensionMismatchError(
            f"bit matrix has {arr.shape[1]} columns, expected {d}"
        )
    return arr.astype(np.uint8, copy=False)


def pack_bits(x):
    """Pack points into integer codes (coordinate i -> bit i).

    Accepts a single point or an (n, d) batch; returns an int or an int array.
    """
    arr = np.asarray(x, dtype=np.uint64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    d = arr.shape[1]
    if d > PACK_LIMIT:
        raise CapabilityError(f"cannot word-pack d={d} > {PACK_LIMIT} bits")
    weights = np.uint64(1) << np.arange(d, dtype=np.uint64)
    codes = (arr * weights).sum(axis=1)
    return int(codes[0]) if single else codes


def unpack_bits(codes, d):
    """Inverse of pack_bits; returns (n, d) uint8 (or (d,) for a scalar code)."""
    d = check_dim(d)
    if d > PACK_LIMIT:
        raise CapabilityError(f"cannot word-unpack d={d} > {PACK_LIMIT} bits")
    arr = np.asarray(codes, dtype=np.uint64)
    single = arr.ndim == 0
    if single:
        arr = arr[None]
    bits = ((arr[:, None] >> np.arange(d, dtype=np.uint64)) & 1).astype(np.uint8)
    return bits[0] if single else bits


def flip(x, i):
    """flip(x, i): the point with coordinate i negated."""
    x = np.asarray(x)
    out = x.copy()
    out[..., i] = 1 - out[..., i]
    return out


def parse_bitstring(text, d=None):
    """Parse '0110'-style text (character k -> coordinate k)."""
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise DomainError(f"not a bit string: {text!r}")
    if d is not None and len(text) != d:
        raise DimensionMismatchError(
            f"bit string {text!r} has length {len(text)}, expected {d}"
        )
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def format_bitstring(x):
    return "".join("1" if b else "0" for b in np.asarray(x).ravel())
