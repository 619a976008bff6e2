from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal, localcontext

import numpy as np

from .errors import DimensionError, EncodingRangeError, NonFiniteError
from .models import BinaryTemplate, Embedding, SchemeParams

# Quantized values must fit a signed machine word.
INT_LIMIT = 2 ** 63

# Below this magnitude a float64 product x * 10**p is within 2**-22 of the
# exact product, so only near-half fractions can round differently.
_FLOAT_EXACT_LIMIT = 2.0 ** 30
_HALF_TOLERANCE = 1e-6

# 10.0 ** p is exact up to here; larger precisions take the Decimal path.
_MAX_FLOAT_PRECISION = 22


def roundoff(x: float, p: int) -> int:
    """
    r(x) = round(x * 10**p), half away from zero, computed on the exact decimal
    value of the float. Deliberately many-to-one: r(3.6) == r(3.9) == 4 at p=0.
    """
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteError(f"roundoff needs a finite value, got {x}")
    if p < 0:
        raise ValueError(f"precision p must be >= 0, got {p}")
    with localcontext() as ctx:
        ctx.prec = 1200
        q = Decimal(x).scaleb(int(p)).to_integral_value(rounding=ROUND_HALF_UP)
    if abs(q) >= INT_LIMIT:
        raise EncodingRangeError(f"roundoff({x}, {p}) = {q} exceeds the 64-bit integer range")
    return int(q)


def roundoff_array(values: np.ndarray, p: int) -> np.ndarray:
    """Vectorized `roundoff`; bit-identical to the scalar version."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("roundoff needs finite values")
    if p < 0:
        raise ValueError(f"precision p must be >= 0, got {p}")

    if p > _MAX_FLOAT_PRECISION:
        flat = [roundoff(float(v), p) for v in values.ravel()]
        return np.array(flat, dtype=np.int64).reshape(values.shape)

    scaled = values * (10.0 ** p)
    mag = np.abs(scaled)
    frac = mag - np.floor(mag)
    suspect = (np.abs(frac - 0.5) < _HALF_TOLERANCE) | (mag >= _FLOAT_EXACT_LIMIT)

    safe_mag = np.where(suspect, 0.0, mag)
    out = (np.sign(scaled) * np.floor(safe_mag + 0.5)).astype(np.int64)
    for i in np.flatnonzero(suspect):
        out.flat[i] = roundoff(float(values.flat[i]), p)
    return out


def gray_encode(m: int, l: int) -> str:
    """Reflected binary code of m as an l-character bit string, MSB first."""
    m, l = int(m), int(l)
    if l < 1:
        raise ValueError(f"bit width l must be >= 1, got {l}")
    if m < 0 or m >= (1 << l):
        raise EncodingRangeError(f"magnitude {m} does not fit in {l} bits")
    return format(m ^ (m >> 1), f"0{l}b")


def gray_decode(g: str) -> int:
    if not g or any(c not in "01" for c in g):
        raise ValueError(f"gray_decode needs a non-empty bit string, got {g!r}")
    n = int(g, 2)
    mask = n >> 1
    while mask:
        n ^= mask
        mask >>= 1
    return n


def clamp_magnitude(m: int, l: int) -> int:
    if m < 0:
        raise ValueError(f"magnitude must be non-negative, got {m}")
    return min(int(m), (1 << int(l)) - 1)


def binarize_batch(matrix: np.ndarray, params: SchemeParams) -> np.ndarray:
    """
    Binarize N embeddings at once.

    Returns an (N, n) uint8 array of 0/1 bits with n = d * (l + 1). Each feature
    contributes a block [sign][l-bit graycode of the clamped magnitude]; the sign
    bit is 1 for r(f) >= 0 and 0 for r(f) < 0.
    """
    X = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if X.shape[1] != params.dim_d:
        raise DimensionError(f"embedding dim {X.shape[1]} != params.dim_d {params.dim_d}")

    q = roundoff_array(X, params.precision_p)
    l = params.bits_l
    mag = np.minimum(np.abs(q), np.int64((1 << l) - 1))
    gray = mag ^ (mag >> 1)

    shifts = np.arange(l - 1, -1, -1, dtype=np.int64)
    mag_bits = ((gray[..., None] >> shifts) & 1).astype(np.uint8)
    sign = (q >= 0).astype(np.uint8)[..., None]
    blocks = np.concatenate([sign, mag_bits], axis=-1)
    return blocks.reshape(X.shape[0], params.template_len)


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack (N, n) 0/1 rows into (N, ceil(n/8)) bytes, little-endian bit order."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=-1, bitorder="little")


def binarize(e: Embedding, params: SchemeParams) -> BinaryTemplate:
    """T(v): roundoff, sign bit and graycode for every feature, concatenated."""
    if e.dim != params.dim_d:
        raise DimensionError(f"embedding dim {e.dim} != params.dim_d {params.dim_d}")
    bits = binarize_batch(e.values[None, :], params)[0]
    return BinaryTemplate.from_array(bits)
