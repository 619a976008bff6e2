from __future__ import annotations

import logging
from typing import Union

import numpy as np

from .binary_encoding import binarize
from .errors import DimensionError, ShapeError
from .key_hashing import hash_key
from .models import (
    BinaryTemplate,
    Embedding,
    MatchResult,
    ProtectedTemplate,
    SchemeParams,
    SecretKey,
    popcount,
)

logger = logging.getLogger(__name__)


def protect(k: SecretKey, e: Embedding, params: SchemeParams) -> ProtectedTemplate:
    """f(k, v) = H(k) XOR T(v)."""
    t = binarize(e, params)
    h = hash_key(k, params.template_len, params.hash_id)
    return ProtectedTemplate(bits=t.xor(h), params=params)


def recover(t: ProtectedTemplate, k: SecretKey) -> BinaryTemplate:
    """
    XOR the key digest back out. A wrong key is not an error: it yields
    pseudorandom bits that fail at matching.
    """
    return t.bits.xor(hash_key(k, t.bits.len_n, t.params.hash_id))


def hamming_distance(t1: BinaryTemplate, t2: BinaryTemplate) -> int:
    return t1.hamming_distance(t2)


def matching_bits(t1: BinaryTemplate, t2: BinaryTemplate) -> int:
    if t1.len_n != t2.len_n:
        raise ShapeError(f"length mismatch: {t1.len_n} vs {t2.len_n}")
    return t1.len_n - hamming_distance(t1, t2)


def similarity_from_matches(m: Union[int, np.ndarray], n: int):
    """S = m / (2n - m); 1 for identical templates, 0 for complementary ones."""
    return m / (2 * n - m)


def similarity(t1: BinaryTemplate, t2: BinaryTemplate) -> float:
    return float(similarity_from_matches(matching_bits(t1, t2), t1.len_n))


def authenticate_match(
    stored: ProtectedTemplate,
    k: SecretKey,
    probe: Embedding,
    threshold: float,
) -> MatchResult:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    if probe.dim != stored.params.dim_d:
        raise DimensionError(f"probe dim {probe.dim} != enrolled dim {stored.params.dim_d}")

    recovered = recover(stored, k)
    current = binarize(probe, stored.params)
    m = matching_bits(recovered, current)
    s = float(similarity_from_matches(m, recovered.len_n))
    return MatchResult(similarity=s, matching_bits=m, threshold=float(threshold), accepted=s >= threshold)


def cancelability_case(
    t1: ProtectedTemplate,
    t2: ProtectedTemplate,
    same_key: bool,
    same_binary: bool,
) -> BinaryTemplate:
    """
    t1 XOR t2. With a shared key H(k) cancels (T(v1) XOR T(v2)); with a shared
    binarization T(v) cancels (H(k1) XOR H(k2)); with both it is all zeros.
    """
    out = t1.bits.xor(t2.bits)
    weight = int(popcount(out.packed()))
    if same_key and same_binary and weight != 0:
        raise ValueError("templates claimed to share key and binarization but differ")
    logger.debug("cancelability case same_key=%s same_binary=%s weight=%d", same_key, same_binary, weight)
    return out


def serialize_template(t: ProtectedTemplate) -> str:
    """`<params text>#<lowercase hex of packed bits>`."""
    return f"{t.params.to_text()}#{t.bits.hex()}"


def deserialize_template(text: str) -> ProtectedTemplate:
    head, sep, body = text.partition("#")
    if not sep:
        raise ValueError("protected template text needs a params header")
    params = SchemeParams.from_text(head)
    return ProtectedTemplate(bits=BinaryTemplate.from_hex(body, params.template_len), params=params)
