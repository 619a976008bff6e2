from __future__ import annotations

import hashlib
from typing import Callable, Dict, List, Union

import numpy as np

from .errors import UnknownHashError
from .models import HashId, KeyDigest, SecretKey

BLOCK_BITS = 256

_BASE_HASHES: Dict[HashId, Callable[[bytes], "hashlib._Hash"]] = {
    HashId.SHA256: hashlib.sha256,
    HashId.SHA3_256: hashlib.sha3_256,
    HashId.BLAKE2S: hashlib.blake2s,
}


def _base_hash(hash_id: Union[HashId, str]):
    hid = HashId.parse(hash_id)
    try:
        return _BASE_HASHES[hid]
    except KeyError:
        raise UnknownHashError(f"no base hash registered for {hid.value}")


def expand(data: bytes, n_bits: int, hash_id: Union[HashId, str] = HashId.SHA256) -> bytes:
    """
    Counter-mode expansion: D_0 || D_1 || ... with
    D_j = BaseHash(data || uint32_be(j)), long enough to cover n_bits.
    """
    if n_bits < 1:
        raise ValueError(f"n must be >= 1, got {n_bits}")
    h = _base_hash(hash_id)
    n_blocks = -(-int(n_bits) // BLOCK_BITS)
    if n_blocks > 0xFFFFFFFF:
        raise ValueError(f"n={n_bits} exceeds the 32-bit block counter")
    return b"".join(h(data + j.to_bytes(4, "big")).digest() for j in range(n_blocks))


def hash_key(k: SecretKey, n: int, hash_id: Union[HashId, str] = HashId.SHA256) -> KeyDigest:
    """
    H(k) truncated to exactly n bits. Stream bits are read MSB first from each
    digest byte, so shorter digests are prefixes of longer ones.
    """
    stream = np.frombuffer(expand(k.value, n, hash_id), dtype=np.uint8)
    bits = np.unpackbits(stream, count=int(n), bitorder="big")
    return KeyDigest.from_array(bits)


def derive_seeds(k: SecretKey, tag: str, count: int, hash_id: Union[HashId, str] = HashId.SHA256) -> List[int]:
    """
    `count` independent 256-bit integers from the keyed stream of (k || tag);
    seed j is block j of the counter-mode expansion.
    """
    data = k.value + b"|" + tag.encode("utf-8")
    stream = expand(data, BLOCK_BITS * int(count), hash_id)
    step = BLOCK_BITS // 8
    return [int.from_bytes(stream[i * step:(i + 1) * step], "big") for i in range(int(count))]
