import hashlib

import numpy as np
import pytest

from src.charvoc.errors import UnknownHashError
from src.charvoc.key_hashing import derive_seeds, expand, hash_key
from src.charvoc.models import HashId, SecretKey


def test_hash_key_is_deterministic():
    k = SecretKey.from_text("1234")
    assert hash_key(k, 777) == hash_key(k, 777)


def test_first_block_is_base_hash_of_key_and_counter():
    k = SecretKey(b"pin-0000")
    d = hash_key(k, 256)
    expected = np.unpackbits(np.frombuffer(hashlib.sha256(b"pin-0000" + b"\x00\x00\x00\x00").digest(), dtype=np.uint8))
    assert d.to_array().tolist() == expected.tolist()


@pytest.mark.parametrize("hash_id", list(HashId))
def test_prefix_consistency(hash_id):
    k = SecretKey(b"prefix")
    short = hash_key(k, 256, hash_id).to_bitstring()
    long = hash_key(k, 512, hash_id).to_bitstring()
    assert long.startswith(short)
    assert hash_key(k, 1000, hash_id).to_bitstring().startswith(hash_key(k, 13, hash_id).to_bitstring())


@pytest.mark.parametrize("n", [1, 7, 8, 9, 255, 256, 257, 16 * 1024, 10 ** 6])
def test_exact_length(n):
    d = hash_key(SecretKey(b"k"), n)
    assert d.len_n == n
    assert len(d.bits) == (n + 7) // 8


def test_hash_families_differ():
    k = SecretKey(b"same key")
    digests = {h: hash_key(k, 256, h).hex() for h in HashId}
    assert len(set(digests.values())) == len(HashId)


def test_unknown_hash_id():
    with pytest.raises(UnknownHashError):
        hash_key(SecretKey(b"k"), 16, "md5")
    with pytest.raises(ValueError):
        hash_key(SecretKey(b"k"), 0)


def test_distinct_keys_hamming_is_binomial():
    n = 4096
    rng = np.random.default_rng(5)
    dists = []
    for _ in range(100):
        k1, k2 = SecretKey(rng.bytes(8)), SecretKey(rng.bytes(8))
        dists.append(hash_key(k1, n).hamming_distance(hash_key(k2, n)))
    assert abs(np.mean(dists) - n / 2) < 4 * 32 / np.sqrt(100)
    assert all(abs(d - n / 2) < 6 * 32 for d in dists)


def test_avalanche_on_single_bit_flip():
    n = 4096
    rng = np.random.default_rng(9)
    dists = []
    for _ in range(100):
        raw = bytearray(rng.bytes(8))
        base = hash_key(SecretKey(bytes(raw)), n)
        bit = int(rng.integers(64))
        raw[bit // 8] ^= 1 << (bit % 8)
        dists.append(base.hamming_distance(hash_key(SecretKey(bytes(raw)), n)))
    assert abs(np.mean(dists) - n / 2) < 4 * 32 / np.sqrt(100)


def test_secret_key_is_never_printed():
    k = SecretKey.from_text("hunter2")
    assert "hunter2" not in repr(k)
    assert "hunter2" not in str(k)
    with pytest.raises(ValueError):
        SecretKey(b"")


def test_derive_seeds():
    k = SecretKey(b"seed")
    a = derive_seeds(k, "WTA", 5)
    assert a == derive_seeds(k, "WTA", 5)
    assert derive_seeds(k, "WTA", 3) == a[:3]
    assert len(set(a)) == 5
    assert derive_seeds(k, "IoM", 5) != a
    assert all(0 <= s < 2 ** 256 for s in a)
    assert len(expand(b"x", 300)) == 64
