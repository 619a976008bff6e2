from __future__ import annotations

import logging
from functools import lru_cache
from typing import List

import numpy as np

from .errors import DimensionError, ShapeError
from .key_hashing import derive_seeds
from .models import BaselineParams, Embedding, IndexCode, SchemeName, SecretKey

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Keyed randomness
# ---------------------------------------------------------------------------


def _slot_generators(key: SecretKey, tag: str, count: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in derive_seeds(key, tag, count)]


@lru_cache(maxsize=8)
def _wta_permutations(key_bytes: bytes, m_codes: int, window_k: int, dim: int) -> np.ndarray:
    gens = _slot_generators(SecretKey(key_bytes), f"WTA:{dim}:{window_k}", m_codes)
    perms = np.stack([g.permutation(dim)[:window_k] for g in gens])
    perms.setflags(write=False)
    return perms


@lru_cache(maxsize=4)
def _iom_projections(key_bytes: bytes, m_codes: int, proj_q: int, dim: int) -> np.ndarray:
    gens = _slot_generators(SecretKey(key_bytes), f"IoM:{dim}:{proj_q}", m_codes)
    mats = np.stack([g.standard_normal((proj_q, dim)) for g in gens])
    mats.setflags(write=False)
    return mats


@lru_cache(maxsize=8)
def _roe_projection(key_bytes: bytes, roe_dim: int, dim: int) -> np.ndarray:
    (gen,) = _slot_generators(SecretKey(key_bytes), f"RoE:{dim}:{roe_dim}", 1)
    mat = gen.standard_normal((roe_dim, dim))
    mat.setflags(write=False)
    return mat


def _key_bytes(params: BaselineParams) -> bytes:
    if params.seed_key is None:
        raise ValueError(f"{params.scheme.value} hashing needs a seed key (BaselineParams.with_key)")
    return params.seed_key.value


# ---------------------------------------------------------------------------
# Vectorized cores (matrices injectable for tests)
# ---------------------------------------------------------------------------


def wta_codes(X: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Argmax position inside each permuted window; ties go to the lowest index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.argmax(X[:, perms], axis=-1)


def iom_codes(X: np.ndarray, projections: np.ndarray) -> np.ndarray:
    """Index of the largest projection per slot; `projections` is (m, q, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    m, q, d = projections.shape
    proj = (X @ projections.reshape(m * q, d).T).reshape(X.shape[0], m, q)
    return np.argmax(proj, axis=-1)


def rank_of_elements(Y: np.ndarray) -> np.ndarray:
    """rank_i = number of strictly smaller entries in the same row."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    return (Y[:, None, :] < Y[:, :, None]).sum(axis=-1)


def roe_codes(X: np.ndarray, projection: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return rank_of_elements(X @ projection.T)


def baseline_codes(X: np.ndarray, params: BaselineParams) -> np.ndarray:
    """Codes for every row of X as an (N, slots) integer array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    dim = X.shape[1]
    key = _key_bytes(params)

    if params.scheme is SchemeName.WTA:
        if params.window_k > dim:
            raise DimensionError(f"WTA window {params.window_k} exceeds embedding dim {dim}")
        return wta_codes(X, _wta_permutations(key, params.m_codes, params.window_k, dim))
    if params.scheme is SchemeName.IOM:
        return iom_codes(X, _iom_projections(key, params.m_codes, params.proj_q, dim))
    if params.scheme is SchemeName.ROE:
        return roe_codes(X, _roe_projection(key, params.roe_dim, dim))
    raise ValueError(f"not a baseline scheme: {params.scheme}")


# ---------------------------------------------------------------------------
# Single-embedding operations
# ---------------------------------------------------------------------------


def _hash_one(e: Embedding, params: BaselineParams, scheme: SchemeName) -> IndexCode:
    if params.scheme is not scheme:
        raise ValueError(f"params are for {params.scheme.value}, not {scheme.value}")
    codes = baseline_codes(e.values[None, :], params)[0]
    return IndexCode(indices=tuple(int(c) for c in codes), arity=params.arity)


def wta_hash(e: Embedding, params: BaselineParams) -> IndexCode:
    return _hash_one(e, params, SchemeName.WTA)


def iom_hash(e: Embedding, params: BaselineParams) -> IndexCode:
    return _hash_one(e, params, SchemeName.IOM)


def roe_hash(e: Embedding, params: BaselineParams) -> IndexCode:
    return _hash_one(e, params, SchemeName.ROE)


def baseline_hash(e: Embedding, params: BaselineParams) -> IndexCode:
    return _hash_one(e, params, params.scheme)


def index_similarity(c1: IndexCode, c2: IndexCode) -> float:
    if len(c1) != len(c2) or c1.arity != c2.arity:
        raise ShapeError(
            f"code shapes differ: {len(c1)} slots/arity {c1.arity} vs {len(c2)} slots/arity {c2.arity}"
        )
    if len(c1) == 0:
        raise ShapeError("cannot compare empty codes")
    same = sum(1 for a, b in zip(c1.indices, c2.indices) if a == b)
    return same / len(c1)


def index_similarity_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise slot agreement of two (N, slots) code arrays."""
    if A.shape != B.shape:
        raise ShapeError(f"code arrays differ in shape: {A.shape} vs {B.shape}")
    return (A == B).mean(axis=1)
