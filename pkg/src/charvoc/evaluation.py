from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .baseline_hashes import baseline_codes, baseline_hash, index_similarity_rows
from .binary_encoding import binarize_batch, pack_rows
from .config import BaselineConfig, EvalConfig
from .errors import DimensionError
from .hashgray_xor import protect, similarity_from_matches
from .key_hashing import hash_key
from .models import (
    BaselineParams,
    Embedding,
    KeyPolicy,
    SchemeName,
    SchemeParams,
    ScoreLabel,
    ScoreSet,
    SecretKey,
    SpeakerDataset,
    popcount,
)

logger = logging.getLogger(__name__)

# Unprotected reference: cosine similarity mapped to [0, 1].
COSINE = "cosine"

SchemeSelector = Union[SchemeName, str]

_POLICY_LABEL = {
    KeyPolicy.PER_USER_KEY: ScoreLabel.SAME_KEY,
    KeyPolicy.STOLEN_KEY: ScoreLabel.STOLEN_KEY,
    KeyPolicy.FRESH_KEY: ScoreLabel.MATED,
    KeyPolicy.REVOKED_KEY: ScoreLabel.REVOKED,
}


def parse_scheme(s: SchemeSelector) -> Union[SchemeName, str]:
    if isinstance(s, SchemeName):
        return s
    if str(s).strip().lower() == COSINE:
        return COSINE
    return SchemeName.parse(s)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def generate_synthetic(
    speakers: int = 50,
    utterances: int = 10,
    dim: int = 192,
    sigma_within: float = 0.3,
    sigma_between: float = 1.0,
    seed: int = 7,
) -> SpeakerDataset:
    """
    Speaker s has a center mu_s ~ N(0, sigma_between^2 I); each utterance is
    the unit-normalized mu_s + N(0, sigma_within^2 I).
    """
    if speakers < 2 or utterances < 2:
        raise ValueError(f"need >= 2 speakers and >= 2 utterances, got {speakers} and {utterances}")
    if dim < 1 or sigma_within < 0 or sigma_between <= 0:
        raise ValueError("dim must be >= 1, sigma_within >= 0 and sigma_between > 0")

    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, sigma_between, size=(speakers, dim))
    noise = rng.normal(0.0, sigma_within, size=(speakers, utterances, dim))
    X = centers[:, None, :] + noise
    X /= np.linalg.norm(X, axis=-1, keepdims=True)

    width = max(3, len(str(speakers - 1)))
    embeddings = {
        f"spk{s:0{width}d}": [Embedding(X[s, u]) for u in range(utterances)]
        for s in range(speakers)
    }
    provenance = f"synthetic(seed={seed}, sigma_within={sigma_within}, sigma_between={sigma_between})"
    return SpeakerDataset(embeddings=embeddings, dim=dim, provenance=provenance)


@dataclass(frozen=True, eq=False)
class PairPlan:
    genuine: Tuple[np.ndarray, np.ndarray]   # (enroll row, probe row)
    impostor: Tuple[np.ndarray, np.ndarray]


def _genuine_pairs(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Same-speaker pairs (i < j), enumerated inside each speaker's rows."""
    gi, gj = [], []
    for s in np.unique(labels):
        rows = np.flatnonzero(labels == s)
        a, b = np.triu_indices(rows.size, k=1)
        gi.append(rows[a])
        gj.append(rows[b])
    return np.concatenate(gi), np.concatenate(gj)


def _sample_impostor_pairs(
    labels: np.ndarray, n_imp: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distinct cross-speaker pairs (i < j) drawn uniformly by rejection. Memory
    stays proportional to n_imp, not to the number of possible pairs.
    """
    n = labels.size
    keys = np.empty(0, dtype=np.int64)
    while keys.size < n_imp:
        draw = 2 * (n_imp - keys.size) + 16
        a = rng.integers(0, n, size=draw)
        b = rng.integers(0, n, size=draw)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        cross = labels[lo] != labels[hi]
        keys = np.concatenate([keys, lo[cross] * n + hi[cross]])
        # dedupe, keeping draw order so truncation stays uniform
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
    keys = np.sort(keys[:n_imp])
    return keys // n, keys % n


def plan_pairs(labels: np.ndarray, impostor_cap: int = 10, seed: int = 7) -> PairPlan:
    """
    Genuine = every same-speaker pair of distinct utterances; impostor = a
    seeded sample of cross-speaker pairs, at most impostor_cap x genuine.
    """
    labels = np.asarray(labels)
    gi, gj = _genuine_pairs(labels)

    n = labels.size
    _, sizes = np.unique(labels, return_counts=True)
    n_cross = n * (n - 1) // 2 - int((sizes * (sizes - 1) // 2).sum())
    n_imp = min(n_cross, impostor_cap * gi.size)
    rng = np.random.default_rng(seed)

    if 2 * n_imp >= n_cross:
        # dense request: the full cross set is at most twice the sample
        iu, ju = np.triu_indices(n, k=1)
        cross = labels[iu] != labels[ju]
        ci, cj = iu[cross], ju[cross]
        pick = np.sort(rng.choice(ci.size, size=n_imp, replace=False))
        return PairPlan(genuine=(gi, gj), impostor=(ci[pick], cj[pick]))

    ii, ij = _sample_impostor_pairs(labels, n_imp, rng)
    return PairPlan(genuine=(gi, gj), impostor=(ii, ij))


def _random_keys(rng: np.random.Generator, count: int) -> List[SecretKey]:
    return [SecretKey(rng.bytes(16)) for _ in range(count)]


@dataclass(frozen=True, eq=False)
class KeyAssignment:
    """Key index used to enroll row e and to probe as row p, per pair."""
    keys: List[SecretKey]
    enroll: np.ndarray
    probe: np.ndarray


def assign_keys(
    policy: KeyPolicy,
    labels: np.ndarray,
    e_idx: np.ndarray,
    p_idx: np.ndarray,
    genuine: bool,
    seed: int,
) -> KeyAssignment:
    """
    per-user-key: each speaker enrolls and probes with their own key.
    stolen-key: the probe is presented with the enrolled speaker's key.
    fresh-key-per-template: every row carries its own key (protected-domain matching).
    revoked-key: genuine pairs use the speaker's new key on both sides; impostor
    pairs are the old enrollment (old key) probed with the new key.
    """
    rng = np.random.default_rng(seed + 1)
    n_spk = int(labels.max()) + 1
    spk_keys = _random_keys(rng, n_spk)

    if policy is KeyPolicy.PER_USER_KEY:
        return KeyAssignment(spk_keys, labels[e_idx], labels[p_idx])
    if policy is KeyPolicy.STOLEN_KEY:
        return KeyAssignment(spk_keys, labels[e_idx], labels[e_idx])
    if policy is KeyPolicy.FRESH_KEY:
        row_keys = _random_keys(rng, labels.size)
        return KeyAssignment(row_keys, e_idx, p_idx)
    if policy is KeyPolicy.REVOKED_KEY:
        new_keys = _random_keys(rng, n_spk)
        keys = spk_keys + new_keys
        new = labels[p_idx] + n_spk
        old = labels[e_idx]
        return KeyAssignment(keys, new if genuine else old, new)
    raise ValueError(f"unknown key policy {policy}")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def _charvoc_scores(
    packed: np.ndarray,
    n: int,
    params: SchemeParams,
    ka: KeyAssignment,
    e_idx: np.ndarray,
    p_idx: np.ndarray,
) -> np.ndarray:
    used = np.unique(np.concatenate([ka.enroll, ka.probe]))
    digests = np.zeros((len(ka.keys), packed.shape[1]), dtype=np.uint8)
    for k in used:
        digests[k] = hash_key(ka.keys[k], n, params.hash_id).packed()

    # recover(protect(k_e, v_e), k_p) XOR T(v_p)
    diff = packed[e_idx] ^ digests[ka.enroll] ^ digests[ka.probe] ^ packed[p_idx]
    m = n - popcount(diff, axis=1)
    return similarity_from_matches(m.astype(np.float64), n)


def _baseline_scores(
    X: np.ndarray,
    params: BaselineParams,
    ka: KeyAssignment,
    e_idx: np.ndarray,
    p_idx: np.ndarray,
) -> np.ndarray:
    # One code per distinct (row, key); rows hashed in batches per key.
    needed: Dict[int, set] = {}
    for rows, keys in ((e_idx, ka.enroll), (p_idx, ka.probe)):
        for r, k in zip(rows.tolist(), keys.tolist()):
            needed.setdefault(k, set()).add(r)

    codes: Dict[Tuple[int, int], np.ndarray] = {}
    for k in sorted(needed):
        rows = sorted(needed[k])
        batch = baseline_codes(X[rows], params.with_key(ka.keys[k]))
        for r, c in zip(rows, batch):
            codes[(r, k)] = c

    A = np.stack([codes[(r, k)] for r, k in zip(e_idx.tolist(), ka.enroll.tolist())])
    B = np.stack([codes[(r, k)] for r, k in zip(p_idx.tolist(), ka.probe.tolist())])
    return index_similarity_rows(A, B)


def _cosine_scores(X: np.ndarray, e_idx: np.ndarray, p_idx: np.ndarray) -> np.ndarray:
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    cos = np.einsum("ij,ij->i", Xn[e_idx], Xn[p_idx])
    return np.clip((cos + 1.0) / 2.0, 0.0, 1.0)


def score_pairs(
    ds: SpeakerDataset,
    scheme: SchemeSelector,
    key_policy: Union[KeyPolicy, str] = KeyPolicy.PER_USER_KEY,
    params: Optional[Union[SchemeParams, BaselineParams]] = None,
    cfg: Optional[EvalConfig] = None,
) -> ScoreSet:
    cfg = cfg or EvalConfig(dim=ds.dim)
    policy = KeyPolicy(key_policy)
    scheme = parse_scheme(scheme)

    X, labels = ds.flatten()
    plan = plan_pairs(labels, cfg.impostor_cap, cfg.seed)
    if policy is KeyPolicy.REVOKED_KEY:
        # old stolen template vs the same speaker's current voice
        pairs = {True: plan.genuine, False: plan.genuine}
    else:
        pairs = {True: plan.genuine, False: plan.impostor}

    if scheme is SchemeName.CHARVOC:
        params = params or cfg.scheme_params(ds.dim)
        if not isinstance(params, SchemeParams):
            raise ValueError("ChaRVoC scoring needs SchemeParams")
        if params.dim_d != ds.dim:
            raise DimensionError(f"params.dim_d {params.dim_d} != dataset dim {ds.dim}")
        n = params.template_len
        packed = pack_rows(binarize_batch(X, params))
    elif scheme != COSINE:
        params = params or baseline_params_from(cfg.baseline, scheme)
        if not isinstance(params, BaselineParams) or params.scheme is not scheme:
            raise ValueError(f"{scheme.value} scoring needs BaselineParams for that scheme")

    out: Dict[bool, np.ndarray] = {}
    for genuine, (e_idx, p_idx) in pairs.items():
        ka = assign_keys(policy, labels, e_idx, p_idx, genuine, cfg.seed)
        if scheme is SchemeName.CHARVOC:
            out[genuine] = _charvoc_scores(packed, n, params, ka, e_idx, p_idx)
        elif scheme == COSINE:
            out[genuine] = _cosine_scores(X, e_idx, p_idx)
        else:
            out[genuine] = _baseline_scores(X, params, ka, e_idx, p_idx)

    name = scheme if scheme == COSINE else scheme.value
    logger.info("scored %s/%s: %d genuine, %d impostor", name, policy.value, out[True].size, out[False].size)
    return ScoreSet(genuine=out[True], impostor=out[False], label=_POLICY_LABEL[policy])


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    scheme: str
    dim: int
    trials: int
    median_s: float
    p95_s: float


def bench_template_generation(
    scheme: SchemeSelector,
    params: Optional[Union[SchemeParams, BaselineParams]] = None,
    trials: int = 100,
    seed: int = 0,
    dim: Optional[int] = None,
) -> BenchResult:
    """
    Wall-clock seconds per template over pre-generated unit-norm embeddings.
    One warm-up call is excluded so keyed baseline matrices are built once.
    """
    if trials < 30:
        raise ValueError(f"trials must be >= 30, got {trials}")
    scheme = parse_scheme(scheme)
    if scheme == COSINE:
        raise ValueError("the cosine reference has no template generation step")

    if scheme is SchemeName.CHARVOC:
        params = params or SchemeParams(dim_d=dim or 1024)
        d = params.dim_d
    else:
        params = params or BaselineParams(scheme=scheme)
        d = dim or 1024

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((trials + 1, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    embs = [Embedding(row) for row in X]
    key = SecretKey(rng.bytes(16))

    if scheme is SchemeName.CHARVOC:
        def make(e: Embedding):
            return protect(key, e, params)
    else:
        keyed = params.with_key(key)

        def make(e: Embedding):
            return baseline_hash(e, keyed)

    make(embs[0])
    times = np.empty(trials)
    for i, e in enumerate(embs[1:]):
        t0 = time.perf_counter()
        make(e)
        times[i] = time.perf_counter() - t0

    name = scheme.value
    res = BenchResult(
        scheme=name,
        dim=d,
        trials=trials,
        median_s=float(np.median(times)),
        p95_s=float(np.percentile(times, 95)),
    )
    logger.info("bench %s d=%d: median=%.6fs p95=%.6fs", name, d, res.median_s, res.p95_s)
    return res


def baseline_params_from(cfg: BaselineConfig, scheme: SchemeName) -> BaselineParams:
    return BaselineParams(
        scheme=scheme, m_codes=cfg.m_codes, window_k=cfg.window_k, proj_q=cfg.proj_q, roe_dim=cfg.roe_dim
    )
