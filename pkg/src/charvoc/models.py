from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import DimensionError, NonFiniteError, ShapeError, UnknownHashError


class HashId(str, enum.Enum):
    SHA256 = "sha256"
    SHA3_256 = "sha3_256"
    BLAKE2S = "blake2s"

    @classmethod
    def parse(cls, value: Union[str, "HashId"]) -> "HashId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnknownHashError(f"unknown hash_id {value!r}; expected one of {[h.value for h in cls]}")


class SchemeName(str, enum.Enum):
    CHARVOC = "ChaRVoC"
    WTA = "WTA"
    IOM = "IoM"
    ROE = "RoE"

    @classmethod
    def parse(cls, value: Union[str, "SchemeName"]) -> "SchemeName":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown scheme {value!r}; expected one of {[s.value for s in cls]}")


class KeyPolicy(str, enum.Enum):
    PER_USER_KEY = "per-user-key"
    STOLEN_KEY = "stolen-key"
    FRESH_KEY = "fresh-key-per-template"
    REVOKED_KEY = "revoked-key"


class ScoreLabel(str, enum.Enum):
    SAME_KEY = "same-key"
    STOLEN_KEY = "stolen-key"
    MATED = "mated"
    REVOKED = "revoked-key"


class Outcome(str, enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED_TRANSCRIPT = "RejectedTranscript"
    REJECTED_EXPIRED = "RejectedExpired"
    REJECTED_REPLAYED = "RejectedReplayed"
    REJECTED_MATCH = "RejectedMatch"
    REJECTED_UNKNOWN_USER = "RejectedUnknownUser"


class RecordStatus(str, enum.Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"
    REVOKED = "revoked"


# ---------------------------------------------------------------------------
# Features and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    Real-valued speaker feature vector as produced by an external extractor.
    Stored as a read-only float64 array.
    """
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionError(f"embedding must be a non-empty 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("embedding contains NaN or infinite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def scaled(self, c: float) -> "Embedding":
        return Embedding(self.values * float(c))


@dataclass(frozen=True)
class SchemeParams:
    precision_p: int = 4
    bits_l: int = 15
    dim_d: int = 1024
    hash_id: HashId = HashId.SHA256

    def __post_init__(self):
        object.__setattr__(self, "hash_id", HashId.parse(self.hash_id))
        if int(self.precision_p) < 0:
            raise ValueError(f"precision_p must be >= 0, got {self.precision_p}")
        if not 1 <= int(self.bits_l) <= 62:
            raise ValueError(f"bits_l must be in [1, 62], got {self.bits_l}")
        if int(self.dim_d) < 1:
            raise ValueError(f"dim_d must be >= 1, got {self.dim_d}")

    @property
    def block_len(self) -> int:
        return self.bits_l + 1

    @property
    def template_len(self) -> int:
        return self.dim_d * (self.bits_l + 1)

    def to_text(self) -> str:
        return f"p={self.precision_p};l={self.bits_l};d={self.dim_d};h={self.hash_id.value}"

    @classmethod
    def from_text(cls, text: str) -> "SchemeParams":
        kv = _parse_kv(text)
        try:
            return cls(
                precision_p=int(kv["p"]),
                bits_l=int(kv["l"]),
                dim_d=int(kv["d"]),
                hash_id=HashId.parse(kv["h"]),
            )
        except KeyError as e:
            raise ValueError(f"scheme params text missing field {e}: {text!r}")


@dataclass(frozen=True, repr=False)
class SecretKey:
    """The user's memorized key. Never printed."""
    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)):
            raise TypeError("SecretKey value must be bytes")
        if len(self.value) == 0:
            raise ValueError("SecretKey must be non-empty")
        object.__setattr__(self, "value", bytes(self.value))

    @classmethod
    def from_text(cls, text: str) -> "SecretKey":
        return cls(text.encode("utf-8"))

    def __repr__(self) -> str:
        return "SecretKey(<redacted>)"


@dataclass(frozen=True)
class BinaryTemplate:
    """
    Fixed-length bit string. Bits are packed little-endian into bytes
    (bit i lives in byte i // 8 at position i % 8); padding bits are zero.
    """
    bits: bytes
    len_n: int

    def __post_init__(self):
        n = int(self.len_n)
        if n < 1:
            raise ValueError(f"template length must be >= 1, got {n}")
        if len(self.bits) != (n + 7) // 8:
            raise ShapeError(f"{len(self.bits)} bytes cannot hold exactly {n} bits")
        tail = n % 8
        if tail and (self.bits[-1] >> tail) != 0:
            raise ValueError("padding bits in the final byte must be zero")

    @classmethod
    def from_array(cls, arr: np.ndarray):
        a = np.asarray(arr, dtype=np.uint8).ravel()
        return cls(bits=np.packbits(a, bitorder="little").tobytes(), len_n=int(a.size))

    @classmethod
    def from_bitstring(cls, s: str):
        return cls.from_array(np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0"))

    @classmethod
    def from_hex(cls, text: str, len_n: int):
        return cls(bits=bytes.fromhex(text), len_n=int(len_n))

    def packed(self) -> np.ndarray:
        return np.frombuffer(self.bits, dtype=np.uint8)

    def to_array(self) -> np.ndarray:
        return np.unpackbits(self.packed(), count=self.len_n, bitorder="little")

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.to_array())

    def hex(self) -> str:
        return self.bits.hex()

    def xor(self, other: "BinaryTemplate") -> "BinaryTemplate":
        if self.len_n != other.len_n:
            raise ShapeError(f"length mismatch: {self.len_n} vs {other.len_n}")
        out = np.bitwise_xor(self.packed(), other.packed())
        return BinaryTemplate(bits=out.tobytes(), len_n=self.len_n)

    def hamming_distance(self, other: "BinaryTemplate") -> int:
        return int(popcount(self.xor(other).packed()))


@dataclass(frozen=True)
class KeyDigest(BinaryTemplate):
    """H(k) expanded to a template length."""


_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def popcount(packed: np.ndarray, axis: Optional[int] = None):
    """Number of set bits in a uint8 array (summed along `axis`)."""
    return _POPCOUNT8[np.asarray(packed, dtype=np.uint8)].sum(axis=axis)


# ---------------------------------------------------------------------------
# Protected templates and matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtectedTemplate:
    bits: BinaryTemplate
    params: SchemeParams

    def __post_init__(self):
        if self.bits.len_n != self.params.template_len:
            raise ShapeError(
                f"protected template has {self.bits.len_n} bits, params expect {self.params.template_len}"
            )


@dataclass(frozen=True)
class MatchResult:
    similarity: float
    matching_bits: int
    threshold: float
    accepted: bool


@dataclass(frozen=True)
class IndexCode:
    indices: Tuple[int, ...]
    arity: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if int(self.arity) < 1:
            raise ValueError(f"arity must be >= 1, got {self.arity}")
        if any(i < 0 or i >= self.arity for i in idx):
            raise ValueError(f"index out of range for arity {self.arity}")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def to_text(self) -> str:
        return f"{self.arity}:" + ",".join(str(i) for i in self.indices)

    @classmethod
    def from_text(cls, text: str) -> "IndexCode":
        head, _, body = text.partition(":")
        return cls(indices=tuple(int(x) for x in body.split(",") if x), arity=int(head))


@dataclass(frozen=True)
class BaselineParams:
    """
    Hyperparameters of a key-seeded baseline transform. `seed_key` drives every
    permutation/projection; it is left out of the persisted text form and is
    attached with `with_key` at hashing time.
    """
    scheme: SchemeName
    seed_key: Optional[SecretKey] = None
    m_codes: int = 300
    window_k: int = 16
    proj_q: int = 16
    roe_dim: int = 64

    def __post_init__(self):
        scheme = SchemeName.parse(self.scheme)
        if scheme is SchemeName.CHARVOC:
            raise ValueError("BaselineParams.scheme must be WTA, IoM or RoE")
        object.__setattr__(self, "scheme", scheme)
        for name in ("m_codes", "window_k", "proj_q"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.roe_dim) < 2:
            raise ValueError(f"roe_dim must be >= 2, got {self.roe_dim}")

    @property
    def arity(self) -> int:
        if self.scheme is SchemeName.WTA:
            return self.window_k
        if self.scheme is SchemeName.IOM:
            return self.proj_q
        return self.roe_dim

    def with_key(self, key: SecretKey) -> "BaselineParams":
        return replace(self, seed_key=key)

    def to_text(self) -> str:
        return (f"s={self.scheme.value};m={self.m_codes};k={self.window_k};"
                f"q={self.proj_q};r={self.roe_dim}")

    @classmethod
    def from_text(cls, text: str) -> "BaselineParams":
        kv = _parse_kv(text)
        try:
            return cls(
                scheme=SchemeName.parse(kv["s"]),
                m_codes=int(kv["m"]),
                window_k=int(kv["k"]),
                proj_q=int(kv["q"]),
                roe_dim=int(kv["r"]),
            )
        except KeyError as e:
            raise ValueError(f"baseline params text missing field {e}: {text!r}")


# ---------------------------------------------------------------------------
# Challenge-response protocol
# ---------------------------------------------------------------------------


@dataclass
class Challenge:
    session_id: str
    user_id: str
    digits: str
    issued_at: datetime
    ttl: timedelta
    consumed: bool = False
    expired: bool = False

    @property
    def expires_at(self) -> datetime:
        return self.issued_at + self.ttl

    def is_expired(self, now: datetime) -> bool:
        return now >= self.expires_at


@dataclass(frozen=True)
class AuthDecision:
    outcome: Outcome
    liveness_ok: bool
    match: Optional[MatchResult] = None
    user_id: str = ""
    session_id: str = ""
    uniform_rejection: bool = False

    def __post_init__(self):
        if self.outcome is Outcome.ACCEPTED and not (
            self.liveness_ok and self.match is not None and self.match.accepted
        ):
            raise ValueError("Accepted requires passing liveness and an accepted match")
        if not self.liveness_ok and self.match is not None:
            raise ValueError("no match may be computed when liveness fails")

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED

    @property
    def public_outcome(self) -> str:
        if self.uniform_rejection and not self.accepted:
            return "Rejected"
        return self.outcome.value


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtectedRecord:
    user_id: str
    scheme: SchemeName
    params: Union[SchemeParams, BaselineParams]
    template: Union[ProtectedTemplate, IndexCode]
    threshold: float
    created_at: int
    generation: int = 0
    status: RecordStatus = RecordStatus.ACTIVE

    def __post_init__(self):
        object.__setattr__(self, "scheme", SchemeName.parse(self.scheme))
        object.__setattr__(self, "status", RecordStatus(self.status))
        if not self.user_id or "|" in self.user_id or any(c.isspace() for c in self.user_id):
            raise ValueError(f"invalid user id {self.user_id!r}")
        if self.scheme is SchemeName.CHARVOC:
            if not isinstance(self.params, SchemeParams) or not isinstance(self.template, ProtectedTemplate):
                raise ValueError("ChaRVoC records need SchemeParams and a ProtectedTemplate")
        else:
            if not isinstance(self.params, BaselineParams) or not isinstance(self.template, IndexCode):
                raise ValueError(f"{self.scheme.value} records need BaselineParams and an IndexCode")
            if self.params.seed_key is not None:
                object.__setattr__(self, "params", replace(self.params, seed_key=None))
        if not 0.0 <= float(self.threshold) <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")

    @property
    def active(self) -> bool:
        return self.status is RecordStatus.ACTIVE


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SpeakerDataset:
    embeddings: Dict[str, List[Embedding]]
    dim: int
    provenance: str = "ingested"

    def __post_init__(self):
        if len(self.embeddings) < 2:
            raise ValueError(f"dataset needs >= 2 speakers, got {len(self.embeddings)}")
        for spk, embs in self.embeddings.items():
            if len(embs) < 2:
                raise ValueError(f"speaker {spk!r} has {len(embs)} embedding(s); need >= 2")
            for e in embs:
                if e.dim != self.dim:
                    raise DimensionError(f"speaker {spk!r}: dim {e.dim} != dataset dim {self.dim}")

    @property
    def speakers(self) -> List[str]:
        return sorted(self.embeddings)

    def flatten(self) -> Tuple[np.ndarray, np.ndarray]:
        """(N x d matrix, speaker index per row) in sorted speaker order."""
        rows, labels = [], []
        for s_idx, spk in enumerate(self.speakers):
            for e in self.embeddings[spk]:
                rows.append(e.values)
                labels.append(s_idx)
        return np.vstack(rows), np.asarray(labels, dtype=np.int64)


@dataclass(eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    label: ScoreLabel

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)
        self.label = ScoreLabel(self.label)
        for name, arr in (("genuine", self.genuine), ("impostor", self.impostor)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} scores must lie in [0, 1]")


@dataclass(frozen=True)
class MetricsReport:
    eer: float  # percent
    auc: float
    tmr_at_fmr: float
    threshold_at_eer: float
    fmr_target: float = 0.001
    n_genuine: int = 0
    n_impostor: int = 0


def _parse_kv(text: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for part in (text or "").strip().split(";"):
        if not part:
            continue
        k, sep, v = part.partition("=")
        if not sep:
            raise ValueError(f"malformed parameter field {part!r}")
        out[k.strip()] = v.strip()
    return out
