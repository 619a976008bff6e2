from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .models import HashId, SchemeParams

KEY_ENV = "CHARVOC_KEY"
STORE_ENV = "CHARVOC_STORE"
DEFAULT_STORE = "data/charvoc/records.log"


def _get_key() -> str:
    """Secret key from the environment (preferred over a --key flag)."""
    return os.environ.get(KEY_ENV, "").strip()


def _get_store_path() -> str:
    return os.environ.get(STORE_ENV, "").strip() or DEFAULT_STORE


@dataclass
class SchemeConfig:
    precision_p: int = 4
    bits_l: int = 15
    dim_d: int = 1024
    hash_id: str = HashId.SHA256.value
    threshold: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")

    def params(self) -> SchemeParams:
        return SchemeParams(
            precision_p=self.precision_p,
            bits_l=self.bits_l,
            dim_d=self.dim_d,
            hash_id=HashId.parse(self.hash_id),
        )


@dataclass
class BaselineConfig:
    m_codes: int = 300
    window_k: int = 16
    proj_q: int = 16
    roe_dim: int = 64


@dataclass
class ChallengeConfig:
    length: int = 6
    ttl_seconds: float = 60.0
    uniform_rejection: bool = False
    # Only for scripted tests: seeds challenge digits and session ids.
    insecure_seed: Optional[int] = None

    def __post_init__(self):
        if self.length < 4:
            raise ValueError(f"challenge length must be >= 4, got {self.length}")
        if self.ttl_seconds <= 0:
            raise ValueError(f"ttl_seconds must be > 0, got {self.ttl_seconds}")


@dataclass
class EvalConfig:
    speakers: int = 50
    utterances: int = 10
    dim: int = 192
    sigma_within: float = 0.3
    sigma_between: float = 1.0
    seed: int = 7

    # Quantization for unit-normalized embeddings: step ~ within-speaker spread.
    precision_p: int = 2
    bits_l: int = 7
    hash_id: str = HashId.SHA256.value

    impostor_cap: int = 10
    unlinkability_bins: int = 100
    omega: float = 1.0
    fmr_target: float = 0.001

    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        if self.speakers < 2 or self.utterances < 2:
            raise ValueError("need at least 2 speakers and 2 utterances per speaker")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.sigma_within < 0 or self.sigma_between <= 0:
            raise ValueError("sigma_within must be >= 0 and sigma_between > 0")
        if self.unlinkability_bins < 10:
            raise ValueError(f"unlinkability_bins must be >= 10, got {self.unlinkability_bins}")
        if self.impostor_cap < 1:
            raise ValueError(f"impostor_cap must be >= 1, got {self.impostor_cap}")

    def scheme_params(self, dim: Optional[int] = None) -> SchemeParams:
        return SchemeParams(
            precision_p=self.precision_p,
            bits_l=self.bits_l,
            dim_d=dim or self.dim,
            hash_id=HashId.parse(self.hash_id),
        )


@dataclass
class CliConfig:
    store_path: str = field(default_factory=_get_store_path)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    challenge: ChallengeConfig = field(default_factory=ChallengeConfig)
    seed: int = 7

    @property
    def session_path(self) -> Path:
        return Path(str(self.store_path) + ".sessions")

    @property
    def audit_path(self) -> Path:
        return Path(str(self.store_path) + ".audit")
