from __future__ import annotations

import hmac
import json
import logging
import random
import re
import secrets
import string
import threading
from collections import deque
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Deque, Iterable, List, Optional, Union

from .baseline_hashes import baseline_hash, index_similarity
from .config import ChallengeConfig
from .errors import DimensionError, UnknownUserError
from .hashgray_xor import authenticate_match
from .models import (
    AuthDecision,
    Challenge,
    Embedding,
    MatchResult,
    Outcome,
    ProtectedRecord,
    SchemeName,
    SecretKey,
)
from .session_table import SessionTable
from .template_store import TemplateStore

logger = logging.getLogger(__name__)

DIGIT_WORDS = {
    "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4",
    "five": "5", "six": "6", "seven": "7", "eight": "8", "nine": "9",
}

_TOKEN_RE = re.compile(r"[a-z]+|[0-9]")

Hook = Callable[[str, str], None]


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def normalize_transcript(text: str) -> str:
    """
    Lowercase, drop whitespace and punctuation, spell digit words as numerals.
    Any other word is kept in brackets so it can never equal a digit string.
    """
    out = []
    for tok in _TOKEN_RE.findall((text or "").lower()):
        if tok.isdigit():
            out.append(tok)
        else:
            out.append(DIGIT_WORDS.get(tok, f"<{tok}>"))
    return "".join(out)


def verify_transcript(c: Challenge, transcript: Optional[str]) -> bool:
    if transcript is None:
        return False
    return hmac.compare_digest(normalize_transcript(transcript), c.digits)


def match_record(record: ProtectedRecord, k: SecretKey, probe: Embedding) -> MatchResult:
    """Template match for any enrolled scheme against the record's own threshold."""
    if record.scheme is SchemeName.CHARVOC:
        return authenticate_match(record.template, k, probe, record.threshold)

    code = baseline_hash(probe, record.params.with_key(k))
    s = index_similarity(record.template, code)
    agree = sum(1 for a, b in zip(record.template.indices, code.indices) if a == b)
    return MatchResult(similarity=s, matching_bits=agree, threshold=record.threshold, accepted=s >= record.threshold)


class AuditLog:
    """
    One JSON object per decision, appended to a file and/or kept in memory.
    Only the newest `keep` entries stay in memory; the file keeps them all.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, keep: int = 1000):
        if keep < 1:
            raise ValueError("keep must be >= 1")
        self.path = Path(path) if path else None
        self.entries: Deque[dict] = deque(maxlen=keep)
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, entry: dict) -> None:
        line = json.dumps(entry, sort_keys=True)
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(line + "\n")


class ChallengeProtocol:
    """
    Challenge-response session machine.

    authenticate() checks, in order: the user has an active record, the
    session exists for that user, it has not expired, it has not been
    consumed (and consumes it atomically), the transcript matches, and only
    then the biometric template match. Hooks receive (stage, user_id) just
    before the consume, transcript and match stages.
    """

    def __init__(
        self,
        store: TemplateStore,
        cfg: Optional[ChallengeConfig] = None,
        sessions: Optional[SessionTable] = None,
        audit: Optional[AuditLog] = None,
        hooks: Optional[Iterable[Hook]] = None,
    ):
        self.store = store
        self.cfg = cfg or ChallengeConfig()
        self.sessions = sessions or SessionTable()
        self.audit = audit or AuditLog()
        self.hooks: List[Hook] = list(hooks or [])

        if self.cfg.insecure_seed is not None:
            logger.warning("challenge generation is deterministic (insecure_seed set); test use only")
            self._rng: random.Random = random.Random(self.cfg.insecure_seed)
        else:
            self._rng = secrets.SystemRandom()
        self._rng_lock = threading.Lock()

    def _emit(self, stage: str, user_id: str) -> None:
        for h in self.hooks:
            h(stage, user_id)

    def _new_session_id(self) -> str:
        if self.cfg.insecure_seed is None:
            return secrets.token_hex(16)
        return f"{self._rng.getrandbits(128):032x}"

    def issue_challenge(self, user_id: str, now: Optional[datetime] = None) -> Challenge:
        if self.store.fetch_active(user_id) is None:
            raise UnknownUserError(f"user {user_id!r} is not enrolled")
        now = now or _utc_now()
        with self._rng_lock:
            session_id = self._new_session_id()
            digits = "".join(self._rng.choice(string.digits) for _ in range(self.cfg.length))
        c = Challenge(
            session_id=session_id,
            user_id=user_id,
            digits=digits,
            issued_at=now,
            ttl=timedelta(seconds=self.cfg.ttl_seconds),
        )
        self.sessions.add(c)
        logger.info("issued challenge user=%s session=%s expires=%s", user_id, session_id, c.expires_at.isoformat())
        return c

    def _decide(
        self,
        outcome: Outcome,
        user_id: str,
        session_id: str,
        now: datetime,
        liveness_ok: bool = False,
        match: Optional[MatchResult] = None,
    ) -> AuthDecision:
        decision = AuthDecision(
            outcome=outcome,
            liveness_ok=liveness_ok,
            match=match,
            user_id=user_id,
            session_id=session_id,
            uniform_rejection=self.cfg.uniform_rejection,
        )
        self.audit.write({
            "ts": now.isoformat(),
            "user": user_id,
            "session": session_id,
            "outcome": outcome.value,
        })
        logger.info("auth user=%s session=%s outcome=%s", user_id, session_id, outcome.value)
        return decision

    def authenticate(
        self,
        user_id: str,
        session_id: str,
        transcript: Optional[str],
        k: SecretKey,
        probe: Embedding,
        now: Optional[datetime] = None,
    ) -> AuthDecision:
        now = now or _utc_now()

        if self.store.fetch_active(user_id) is None:
            return self._decide(Outcome.REJECTED_UNKNOWN_USER, user_id, session_id, now)

        self._emit("consume", user_id)
        rejected, challenge = self.sessions.claim(session_id, user_id, now)
        if rejected is not None:
            return self._decide(rejected, user_id, session_id, now)

        self._emit("transcript", user_id)
        if not verify_transcript(challenge, transcript):
            return self._decide(Outcome.REJECTED_TRANSCRIPT, user_id, session_id, now)

        # Re-read: the record may have been revoked while the session was open.
        record = self.store.fetch_active(user_id)
        if record is None:
            return self._decide(Outcome.REJECTED_UNKNOWN_USER, user_id, session_id, now, liveness_ok=True)

        self._emit("match", user_id)
        try:
            match = match_record(record, k, probe)
        except DimensionError as e:
            logger.warning("probe rejected for user=%s: %s", user_id, e)
            return self._decide(Outcome.REJECTED_MATCH, user_id, session_id, now, liveness_ok=True)

        outcome = Outcome.ACCEPTED if match.accepted else Outcome.REJECTED_MATCH
        return self._decide(outcome, user_id, session_id, now, liveness_ok=True, match=match)
