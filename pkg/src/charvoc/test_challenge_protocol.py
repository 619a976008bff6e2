import threading
from collections import Counter
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from scipy.stats import chisquare

from src.charvoc.challenge_protocol import (
    AuditLog,
    ChallengeProtocol,
    normalize_transcript,
    verify_transcript,
)
from src.charvoc.config import ChallengeConfig
from src.charvoc.errors import UnknownUserError
from src.charvoc.hashgray_xor import protect
from src.charvoc.models import Challenge, Embedding, Outcome, ProtectedRecord, SchemeName, SchemeParams, SecretKey
from src.charvoc.session_table import SessionTable
from src.charvoc.template_store import TemplateStore

PARAMS = SchemeParams(precision_p=2, bits_l=7, dim_d=64)
KEY = SecretKey(b"2580")
T0 = datetime(2026, 1, 1, 12, 0, 0, tzinfo=timezone.utc)


@pytest.fixture
def voice():
    v = np.random.default_rng(0).normal(size=64)
    return Embedding(v / np.linalg.norm(v))


def _enrolled_store(voice, path=None):
    store = TemplateStore(path)
    rec = ProtectedRecord(user_id="alice", scheme=SchemeName.CHARVOC, params=PARAMS,
                          template=protect(KEY, voice, PARAMS), threshold=0.6, created_at=0)
    store.enroll("alice", rec)
    return store


def _protocol(store, **cfg):
    return ChallengeProtocol(store, ChallengeConfig(**cfg))


def _shift(digits):
    return str((int(digits[0]) + 1) % 10) + digits[1:]


@pytest.mark.parametrize(
    "text,expected",
    [("1 9 8 7 6 5", "198765"), ("One, nine; EIGHT seven six five.", "198765"), ("19 eight 765", "198765"),
     ("one nine eight seven six fivee", "19876<fivee>")],
)
def test_normalize_transcript(text, expected):
    assert normalize_transcript(text) == expected


def test_verify_transcript_rejects_near_misses():
    c = Challenge(session_id="s", user_id="alice", digits="198765", issued_at=T0, ttl=timedelta(seconds=60))
    assert verify_transcript(c, "one nine eight seven six five")
    assert not verify_transcript(c, "one nine eight seven six")
    assert not verify_transcript(c, "one nine eight seven six five four")
    assert not verify_transcript(c, None)


def test_happy_path_then_replay(voice):
    p = _protocol(_enrolled_store(voice))
    c = p.issue_challenge("alice", now=T0)
    assert len(c.digits) == 6 and c.digits.isdigit()

    ok = p.authenticate("alice", c.session_id, " ".join(c.digits), KEY, voice, now=T0 + timedelta(seconds=5))
    assert ok.outcome is Outcome.ACCEPTED
    assert ok.liveness_ok and ok.match.similarity == 1.0

    again = p.authenticate("alice", c.session_id, " ".join(c.digits), KEY, voice, now=T0 + timedelta(seconds=6))
    assert again.outcome is Outcome.REJECTED_REPLAYED
    assert again.match is None


def test_stale_transcript_is_rejected_and_burns_session(voice):
    p = _protocol(_enrolled_store(voice), insecure_seed=1)
    old = p.issue_challenge("alice", now=T0)
    new = p.issue_challenge("alice", now=T0)
    stale = old.digits if old.digits != new.digits else _shift(new.digits)

    d = p.authenticate("alice", new.session_id, stale, KEY, voice, now=T0)
    assert d.outcome is Outcome.REJECTED_TRANSCRIPT
    assert not d.liveness_ok and d.match is None
    assert p.authenticate("alice", new.session_id, new.digits, KEY, voice, now=T0).outcome is Outcome.REJECTED_REPLAYED


def test_expiry_is_sticky(voice):
    p = _protocol(_enrolled_store(voice), ttl_seconds=30)
    c = p.issue_challenge("alice", now=T0)
    late = p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0 + timedelta(seconds=30))
    assert late.outcome is Outcome.REJECTED_EXPIRED
    # a clock that moves backwards does not revive it
    early = p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0 + timedelta(seconds=1))
    assert early.outcome is Outcome.REJECTED_EXPIRED


def test_unknown_user_and_foreign_session(voice):
    p = _protocol(_enrolled_store(voice))
    with pytest.raises(UnknownUserError):
        p.issue_challenge("mallory")
    c = p.issue_challenge("alice", now=T0)
    d = p.authenticate("mallory", c.session_id, c.digits, KEY, voice, now=T0)
    assert d.outcome is Outcome.REJECTED_UNKNOWN_USER
    assert p.authenticate("alice", "no-such-session", c.digits, KEY, voice, now=T0).outcome is Outcome.REJECTED_REPLAYED
    # the session survived both attempts
    assert p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0).outcome is Outcome.ACCEPTED


def test_wrong_key_and_wrong_dimension_reject_at_match(voice):
    p = _protocol(_enrolled_store(voice))
    c = p.issue_challenge("alice", now=T0)
    d = p.authenticate("alice", c.session_id, c.digits, SecretKey(b"0000"), voice, now=T0)
    assert d.outcome is Outcome.REJECTED_MATCH
    assert d.liveness_ok
    assert d.match.similarity == pytest.approx(1 / 3, abs=0.1)

    c = p.issue_challenge("alice", now=T0)
    d = p.authenticate("alice", c.session_id, c.digits, KEY, Embedding(np.ones(63)), now=T0)
    assert d.outcome is Outcome.REJECTED_MATCH and d.match is None


def test_revoked_mid_session(voice):
    store = _enrolled_store(voice)
    p = _protocol(store)
    c = p.issue_challenge("alice", now=T0)
    stages = []
    p.hooks.append(lambda stage, user: stage == "transcript" and store.revoke(user))
    p.hooks.append(lambda stage, user: stages.append(stage))
    d = p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0)
    assert d.outcome is Outcome.REJECTED_UNKNOWN_USER
    assert stages == ["consume", "transcript"]


def test_no_biometric_work_when_liveness_fails(voice):
    stages = []
    p = ChallengeProtocol(_enrolled_store(voice), hooks=[lambda stage, user: stages.append(stage)])
    c = p.issue_challenge("alice", now=T0)
    p.authenticate("alice", c.session_id, "wrong words", KEY, voice, now=T0)
    assert "match" not in stages
    p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0)
    assert stages.count("match") == 0


def test_uniform_rejection_hides_reason(voice):
    p = _protocol(_enrolled_store(voice), uniform_rejection=True)
    c = p.issue_challenge("alice", now=T0)
    d = p.authenticate("alice", c.session_id, "nope", KEY, voice, now=T0)
    assert d.outcome is Outcome.REJECTED_TRANSCRIPT
    assert d.public_outcome == "Rejected"
    c = p.issue_challenge("alice", now=T0)
    assert p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0).public_outcome == "Accepted"


def test_double_spend_admits_exactly_one(voice):
    p = _protocol(_enrolled_store(voice))
    c = p.issue_challenge("alice", now=T0)
    passed_gate = []
    lock = threading.Lock()

    def on_stage(stage, user):
        if stage == "transcript":
            with lock:
                passed_gate.append(threading.get_ident())

    p.hooks.append(on_stage)
    barrier = threading.Barrier(100)
    outcomes = []

    def attempt():
        barrier.wait()
        d = p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0)
        with lock:
            outcomes.append(d.outcome)

    threads = [threading.Thread(target=attempt) for _ in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert len(passed_gate) == 1
    counts = Counter(outcomes)
    assert counts[Outcome.ACCEPTED] == 1
    assert counts[Outcome.REJECTED_REPLAYED] == 99


def test_sessions_shared_through_file(voice, tmp_path):
    store = _enrolled_store(voice, tmp_path / "records.log")
    sessions_path = tmp_path / "records.log.sessions"
    issuer = ChallengeProtocol(store, sessions=SessionTable(sessions_path))
    c = issuer.issue_challenge("alice", now=T0)

    answerer = ChallengeProtocol(TemplateStore(tmp_path / "records.log"), sessions=SessionTable(sessions_path))
    assert answerer.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0).accepted
    third = ChallengeProtocol(TemplateStore(tmp_path / "records.log"), sessions=SessionTable(sessions_path))
    assert third.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0).outcome is Outcome.REJECTED_REPLAYED


def test_audit_log_lines(voice, tmp_path):
    audit = AuditLog(tmp_path / "audit.jsonl")
    p = ChallengeProtocol(_enrolled_store(voice), audit=audit)
    c = p.issue_challenge("alice", now=T0)
    p.authenticate("alice", c.session_id, c.digits, KEY, voice, now=T0)
    lines = (tmp_path / "audit.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert '"outcome": "Accepted"' in lines[0]
    assert set(audit.entries[0]) == {"ts", "user", "session", "outcome"}
    assert audit.entries[0]["session"] == c.session_id


def test_audit_memory_keeps_only_recent_entries(tmp_path):
    audit = AuditLog(tmp_path / "audit.jsonl", keep=3)
    for i in range(5):
        audit.write({"n": i})
    assert [e["n"] for e in audit.entries] == [2, 3, 4]
    assert len((tmp_path / "audit.jsonl").read_text().splitlines()) == 5
    with pytest.raises(ValueError):
        AuditLog(keep=0)


def test_deterministic_mode_reproduces_challenges(voice):
    a = _protocol(_enrolled_store(voice), insecure_seed=42)
    b = _protocol(_enrolled_store(voice), insecure_seed=42)
    ca, cb = a.issue_challenge("alice", now=T0), b.issue_challenge("alice", now=T0)
    assert (ca.session_id, ca.digits) == (cb.session_id, cb.digits)


def test_secure_digits_are_uniform_at_every_position(voice):
    length, trials = 6, 10_000
    p = _protocol(_enrolled_store(voice), length=length)
    counts = np.zeros((length, 10), dtype=np.int64)
    for _ in range(trials):
        digits = p.issue_challenge("alice", now=T0).digits
        counts[np.arange(length), [int(c) for c in digits]] += 1
    assert np.all(counts.sum(axis=1) == trials)
    # Bonferroni over positions keeps the family-wise level at 0.01
    alpha = 0.01 / length
    for pos in range(length):
        assert chisquare(counts[pos]).pvalue > alpha, f"position {pos}: {counts[pos].tolist()}"


def test_uniformity_check_flags_a_position_bias():
    biased = np.full(10, 1000)
    biased[0], biased[9] = 1150, 850
    assert chisquare(biased).pvalue < 0.01 / 6


def test_challenge_config_validation():
    with pytest.raises(ValueError):
        ChallengeConfig(length=3)
    with pytest.raises(ValueError):
        ChallengeConfig(ttl_seconds=0)
