import threading

import numpy as np
import pytest

from src.charvoc.baseline_hashes import baseline_hash
from src.charvoc.errors import StoreError
from src.charvoc.hashgray_xor import protect
from src.charvoc.models import (
    BaselineParams,
    Embedding,
    ProtectedRecord,
    RecordStatus,
    SchemeName,
    SchemeParams,
    SecretKey,
)
from src.charvoc.template_store import TemplateStore, record_from_line, record_to_line

PARAMS = SchemeParams(precision_p=3, bits_l=9, dim_d=32)


def _record(user, key=b"k", seed=0, threshold=0.6):
    rng = np.random.default_rng(seed)
    t = protect(SecretKey(key), Embedding(rng.normal(size=32)), PARAMS)
    return ProtectedRecord(user_id=user, scheme=SchemeName.CHARVOC, params=PARAMS, template=t,
                           threshold=threshold, created_at=1_700_000_000 + seed)


def test_record_line_round_trip():
    rec = _record("alice", seed=1, threshold=0.61)
    line = record_to_line(rec)
    assert line.startswith("v1|alice|ChaRVoC|0|active|")
    assert record_from_line(line) == rec


def test_baseline_record_round_trip_drops_key():
    params = BaselineParams(scheme=SchemeName.IOM, m_codes=20).with_key(SecretKey(b"secret"))
    code = baseline_hash(Embedding(np.arange(1.0, 9.0)), params)
    rec = ProtectedRecord(user_id="bob", scheme=SchemeName.IOM, params=params, template=code,
                          threshold=0.5, created_at=1)
    assert rec.params.seed_key is None
    line = record_to_line(rec)
    assert "secret" not in line and b"secret".hex() not in line
    assert record_from_line(line) == rec


def test_invalid_user_ids():
    for bad in ("", "a|b", "a b"):
        with pytest.raises(ValueError):
            _record(bad)


def test_enroll_revoke_reenroll_survives_restart(tmp_path):
    path = tmp_path / "records.log"
    store = TemplateStore(path)
    assert store.enroll("alice", _record("alice", seed=1)) == 1
    assert store.enroll("alice", _record("alice", seed=2)) == 2
    assert store.enroll("bob", _record("bob", seed=3)) == 1
    assert store.revoke("alice") is True
    assert store.fetch_active("alice") is None
    assert store.enroll("alice", _record("alice", key=b"fresh", seed=4)) == 3
    before = store.fetch_active("alice")

    reopened = TemplateStore(path)
    after = reopened.fetch_active("alice")
    assert after == before
    assert after.generation == 3
    assert after.template.bits.bits == before.template.bits.bits
    assert [r.status for r in reopened.history("alice")] == [
        RecordStatus.SUPERSEDED, RecordStatus.REVOKED, RecordStatus.ACTIVE,
    ]
    assert reopened.fetch_active("bob").generation == 1
    assert reopened.users() == ["alice", "bob"]


def test_revoke_unknown_user():
    store = TemplateStore()
    assert store.revoke("nobody") is False
    assert store.fetch_active("nobody") is None


def test_enroll_rejects_mismatched_user():
    with pytest.raises(ValueError):
        TemplateStore().enroll("bob", _record("alice"))


def test_two_handles_see_each_others_writes(tmp_path):
    path = tmp_path / "shared.log"
    a, b = TemplateStore(path), TemplateStore(path)
    a.enroll("carol", _record("carol", seed=5))
    assert b.enroll("carol", _record("carol", seed=6)) == 2
    assert a.fetch_active("carol").generation == 2


def test_concurrent_enrolls_get_distinct_generations(tmp_path):
    path = tmp_path / "records.log"
    store = TemplateStore(path)
    gens = []
    lock = threading.Lock()

    def worker(i):
        g = store.enroll("dave", _record("dave", seed=i))
        with lock:
            gens.append(g)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert sorted(gens) == list(range(1, 21))
    history = TemplateStore(path).history("dave")
    assert sum(r.active for r in history) == 1
    assert history[-1].active and history[-1].generation == 20


def test_interleaved_enroll_and_revoke_keep_generations_monotone(tmp_path):
    path = tmp_path / "records.log"
    handles = [TemplateStore(path), TemplateStore(path)]
    barrier = threading.Barrier(20)
    gens = []
    lock = threading.Lock()

    def enroller(i):
        barrier.wait()
        g = handles[i % 2].enroll("fay", _record("fay", seed=i))
        with lock:
            gens.append(g)

    def revoker(i):
        barrier.wait()
        handles[i % 2].revoke("fay")

    threads = [threading.Thread(target=enroller, args=(i,)) for i in range(10)]
    threads += [threading.Thread(target=revoker, args=(i,)) for i in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert sorted(gens) == list(range(1, 11))

    # new generations appear in the log in strictly increasing order
    seen = []
    for line in path.read_text().splitlines():
        rec = record_from_line(line)
        if rec.generation not in seen:
            seen.append(rec.generation)
    assert seen == sorted(seen) == list(range(1, 11))

    history = TemplateStore(path).history("fay")
    active = [r for r in history if r.active]
    assert len(active) <= 1
    if active:
        assert active[0].generation == 10
    assert handles[0].history("fay") == handles[1].history("fay") == history


def test_torn_tail_is_ignored_and_corruption_is_reported(tmp_path):
    path = tmp_path / "records.log"
    TemplateStore(path).enroll("erin", _record("erin"))
    with path.open("a") as f:
        f.write("v1|erin|ChaRVoC|2|act")
    assert TemplateStore(path).fetch_active("erin").generation == 1

    bad = tmp_path / "bad.log"
    bad.write_text("v1|erin|ChaRVoC|1|active|zz|00|0.6|0\n")
    with pytest.raises(StoreError):
        TemplateStore(bad)
