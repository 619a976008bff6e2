from __future__ import annotations

import json
import logging
import secrets
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .errors import StoreError
from .locking import append_handle, file_identity, file_lock, read_new_lines, rewrite_atomically
from .models import Challenge, Outcome

logger = logging.getLogger(__name__)

EXPIRED_RETENTION = timedelta(hours=1)
COMPACT_AFTER_LINES = 1000


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class SessionTable:
    """
    Pending challenge sessions. Kept in memory, optionally mirrored to an
    append-only JSON-lines file ("issued" / "consumed" / "expired" events) so
    a challenge issued by one process can be answered in another.

    `claim` is the single consumption gate: under the lock it moves a session
    from pending to consumed at most once. Consumed sessions are forgotten
    right away (an unknown session is rejected as replayed); expired ones are
    kept for `expired_retention` past their deadline, then dropped too. Once
    the file holds `compact_after` lines and is mostly dead events it is
    rewritten with only the live sessions.
    """

    def __init__(
        self,
        path: Optional[Union[str, Path]] = None,
        expired_retention: timedelta = EXPIRED_RETENTION,
        compact_after: int = COMPACT_AFTER_LINES,
    ):
        if expired_retention < timedelta(0):
            raise ValueError("expired_retention must be non-negative")
        if compact_after < 1:
            raise ValueError("compact_after must be >= 1")
        self.path = Path(path) if path else None
        self.expired_retention = expired_retention
        self.compact_after = compact_after
        self._lock = threading.Lock()
        self._sessions: Dict[str, Challenge] = {}
        self._offset = 0
        self._lines = 0
        self._issued_total = 0
        self._identity = None
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch(exist_ok=True)
            except OSError as e:
                raise StoreError(f"cannot create session table {self.path}: {e}")
            with self._lock, file_lock(self.path):
                self._refresh()

    # -- internals ---------------------------------------------------------

    def _replay(self, event: dict) -> None:
        kind = event.get("event")
        sid = str(event.get("session_id", ""))
        if kind == "issued":
            self._issued_total += 1
            self._sessions[sid] = Challenge(
                session_id=sid,
                user_id=str(event["user_id"]),
                digits=str(event["digits"]),
                issued_at=datetime.fromisoformat(event["issued_at"]),
                ttl=timedelta(seconds=float(event["ttl_seconds"])),
            )
        elif kind == "consumed":
            self._sessions.pop(sid, None)
        elif kind == "expired" and sid in self._sessions:
            self._sessions[sid].expired = True
        elif kind == "counter":
            self._issued_total = int(event["issued"])

    def _refresh(self) -> None:
        # caller holds self._lock and, for file tables, file_lock
        if self.path is None:
            return
        identity = file_identity(self.path)
        if identity != self._identity:
            # new or rewritten file; rebuild from its first byte
            self._sessions.clear()
            self._offset = self._lines = self._issued_total = 0
            self._identity = identity
        lines, self._offset = read_new_lines(self.path, self._offset)
        self._lines += len(lines)
        for line in lines:
            if not line.strip():
                continue
            try:
                self._replay(json.loads(line))
            except (ValueError, KeyError) as e:
                raise StoreError(f"{self.path}: corrupt session event: {e}")

    def _append(self, event: dict) -> None:
        if self.path is None:
            return
        with append_handle(self.path) as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            self._offset = fh.tell()
        self._lines += 1

    def _prune(self, now: datetime) -> None:
        stale = [
            sid for sid, c in self._sessions.items()
            if c.issued_at + c.ttl + self.expired_retention <= now
        ]
        for sid in stale:
            del self._sessions[sid]
        if stale:
            logger.debug("dropped %d sessions past retention", len(stale))

    def _live_events(self) -> List[dict]:
        events: List[dict] = [{"event": "counter", "issued": self._issued_total, "epoch": secrets.token_hex(8)}]
        for c in self._sessions.values():
            events.append({
                "event": "issued",
                "session_id": c.session_id,
                "user_id": c.user_id,
                "digits": c.digits,
                "issued_at": c.issued_at.isoformat(),
                "ttl_seconds": c.ttl.total_seconds(),
            })
            if c.expired:
                events.append({"event": "expired", "session_id": c.session_id})
        return events

    def _maybe_compact(self) -> None:
        if self.path is None or self._lines < self.compact_after:
            return
        if self._lines <= 2 * (len(self._sessions) + 1):
            return
        events = self._live_events()
        before = self._lines
        self._offset = rewrite_atomically(self.path, [json.dumps(e, sort_keys=True) for e in events])
        self._identity = file_identity(self.path)
        self._lines = len(events)
        logger.info("compacted %s: %d -> %d lines", self.path, before, self._lines)

    # -- operations --------------------------------------------------------

    @property
    def issued_total(self) -> int:
        """Sessions ever issued through this table's file, surviving compaction."""
        with self._lock:
            return self._issued_total

    def add(self, c: Challenge) -> None:
        with self._lock, file_lock(self.path):
            self._refresh()
            self._prune(c.issued_at)
            if c.session_id in self._sessions:
                raise ValueError(f"duplicate session id {c.session_id}")
            self._maybe_compact()
            self._sessions[c.session_id] = c
            self._issued_total += 1
            self._append({
                "event": "issued",
                "session_id": c.session_id,
                "user_id": c.user_id,
                "digits": c.digits,
                "issued_at": c.issued_at.isoformat(),
                "ttl_seconds": c.ttl.total_seconds(),
            })

    def get(self, session_id: str) -> Optional[Challenge]:
        with self._lock, file_lock(self.path):
            self._refresh()
            return self._sessions.get(session_id)

    def claim(self, session_id: str, user_id: str, now: Optional[datetime] = None) -> Tuple[Optional[Outcome], Optional[Challenge]]:
        """
        Returns (None, challenge) when the caller won the session, otherwise the
        rejection outcome. Expired sessions stay expired for every later call.
        """
        now = now or _utc_now()
        with self._lock, file_lock(self.path):
            self._refresh()
            self._prune(now)
            c = self._sessions.get(session_id)
            if c is None or c.user_id != user_id:
                return Outcome.REJECTED_REPLAYED, None
            if c.expired or c.is_expired(now):
                if not c.expired:
                    c.expired = True
                    self._append({"event": "expired", "session_id": session_id, "at": now.isoformat()})
                return Outcome.REJECTED_EXPIRED, c
            c.consumed = True
            del self._sessions[session_id]
            self._append({"event": "consumed", "session_id": session_id, "at": now.isoformat()})
        logger.debug("session %s consumed by %s", session_id, user_id)
        return None, c

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)
