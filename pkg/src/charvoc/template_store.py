from __future__ import annotations

import logging
import threading
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Union

from .errors import StoreError
from .locking import locked_append, read_new_lines
from .models import (
    BaselineParams,
    BinaryTemplate,
    IndexCode,
    ProtectedRecord,
    ProtectedTemplate,
    RecordStatus,
    SchemeName,
    SchemeParams,
)

logger = logging.getLogger(__name__)

RECORD_VERSION = "v1"
_N_FIELDS = 9


def record_to_line(rec: ProtectedRecord) -> str:
    """
    v1|user_id|scheme|generation|status|hex_params|hex_template|threshold|created_at_unix
    """
    if isinstance(rec.template, ProtectedTemplate):
        hex_template = rec.template.bits.hex()
    else:
        hex_template = rec.template.to_text().encode("utf-8").hex()
    return "|".join([
        RECORD_VERSION,
        rec.user_id,
        rec.scheme.value,
        str(int(rec.generation)),
        rec.status.value,
        rec.params.to_text().encode("utf-8").hex(),
        hex_template,
        repr(float(rec.threshold)),
        str(int(rec.created_at)),
    ])


def record_from_line(line: str) -> ProtectedRecord:
    parts = line.rstrip("\n").split("|")
    if len(parts) != _N_FIELDS:
        raise ValueError(f"expected {_N_FIELDS} fields, got {len(parts)}")
    version, user_id, scheme_s, gen_s, status_s, hex_params, hex_template, thr_s, created_s = parts
    if version != RECORD_VERSION:
        raise ValueError(f"unsupported record version {version!r}")

    scheme = SchemeName.parse(scheme_s)
    params_text = bytes.fromhex(hex_params).decode("utf-8")
    params: Union[SchemeParams, BaselineParams]
    if scheme is SchemeName.CHARVOC:
        params = SchemeParams.from_text(params_text)
        template: Union[ProtectedTemplate, IndexCode] = ProtectedTemplate(
            bits=BinaryTemplate.from_hex(hex_template, params.template_len), params=params
        )
    else:
        params = BaselineParams.from_text(params_text)
        template = IndexCode.from_text(bytes.fromhex(hex_template).decode("utf-8"))

    return ProtectedRecord(
        user_id=user_id,
        scheme=scheme,
        params=params,
        template=template,
        threshold=float(thr_s),
        created_at=int(created_s),
        generation=int(gen_s),
        status=RecordStatus(status_s),
    )


class TemplateStore:
    """
    Append-only record log of protected enrollments.

    Every state change (enroll, supersede, revoke) appends a full record line;
    on load the last line for a (user, generation) wins. Superseded records
    stay in the log for multi-generation analysis. Writes are serialized by a
    thread lock plus an advisory file lock; readers pick up lines appended by
    other processes before answering.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._records: Dict[str, Dict[int, ProtectedRecord]] = {}
        self._offset = 0
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch(exist_ok=True)
            except OSError as e:
                raise StoreError(f"cannot create record log {self.path}: {e}")
            self._refresh()
            logger.debug("opened record log %s (%d users)", self.path, len(self._records))

    # -- internals ---------------------------------------------------------

    def _apply(self, rec: ProtectedRecord) -> None:
        self._records.setdefault(rec.user_id, {})[rec.generation] = rec

    def _refresh(self) -> None:
        lines, new_offset = read_new_lines(self.path, self._offset)
        base = self._offset
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                self._apply(record_from_line(line))
            except ValueError as e:
                raise StoreError(f"{self.path}: corrupt record after byte {base} (line {i + 1}): {e}")
        self._offset = new_offset

    def _commit(self, recs: List[ProtectedRecord], fh) -> None:
        if fh is not None:
            for r in recs:
                fh.write(record_to_line(r) + "\n")
            fh.flush()
            self._offset = fh.tell()
        for r in recs:
            self._apply(r)

    # -- operations --------------------------------------------------------

    def enroll(self, user_id: str, record: ProtectedRecord) -> int:
        if record.user_id != user_id:
            raise ValueError(f"record belongs to {record.user_id!r}, not {user_id!r}")

        with self._lock, locked_append(self.path) as fh:
            self._refresh()
            history = self._records.get(user_id, {})
            generation = max(history, default=0) + 1

            updates = [
                replace(old, status=RecordStatus.SUPERSEDED)
                for old in history.values()
                if old.active and old.scheme is record.scheme
            ]
            new = replace(record, generation=generation, status=RecordStatus.ACTIVE)
            self._commit(updates + [new], fh)

        logger.info("enrolled user=%s scheme=%s generation=%d", user_id, record.scheme.value, generation)
        return generation

    def revoke(self, user_id: str) -> bool:
        with self._lock, locked_append(self.path) as fh:
            self._refresh()
            active = [r for r in self._records.get(user_id, {}).values() if r.active]
            if not active:
                logger.info("revoke user=%s: nothing active", user_id)
                return False
            self._commit([replace(r, status=RecordStatus.REVOKED) for r in active], fh)

        logger.info("revoked user=%s generations=%s", user_id, [r.generation for r in active])
        return True

    def fetch_active(self, user_id: str, scheme: Optional[SchemeName] = None) -> Optional[ProtectedRecord]:
        with self._lock:
            self._refresh()
            candidates = [
                r for r in self._records.get(user_id, {}).values()
                if r.active and (scheme is None or r.scheme is scheme)
            ]
        if not candidates:
            return None
        return max(candidates, key=lambda r: r.generation)

    def history(self, user_id: str) -> List[ProtectedRecord]:
        with self._lock:
            self._refresh()
            return sorted(self._records.get(user_id, {}).values(), key=lambda r: r.generation)

    def users(self) -> List[str]:
        with self._lock:
            self._refresh()
            return sorted(self._records)
