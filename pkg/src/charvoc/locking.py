from __future__ import annotations

import fcntl
import os
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Tuple

from .errors import StoreError


def lock_path(path: Path) -> Path:
    return path.with_name(path.name + ".lock")


@contextmanager
def file_lock(path: Optional[Path]) -> Iterator[None]:
    """
    Exclusive advisory lock for the log at `path`, taken on a sidecar
    `<name>.lock` file so the log itself can be replaced while locked.
    No-op for in-memory stores.
    """
    if path is None:
        yield
        return
    try:
        fh = lock_path(path).open("a", encoding="utf-8")
    except OSError as e:
        raise StoreError(f"cannot open lock file for {path}: {e}")
    try:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        yield
    finally:
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
        finally:
            fh.close()


@contextmanager
def append_handle(path: Path) -> Iterator[IO[str]]:
    """Append-mode handle, flushed and fsynced on exit. Caller holds `file_lock`."""
    try:
        fh = path.open("a", encoding="utf-8")
    except OSError as e:
        raise StoreError(f"cannot open {path} for writing: {e}")
    try:
        yield fh
        fh.flush()
        os.fsync(fh.fileno())
    except OSError as e:
        raise StoreError(f"write to {path} failed: {e}")
    finally:
        fh.close()


@contextmanager
def locked_append(path: Optional[Path]) -> Iterator[Optional[IO[str]]]:
    """
    Open `path` for appending under the exclusive lock, so several processes
    sharing one log serialize their writes. Yields None for in-memory stores.
    """
    if path is None:
        yield None
        return
    with file_lock(path), append_handle(path) as fh:
        yield fh


def rewrite_atomically(path: Path, lines: Iterable[str]) -> int:
    """
    Replace the log with `lines` through a temp file and rename. Caller holds
    `file_lock`. Returns the new size in bytes.
    """
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            size = fh.tell()
        os.replace(tmp, path)
    except OSError as e:
        raise StoreError(f"cannot rewrite {path}: {e}")
    return size


def file_identity(path: Optional[Path]) -> Optional[Tuple[int, int, bytes]]:
    """
    (device, inode, first line) of the log, or None. Changes when the log is
    rewritten, even if the filesystem hands the old inode number out again.
    """
    if path is None:
        return None
    try:
        with path.open("rb") as fh:
            head = fh.readline(256)
            st = os.fstat(fh.fileno())
    except FileNotFoundError:
        return None
    except OSError as e:
        raise StoreError(f"cannot stat {path}: {e}")
    return st.st_dev, st.st_ino, head


def read_new_lines(path: Optional[Path], offset: int) -> "tuple[list[str], int]":
    """
    Complete lines appended after byte `offset`, plus the new offset. A torn
    final line (no newline yet) is left for the next read.
    """
    if path is None or not path.exists():
        return [], offset
    try:
        with path.open("rb") as fh:
            fh.seek(offset)
            data = fh.read()
    except OSError as e:
        raise StoreError(f"cannot read {path}: {e}")
    end = data.rfind(b"\n")
    if end < 0:
        return [], offset
    chunk = data[:end + 1]
    return chunk.decode("utf-8").splitlines(), offset + len(chunk)
