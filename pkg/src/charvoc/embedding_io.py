from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .errors import EmbeddingParseError, NonFiniteError
from .models import Embedding, SpeakerDataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def parse_line(line: str, lineno: int = 0) -> Optional[Tuple[Optional[str], Embedding]]:
    """
    One vector per line: space-separated decimal reals, optionally prefixed by
    `<speaker_id>:`. Blank lines and `#` comments yield None.
    """
    raw = line.strip()
    if not raw or raw.startswith("#"):
        return None

    speaker: Optional[str] = None
    head, sep, rest = raw.partition(":")
    if sep:
        speaker = head.strip()
        if not speaker or any(c.isspace() for c in speaker):
            raise EmbeddingParseError(f"line {lineno}: malformed speaker id {head!r}")
        raw = rest

    tokens = raw.split()
    if not tokens:
        raise EmbeddingParseError(f"line {lineno}: no values")
    try:
        values = [float(t) for t in tokens]
    except ValueError as e:
        raise EmbeddingParseError(f"line {lineno}: {e}")
    try:
        return speaker, Embedding(values)
    except NonFiniteError as e:
        raise EmbeddingParseError(f"line {lineno}: {e}")


def load_embeddings(path: PathLike) -> List[Tuple[Optional[str], Embedding]]:
    p = Path(path)
    if not p.is_file():
        raise EmbeddingParseError(f"embedding file not found: {p}")

    out: List[Tuple[Optional[str], Embedding]] = []
    try:
        with p.open("r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                item = parse_line(line, lineno)
                if item is not None:
                    out.append(item)
    except UnicodeDecodeError as e:
        raise EmbeddingParseError(f"{p} is not UTF-8 text: {e}")
    except OSError as e:
        raise EmbeddingParseError(f"cannot read {p}: {e}")
    if not out:
        raise EmbeddingParseError(f"no embeddings in {p}")

    dims = {e.dim for _, e in out}
    if len(dims) != 1:
        raise EmbeddingParseError(f"mixed embedding dimensions in {p}: {sorted(dims)}")
    logger.debug("loaded %d embeddings (dim=%d) from %s", len(out), out[0][1].dim, p)
    return out


def load_embedding(path: PathLike, index: int = 0) -> Embedding:
    items = load_embeddings(path)
    if not 0 <= index < len(items):
        raise EmbeddingParseError(f"{path} has {len(items)} embedding(s); index {index} out of range")
    return items[index][1]


def load_dataset(path: PathLike) -> SpeakerDataset:
    grouped: Dict[str, List[Embedding]] = {}
    for lineno, (spk, emb) in enumerate(load_embeddings(path), start=1):
        if spk is None:
            raise EmbeddingParseError(f"{path}: vector {lineno} has no speaker id")
        grouped.setdefault(spk, []).append(emb)
    dim = next(iter(grouped.values()))[0].dim
    return SpeakerDataset(embeddings=grouped, dim=dim, provenance=f"ingested({path})")


def format_line(emb: Embedding, speaker: Optional[str] = None) -> str:
    body = " ".join(repr(float(v)) for v in emb.values)
    return f"{speaker}: {body}" if speaker else body


def write_dataset(ds: SpeakerDataset, path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        for spk in ds.speakers:
            for emb in ds.embeddings[spk]:
                f.write(format_line(emb, spk) + "\n")
    logger.info("wrote %d speakers to %s", len(ds.speakers), p)
    return p
