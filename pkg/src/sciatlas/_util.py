"""Small shared helpers: tokenization, hashing, atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from pathlib import Path

_TOKEN_RE = re.compile(r"[^0-9a-z]+")

# Field separator for composite hash keys; never appears in natural text.
_HASH_SEP = "\x1f"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empty tokens."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def content_key(*parts: str) -> str:
    """Stable hex digest of an ordered tuple of text fields."""
    joined = _HASH_SEP.join(parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and no incidental whitespace, for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
