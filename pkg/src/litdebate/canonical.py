"""Canonical serialization, content digests, and atomic file writes.

Every digest in the pipeline is a sha256 over the compact canonical JSON
of a payload (sorted keys, no whitespace), with all text fields
newline-normalized first, so digests are stable across platforms and
line-ending conventions.  Artifact files are written with indent=2 for
readability; digests never depend on file formatting.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any

from .errors import ParseError


def normalize_text(text: str) -> str:
    """Collapse CRLF / lone CR to LF."""
    return text.replace("\r\n", "\n").replace("\r", "\n")


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_payload(payload: Any) -> str:
    """Platform-stable digest of a JSON-serializable payload."""
    return sha256_hex(canonical_json(payload))


def write_text_atomic(path: str | Path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json_atomic(path: str | Path, payload: Any) -> Path:
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
    return write_text_atomic(path, text)


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc


def file_digest(path: str | Path) -> str:
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()
