"""Line-delimited JSON record files.

Every persistent artifact (corpora, mock scripts, detection results, session
logs) is a UTF-8 text file with one JSON object per line. Writers emit a
canonical encoding (sorted keys, compact separators, ensure_ascii=False) so
that identical data always produces identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator


class RecordFormatError(ValueError):
    """A record file could not be parsed; the message names the line."""


def dumps_record(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def read_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_number, record) pairs; line numbers are 1-based."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(f"{path}:{lineno}: invalid JSON record: {exc}") from exc
            if not isinstance(record, dict):
                raise RecordFormatError(f"{path}:{lineno}: record is not a JSON object")
            yield lineno, record


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write text to path via a temp file plus rename in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_records_atomic(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    lines = [dumps_record(record) for record in records]
    text = "".join(line + "\n" for line in lines)
    write_text_atomic(path, text)
