"""Append-only session store for annotation collection.

The log is the source of truth: one record per line in the shared record
format, flushed and fsynced before a write is acknowledged. Annotations are
never edited in place; superseding happens through tombstones. Replaying the
log rebuilds the exact acknowledged state, tolerating a torn final line from
a crash mid-write.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any

from .corpus import Round, SpanAnnotation, annotation_from_record, annotation_to_record
from .records import RecordFormatError, dumps_record


class SessionStore:
    """Durable annotation log with an in-memory view."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seq = 0
        self._annotations: dict[int, SpanAnnotation] = {}
        self._tombstoned: set[int] = set()
        self._done: set[tuple[str, str]] = set()  # (task_id, annotator_id)
        self._handle = None
        if self.path.exists():
            self._replay()

    # ---- write path ----

    def _append(self, record: dict[str, Any]) -> int:
        with self._lock:
            self._seq += 1
            record = {"seq": self._seq, **record}
            if self._handle is None:
                self._handle = self.path.open("a", encoding="utf-8", newline="\n")
            self._handle.write(dumps_record(record) + "\n")
            self._handle.flush()
            os.fsync(self._handle.fileno())
            self._apply(record)
            return self._seq

    def append_annotation(self, annotation: SpanAnnotation) -> int:
        """Persist an annotation; returns its sequence number."""
        return self._append({"kind": "annotation", **annotation_to_record(annotation)})

    def supersede(self, seq: int) -> None:
        """Tombstone a previously acknowledged annotation."""
        if seq not in self._annotations and seq not in self._tombstoned:
            raise KeyError(f"no annotation with seq {seq}")
        self._append({"kind": "tombstone", "target": seq})

    def mark_done(self, task_id: str, annotator_id: str) -> None:
        self._append({"kind": "task_done", "task_id": task_id, "annotator_id": annotator_id})

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    # ---- read path ----

    def annotations(self, *, annotator_id: str | None = None) -> list[SpanAnnotation]:
        """Live (non-tombstoned) annotations in acknowledgment order."""
        with self._lock:
            items = [
                ann
                for seq, ann in sorted(self._annotations.items())
                if annotator_id is None or ann.annotator_id == annotator_id
            ]
        return items

    def annotations_for(
        self, summary_id: str, *, annotator_id: str | None = None, round: Round | None = None
    ) -> list[SpanAnnotation]:
        return [
            ann
            for ann in self.annotations(annotator_id=annotator_id)
            if ann.summary_id == summary_id and (round is None or ann.round is round)
        ]

    def completed_tasks(self, annotator_id: str) -> set[str]:
        with self._lock:
            return {task_id for task_id, who in self._done if who == annotator_id}

    def is_done(self, task_id: str, annotator_id: str) -> bool:
        with self._lock:
            return (task_id, annotator_id) in self._done

    # ---- replay ----

    def _apply(self, record: dict[str, Any]) -> None:
        kind = record.get("kind")
        seq = int(record["seq"])
        if kind == "annotation":
            self._annotations[seq] = annotation_from_record(record, f"seq {seq}")
        elif kind == "tombstone":
            target = int(record["target"])
            self._annotations.pop(target, None)
            self._tombstoned.add(target)
        elif kind == "task_done":
            self._done.add((record["task_id"], record["annotator_id"]))
        else:
            raise RecordFormatError(f"unknown session record kind {kind!r}")

    def _replay(self) -> None:
        raw = self.path.read_bytes()
        lines = raw.split(b"\n")
        last_idx = max((i for i, line in enumerate(lines) if line.strip()), default=-1)
        for i, line in enumerate(lines):
            text = line.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            try:
                record = json.loads(text)
                if not isinstance(record, dict) or "seq" not in record:
                    raise ValueError("not a session record")
                self._apply(record)
                self._seq = max(self._seq, int(record["seq"]))
            except (ValueError, KeyError, RecordFormatError) as exc:
                if i == last_idx:
                    # A torn final line is an unacknowledged write; drop it.
                    break
                raise RecordFormatError(
                    f"{self.path}: corrupt session record on line {i + 1}"
                ) from exc
