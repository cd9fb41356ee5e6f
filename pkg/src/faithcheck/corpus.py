"""Corpus data model: dialogues, summaries, and span annotations.

Offsets are always expressed in Unicode scalar values (Python string indices),
never bytes, and every span is half-open: char_start inclusive, char_end
exclusive. Loaded corpora are treated as immutable; new annotations flow
through the session store, not through corpus mutation.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .records import RecordFormatError, dumps_record, read_records, write_text_atomic

log = logging.getLogger(__name__)

SAMSUM = "samsum"
DIALOGSUM = "dialogsum"


class CorpusError(ValueError):
    """Base class for corpus construction and loading failures."""


class CorpusIntegrityError(CorpusError):
    """A record violates structural rules (dangling ids, bad turn order)."""


class SpanOffsetError(CorpusError):
    """A span's offsets do not address a non-empty substring of its summary."""


class CategoryMappingError(CorpusError):
    """A legacy error-type label has no entry in the mapping table."""


class ErrorCategory(str, Enum):
    """Closed taxonomy of summary inconsistency categories."""

    CIRCUMSTANTIAL_INFERENCE = "circumstantial_inference"
    LOGICAL_ERROR = "logical_error"
    WORLD_KNOWLEDGE = "world_knowledge"
    REFERENTIAL_ERROR = "referential_error"
    FIGURATIVE_MISINTERPRETATION = "figurative_misinterpretation"
    NONSENSICAL = "nonsensical"


class ModelCategory(str, Enum):
    FT_SUMM = "ft_summ"
    LLM = "llm"


class Round(str, Enum):
    """Two-round annotation workflow: mark spans first, categorize second."""

    ERROR_ANNOTATION = "error_annotation"
    CATEGORIZATION = "categorization"


class Label(str, Enum):
    """Binary consistency verdict for a summary."""

    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


class CorpusFormat(str, Enum):
    NATIVE = "native"
    REFMATTERS = "refmatters"
    FACEVAL = "faceval"


@dataclass(frozen=True)
class DialogueTurn:
    speaker: str
    utterance: str
    index: int

    def __post_init__(self) -> None:
        if not self.speaker:
            raise CorpusIntegrityError("dialogue turn requires a non-empty speaker")
        if self.index < 0:
            raise CorpusIntegrityError(f"turn index must be >= 0, got {self.index}")


@dataclass(frozen=True)
class Dialogue:
    id: str
    dataset: str
    turns: tuple[DialogueTurn, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusIntegrityError("dialogue requires a non-empty id")
        if not self.turns:
            raise CorpusIntegrityError(f"dialogue {self.id!r} has no turns")
        indices = [turn.index for turn in self.turns]
        if indices != list(range(len(self.turns))):
            raise CorpusIntegrityError(
                f"dialogue {self.id!r} turn indices must be contiguous from 0, got {indices}"
            )


@dataclass(frozen=True)
class SummaryRecord:
    id: str
    dialogue_id: str
    model_id: str
    model_category: ModelCategory
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusIntegrityError("summary requires a non-empty id")
        if not self.text:
            raise CorpusIntegrityError(f"summary {self.id!r} has empty text")


@dataclass(frozen=True)
class SpanAnnotation:
    """A contiguous summary span marked inconsistent by one annotator.

    category is None for round-1 records; the categorization round requires
    it. no_offsets marks spans imported from sources that label whole
    summaries without character positions.
    """

    summary_id: str
    char_start: int
    char_end: int
    category: ErrorCategory | None
    evidence_turns: tuple[int, ...]
    annotator_id: str
    round: Round
    no_offsets: bool = False

    def __post_init__(self) -> None:
        if not self.annotator_id:
            raise CorpusIntegrityError("annotation requires a non-empty annotator_id")
        if self.round is Round.CATEGORIZATION and self.category is None:
            raise CorpusIntegrityError(
                f"categorization-round annotation on {self.summary_id!r} requires a category"
            )
        if not isinstance(self.evidence_turns, tuple):
            object.__setattr__(self, "evidence_turns", tuple(self.evidence_turns))

    def dedup_key(self) -> tuple[str, int, int, str, Round, ErrorCategory | None]:
        # Category is part of the key: whole-summary imports carry several
        # categories at identical offsets, and those are not duplicates.
        return (
            self.summary_id,
            self.char_start,
            self.char_end,
            self.annotator_id,
            self.round,
            self.category,
        )


def validate_span_offsets(char_start: int, char_end: int, summary_text: str) -> None:
    """Single validation path for span offsets, shared by loaders and the service."""
    if char_start < 0 or char_end > len(summary_text) or char_start >= char_end:
        raise SpanOffsetError(
            f"span [{char_start}, {char_end}) is not a non-empty range within "
            f"a summary of length {len(summary_text)}"
        )


@dataclass
class Corpus:
    dialogues: dict[str, Dialogue] = field(default_factory=dict)
    summaries: dict[str, SummaryRecord] = field(default_factory=dict)
    annotations: list[SpanAnnotation] = field(default_factory=list)

    def validate(self) -> None:
        for summary in self.summaries.values():
            if summary.dialogue_id not in self.dialogues:
                raise CorpusIntegrityError(
                    f"summary {summary.id!r} references unknown dialogue {summary.dialogue_id!r}"
                )
        for ann in self.annotations:
            summary = self.summaries.get(ann.summary_id)
            if summary is None:
                raise CorpusIntegrityError(
                    f"annotation references unknown summary {ann.summary_id!r}"
                )
            validate_span_offsets(ann.char_start, ann.char_end, summary.text)
            n_turns = len(self.dialogues[summary.dialogue_id].turns)
            for turn_index in ann.evidence_turns:
                if turn_index < 0 or turn_index >= n_turns:
                    raise CorpusIntegrityError(
                        f"annotation on {ann.summary_id!r} cites evidence turn {turn_index}, "
                        f"dialogue has {n_turns} turns"
                    )

    def annotations_for(self, summary_id: str) -> list[SpanAnnotation]:
        return [ann for ann in self.annotations if ann.summary_id == summary_id]


# ---- legacy error-type mapping ----

# Default tables are an editable configuration, not a hard-coded truth: the
# source taxonomies do not line up one-to-one with the target categories.
DEFAULT_LEGACY_MAPPING: dict[str, dict[str, ErrorCategory]] = {
    "refmatters": {
        "entity": ErrorCategory.REFERENTIAL_ERROR,
        "predicate": ErrorCategory.LOGICAL_ERROR,
        "circumstance": ErrorCategory.LOGICAL_ERROR,
        "coreference": ErrorCategory.REFERENTIAL_ERROR,
        "discourse link": ErrorCategory.LOGICAL_ERROR,
        "out of article": ErrorCategory.WORLD_KNOWLEDGE,
        "grammatical": ErrorCategory.NONSENSICAL,
        "others": ErrorCategory.LOGICAL_ERROR,
    },
    "faceval": {
        "subject object": ErrorCategory.REFERENTIAL_ERROR,
        "pronoun": ErrorCategory.REFERENTIAL_ERROR,
        "negation": ErrorCategory.LOGICAL_ERROR,
        "particulars": ErrorCategory.LOGICAL_ERROR,
        "hallucination": ErrorCategory.WORLD_KNOWLEDGE,
        "other": ErrorCategory.LOGICAL_ERROR,
    },
}


def _normalize_label(label: str) -> str:
    key = " ".join(label.lower().split())
    if key.endswith(" error"):
        key = key[: -len(" error")]
    return key


def load_mapping(path: str | Path) -> dict[str, dict[str, ErrorCategory]]:
    """Load a legacy mapping table from a JSON config file.

    Shape: {"refmatters": {"Entity": "referential_error", ...}, "faceval": {...}}.
    Labels are normalized the same way lookups are (case, whitespace, a
    trailing " error" word).
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    table: dict[str, dict[str, ErrorCategory]] = {}
    for source, entries in raw.items():
        table[source.lower()] = {
            _normalize_label(label): ErrorCategory(value) for label, value in entries.items()
        }
    return table


def map_legacy_category(
    source: CorpusFormat | str,
    label: str,
    table: Mapping[str, Mapping[str, ErrorCategory]] | None = None,
) -> ErrorCategory:
    """Map a source benchmark's error-type label onto the taxonomy.

    Raises CategoryMappingError for labels absent from the table, listing the
    accepted ones.
    """
    source_key = source.value if isinstance(source, CorpusFormat) else str(source).lower()
    tables = table if table is not None else DEFAULT_LEGACY_MAPPING
    entries = tables.get(source_key)
    if entries is None:
        raise CategoryMappingError(
            f"no mapping table for source {source_key!r}; have {sorted(tables)}"
        )
    key = _normalize_label(label)
    if key not in entries:
        accepted = ", ".join(sorted(entries))
        raise CategoryMappingError(
            f"unknown {source_key} error type {label!r}; accepted labels: {accepted}"
        )
    return entries[key]


# ---- native format ----

def _dialogue_to_record(dialogue: Dialogue) -> dict[str, Any]:
    return {
        "kind": "dialogue",
        "id": dialogue.id,
        "dataset": dialogue.dataset,
        "turns": [
            {"speaker": turn.speaker, "utterance": turn.utterance, "index": turn.index}
            for turn in dialogue.turns
        ],
    }


def _summary_to_record(summary: SummaryRecord) -> dict[str, Any]:
    return {
        "kind": "summary",
        "id": summary.id,
        "dialogue_id": summary.dialogue_id,
        "model_id": summary.model_id,
        "model_category": summary.model_category.value,
        "text": summary.text,
    }


def annotation_to_record(ann: SpanAnnotation) -> dict[str, Any]:
    return {
        "kind": "annotation",
        "summary_id": ann.summary_id,
        "char_start": ann.char_start,
        "char_end": ann.char_end,
        "category": ann.category.value if ann.category is not None else None,
        "evidence_turns": list(ann.evidence_turns),
        "annotator_id": ann.annotator_id,
        "round": ann.round.value,
        "no_offsets": ann.no_offsets,
    }


def annotation_from_record(record: Mapping[str, Any], where: str = "") -> SpanAnnotation:
    try:
        category = record.get("category")
        return SpanAnnotation(
            summary_id=record["summary_id"],
            char_start=int(record["char_start"]),
            char_end=int(record["char_end"]),
            category=ErrorCategory(category) if category is not None else None,
            evidence_turns=tuple(int(i) for i in record.get("evidence_turns", [])),
            annotator_id=record["annotator_id"],
            round=Round(record.get("round", Round.ERROR_ANNOTATION.value)),
            no_offsets=bool(record.get("no_offsets", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise RecordFormatError(f"{where}: bad annotation record: {exc}") from exc


def _load_native(path: Path) -> Corpus:
    corpus = Corpus()
    seen: set[tuple] = set()
    for lineno, record in read_records(path):
        where = f"{path}:{lineno}"
        kind = record.get("kind")
        try:
            if kind == "dialogue":
                turns = tuple(
                    DialogueTurn(t["speaker"], t["utterance"], int(t.get("index", i)))
                    for i, t in enumerate(record["turns"])
                )
                dialogue = Dialogue(record["id"], record.get("dataset", ""), turns)
                if dialogue.id in corpus.dialogues:
                    raise CorpusIntegrityError(f"{where}: duplicate dialogue id {dialogue.id!r}")
                corpus.dialogues[dialogue.id] = dialogue
            elif kind == "summary":
                summary = SummaryRecord(
                    id=record["id"],
                    dialogue_id=record["dialogue_id"],
                    model_id=record["model_id"],
                    model_category=ModelCategory(record["model_category"]),
                    text=record["text"],
                )
                if summary.id in corpus.summaries:
                    raise CorpusIntegrityError(f"{where}: duplicate summary id {summary.id!r}")
                corpus.summaries[summary.id] = summary
            elif kind == "annotation":
                ann = annotation_from_record(record, where)
                if ann.dedup_key() in seen:
                    log.warning("%s: dropping duplicate annotation %s", where, ann.dedup_key())
                    continue
                seen.add(ann.dedup_key())
                corpus.annotations.append(ann)
            else:
                raise RecordFormatError(f"{where}: unknown record kind {kind!r}")
        except KeyError as exc:
            raise RecordFormatError(f"{where}: missing field {exc}") from exc
    corpus.validate()
    return corpus


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the native format; load_corpus inverts this exactly."""
    lines = []
    for dialogue in corpus.dialogues.values():
        lines.append(dumps_record(_dialogue_to_record(dialogue)))
    for summary in corpus.summaries.values():
        lines.append(dumps_record(_summary_to_record(summary)))
    for ann in corpus.annotations:
        lines.append(dumps_record(annotation_to_record(ann)))
    write_text_atomic(path, "".join(line + "\n" for line in lines))


# ---- legacy benchmark adapters ----

# Known fine-tuned baselines; anything else defaults to the LLM category
# unless the record says otherwise.
_FT_MODEL_IDS = {
    "bart", "unilm", "mv-bart", "mvbart", "cods",
    "condigsum-bart", "coref-bart", "codsbart",
}


def _model_category_for(record: Mapping[str, Any], model_id: str) -> ModelCategory:
    explicit = record.get("model_category")
    if explicit:
        return ModelCategory(explicit)
    if model_id.lower() in _FT_MODEL_IDS:
        return ModelCategory.FT_SUMM
    return ModelCategory.LLM


def _parse_dialogue_text(raw: Any, dialogue_id: str, dataset: str) -> Dialogue:
    """Accept either structured turns or 'Speaker: utterance' lines."""
    turns: list[DialogueTurn] = []
    if isinstance(raw, str):
        for line in raw.splitlines():
            line = line.strip()
            if not line:
                continue
            speaker, sep, utterance = line.partition(":")
            if sep and speaker.strip():
                turns.append(DialogueTurn(speaker.strip(), utterance.strip(), len(turns)))
            elif turns:
                prev = turns[-1]
                turns[-1] = DialogueTurn(prev.speaker, prev.utterance + " " + line, prev.index)
            else:
                raise RecordFormatError(
                    f"dialogue {dialogue_id!r}: first line {line!r} has no 'speaker:' prefix"
                )
    else:
        for i, item in enumerate(raw):
            turns.append(DialogueTurn(item["speaker"], item["utterance"], i))
    return Dialogue(dialogue_id, dataset, tuple(turns))


def _read_legacy_items(path: Path) -> Iterable[tuple[str, dict[str, Any]]]:
    """Legacy files are either one JSON array or line-delimited objects."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            items = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RecordFormatError(f"{path}: invalid JSON: {exc}") from exc
        for i, item in enumerate(items):
            if not isinstance(item, dict):
                raise RecordFormatError(f"{path}: item {i} is not a JSON object")
            yield f"{path}[{i}]", item
    else:
        for lineno, record in read_records(path):
            yield f"{path}:{lineno}", record


def _dialogue_key(record: Mapping[str, Any]) -> str:
    if record.get("dialogue_id"):
        return str(record["dialogue_id"])
    raw = record.get("dialogue")
    blob = raw if isinstance(raw, str) else json.dumps(raw, sort_keys=True)
    return "dlg-" + hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


def _ground_legacy_span(span_text: str, summary_text: str) -> tuple[int, int, bool]:
    """Exact first occurrence; a miss falls back to the whole summary."""
    pos = summary_text.find(span_text) if span_text else -1
    if pos < 0:
        return 0, len(summary_text), True
    return pos, pos + len(span_text), False


def _load_refmatters(path: Path, mapping) -> Corpus:
    corpus = Corpus()
    seen: set[tuple] = set()
    counter = 0
    for where, record in _read_legacy_items(path):
        counter += 1
        try:
            dataset = str(record.get("dataset", SAMSUM)).lower()
            dialogue_id = _dialogue_key(record)
            if dialogue_id not in corpus.dialogues:
                corpus.dialogues[dialogue_id] = _parse_dialogue_text(
                    record["dialogue"], dialogue_id, dataset
                )
            model_id = str(record.get("model", record.get("model_id", "unknown")))
            summary_id = str(record.get("id") or f"{dialogue_id}::{model_id}")
            summary = SummaryRecord(
                id=summary_id,
                dialogue_id=dialogue_id,
                model_id=model_id,
                model_category=_model_category_for(record, model_id),
                text=record["summary"],
            )
            if summary.id in corpus.summaries:
                raise CorpusIntegrityError(f"{where}: duplicate summary id {summary.id!r}")
            corpus.summaries[summary.id] = summary
            for error in record.get("errors", []):
                category = map_legacy_category(CorpusFormat.REFMATTERS, error["type"], mapping)
                if "start" in error or "char_start" in error:
                    start = int(error.get("start", error.get("char_start")))
                    end = int(error.get("end", error.get("char_end")))
                    no_offsets = False
                else:
                    start, end, no_offsets = _ground_legacy_span(
                        str(error.get("span", "")), summary.text
                    )
                ann = SpanAnnotation(
                    summary_id=summary.id,
                    char_start=start,
                    char_end=end,
                    category=category,
                    evidence_turns=tuple(int(i) for i in error.get("evidence", [])),
                    annotator_id="refmatters",
                    round=Round.CATEGORIZATION,
                    no_offsets=no_offsets,
                )
                if ann.dedup_key() in seen:
                    log.warning("%s: dropping duplicate annotation %s", where, ann.dedup_key())
                    continue
                seen.add(ann.dedup_key())
                corpus.annotations.append(ann)
        except KeyError as exc:
            raise RecordFormatError(f"{where}: missing field {exc}") from exc
    corpus.validate()
    return corpus


def _load_faceval(path: Path, mapping) -> Corpus:
    corpus = Corpus()
    seen: set[tuple] = set()
    for where, record in _read_legacy_items(path):
        try:
            dataset = str(record.get("dataset", SAMSUM)).lower()
            dialogue_id = _dialogue_key(record)
            if dialogue_id not in corpus.dialogues:
                corpus.dialogues[dialogue_id] = _parse_dialogue_text(
                    record["dialogue"], dialogue_id, dataset
                )
            model_id = str(record.get("model", record.get("model_id", "unknown")))
            summary_id = str(record.get("id") or f"{dialogue_id}::{model_id}")
            summary = SummaryRecord(
                id=summary_id,
                dialogue_id=dialogue_id,
                model_id=model_id,
                model_category=_model_category_for(record, model_id),
                text=record["summary"],
            )
            if summary.id in corpus.summaries:
                raise CorpusIntegrityError(f"{where}: duplicate summary id {summary.id!r}")
            corpus.summaries[summary.id] = summary
            raw_types = record.get("error_types", [])
            if isinstance(raw_types, Mapping):
                labels = [label for label, flagged in raw_types.items() if flagged]
            else:
                labels = list(raw_types)
            for label in labels:
                category = map_legacy_category(CorpusFormat.FACEVAL, label, mapping)
                # The source labels whole summaries; no character offsets exist.
                ann = SpanAnnotation(
                    summary_id=summary.id,
                    char_start=0,
                    char_end=len(summary.text),
                    category=category,
                    evidence_turns=(),
                    annotator_id="faceval",
                    round=Round.CATEGORIZATION,
                    no_offsets=True,
                )
                if ann.dedup_key() in seen:
                    log.warning("%s: dropping duplicate annotation %s", where, ann.dedup_key())
                    continue
                seen.add(ann.dedup_key())
                corpus.annotations.append(ann)
        except KeyError as exc:
            raise RecordFormatError(f"{where}: missing field {exc}") from exc
    corpus.validate()
    return corpus


def load_corpus(
    path: str | Path,
    format: CorpusFormat | str = CorpusFormat.NATIVE,
    *,
    mapping: Mapping[str, Mapping[str, ErrorCategory]] | None = None,
) -> Corpus:
    """Load a corpus file.

    Args:
        path: record file to read.
        format: native, refmatters, or faceval.
        mapping: legacy error-type mapping override; defaults to
            DEFAULT_LEGACY_MAPPING for the legacy formats.

    Raises:
        RecordFormatError: a line does not parse.
        CorpusIntegrityError: ids dangle or duplicate.
        SpanOffsetError: an annotation does not address its summary.
        CategoryMappingError: a legacy error type has no mapping entry.
    """
    format = CorpusFormat(format)
    path = Path(path)
    if format is CorpusFormat.NATIVE:
        return _load_native(path)
    if format is CorpusFormat.REFMATTERS:
        return _load_refmatters(path, mapping)
    return _load_faceval(path, mapping)


def merge_corpora(base: Corpus, extra: Corpus, *, drop_duplicate_summaries: bool = False) -> Corpus:
    """Merge two corpora into a new one.

    With drop_duplicate_summaries, a summary in extra whose (dialogue text,
    summary text) pair already exists in base is skipped along with its
    annotations; benchmark overlaps are otherwise kept as distinct records.
    """
    merged = Corpus(dict(base.dialogues), dict(base.summaries), list(base.annotations))

    def content_key(corpus: Corpus, summary: SummaryRecord) -> tuple[str, str]:
        dialogue = corpus.dialogues[summary.dialogue_id]
        rendered = "\n".join(f"{t.speaker}: {t.utterance}" for t in dialogue.turns)
        return rendered, summary.text

    existing = {content_key(base, s) for s in base.summaries.values()}
    skipped: set[str] = set()
    for dialogue_id, dialogue in extra.dialogues.items():
        if dialogue_id in merged.dialogues and merged.dialogues[dialogue_id] != dialogue:
            raise CorpusIntegrityError(f"dialogue id {dialogue_id!r} conflicts across corpora")
        merged.dialogues.setdefault(dialogue_id, dialogue)
    for summary_id, summary in extra.summaries.items():
        if summary_id in merged.summaries:
            raise CorpusIntegrityError(f"summary id {summary_id!r} conflicts across corpora")
        if drop_duplicate_summaries and content_key(extra, summary) in existing:
            skipped.add(summary_id)
            continue
        merged.summaries[summary_id] = summary
    merged.annotations.extend(
        ann for ann in extra.annotations if ann.summary_id not in skipped
    )
    merged.validate()
    return merged
