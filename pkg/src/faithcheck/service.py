"""HTTP annotation service.

Serves the two-round annotation workflow over a loaded corpus. All mutation
flows through the session store; the corpus itself is never modified. The
annotator identity arrives via the X-Annotator header or an annotator query
parameter; there is no authentication by design.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .corpus import (
    Corpus,
    ErrorCategory,
    Round,
    SpanAnnotation,
    SpanOffsetError,
    annotation_to_record,
    validate_span_offsets,
)
from .metrics import CoverageError, pairwise_agreement
from .store import SessionStore


class Task:
    __slots__ = ("task_id", "summary_id", "round")

    def __init__(self, task_id: str, summary_id: str, round: Round) -> None:
        self.task_id = task_id
        self.summary_id = summary_id
        self.round = round


def build_tasks(corpus: Corpus) -> dict[str, Task]:
    """Two tasks per summary, one per round, in corpus order."""
    tasks: dict[str, Task] = {}
    for summary_id in corpus.summaries:
        for round in (Round.ERROR_ANNOTATION, Round.CATEGORIZATION):
            task_id = f"{summary_id}@{round.value}"
            tasks[task_id] = Task(task_id, summary_id, round)
    return tasks


class AnnotationBody(BaseModel):
    char_start: int
    char_end: int
    category: str | None = None
    evidence_turns: list[int] = Field(default_factory=list)


def _annotator_from(request: Request, annotator: str | None) -> str:
    identity = request.headers.get("x-annotator") or annotator
    if not identity:
        raise HTTPException(
            status_code=422,
            detail={"error": "annotator_required", "message": "pass X-Annotator header or annotator query parameter"},
        )
    return identity


def create_app(corpus: Corpus, store: SessionStore, *, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="faithcheck annotation service")
    tasks = build_tasks(corpus)

    def get_task(task_id: str) -> Task:
        task = tasks.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail={"error": "unknown_task", "task_id": task_id})
        return task

    def round1_spans(summary_id: str) -> list[SpanAnnotation]:
        """Round-1 spans visible to round-2 tasks: corpus plus live store."""
        existing = [
            ann
            for ann in corpus.annotations_for(summary_id)
            if ann.round is Round.ERROR_ANNOTATION
        ]
        existing.extend(store.annotations_for(summary_id, round=Round.ERROR_ANNOTATION))
        return existing

    @app.get("/tasks")
    def list_tasks(
        request: Request,
        annotator: str | None = Query(default=None),
        round: str | None = Query(default=None),
    ) -> list[dict[str, Any]]:
        identity = request.headers.get("x-annotator") or annotator
        round_filter = Round(round) if round else None
        listing = []
        for task in tasks.values():
            if round_filter is not None and task.round is not round_filter:
                continue
            summary = corpus.summaries[task.summary_id]
            done = bool(identity) and store.is_done(task.task_id, identity)
            listing.append(
                {
                    "task_id": task.task_id,
                    "summary_id": task.summary_id,
                    "dialogue_id": summary.dialogue_id,
                    "model_id": summary.model_id,
                    "round": task.round.value,
                    "status": "done" if done else "open",
                }
            )
        return listing

    @app.get("/tasks/{task_id}")
    def task_detail(
        task_id: str, request: Request, annotator: str | None = Query(default=None)
    ) -> dict[str, Any]:
        task = get_task(task_id)
        summary = corpus.summaries[task.summary_id]
        dialogue = corpus.dialogues[summary.dialogue_id]
        identity = request.headers.get("x-annotator") or annotator
        own = (
            [
                {"seq": None, **annotation_to_record(ann)}
                for ann in store.annotations_for(
                    task.summary_id, annotator_id=identity, round=task.round
                )
            ]
            if identity
            else []
        )
        existing = (
            [annotation_to_record(ann) for ann in round1_spans(task.summary_id)]
            if task.round is Round.CATEGORIZATION
            else []
        )
        return {
            "task_id": task.task_id,
            "round": task.round.value,
            "status": "done" if identity and store.is_done(task.task_id, identity) else "open",
            "dialogue": {
                "id": dialogue.id,
                "dataset": dialogue.dataset,
                "turns": [
                    {"speaker": turn.speaker, "utterance": turn.utterance, "index": turn.index}
                    for turn in dialogue.turns
                ],
            },
            "summary": {"id": summary.id, "text": summary.text, "model_id": summary.model_id},
            "existing_spans": existing,
            "annotations": own,
        }

    @app.post("/tasks/{task_id}/annotations", status_code=201)
    def post_annotation(
        task_id: str,
        body: AnnotationBody,
        request: Request,
        annotator: str | None = Query(default=None),
    ) -> dict[str, Any]:
        task = get_task(task_id)
        identity = _annotator_from(request, annotator)
        summary = corpus.summaries[task.summary_id]
        dialogue = corpus.dialogues[summary.dialogue_id]

        if task.round is Round.CATEGORIZATION and body.category is None:
            raise HTTPException(
                status_code=422,
                detail={"error": "category_required", "round": task.round.value},
            )
        category = None
        if body.category is not None:
            try:
                category = ErrorCategory(body.category)
            except ValueError:
                raise HTTPException(
                    status_code=422,
                    detail={
                        "error": "unknown_category",
                        "category": body.category,
                        "accepted": [c.value for c in ErrorCategory],
                    },
                ) from None
        try:
            validate_span_offsets(body.char_start, body.char_end, summary.text)
        except SpanOffsetError:
            raise HTTPException(
                status_code=422,
                detail={
                    "error": "invalid_offsets",
                    "char_start": body.char_start,
                    "char_end": body.char_end,
                    "summary_length": len(summary.text),
                },
            ) from None
        bad_turns = [i for i in body.evidence_turns if i < 0 or i >= len(dialogue.turns)]
        if bad_turns:
            raise HTTPException(
                status_code=422,
                detail={
                    "error": "invalid_evidence_turns",
                    "turns": bad_turns,
                    "dialogue_turns": len(dialogue.turns),
                },
            )
        annotation = SpanAnnotation(
            summary_id=task.summary_id,
            char_start=body.char_start,
            char_end=body.char_end,
            category=category,
            evidence_turns=tuple(body.evidence_turns),
            annotator_id=identity,
            round=task.round,
        )
        seq = store.append_annotation(annotation)
        return {"seq": seq, **annotation_to_record(annotation)}

    @app.post("/tasks/{task_id}/done")
    def mark_done(
        task_id: str, request: Request, annotator: str | None = Query(default=None)
    ) -> dict[str, Any]:
        task = get_task(task_id)
        identity = _annotator_from(request, annotator)
        store.mark_done(task.task_id, identity)
        return {"task_id": task.task_id, "annotator_id": identity, "status": "done"}

    @app.get("/agreement")
    def agreement(a: str = Query(...), b: str = Query(...)) -> dict[str, Any]:
        shared = store.completed_tasks(a) & store.completed_tasks(b)
        shared_tasks = [tasks[task_id] for task_id in sorted(shared) if task_id in tasks]
        if not shared_tasks:
            raise HTTPException(
                status_code=422,
                detail={"error": "no_shared_completed_tasks", "a": a, "b": b},
            )
        scope_pairs = {(task.summary_id, task.round) for task in shared_tasks}
        summary_ids = {summary_id for summary_id, _ in scope_pairs}

        def in_scope(ann: SpanAnnotation) -> bool:
            return (ann.summary_id, ann.round) in scope_pairs

        ann_a = [ann for ann in store.annotations(annotator_id=a) if in_scope(ann)]
        ann_b = [ann for ann in store.annotations(annotator_id=b) if in_scope(ann)]
        try:
            value = pairwise_agreement(ann_a, ann_b, corpus, summary_ids=summary_ids)
        except CoverageError as exc:
            raise HTTPException(status_code=422, detail={"error": "coverage", "message": str(exc)})
        return {
            "a": a,
            "b": b,
            "agreement": value,
            "summaries": sorted(summary_ids),
            "shared_tasks": sorted(task.task_id for task in shared_tasks),
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
