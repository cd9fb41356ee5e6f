"""Span-level inconsistency detection pipelines.

Three methods share one result shape. Direct assessment asks for a single
yes/no verdict and never produces spans. The span method asks one generic
identification question; the mixture-of-experts method asks five, one per
error category in a fixed order. Identified claims are grounded to character
offsets in the summary, then each grounded span is verified on a 1-to-5
support scale and kept only when the rating is below full support. A summary
is labeled inconsistent exactly when kept spans remain.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backend import CompletionRequest, CompletionResponse, DEFAULT_MAX_OUTPUT
from .corpus import Corpus, Dialogue, ErrorCategory, Label, SummaryRecord
from .prompts import (
    MOE_TEMPLATES,
    TEMPLATE_DIRECT_ASSESSMENT,
    TEMPLATE_SPAN_IDENTIFICATION,
    TEMPLATE_SPAN_VERIFICATION,
    TEMPLATE_SUMMARIZE,
    FewShotExemplar,
    build_fewshot,
    fill,
    load_fewshot_bundle,
    load_template,
    render_dialogue,
    span_list_answer,
    verdict_answer,
)
from .records import RecordFormatError, dumps_record, read_records, write_text_atomic
from .textspan import (
    DEFAULT_ABBREVIATIONS,
    NormalizedText,
    normalize_claim,
    sentence_index_at,
    sentence_spans,
)

# Ratings run 1..5; a span survives the verification gate only below this.
FULL_SUPPORT_RATING = 5
FALLBACK_RATING = 1

# The expert fan-out order is fixed; Nonsensical has no expert.
MOE_EXPERT_ORDER: tuple[ErrorCategory, ...] = (
    ErrorCategory.CIRCUMSTANTIAL_INFERENCE,
    ErrorCategory.LOGICAL_ERROR,
    ErrorCategory.WORLD_KNOWLEDGE,
    ErrorCategory.REFERENTIAL_ERROR,
    ErrorCategory.FIGURATIVE_MISINTERPRETATION,
)

_LIST_MARKER = re.compile(r"^(?:-|•|\d+\.)\s*")
_VERDICT = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class Method(str, Enum):
    DIRECT_ASSESSMENT = "da"
    SPAN = "span"
    MOE = "moe"


class Shots(str, Enum):
    ZERO = "zero"
    FEW = "few"


class VerdictParseError(ValueError):
    """A direct-assessment response held no standalone yes/no token."""


@dataclass(frozen=True)
class RawSpanClaim:
    """A span text claimed by an identification response, before grounding."""

    text: str
    source_category: ErrorCategory | None
    step_tag: str


@dataclass(frozen=True)
class GroundedSpan:
    """A claim located in the summary, with verification state once rated.

    ambiguous flags claims whose normalized text occurs two or more times;
    grounding always takes the first occurrence. rating_imputed flags spans
    whose rating fell back to the conservative minimum after an unparseable
    verification response and one retry.
    """

    claim: RawSpanClaim
    char_start: int
    char_end: int
    sentence_index: int
    verification_rating: int | None = None
    rating_imputed: bool = False
    ambiguous: bool = False

    @property
    def category(self) -> ErrorCategory | None:
        return self.claim.source_category


@dataclass(frozen=True)
class Transcript:
    request: CompletionRequest
    response: CompletionResponse


@dataclass(frozen=True)
class DetectionResult:
    summary_id: str
    method: Method
    shots: Shots
    spans: tuple[GroundedSpan, ...]
    binary_label: Label
    transcripts: tuple[Transcript, ...]
    unmatched: tuple[RawSpanClaim, ...]


# ---- response parsing ----

def parse_verdict(text: str) -> Label:
    """First standalone yes/no token, case-insensitive."""
    match = _VERDICT.search(text)
    if match is None:
        raise VerdictParseError(f"no yes/no verdict in response {text[:120]!r}")
    return Label.CONSISTENT if match.group(1).lower() == "yes" else Label.INCONSISTENT


def parse_rating(text: str) -> int | None:
    """First integer in [1, 5] appearing in the response, else None."""
    for token in re.findall(r"\d+", text):
        value = int(token)
        if 1 <= value <= 5:
            return value
    return None


def parse_span_claims(
    text: str, source_category: ErrorCategory | None, step_tag: str
) -> list[RawSpanClaim]:
    """Split an identification response into claims.

    One claim per non-blank line after trimming and list-marker stripping;
    a whole-response or whole-line "None" yields nothing.
    """
    if text.strip().casefold() == "none":
        return []
    claims = []
    for line in text.splitlines():
        stripped = _LIST_MARKER.sub("", line.strip()).strip()
        if not stripped or stripped.casefold() == "none":
            continue
        claims.append(RawSpanClaim(stripped, source_category, step_tag))
    return claims


def dedup_claims(claims: Iterable[RawSpanClaim]) -> list[RawSpanClaim]:
    """Drop claims whose normalized text was already seen, keeping the first."""
    seen: set[str] = set()
    kept = []
    for claim in claims:
        key = normalize_claim(claim.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(claim)
    return kept


# ---- grounding ----

def ground_span(
    summary_text: str,
    claim: RawSpanClaim,
    *,
    normalized: NormalizedText | None = None,
    sentences: Sequence[tuple[int, int]] | None = None,
    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS,
) -> GroundedSpan | None:
    """Locate a claim in the summary; None means unmatched.

    Matching is the first occurrence under normalization: case-insensitive,
    whitespace runs collapsed, surrounding punctuation stripped from the
    claim. Offsets map back into the original text.
    """
    needle = normalize_claim(claim.text)
    if not needle:
        return None
    if normalized is None:
        normalized = NormalizedText.build(summary_text)
    hits = normalized.occurrences(needle)
    if not hits:
        return None
    if sentences is None:
        sentences = sentence_spans(summary_text, abbreviations)
    start, end = hits[0]
    return GroundedSpan(
        claim=claim,
        char_start=start,
        char_end=end,
        sentence_index=sentence_index_at(sentences, start),
        ambiguous=len(hits) > 1,
    )


def _category_rank(category: ErrorCategory | None) -> int:
    return MOE_EXPERT_ORDER.index(category) if category in MOE_EXPERT_ORDER else len(MOE_EXPERT_ORDER)


def merge_overlapping(spans: Sequence[GroundedSpan]) -> list[GroundedSpan]:
    """Merge overlapping spans into one covering their union of offsets.

    The representative claim and category come from the longest member, ties
    toward the earlier category in the expert order; the merged rating is the
    minimum among members so the strongest inconsistency survives.
    """
    ordered = sorted(spans, key=lambda s: (s.char_start, s.char_end))
    merged: list[GroundedSpan] = []
    cluster: list[GroundedSpan] = []

    def flush() -> None:
        if not cluster:
            return
        best = min(
            cluster,
            key=lambda s: (
                -(s.char_end - s.char_start),
                _category_rank(s.category),
                s.char_start,
            ),
        )
        ratings = [s.verification_rating for s in cluster if s.verification_rating is not None]
        merged.append(
            replace(
                best,
                char_start=min(s.char_start for s in cluster),
                char_end=max(s.char_end for s in cluster),
                sentence_index=min(s.sentence_index for s in cluster),
                verification_rating=min(ratings) if ratings else None,
                rating_imputed=any(s.rating_imputed for s in cluster),
                ambiguous=any(s.ambiguous for s in cluster),
            )
        )

    for span in ordered:
        if cluster and span.char_start < max(s.char_end for s in cluster):
            cluster.append(span)
        else:
            flush()
            cluster = [span]
    flush()
    return merged


# ---- detector ----

class Detector:
    """Runs the detection pipelines against one chat backend.

    Stateless across calls apart from the backend and configuration, so one
    instance may serve concurrent per-summary work.
    """

    def __init__(
        self,
        backend: Any,
        *,
        fewshot: tuple[FewShotExemplar, ...] | None = None,
        temperature: float = 0.0,
        max_output: int = DEFAULT_MAX_OUTPUT,
        abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS,
    ) -> None:
        self.backend = backend
        self._fewshot = fewshot
        self.temperature = temperature
        self.max_output = max_output
        self.abbreviations = abbreviations

    # ---- public api ----

    def summarize(self, dialogue: Dialogue) -> str:
        """Generate a summary for a dialogue; the completion is returned verbatim."""
        prompt = fill(load_template(TEMPLATE_SUMMARIZE), Dialogue=render_dialogue(dialogue))
        request = CompletionRequest(
            prompt, self.temperature, self.max_output, tag=f"summarize:{dialogue.id}"
        )
        return self.backend.complete(request).text

    def direct_assess(
        self, dialogue: Dialogue, summary: SummaryRecord, shots: Shots = Shots.ZERO
    ) -> DetectionResult:
        transcripts: list[Transcript] = []
        template = load_template(TEMPLATE_DIRECT_ASSESSMENT)
        base = fill(template, Dialogue=render_dialogue(dialogue), Summary=summary.text)
        prompt = self._apply_shots(shots, template, verdict_answer, base)
        response = self._complete(prompt, f"da:{summary.id}", transcripts)
        verdict = parse_verdict(response.text)
        return DetectionResult(
            summary_id=summary.id,
            method=Method.DIRECT_ASSESSMENT,
            shots=shots,
            spans=(),
            binary_label=verdict,
            transcripts=tuple(transcripts),
            unmatched=(),
        )

    def identify_spans(
        self,
        dialogue: Dialogue,
        summary: SummaryRecord,
        method: Method,
        shots: Shots = Shots.ZERO,
    ) -> list[RawSpanClaim]:
        claims, _ = self._identify(dialogue, summary, method, shots)
        return claims

    def verify_span(
        self, dialogue: Dialogue, span_text: str, summary_sentence: str
    ) -> tuple[int, bool]:
        """Rate support for a span on 1..5; the flag marks an imputed rating."""
        rating, imputed, _ = self._verify(dialogue, span_text, summary_sentence, tag_suffix="")
        return rating, imputed

    def detect(
        self,
        dialogue: Dialogue,
        summary: SummaryRecord,
        method: Method,
        shots: Shots = Shots.ZERO,
    ) -> DetectionResult:
        method = Method(method)
        shots = Shots(shots)
        if method is Method.DIRECT_ASSESSMENT:
            return self.direct_assess(dialogue, summary, shots)

        claims, transcripts = self._identify(dialogue, summary, method, shots)
        normalized = NormalizedText.build(summary.text)
        sentences = sentence_spans(summary.text, self.abbreviations)

        grounded: list[GroundedSpan] = []
        unmatched: list[RawSpanClaim] = []
        for claim in claims:
            span = ground_span(
                summary.text, claim, normalized=normalized, sentences=sentences
            )
            if span is None:
                unmatched.append(claim)
            else:
                grounded.append(span)

        rated: list[GroundedSpan] = []
        for span in grounded:
            if sentences:
                s_start, s_end = sentences[span.sentence_index]
                sentence_text = summary.text[s_start:s_end]
            else:
                sentence_text = summary.text
            rating, imputed, more = self._verify(
                dialogue, span.claim.text, sentence_text, tag_suffix=f":{summary.id}"
            )
            transcripts.extend(more)
            rated.append(replace(span, verification_rating=rating, rating_imputed=imputed))

        kept = [span for span in rated if span.verification_rating < FULL_SUPPORT_RATING]
        spans = tuple(merge_overlapping(kept))
        label = Label.INCONSISTENT if spans else Label.CONSISTENT
        return DetectionResult(
            summary_id=summary.id,
            method=method,
            shots=shots,
            spans=spans,
            binary_label=label,
            transcripts=tuple(transcripts),
            unmatched=tuple(unmatched),
        )

    # ---- internals ----

    def _bundle(self) -> tuple[FewShotExemplar, ...]:
        if self._fewshot is None:
            self._fewshot = load_fewshot_bundle(None)
        return self._fewshot

    def _apply_shots(self, shots, template, answer, base_prompt: str) -> str:
        if shots is Shots.ZERO:
            return base_prompt
        return build_fewshot(self._bundle(), base_prompt, template=template, answer=answer)

    def _complete(self, prompt: str, tag: str, transcripts: list[Transcript]) -> CompletionResponse:
        request = CompletionRequest(prompt, self.temperature, self.max_output, tag=tag)
        response = self.backend.complete(request)
        transcripts.append(Transcript(request, response))
        return response

    def _identify(
        self, dialogue: Dialogue, summary: SummaryRecord, method: Method, shots: Shots
    ) -> tuple[list[RawSpanClaim], list[Transcript]]:
        transcripts: list[Transcript] = []
        rendered = render_dialogue(dialogue)
        claims: list[RawSpanClaim] = []
        if method is Method.SPAN:
            template = load_template(TEMPLATE_SPAN_IDENTIFICATION)
            base = fill(template, Dialogue=rendered, Summary=summary.text)
            prompt = self._apply_shots(shots, template, span_list_answer, base)
            response = self._complete(prompt, f"identify:span:{summary.id}", transcripts)
            claims = parse_span_claims(response.text, None, "identify:span")
        elif method is Method.MOE:
            # One call per expert, fixed order; a failed call aborts the summary.
            for category in MOE_EXPERT_ORDER:
                template = load_template(MOE_TEMPLATES[category])
                base = fill(template, Dialogue=rendered, Summary=summary.text)
                prompt = self._apply_shots(
                    shots,
                    template,
                    lambda ex, _c=category: span_list_answer(ex, _c),
                    base,
                )
                tag = f"identify:moe:{category.value}:{summary.id}"
                response = self._complete(prompt, tag, transcripts)
                claims.extend(
                    parse_span_claims(response.text, category, f"identify:moe:{category.value}")
                )
        else:
            raise ValueError(f"method {method} has no identification step")
        return dedup_claims(claims), transcripts

    def _verify(
        self, dialogue: Dialogue, span_text: str, summary_sentence: str, *, tag_suffix: str
    ) -> tuple[int, bool, list[Transcript]]:
        transcripts: list[Transcript] = []
        prompt = fill(
            load_template(TEMPLATE_SPAN_VERIFICATION),
            {"Summary Sentence": summary_sentence},
            Dialogue=render_dialogue(dialogue),
            Span=span_text,
        )
        tag = f"verify{tag_suffix}:{span_text[:40]}"
        response = self._complete(prompt, tag, transcripts)
        rating = parse_rating(response.text)
        if rating is None:
            # One retry; a second unparseable response keeps the span with
            # the most conservative rating and a flag.
            response = self._complete(prompt, tag + ":retry", transcripts)
            rating = parse_rating(response.text)
            if rating is None:
                return FALLBACK_RATING, True, transcripts
        return rating, False, transcripts


def detect_corpus(
    detector: Detector,
    corpus: Corpus,
    method: Method,
    shots: Shots = Shots.ZERO,
    *,
    workers: int = 1,
) -> list[DetectionResult]:
    """Run detection for every summary; results come back in corpus order."""
    summaries = list(corpus.summaries.values())

    def run(summary: SummaryRecord) -> DetectionResult:
        return detector.detect(corpus.dialogues[summary.dialogue_id], summary, method, shots)

    if workers <= 1:
        return [run(summary) for summary in summaries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, summaries))


# ---- persistence ----

def _claim_to_record(claim: RawSpanClaim) -> dict[str, Any]:
    return {
        "text": claim.text,
        "category": claim.source_category.value if claim.source_category else None,
        "step_tag": claim.step_tag,
    }


def _claim_from_record(record: Mapping[str, Any]) -> RawSpanClaim:
    category = record.get("category")
    return RawSpanClaim(
        record["text"], ErrorCategory(category) if category else None, record.get("step_tag", "")
    )


def detection_to_record(result: DetectionResult) -> dict[str, Any]:
    return {
        "kind": "detection",
        "summary_id": result.summary_id,
        "method": result.method.value,
        "shots": result.shots.value,
        "binary_label": result.binary_label.value,
        "spans": [
            {
                **_claim_to_record(span.claim),
                "char_start": span.char_start,
                "char_end": span.char_end,
                "sentence_index": span.sentence_index,
                "verification_rating": span.verification_rating,
                "rating_imputed": span.rating_imputed,
                "ambiguous": span.ambiguous,
            }
            for span in result.spans
        ],
        "unmatched": [_claim_to_record(claim) for claim in result.unmatched],
        "transcripts": [
            {
                "tag": item.request.tag,
                "prompt": item.request.prompt,
                "temperature": item.request.temperature,
                "max_output": item.request.max_output,
                "response": item.response.text,
                "backend_id": item.response.backend_id,
                "latency": item.response.latency,
                "attempt": item.response.attempt,
            }
            for item in result.transcripts
        ],
    }


def detection_from_record(record: Mapping[str, Any], where: str = "") -> DetectionResult:
    try:
        spans = tuple(
            GroundedSpan(
                claim=_claim_from_record(span),
                char_start=int(span["char_start"]),
                char_end=int(span["char_end"]),
                sentence_index=int(span["sentence_index"]),
                verification_rating=span.get("verification_rating"),
                rating_imputed=bool(span.get("rating_imputed", False)),
                ambiguous=bool(span.get("ambiguous", False)),
            )
            for span in record.get("spans", [])
        )
        transcripts = tuple(
            Transcript(
                CompletionRequest(
                    item["prompt"],
                    item.get("temperature", 0.0),
                    item.get("max_output", DEFAULT_MAX_OUTPUT),
                    item.get("tag", ""),
                ),
                CompletionResponse(
                    item["response"],
                    item.get("backend_id", ""),
                    item.get("latency", 0.0),
                    item.get("attempt", 1),
                ),
            )
            for item in record.get("transcripts", [])
        )
        return DetectionResult(
            summary_id=record["summary_id"],
            method=Method(record["method"]),
            shots=Shots(record.get("shots", Shots.ZERO.value)),
            spans=spans,
            binary_label=Label(record["binary_label"]),
            transcripts=transcripts,
            unmatched=tuple(_claim_from_record(c) for c in record.get("unmatched", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordFormatError(f"{where}: bad detection record: {exc}") from exc


def save_detections(results: Iterable[DetectionResult], path: str | Path) -> None:
    lines = [dumps_record(detection_to_record(result)) for result in results]
    write_text_atomic(path, "".join(line + "\n" for line in lines))


def load_detections(path: str | Path) -> list[DetectionResult]:
    results = []
    for lineno, record in read_records(path):
        if record.get("kind") != "detection":
            raise RecordFormatError(f"{path}:{lineno}: expected a detection record")
        results.append(detection_from_record(record, f"{path}:{lineno}"))
    return results
