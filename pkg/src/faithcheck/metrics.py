"""Evaluation harness: binary accuracy, span overlap scores, calibration.

Span scores operate on word tokens: maximal runs of Unicode letters or
digits, identified by token index within the summary. Inconsistent is the
positive class everywhere a polarity matters.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Corpus, ErrorCategory, Label, SpanAnnotation, validate_span_offsets
from .detector import DetectionResult
from .records import RecordFormatError, dumps_record, write_text_atomic
from .textspan import covered_token_indices, token_spans


class UndefinedMetricError(ValueError):
    """The metric is undefined on this input (e.g. single-class gold)."""


class UndefinedDistributionError(ValueError):
    """No categorized spans exist to form a distribution over."""


class CoverageError(ValueError):
    """Prediction and gold sides do not cover the same summaries."""


class Polarity(str, Enum):
    HIGH_MEANS_CONSISTENT = "high_means_consistent"
    HIGH_MEANS_INCONSISTENT = "high_means_inconsistent"


@dataclass(frozen=True)
class MetricScore:
    metric_name: str
    summary_id: str
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"score for {self.summary_id!r} must be finite, got {self.value}")


@dataclass(frozen=True)
class Threshold:
    metric_name: str
    dataset: str
    model_category: str
    value: float
    polarity: Polarity

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"threshold value must be finite, got {self.value}")


# ---- binary metrics ----

def balanced_accuracy(pred: Sequence[Label], gold: Sequence[Label]) -> float:
    """Mean of per-class recalls; symmetric in the class naming.

    Raises UndefinedMetricError when gold holds only one class, since the
    other class recall has an empty denominator.
    """
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise UndefinedMetricError("balanced accuracy needs at least one labeled pair")
    recalls = []
    for cls in (Label.INCONSISTENT, Label.CONSISTENT):
        total = sum(1 for g in gold if g is cls)
        if total == 0:
            raise UndefinedMetricError(
                f"gold labels contain no {cls.value} examples; balanced accuracy is undefined"
            )
        correct = sum(1 for p, g in zip(pred, gold) if g is cls and p is cls)
        recalls.append(correct / total)
    return sum(recalls) / len(recalls)


def apply_threshold(score: float, threshold: Threshold) -> Label:
    """Strictly-greater comparison; equality lands on the 'low' side."""
    high = score > threshold.value
    if threshold.polarity is Polarity.HIGH_MEANS_CONSISTENT:
        return Label.CONSISTENT if high else Label.INCONSISTENT
    return Label.INCONSISTENT if high else Label.CONSISTENT


def calibrate_threshold(
    scores: Sequence[MetricScore],
    gold: Sequence[Label],
    polarity: Polarity,
    *,
    dataset: str = "all",
    model_category: str = "all",
) -> Threshold:
    """Pick the balanced-accuracy-maximizing threshold for a metric.

    Candidates are the midpoints between consecutive distinct score values
    plus one sentinel below the minimum and one above the maximum; ties
    resolve to the smallest threshold value.
    """
    if len(scores) != len(gold):
        raise ValueError(f"length mismatch: {len(scores)} scores vs {len(gold)} gold labels")
    if not scores:
        raise UndefinedMetricError("calibration needs at least one scored summary")
    names = {score.metric_name for score in scores}
    if len(names) != 1:
        raise ValueError(f"scores mix metric names: {sorted(names)}")
    metric_name = names.pop()

    values = sorted({score.value for score in scores})
    candidates = [values[0] - 1.0]
    candidates.extend((a + b) / 2.0 for a, b in zip(values, values[1:]))
    candidates.append(values[-1] + 1.0)

    best_value = None
    best_ba = -1.0
    for candidate in candidates:
        trial = Threshold(metric_name, dataset, model_category, candidate, polarity)
        pred = [apply_threshold(score.value, trial) for score in scores]
        ba = balanced_accuracy(pred, gold)
        if ba > best_ba:
            best_ba = ba
            best_value = candidate
    return Threshold(metric_name, dataset, model_category, best_value, polarity)


def calibration_split(
    summary_ids: Iterable[str], fraction: float = 0.1, *, seed: int = 0, key: str = ""
) -> list[str]:
    """Deterministic pseudo-random subset keyed by a stable content hash.

    The same ids, fraction, seed and key always pick the same subset,
    independently of iteration order or process.
    """
    picked = []
    for summary_id in summary_ids:
        digest = hashlib.sha256(f"{seed}:{key}:{summary_id}".encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") / 2**64
        if bucket < fraction:
            picked.append(summary_id)
    return picked


# ---- span metrics ----

def span_token_counts(
    pred_spans: Sequence[tuple[int, int]],
    gold_spans: Sequence[tuple[int, int]],
    summary_text: str,
) -> tuple[int, int, int]:
    """(intersection, predicted, gold) token counts for one summary."""
    tokens = token_spans(summary_text)
    for start, end in list(pred_spans) + list(gold_spans):
        validate_span_offsets(start, end, summary_text)
    pred_tokens = covered_token_indices(tokens, pred_spans)
    gold_tokens = covered_token_indices(tokens, gold_spans)
    return len(pred_tokens & gold_tokens), len(pred_tokens), len(gold_tokens)


def _prf_from_counts(intersection: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    if n_pred == 0 or n_gold == 0:
        return 0.0, 0.0, 0.0
    precision = intersection / n_pred
    recall = intersection / n_gold
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def span_prf(
    pred_spans: Sequence[tuple[int, int]],
    gold_spans: Sequence[tuple[int, int]],
    summary_text: str,
) -> tuple[float, float, float]:
    """Token-level precision, recall, F1 for one summary.

    Two empty sides agree perfectly and score (1, 1, 1); an empty side
    against a non-empty one scores all zeros.
    """
    return _prf_from_counts(*span_token_counts(pred_spans, gold_spans, summary_text))


def micro_span_prf(
    items: Iterable[tuple[Sequence[tuple[int, int]], Sequence[tuple[int, int]], str]],
) -> tuple[float, float, float]:
    """Micro-average over (pred_spans, gold_spans, summary_text) triples.

    Token counts are summed across summaries before the ratios, so summaries
    where both sides are empty contribute nothing; an entire corpus with
    empty sides degenerates to the single-summary convention.
    """
    intersection = n_pred = n_gold = 0
    for pred_spans, gold_spans, text in items:
        i, p, g = span_token_counts(pred_spans, gold_spans, text)
        intersection += i
        n_pred += p
        n_gold += g
    return _prf_from_counts(intersection, n_pred, n_gold)


def pairwise_agreement(
    annotations_a: Sequence[SpanAnnotation],
    annotations_b: Sequence[SpanAnnotation],
    corpus: Corpus,
    *,
    summary_ids: Iterable[str] | None = None,
    coverage_a: Iterable[str] | None = None,
    coverage_b: Iterable[str] | None = None,
) -> float:
    """Micro span F1 with annotator A as prediction and B as gold.

    Symmetric: swapping the annotators swaps precision and recall and leaves
    F1 unchanged. When explicit per-annotator coverage sets are given they
    must be equal; otherwise scope defaults to summary_ids or the whole
    corpus.
    """
    if coverage_a is not None or coverage_b is not None:
        set_a = set(coverage_a or ())
        set_b = set(coverage_b or ())
        if set_a != set_b:
            only_a = sorted(set_a - set_b)
            only_b = sorted(set_b - set_a)
            raise CoverageError(
                f"annotators cover different summaries; only A: {only_a}, only B: {only_b}"
            )
        scope = set_a
    elif summary_ids is not None:
        scope = set(summary_ids)
    else:
        scope = set(corpus.summaries)
    unknown = scope - corpus.summaries.keys()
    if unknown:
        raise CoverageError(f"scope names unknown summaries: {sorted(unknown)}")

    def spans_for(annotations: Sequence[SpanAnnotation], summary_id: str) -> list[tuple[int, int]]:
        return [
            (ann.char_start, ann.char_end)
            for ann in annotations
            if ann.summary_id == summary_id
        ]

    items = [
        (
            spans_for(annotations_a, summary_id),
            spans_for(annotations_b, summary_id),
            corpus.summaries[summary_id].text,
        )
        for summary_id in sorted(scope)
    ]
    return micro_span_prf(items)[2]


# ---- corpus statistics ----

def error_rate(
    corpus: Corpus, model_id: str, exclusions: frozenset[ErrorCategory] = frozenset()
) -> float:
    """Fraction of the model's summaries with at least one non-excluded gold span."""
    summaries = [s for s in corpus.summaries.values() if s.model_id == model_id]
    if not summaries:
        raise KeyError(f"no summaries for model {model_id!r}")
    by_summary: dict[str, list[SpanAnnotation]] = {}
    for ann in corpus.annotations:
        by_summary.setdefault(ann.summary_id, []).append(ann)
    flagged = sum(
        1
        for summary in summaries
        if any(ann.category not in exclusions for ann in by_summary.get(summary.id, []))
    )
    return flagged / len(summaries)


def category_distribution(corpus: Corpus, model_id: str) -> dict[ErrorCategory, float]:
    """Share of the model's categorized spans per category; sums to 1."""
    summary_ids = {s.id for s in corpus.summaries.values() if s.model_id == model_id}
    if not summary_ids:
        raise KeyError(f"no summaries for model {model_id!r}")
    counts = {category: 0 for category in ErrorCategory}
    total = 0
    for ann in corpus.annotations:
        if ann.summary_id in summary_ids and ann.category is not None:
            counts[ann.category] += 1
            total += 1
    if total == 0:
        raise UndefinedDistributionError(
            f"model {model_id!r} has no categorized spans; distribution is undefined"
        )
    return {category: count / total for category, count in counts.items()}


# ---- end-to-end evaluation ----

@dataclass(frozen=True)
class CategoryReport:
    detected_count: int
    gold_count: int
    span_f1: float


@dataclass(frozen=True)
class EvalReport:
    balanced_accuracy: float
    span_precision: float
    span_recall: float
    span_f1: float
    per_category: Mapping[ErrorCategory, CategoryReport]
    per_model: Mapping[str, float]


def evaluate(
    detections: Sequence[DetectionResult],
    corpus: Corpus,
    *,
    exclude_nonsensical: bool = False,
) -> EvalReport:
    """Score detections against the corpus's gold annotations.

    A summary's gold binary label is inconsistent exactly when it carries at
    least one gold annotation. With exclude_nonsensical, summaries whose gold
    annotations are exclusively Nonsensical are dropped from every aggregate.
    A predicted span counts toward a category when it overlaps at least one
    gold token of that category.
    """
    det_map: dict[str, DetectionResult] = {}
    for det in detections:
        if det.summary_id in det_map:
            raise CoverageError(f"duplicate detection for summary {det.summary_id!r}")
        det_map[det.summary_id] = det
    missing = sorted(corpus.summaries.keys() - det_map.keys())
    extra = sorted(det_map.keys() - corpus.summaries.keys())
    if missing or extra:
        raise CoverageError(
            f"detections and corpus cover different summaries; missing: {missing}, extra: {extra}"
        )

    anns_by_summary: dict[str, list[SpanAnnotation]] = {}
    for ann in corpus.annotations:
        anns_by_summary.setdefault(ann.summary_id, []).append(ann)

    def exclusively_nonsensical(summary_id: str) -> bool:
        anns = anns_by_summary.get(summary_id, [])
        return bool(anns) and all(ann.category is ErrorCategory.NONSENSICAL for ann in anns)

    kept = [
        summary_id
        for summary_id in corpus.summaries
        if not (exclude_nonsensical and exclusively_nonsensical(summary_id))
    ]

    gold_labels = [
        Label.INCONSISTENT if anns_by_summary.get(summary_id) else Label.CONSISTENT
        for summary_id in kept
    ]
    pred_labels = [det_map[summary_id].binary_label for summary_id in kept]
    ba = balanced_accuracy(pred_labels, gold_labels)

    span_items = []
    for summary_id in kept:
        text = corpus.summaries[summary_id].text
        pred = [(s.char_start, s.char_end) for s in det_map[summary_id].spans]
        gold = [(a.char_start, a.char_end) for a in anns_by_summary.get(summary_id, [])]
        span_items.append((pred, gold, text))
    precision, recall, f1 = micro_span_prf(span_items)

    per_category: dict[ErrorCategory, CategoryReport] = {}
    for category in ErrorCategory:
        detected_count = 0
        gold_count = 0
        items = []
        for summary_id in kept:
            text = corpus.summaries[summary_id].text
            tokens = token_spans(text)
            gold_spans = [
                (a.char_start, a.char_end)
                for a in anns_by_summary.get(summary_id, [])
                if a.category is category
            ]
            gold_tokens = covered_token_indices(tokens, gold_spans)
            attributed = [
                (s.char_start, s.char_end)
                for s in det_map[summary_id].spans
                if covered_token_indices(tokens, [(s.char_start, s.char_end)]) & gold_tokens
            ]
            detected_count += len(attributed)
            gold_count += len(gold_spans)
            items.append((attributed, gold_spans, text))
        if detected_count or gold_count:
            per_category[category] = CategoryReport(
                detected_count, gold_count, micro_span_prf(items)[2]
            )

    per_model: dict[str, float] = {}
    kept_set = set(kept)
    for model_id in sorted({s.model_id for s in corpus.summaries.values()}):
        model_summaries = [
            s for s in corpus.summaries.values() if s.model_id == model_id and s.id in kept_set
        ]
        if not model_summaries:
            continue
        flagged = sum(1 for s in model_summaries if anns_by_summary.get(s.id))
        per_model[model_id] = flagged / len(model_summaries)

    return EvalReport(ba, precision, recall, f1, per_category, per_model)


# ---- score and report files ----

def load_scores(path: str | Path, metric_name: str | None = None) -> list[MetricScore]:
    """Read a two-column (summary_id, score) file, tab or comma delimited.

    A single header row is tolerated when its second column is not numeric.
    The metric name defaults to the file stem.
    """
    path = Path(path)
    name = metric_name if metric_name is not None else path.stem
    text = path.read_text(encoding="utf-8")
    delimiter = "\t" if "\t" in text.splitlines()[0] else "," if text else ","
    scores = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text), delimiter=delimiter), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 2:
            raise RecordFormatError(f"{path}:{lineno}: expected two columns, got {row}")
        try:
            value = float(row[1])
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise RecordFormatError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
        scores.append(MetricScore(name, row[0].strip(), value))
    return scores


def threshold_to_record(threshold: Threshold) -> dict[str, Any]:
    return {
        "kind": "threshold",
        "metric_name": threshold.metric_name,
        "dataset": threshold.dataset,
        "model_category": threshold.model_category,
        "value": threshold.value,
        "polarity": threshold.polarity.value,
    }


def threshold_from_record(record: Mapping[str, Any]) -> Threshold:
    return Threshold(
        metric_name=record["metric_name"],
        dataset=record.get("dataset", "all"),
        model_category=record.get("model_category", "all"),
        value=float(record["value"]),
        polarity=Polarity(record["polarity"]),
    )


def eval_report_to_record(report: EvalReport) -> dict[str, Any]:
    return {
        "kind": "eval_report",
        "balanced_accuracy": report.balanced_accuracy,
        "span_precision": report.span_precision,
        "span_recall": report.span_recall,
        "span_f1": report.span_f1,
        "per_category": {
            category.value: {
                "detected_count": item.detected_count,
                "gold_count": item.gold_count,
                "span_f1": item.span_f1,
            }
            for category, item in report.per_category.items()
        },
        "per_model": dict(report.per_model),
    }


def eval_report_csv(report: EvalReport) -> str:
    """Flat metric,key,value table; floats keep their repr."""
    lines = ["metric,key,value"]
    lines.append(f"balanced_accuracy,,{report.balanced_accuracy!r}")
    lines.append(f"span_precision,,{report.span_precision!r}")
    lines.append(f"span_recall,,{report.span_recall!r}")
    lines.append(f"span_f1,,{report.span_f1!r}")
    for category in ErrorCategory:
        item = report.per_category.get(category)
        if item is None:
            continue
        lines.append(f"category_detected,{category.value},{item.detected_count}")
        lines.append(f"category_gold,{category.value},{item.gold_count}")
        lines.append(f"category_span_f1,{category.value},{item.span_f1!r}")
    for model_id, rate in report.per_model.items():
        lines.append(f"error_rate,{model_id},{rate!r}")
    return "\n".join(lines) + "\n"


def save_eval_report(
    report: EvalReport, json_path: str | Path | None = None, csv_path: str | Path | None = None
) -> None:
    if json_path is not None:
        write_text_atomic(json_path, dumps_record(eval_report_to_record(report)) + "\n")
    if csv_path is not None:
        write_text_atomic(csv_path, eval_report_csv(report))
