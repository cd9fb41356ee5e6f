"""Span-level faithfulness auditing for dialogue summarization."""

from .corpus import (
    Corpus,
    CorpusFormat,
    Dialogue,
    DialogueTurn,
    ErrorCategory,
    Label,
    ModelCategory,
    Round,
    SpanAnnotation,
    SummaryRecord,
    load_corpus,
    save_corpus,
)
from .detector import DetectionResult, Detector, Method, Shots, detect_corpus
from .metrics import (
    EvalReport,
    MetricScore,
    Polarity,
    Threshold,
    balanced_accuracy,
    calibrate_threshold,
    evaluate,
    pairwise_agreement,
    span_prf,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusFormat",
    "DetectionResult",
    "Detector",
    "Dialogue",
    "DialogueTurn",
    "ErrorCategory",
    "EvalReport",
    "Label",
    "Method",
    "MetricScore",
    "ModelCategory",
    "Polarity",
    "Round",
    "Shots",
    "SpanAnnotation",
    "SummaryRecord",
    "Threshold",
    "balanced_accuracy",
    "calibrate_threshold",
    "detect_corpus",
    "evaluate",
    "load_corpus",
    "pairwise_agreement",
    "save_corpus",
    "span_prf",
]
