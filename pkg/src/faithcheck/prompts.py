"""Prompt templates and few-shot assembly.

Templates live as text assets with {{Dialogue}}, {{Summary}}, {{Span}} and
{{Summary Sentence}} placeholders. Dialogues render one turn per line as
"speaker: utterance" in original order; nothing is ever truncated here, the
backend rejects over-budget prompts instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

from .corpus import Dialogue, ErrorCategory, Label

TEMPLATE_SUMMARIZE = "summarize"
TEMPLATE_DIRECT_ASSESSMENT = "direct_assessment"
TEMPLATE_SPAN_IDENTIFICATION = "span_identification"
TEMPLATE_SPAN_VERIFICATION = "span_verification"

MOE_TEMPLATES: dict[ErrorCategory, str] = {
    ErrorCategory.CIRCUMSTANTIAL_INFERENCE: "moe_circumstantial_inference",
    ErrorCategory.LOGICAL_ERROR: "moe_logical_error",
    ErrorCategory.WORLD_KNOWLEDGE: "moe_world_knowledge",
    ErrorCategory.REFERENTIAL_ERROR: "moe_referential_error",
    ErrorCategory.FIGURATIVE_MISINTERPRETATION: "moe_figurative_error",
}


class FewShotConfigError(ValueError):
    """A few-shot bundle does not satisfy the 2-plus-2 shape."""


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = resources.files("faithcheck").joinpath(f"templates/{name}.txt").read_text("utf-8")
    return text.rstrip("\n")


def render_dialogue(dialogue: Dialogue) -> str:
    return "\n".join(f"{turn.speaker}: {turn.utterance}" for turn in dialogue.turns)


def fill(template: str, slots: dict[str, str] | None = None, **extra: str) -> str:
    """Replace {{Slot}} placeholders.

    Slot keys use the placeholder spelling; names with spaces (like
    "Summary Sentence") go through the slots dict.
    """
    out = template
    merged = dict(slots or {})
    merged.update(extra)
    for key, value in merged.items():
        out = out.replace("{{" + key + "}}", value)
    return out


@dataclass(frozen=True)
class ExemplarSpan:
    text: str
    category: ErrorCategory | None = None


@dataclass(frozen=True)
class FewShotExemplar:
    """One worked example: a dialogue excerpt, its summary, and the answer."""

    dialogue: str
    summary: str
    label: Label
    spans: tuple[ExemplarSpan, ...] = ()


def validate_bundle(bundle: tuple[FewShotExemplar, ...]) -> None:
    if len(bundle) != 4:
        raise FewShotConfigError(f"few-shot bundle must hold exactly 4 exemplars, got {len(bundle)}")
    consistent = sum(1 for ex in bundle if ex.label is Label.CONSISTENT)
    if consistent != 2:
        raise FewShotConfigError(
            f"few-shot bundle must hold 2 exemplars per polarity, got {consistent} consistent "
            f"and {len(bundle) - consistent} inconsistent"
        )


def load_fewshot_bundle(path: str | Path | None = None) -> tuple[FewShotExemplar, ...]:
    """Load a bundle from a JSON file, or the packaged default when path is None."""
    if path is None:
        raw = resources.files("faithcheck").joinpath("assets/fewshot_default.json").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    data = json.loads(raw)
    exemplars = []
    for item in data["exemplars"]:
        spans = tuple(
            ExemplarSpan(
                text=span["text"],
                category=ErrorCategory(span["category"]) if span.get("category") else None,
            )
            for span in item.get("spans", [])
        )
        exemplars.append(
            FewShotExemplar(
                dialogue=item["dialogue"],
                summary=item["summary"],
                label=Label(item["label"]),
                spans=spans,
            )
        )
    bundle = tuple(exemplars)
    validate_bundle(bundle)
    return bundle


def verdict_answer(exemplar: FewShotExemplar) -> str:
    return "yes" if exemplar.label is Label.CONSISTENT else "no"


def span_list_answer(exemplar: FewShotExemplar, category: ErrorCategory | None = None) -> str:
    """Span-per-line answer; filtered to one category for expert prompts."""
    texts = [
        span.text
        for span in exemplar.spans
        if category is None or span.category is category
    ]
    return "\n".join(texts) if texts else "None"


def build_fewshot(
    bundle: tuple[FewShotExemplar, ...],
    base_prompt: str,
    *,
    template: str,
    answer: Callable[[FewShotExemplar], str],
) -> str:
    """Prefix base_prompt with the four exemplars rendered in bundle order.

    Each exemplar uses the same template as the query, with its gold answer
    appended after the answer cue.
    """
    validate_bundle(bundle)
    blocks = []
    for exemplar in bundle:
        filled = fill(template, Dialogue=exemplar.dialogue, Summary=exemplar.summary)
        blocks.append(filled + " " + answer(exemplar))
    return "\n\n".join(blocks + [base_prompt])
