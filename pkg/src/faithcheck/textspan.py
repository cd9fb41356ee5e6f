"""Character-offset text utilities shared by grounding and metrics.

Tokens are maximal runs of Unicode letters or digits; token identity is the
token's index within its summary. All spans are half-open character ranges.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

DEFAULT_ABBREVIATIONS = frozenset(
    {"mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "etc", "eg", "ie", "vs", "approx"}
)


def token_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = None
    for i, ch in enumerate(text):
        if ch.isalnum():
            if start is None:
                start = i
        elif start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(text)))
    return spans


def covered_token_indices(
    text_or_tokens: str | Sequence[tuple[int, int]], spans: Iterable[tuple[int, int]]
) -> set[int]:
    """Indices of tokens overlapping any of the character spans."""
    tokens = token_spans(text_or_tokens) if isinstance(text_or_tokens, str) else text_or_tokens
    covered = set()
    for start, end in spans:
        for i, (t_start, t_end) in enumerate(tokens):
            if t_start < end and start < t_end:
                covered.add(i)
    return covered


def _word_before(text: str, pos: int) -> str:
    end = pos
    start = end
    while start > 0 and (text[start - 1].isalnum() or text[start - 1] == "."):
        start -= 1
    return text[start:end].replace(".", "").lower()


def sentence_spans(
    text: str, abbreviations: frozenset[str] | set[str] = DEFAULT_ABBREVIATIONS
) -> list[tuple[int, int]]:
    """Split on '.', '!', '?' followed by whitespace or end of text.

    A period directly after a stop-listed abbreviation does not end a
    sentence. Spans are trimmed of surrounding whitespace and cover every
    non-blank stretch of the text, terminated or not.
    """
    boundaries = []
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        if i + 1 < len(text) and not text[i + 1].isspace():
            continue
        if ch == "." and _word_before(text, i) in abbreviations:
            continue
        boundaries.append(i + 1)
    spans = []
    start = 0
    for boundary in boundaries + [len(text)]:
        segment = text[start:boundary]
        leading = len(segment) - len(segment.lstrip())
        trailing = len(segment) - len(segment.rstrip())
        if segment.strip():
            spans.append((start + leading, boundary - trailing))
        start = boundary
    return spans


def sentence_index_at(sentences: Sequence[tuple[int, int]], pos: int) -> int:
    """Index of the sentence containing pos; clamps to the nearest one."""
    if not sentences:
        return 0
    for i, (_, end) in enumerate(sentences):
        if pos < end:
            return i
    return len(sentences) - 1


def normalize_claim(text: str) -> str:
    """Casefold, collapse whitespace runs, strip surrounding punctuation."""
    collapsed = " ".join(text.split()).casefold()
    start = 0
    end = len(collapsed)
    while start < end and unicodedata.category(collapsed[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(collapsed[end - 1]).startswith("P"):
        end -= 1
    return collapsed[start:end].strip()


@dataclass(frozen=True)
class NormalizedText:
    """A casefolded, whitespace-collapsed view that maps back to the original."""

    text: str
    index_map: tuple[int, ...]  # original index of each normalized character

    @classmethod
    def build(cls, original: str) -> "NormalizedText":
        chars: list[str] = []
        index_map: list[int] = []
        pending_space: int | None = None
        for i, ch in enumerate(original):
            if ch.isspace():
                if pending_space is None:
                    pending_space = i
                continue
            if pending_space is not None:
                if chars:
                    chars.append(" ")
                    index_map.append(pending_space)
                pending_space = None
            for folded in ch.casefold():
                chars.append(folded)
                index_map.append(i)
        return cls("".join(chars), tuple(index_map))

    def occurrences(self, needle: str) -> list[tuple[int, int]]:
        """All original-offset ranges whose normalized form equals needle.

        Matches that begin or end inside a one-to-many casefold expansion
        (like the two chars of a folded sharp s) have no exact original
        offsets and are skipped.
        """
        if not needle:
            return []
        found = []
        pos = self.text.find(needle)
        while pos >= 0:
            last = pos + len(needle) - 1
            starts_clean = pos == 0 or self.index_map[pos] != self.index_map[pos - 1]
            ends_clean = last + 1 == len(self.index_map) or (
                self.index_map[last + 1] != self.index_map[last]
            )
            if starts_clean and ends_clean:
                found.append((self.index_map[pos], self.index_map[last] + 1))
            pos = self.text.find(needle, pos + 1)
        return found
