/**
 * Token snapping for span selection.
 *
 * All offsets here are Unicode code point indices, not UTF-16 code units,
 * because that is what the service validates against. Tokens are maximal
 * runs of letters and digits; everything else separates.
 */

export interface Span {
  start: number;
  end: number;
}

const ALNUM = /[\p{L}\p{N}]/u;

export function codePoints(text: string): string[] {
  return Array.from(text);
}

export function cpLength(text: string): number {
  return codePoints(text).length;
}

export function cpSlice(text: string, start: number, end: number): string {
  return codePoints(text).slice(start, end).join("");
}

/** Code point index of a UTF-16 code unit offset within text. */
export function unitToPoint(text: string, unitOffset: number): number {
  return cpLength(text.slice(0, unitOffset));
}

export function tokenSpans(text: string): Span[] {
  const spans: Span[] = [];
  const points = codePoints(text);
  let start: number | null = null;
  for (let i = 0; i < points.length; i++) {
    if (ALNUM.test(points[i])) {
      if (start === null) start = i;
    } else if (start !== null) {
      spans.push({ start, end: i });
      start = null;
    }
  }
  if (start !== null) spans.push({ start, end: points.length });
  return spans;
}

/**
 * Expand a raw selection outward to the boundaries of every token it
 * touches. Returns null for collapsed selections and for selections that
 * cover no token at all (whitespace or punctuation only), which is what
 * disables submission.
 */
export function snapToTokens(text: string, anchor: number, focus: number): Span | null {
  const selStart = Math.min(anchor, focus);
  const selEnd = Math.max(anchor, focus);
  if (selStart === selEnd) return null;
  let start: number | null = null;
  let end = 0;
  for (const token of tokenSpans(text)) {
    if (token.start < selEnd && selStart < token.end) {
      if (start === null) start = token.start;
      end = token.end;
    }
  }
  return start === null ? null : { start, end };
}
