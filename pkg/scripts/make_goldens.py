#!/usr/bin/env python3
"""Regenerate the frozen detection goldens under tests/data/golden/.

Everything here is assembled by hand: templates are filled with plain
string replacement, offsets come from str.find on the fixture summaries,
and responses/ratings mirror the mock scripts verbatim. The point is an
oracle independent of the library, so nothing from faithcheck is imported.
"""

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
TEMPLATES = ROOT / "src" / "faithcheck" / "templates"
DATA = ROOT / "tests" / "data"
OUT = DATA / "golden"

EXPERTS = [
    ("circumstantial_inference", "moe_circumstantial_inference"),
    ("logical_error", "moe_logical_error"),
    ("world_knowledge", "moe_world_knowledge"),
    ("referential_error", "moe_referential_error"),
    ("figurative_misinterpretation", "moe_figurative_error"),
]


def template(name: str) -> str:
    return (TEMPLATES / f"{name}.txt").read_text(encoding="utf-8").rstrip("\n")


def fill(text: str, slots: dict[str, str]) -> str:
    for key, value in slots.items():
        text = text.replace("{{" + key + "}}", value)
    return text


def load_fixture():
    dialogues, summaries = {}, []
    for line in (DATA / "golden_corpus.jsonl").read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        if record["kind"] == "dialogue":
            rendered = "\n".join(f"{t['speaker']}: {t['utterance']}" for t in record["turns"])
            dialogues[record["id"]] = rendered
        elif record["kind"] == "summary":
            summaries.append(record)
    return dialogues, summaries


def transcript(tag: str, prompt: str, response: str) -> dict:
    return {
        "tag": tag,
        "prompt": prompt,
        "temperature": 0.0,
        "max_output": 512,
        "response": response,
        "backend_id": "mock",
        "latency": 0.0,
        "attempt": 1,
    }


def claim(text: str, category: str | None, step_tag: str) -> dict:
    return {"text": text, "category": category, "step_tag": step_tag}


def span(summary_text: str, claim_rec: dict, sentence_index: int, rating: int) -> dict:
    start = summary_text.find(claim_rec["text"])
    assert start >= 0, claim_rec["text"]
    return {
        **claim_rec,
        "char_start": start,
        "char_end": start + len(claim_rec["text"]),
        "sentence_index": sentence_index,
        "verification_rating": rating,
        "rating_imputed": False,
        "ambiguous": False,
    }


def verify_prompt(dialogue: str, span_text: str, sentence: str) -> str:
    return fill(
        template("span_verification"),
        {"Dialogue": dialogue, "Span": span_text, "Summary Sentence": sentence},
    )


def detection(summary_id: str, method: str, spans, unmatched, label, transcripts) -> dict:
    return {
        "kind": "detection",
        "summary_id": summary_id,
        "method": method,
        "shots": "zero",
        "binary_label": label,
        "spans": spans,
        "unmatched": unmatched,
        "transcripts": transcripts,
    }


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def make_span_golden(dialogues, summaries) -> list[dict]:
    # Responses and ratings repeat what tests/data/scripts/golden_span.jsonl says.
    ident = template("span_identification")
    plan = {
        "s1": ("None", []),
        "s2": (
            "their daughter\nat the office",
            [
                ("their daughter", 0, "Cameron is unable to bring a video game for their daughter Peyton.", 2),
                ("at the office", 1, "Cameron works at the office.", 5),
            ],
        ),
        "s3": (
            "- his son\n- Person1 said",
            [
                ("his son", None, None, None),
                ("Person1 said", 0, "Person1 said that Person2 could call or email them.", 1),
            ],
        ),
        "s4": (
            "meet later",
            [("meet later", 0, "Jane is worried about the travel time and suggests they meet later", 5)],
        ),
    }
    results = []
    for summary in summaries:
        sid, text = summary["id"], summary["text"]
        dialogue = dialogues[summary["dialogue_id"]]
        response, verdicts = plan[sid]
        prompt = fill(ident, {"Dialogue": dialogue, "Summary": text})
        transcripts = [transcript(f"identify:span:{sid}", prompt, response)]
        spans, unmatched = [], []
        for claim_text, sent_idx, sentence, rating in verdicts:
            rec = claim(claim_text, None, "identify:span")
            if sentence is None:
                unmatched.append(rec)
                continue
            transcripts.append(
                transcript(
                    f"verify:{sid}:{claim_text[:40]}",
                    verify_prompt(dialogue, claim_text, sentence),
                    str(rating),
                )
            )
            if rating < 5:
                spans.append(span(text, rec, sent_idx, rating))
        label = "inconsistent" if spans else "consistent"
        results.append(detection(sid, "span", spans, unmatched, label, transcripts))
    return results


def make_moe_golden(dialogues, summaries) -> list[dict]:
    # Mirrors tests/data/scripts/golden_moe.jsonl: only s2's first two experts
    # name a span, the duplicate keeps the first expert's category, rating 3.
    results = []
    for summary in summaries:
        sid, text = summary["id"], summary["text"]
        dialogue = dialogues[summary["dialogue_id"]]
        transcripts = []
        for category, tpl_name in EXPERTS:
            prompt = fill(template(tpl_name), {"Dialogue": dialogue, "Summary": text})
            if sid == "s2" and category == "circumstantial_inference":
                response = "their daughter"
            elif sid == "s2" and category == "logical_error":
                response = "- their daughter"
            else:
                response = "None"
            transcripts.append(transcript(f"identify:moe:{category}:{sid}", prompt, response))
        spans = []
        if sid == "s2":
            sentence = "Cameron is unable to bring a video game for their daughter Peyton."
            transcripts.append(
                transcript(
                    f"verify:{sid}:their daughter",
                    verify_prompt(dialogue, "their daughter", sentence),
                    "3",
                )
            )
            rec = claim("their daughter", "circumstantial_inference", "identify:moe:circumstantial_inference")
            spans.append(span(text, rec, 0, 3))
        label = "inconsistent" if spans else "consistent"
        results.append(detection(sid, "moe", spans, [], label, transcripts))
    return results


def main() -> None:
    dialogues, summaries = load_fixture()
    OUT.mkdir(parents=True, exist_ok=True)
    for name, records in [
        ("detections_span.jsonl", make_span_golden(dialogues, summaries)),
        ("detections_moe.jsonl", make_moe_golden(dialogues, summaries)),
    ]:
        path = OUT / name
        path.write_text("".join(dumps(r) + "\n" for r in records), encoding="utf-8")
        print(f"wrote {path} ({len(records)} records)")


if __name__ == "__main__":
    main()
