"""Detection pipelines: parsing, grounding, merging, call-count contracts."""

import pytest

from faithcheck.backend import (
    CompletionRequest,
    ScriptMissError,
    ScriptRule,
    ScriptedBackend,
    ScriptedBehavior,
)
from faithcheck.corpus import (
    Corpus,
    Dialogue,
    DialogueTurn,
    ErrorCategory,
    Label,
    ModelCategory,
    SummaryRecord,
)
from faithcheck.detector import (
    Detector,
    DetectionResult,
    FULL_SUPPORT_RATING,
    GroundedSpan,
    MOE_EXPERT_ORDER,
    Method,
    RawSpanClaim,
    Shots,
    VerdictParseError,
    dedup_claims,
    detect_corpus,
    detection_from_record,
    detection_to_record,
    ground_span,
    load_detections,
    merge_overlapping,
    parse_rating,
    parse_span_claims,
    parse_verdict,
    save_detections,
)
from faithcheck.prompts import (
    TEMPLATE_DIRECT_ASSESSMENT,
    build_fewshot,
    fill,
    load_fewshot_bundle,
    load_template,
    render_dialogue,
    verdict_answer,
)

TABLE_DIALOGUE = Dialogue(
    "d-game",
    "samsum",
    (
        DialogueTurn("Peyton", "I have been asking you to bring that video game for me", 0),
        DialogueTurn("Cameron", "Honey, I am not having enough time to come home.", 1),
    ),
)
TABLE_SUMMARY = SummaryRecord(
    "s-game",
    "d-game",
    "gpt-4",
    ModelCategory.LLM,
    "Cameron is unable to bring a video game for their daughter Peyton.",
)


def script_backend(*rules: ScriptRule, fallback: str | None = None) -> ScriptedBackend:
    return ScriptedBackend(ScriptedBehavior(tuple(rules), fallback))


class CountingBackend:
    def __init__(self, inner):
        self.inner = inner
        self.requests: list[CompletionRequest] = []

    def complete(self, request):
        self.requests.append(request)
        return self.inner.complete(request)


# ---- verdict parsing ----

@pytest.mark.parametrize(
    "text,label",
    [
        ("yes", Label.CONSISTENT),
        ("Yes.", Label.CONSISTENT),
        ("The answer is NO", Label.INCONSISTENT),
        ("no, wait, yes", Label.INCONSISTENT),  # first standalone token wins
        ("I'd say\nyes overall", Label.CONSISTENT),
    ],
)
def test_parse_verdict(text, label):
    assert parse_verdict(text) is label


@pytest.mark.parametrize("text", ["maybe", "", "yesterday and beyond", "nothing here"])
def test_parse_verdict_rejects(text):
    with pytest.raises(VerdictParseError):
        parse_verdict(text)


# ---- rating parsing ----

@pytest.mark.parametrize(
    "text,rating",
    [
        ("3", 3),
        ("Rating: 4 out of 5", 4),
        ("I rate this 5.", 5),
        ("7 is out of range, but 2 fits", 2),
        ("0 then 1", 1),
        ("10", None),  # 10 is one token, not a 1 and a 0
        ("no digits at all", None),
        ("", None),
    ],
)
def test_parse_rating(text, rating):
    assert parse_rating(text) == rating


# ---- claim parsing ----

def test_parse_span_claims_none_variants():
    assert parse_span_claims("None", None, "t") == []
    assert parse_span_claims("  none \n", None, "t") == []
    assert parse_span_claims("NONE.", None, "t") != []  # "NONE." is a claim, not a bare None


def test_parse_span_claims_markers_and_blanks():
    text = "- their daughter\n\n• meet later\n2. at the office\nplain line\nNone\n"
    claims = parse_span_claims(text, ErrorCategory.LOGICAL_ERROR, "step")
    assert [c.text for c in claims] == [
        "their daughter",
        "meet later",
        "at the office",
        "plain line",
    ]
    assert all(c.source_category is ErrorCategory.LOGICAL_ERROR for c in claims)
    assert all(c.step_tag == "step" for c in claims)


def test_dedup_claims_keeps_first():
    claims = [
        RawSpanClaim("Their Daughter", ErrorCategory.CIRCUMSTANTIAL_INFERENCE, "a"),
        RawSpanClaim("their  daughter", ErrorCategory.LOGICAL_ERROR, "b"),
        RawSpanClaim("other", None, "c"),
    ]
    kept = dedup_claims(claims)
    assert [c.text for c in kept] == ["Their Daughter", "other"]
    assert kept[0].source_category is ErrorCategory.CIRCUMSTANTIAL_INFERENCE


# ---- grounding ----

def claim(text: str, category=None) -> RawSpanClaim:
    return RawSpanClaim(text, category, "test")


def test_ground_span_exact_offsets():
    span = ground_span(TABLE_SUMMARY.text, claim("their daughter"))
    assert (span.char_start, span.char_end) == (44, 58)
    assert TABLE_SUMMARY.text[span.char_start : span.char_end] == "their daughter"
    assert span.sentence_index == 0
    assert span.ambiguous is False


@pytest.mark.parametrize(
    "noisy",
    ["THEIR DAUGHTER", "their  daughter", '"their daughter"', " their daughter.\n"],
)
def test_ground_span_normalizes_claim(noisy):
    span = ground_span(TABLE_SUMMARY.text, claim(noisy))
    assert (span.char_start, span.char_end) == (44, 58)


def test_ground_span_unmatched():
    assert ground_span(TABLE_SUMMARY.text, claim("completely absent")) is None
    assert ground_span(TABLE_SUMMARY.text, claim("...")) is None


def test_ground_span_first_occurrence_sets_ambiguous():
    text = "The dog chased the dog."
    span = ground_span(text, claim("the dog"))
    assert (span.char_start, span.char_end) == (0, 7)
    assert span.ambiguous is True


def test_ground_span_sentence_index():
    text = "First thing happened. Second thing happened."
    span = ground_span(text, claim("Second thing"))
    assert span.sentence_index == 1


# ---- merging ----

def grounded(start, end, category=None, rating=3, **kwargs) -> GroundedSpan:
    return GroundedSpan(
        claim=RawSpanClaim("x" * (end - start), category, "t"),
        char_start=start,
        char_end=end,
        sentence_index=0,
        verification_rating=rating,
        **kwargs,
    )


def test_merge_overlapping_unions_offsets():
    merged = merge_overlapping([grounded(0, 5), grounded(3, 9)])
    assert [(s.char_start, s.char_end) for s in merged] == [(0, 9)]


def test_merge_keeps_disjoint_and_touching_spans():
    merged = merge_overlapping([grounded(0, 3), grounded(3, 6), grounded(8, 9)])
    assert [(s.char_start, s.char_end) for s in merged] == [(0, 3), (3, 6), (8, 9)]


def test_merge_longest_member_wins_category():
    merged = merge_overlapping(
        [
            grounded(0, 4, ErrorCategory.WORLD_KNOWLEDGE, rating=4),
            grounded(2, 10, ErrorCategory.LOGICAL_ERROR, rating=2),
        ]
    )
    (span,) = merged
    assert span.category is ErrorCategory.LOGICAL_ERROR
    assert span.verification_rating == 2  # min of members


def test_merge_tie_breaks_by_expert_order():
    merged = merge_overlapping(
        [
            grounded(0, 4, ErrorCategory.REFERENTIAL_ERROR),
            grounded(2, 6, ErrorCategory.LOGICAL_ERROR),
        ]
    )
    (span,) = merged
    assert span.category is ErrorCategory.LOGICAL_ERROR


def test_merge_categorized_outranks_uncategorized():
    merged = merge_overlapping(
        [grounded(0, 4, None), grounded(2, 6, ErrorCategory.FIGURATIVE_MISINTERPRETATION)]
    )
    assert merged[0].category is ErrorCategory.FIGURATIVE_MISINTERPRETATION


def test_merge_flags_propagate():
    merged = merge_overlapping(
        [
            grounded(0, 4, rating=3, rating_imputed=True),
            grounded(2, 6, rating=4, ambiguous=True),
        ]
    )
    (span,) = merged
    assert span.rating_imputed is True
    assert span.ambiguous is True


def test_merge_chain_overlap_collapses_to_one():
    merged = merge_overlapping([grounded(0, 5), grounded(4, 8), grounded(7, 12)])
    assert [(s.char_start, s.char_end) for s in merged] == [(0, 12)]


def test_merge_empty():
    assert merge_overlapping([]) == []


# ---- direct assessment ----

def test_direct_assessment_yes():
    backend = script_backend(ScriptRule("Yes, it is consistent.", contains="Summary: "))
    result = Detector(backend).detect(
        TABLE_DIALOGUE, TABLE_SUMMARY, Method.DIRECT_ASSESSMENT
    )
    assert result.binary_label is Label.CONSISTENT
    assert result.spans == ()
    assert result.unmatched == ()
    assert len(result.transcripts) == 1
    assert result.transcripts[0].request.tag == "da:s-game"


def test_direct_assessment_prompt_is_base_template():
    backend = script_backend(ScriptRule("no", contains="Summary: "))
    result = Detector(backend).direct_assess(TABLE_DIALOGUE, TABLE_SUMMARY, Shots.ZERO)
    template = load_template(TEMPLATE_DIRECT_ASSESSMENT)
    expected = fill(
        template, Dialogue=render_dialogue(TABLE_DIALOGUE), Summary=TABLE_SUMMARY.text
    )
    assert result.transcripts[0].request.prompt == expected
    assert result.binary_label is Label.INCONSISTENT


def test_direct_assessment_unparseable_verdict_raises():
    backend = script_backend(ScriptRule("perhaps", contains="Summary: "))
    with pytest.raises(VerdictParseError):
        Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.DIRECT_ASSESSMENT)


def test_direct_assessment_fewshot_prompt():
    backend = script_backend(ScriptRule("yes", contains="Summary: "))
    detector = Detector(backend)
    result = detector.direct_assess(TABLE_DIALOGUE, TABLE_SUMMARY, Shots.FEW)
    template = load_template(TEMPLATE_DIRECT_ASSESSMENT)
    base = fill(template, Dialogue=render_dialogue(TABLE_DIALOGUE), Summary=TABLE_SUMMARY.text)
    expected = build_fewshot(
        load_fewshot_bundle(None), base, template=template, answer=verdict_answer
    )
    assert result.transcripts[0].request.prompt == expected
    # Four exemplar blocks precede the query.
    assert expected.count("\n\n") == 4


# ---- span method ----

def span_rules(identification: str, ratings: dict[str, str]) -> list[ScriptRule]:
    rules = [
        ScriptRule(rating, contains=f"Span: {span_text}")
        for span_text, rating in ratings.items()
    ]
    rules.append(ScriptRule(identification, contains="Identify and list spans"))
    return rules


def test_span_method_keeps_low_rated_span():
    backend = script_backend(*span_rules("their daughter", {"their daughter": "2"}))
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    assert result.binary_label is Label.INCONSISTENT
    (span,) = result.spans
    assert (span.char_start, span.char_end) == (44, 58)
    assert span.verification_rating == 2
    assert span.rating_imputed is False
    assert span.category is None
    assert [t.request.tag for t in result.transcripts] == [
        "identify:span:s-game",
        "verify:s-game:their daughter",
    ]


def test_span_method_drops_full_support_rating():
    backend = script_backend(*span_rules("their daughter", {"their daughter": "5"}))
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    assert result.binary_label is Label.CONSISTENT
    assert result.spans == ()
    assert len(result.transcripts) == 2  # the span was still verified


def test_span_method_none_short_circuits():
    backend = script_backend(*span_rules("None", {}))
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    assert result.binary_label is Label.CONSISTENT
    assert len(result.transcripts) == 1  # no verification calls at all


def test_span_method_unmatched_claim_recorded():
    backend = script_backend(*span_rules("not in the summary text", {}))
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    assert result.binary_label is Label.CONSISTENT
    (missed,) = result.unmatched
    assert missed.text == "not in the summary text"
    assert len(result.transcripts) == 1  # unmatched claims are never verified


def test_span_method_verification_retry_then_impute():
    backend = script_backend(
        ScriptRule("N/A", contains="Span: their daughter"),
        ScriptRule("their daughter", contains="Identify and list spans"),
    )
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    (span,) = result.spans
    assert span.verification_rating == 1
    assert span.rating_imputed is True
    assert result.binary_label is Label.INCONSISTENT
    tags = [t.request.tag for t in result.transcripts]
    assert tags == [
        "identify:span:s-game",
        "verify:s-game:their daughter",
        "verify:s-game:their daughter:retry",
    ]


def test_span_method_retry_success_is_not_imputed():
    # First verification response unparseable, retry parseable: rating stands.
    class FlakyBackend:
        def __init__(self):
            self.verify_calls = 0

        def complete(self, request):
            from faithcheck.backend import CompletionResponse

            if "Span: their daughter" in request.prompt:
                self.verify_calls += 1
                text = "unclear" if self.verify_calls == 1 else "4"
            else:
                text = "their daughter"
            return CompletionResponse(text, "flaky", 0.0, 1)

    result = Detector(FlakyBackend()).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)
    (span,) = result.spans
    assert span.verification_rating == 4
    assert span.rating_imputed is False


def test_span_method_verification_sentence_slot():
    text = "Cameron is unable to bring a video game for their daughter Peyton. Cameron works at the office."
    summary = SummaryRecord("s2", "d-game", "gpt-4", ModelCategory.LLM, text)
    backend = CountingBackend(
        script_backend(
            ScriptRule("3", contains="Span: at the office"),
            ScriptRule("at the office", contains="Identify and list spans"),
        )
    )
    result = Detector(backend).detect(TABLE_DIALOGUE, summary, Method.SPAN)
    (span,) = result.spans
    assert span.sentence_index == 1
    verify_prompt = backend.requests[-1].prompt
    assert "Sentence: Cameron works at the office." in verify_prompt
    assert "Sentence: " + text not in verify_prompt  # sentence, not whole summary


# ---- mixture of experts ----

def moe_backend(responses: dict[ErrorCategory, str], ratings: dict[str, str]):
    rules = [
        ScriptRule(rating, contains=f"Span: {span_text}") for span_text, rating in ratings.items()
    ]
    for category, response in responses.items():
        # Each expert template names its own errors in the task definition.
        marker = {
            ErrorCategory.CIRCUMSTANTIAL_INFERENCE: "circumstantial inferences",
            ErrorCategory.LOGICAL_ERROR: "logical errors",
            ErrorCategory.WORLD_KNOWLEDGE: "world knowledge",
            ErrorCategory.REFERENTIAL_ERROR: "referential errors",
            ErrorCategory.FIGURATIVE_MISINTERPRETATION: "figurative language",
        }[category]
        rules.append(ScriptRule(response, contains=marker))
    return CountingBackend(script_backend(*rules, fallback="None"))


def test_moe_issues_exactly_five_identification_calls_in_order():
    backend = moe_backend({}, {})
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.MOE)
    assert result.binary_label is Label.CONSISTENT
    tags = [r.tag for r in backend.requests]
    assert tags == [f"identify:moe:{c.value}:s-game" for c in MOE_EXPERT_ORDER]


def test_moe_claims_carry_expert_category():
    backend = moe_backend(
        {ErrorCategory.REFERENTIAL_ERROR: "Peyton"}, {"Peyton": "2"}
    )
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.MOE)
    (span,) = result.spans
    assert span.category is ErrorCategory.REFERENTIAL_ERROR
    assert span.claim.step_tag == "identify:moe:referential_error"
    assert result.binary_label is Label.INCONSISTENT


def test_moe_cross_expert_dedup_keeps_first_expert():
    backend = moe_backend(
        {
            ErrorCategory.CIRCUMSTANTIAL_INFERENCE: "their daughter",
            ErrorCategory.LOGICAL_ERROR: "- Their Daughter",
        },
        {"their daughter": "2"},
    )
    result = Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.MOE)
    (span,) = result.spans
    assert span.category is ErrorCategory.CIRCUMSTANTIAL_INFERENCE
    # 5 identifications + 1 verification: the duplicate is not re-verified.
    assert len(backend.requests) == 6


def test_moe_expert_failure_aborts_summary():
    # No fallback: the world-knowledge expert has no matching rule.
    rules = [
        ScriptRule("None", contains="circumstantial inferences"),
        ScriptRule("None", contains="logical errors"),
        ScriptRule("None", contains="referential errors"),
        ScriptRule("None", contains="figurative language"),
    ]
    backend = script_backend(*rules)
    with pytest.raises(ScriptMissError, match="world_knowledge"):
        Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.MOE)


# ---- corpus-level runs ----

def fixture_corpus() -> Corpus:
    corpus = Corpus(
        {TABLE_DIALOGUE.id: TABLE_DIALOGUE},
        {
            TABLE_SUMMARY.id: TABLE_SUMMARY,
            "s-b": SummaryRecord(
                "s-b", TABLE_DIALOGUE.id, "gpt-4", ModelCategory.LLM, "Peyton wants a video game."
            ),
        },
        [],
    )
    corpus.validate()
    return corpus


def test_detect_corpus_preserves_order_and_parallel_matches_serial():
    corpus = fixture_corpus()

    def build():
        return Detector(
            script_backend(
                ScriptRule("2", contains="Span: their daughter"),
                ScriptRule(
                    "their daughter",
                    contains="Summary: Cameron is unable",
                ),
                ScriptRule("None", contains="Summary: Peyton wants"),
            )
        )

    serial = detect_corpus(build(), corpus, Method.SPAN)
    parallel = detect_corpus(build(), corpus, Method.SPAN, workers=4)
    assert [r.summary_id for r in serial] == ["s-game", "s-b"]
    assert serial == parallel


# ---- persistence ----

def test_detection_record_round_trip(tmp_path):
    backend = script_backend(
        ScriptRule("2", contains="Span: their daughter"),
        ScriptRule("their daughter", contains="Identify and list spans"),
    )
    results = [Detector(backend).detect(TABLE_DIALOGUE, TABLE_SUMMARY, Method.SPAN)]
    path = tmp_path / "detections.jsonl"
    save_detections(results, path)
    loaded = load_detections(path)
    assert loaded == results


def test_detection_record_shape():
    result = DetectionResult(
        summary_id="s",
        method=Method.SPAN,
        shots=Shots.ZERO,
        spans=(),
        binary_label=Label.CONSISTENT,
        transcripts=(),
        unmatched=(),
    )
    record = detection_to_record(result)
    assert record["kind"] == "detection"
    assert detection_from_record(record) == result


def test_full_support_rating_is_five():
    assert FULL_SUPPORT_RATING == 5
