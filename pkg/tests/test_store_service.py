"""Session store durability and the annotation service API."""

import json

import pytest
from fastapi.testclient import TestClient

from faithcheck.corpus import (
    Corpus,
    Dialogue,
    DialogueTurn,
    ErrorCategory,
    ModelCategory,
    Round,
    SpanAnnotation,
    SummaryRecord,
)
from faithcheck.records import RecordFormatError
from faithcheck.service import build_tasks, create_app
from faithcheck.store import SessionStore

SUMMARY_TEXT = "Cameron is unable to bring a video game for their daughter Peyton."


def make_corpus() -> Corpus:
    corpus = Corpus(
        {
            "d1": Dialogue(
                "d1",
                "samsum",
                (
                    DialogueTurn("Peyton", "I have been asking you to bring that video game for me", 0),
                    DialogueTurn("Cameron", "Honey, I am not having enough time to come home.", 1),
                ),
            )
        },
        {"s1": SummaryRecord("s1", "d1", "gpt-4", ModelCategory.LLM, SUMMARY_TEXT)},
        [],
    )
    corpus.validate()
    return corpus


def ann(summary_id="s1", start=0, end=7, category=None, annotator="a1", round=Round.ERROR_ANNOTATION):
    return SpanAnnotation(summary_id, start, end, category, (0,), annotator, round)


# ---- store ----

def test_store_append_and_read(tmp_path):
    store = SessionStore(tmp_path / "log.jsonl")
    seq1 = store.append_annotation(ann())
    seq2 = store.append_annotation(ann(start=8, end=14, annotator="a2"))
    assert (seq1, seq2) == (1, 2)
    assert [a.char_start for a in store.annotations()] == [0, 8]
    assert [a.annotator_id for a in store.annotations(annotator_id="a2")] == ["a2"]


def test_store_supersede(tmp_path):
    store = SessionStore(tmp_path / "log.jsonl")
    seq = store.append_annotation(ann())
    store.append_annotation(ann(start=8, end=14))
    store.supersede(seq)
    assert [a.char_start for a in store.annotations()] == [8]
    with pytest.raises(KeyError):
        store.supersede(99)
    store.supersede(seq)  # tombstoning twice is harmless


def test_store_done_tracking(tmp_path):
    store = SessionStore(tmp_path / "log.jsonl")
    store.mark_done("s1@error_annotation", "a1")
    assert store.is_done("s1@error_annotation", "a1")
    assert not store.is_done("s1@error_annotation", "a2")
    assert store.completed_tasks("a1") == {"s1@error_annotation"}


def test_store_replay_rebuilds_state(tmp_path):
    path = tmp_path / "log.jsonl"
    store = SessionStore(path)
    seq = store.append_annotation(ann())
    store.append_annotation(ann(start=8, end=14, annotator="a2"))
    store.supersede(seq)
    store.mark_done("s1@error_annotation", "a2")
    store.close()

    replayed = SessionStore(path)
    assert replayed.annotations() == store.annotations()
    assert replayed.completed_tasks("a2") == {"s1@error_annotation"}
    # Sequence numbering continues after the replayed tail.
    assert replayed.append_annotation(ann(start=15, end=20)) == 5


def test_store_replay_every_crash_prefix(tmp_path):
    """Any byte-level prefix replays to the state of its complete lines."""
    path = tmp_path / "log.jsonl"
    store = SessionStore(path)
    store.append_annotation(ann())
    store.append_annotation(ann(start=8, end=14))
    store.mark_done("t", "a1")
    store.close()
    raw = path.read_bytes()
    line_ends = [i + 1 for i, b in enumerate(raw) if b == ord(b"\n")]

    for cut in range(1, len(raw) + 1):
        torn = tmp_path / f"torn-{cut}.jsonl"
        torn.write_bytes(raw[:cut])
        replayed = SessionStore(torn)
        complete = sum(1 for end in line_ends if end <= cut)
        applied = len(replayed.annotations()) + len(replayed.completed_tasks("a1"))
        # Every complete line is applied; a trailing fragment counts only
        # when the cut fell exactly after the record's closing byte.
        assert complete <= applied <= complete + 1
        assert replayed._seq <= 3


def test_store_replay_exact_on_line_boundaries(tmp_path):
    path = tmp_path / "log.jsonl"
    store = SessionStore(path)
    store.append_annotation(ann())
    store.append_annotation(ann(start=8, end=14))
    store.close()
    raw = path.read_bytes()
    first_line = raw.index(b"\n") + 1

    one = SessionStore(stash(tmp_path, raw[:first_line], "one"))
    assert len(one.annotations()) == 1
    torn = SessionStore(stash(tmp_path, raw[: first_line + 10], "torn"))
    assert len(torn.annotations()) == 1  # torn tail dropped
    assert torn._seq == 1


def stash(tmp_path, data: bytes, name: str):
    path = tmp_path / f"{name}.jsonl"
    path.write_bytes(data)
    return path


def test_store_interior_corruption_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    store = SessionStore(path)
    store.append_annotation(ann())
    store.append_annotation(ann(start=8, end=14))
    store.close()
    lines = path.read_bytes().split(b"\n")
    lines[0] = b'{"seq": 1, "kind": "annotation", "summary'  # torn interior line
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(RecordFormatError, match="line 1"):
        SessionStore(path)


def test_store_writes_are_immediately_durable(tmp_path):
    path = tmp_path / "log.jsonl"
    store = SessionStore(path)
    store.append_annotation(ann())
    # Without closing, another reader already sees the acknowledged record.
    assert len(SessionStore(path).annotations()) == 1


# ---- service ----

@pytest.fixture()
def client(tmp_path):
    corpus = make_corpus()
    store = SessionStore(tmp_path / "session.jsonl")
    app = create_app(corpus, store)
    with TestClient(app) as test_client:
        yield test_client


def test_build_tasks_two_per_summary():
    tasks = build_tasks(make_corpus())
    assert set(tasks) == {"s1@error_annotation", "s1@categorization"}


def test_list_tasks_and_round_filter(client):
    listing = client.get("/tasks").json()
    assert [t["task_id"] for t in listing] == ["s1@error_annotation", "s1@categorization"]
    assert all(t["status"] == "open" for t in listing)
    only_round2 = client.get("/tasks", params={"round": "categorization"}).json()
    assert [t["round"] for t in only_round2] == ["categorization"]


def test_task_detail_shape(client):
    detail = client.get("/tasks/s1@error_annotation").json()
    assert detail["summary"]["text"] == SUMMARY_TEXT
    assert [t["speaker"] for t in detail["dialogue"]["turns"]] == ["Peyton", "Cameron"]
    assert detail["existing_spans"] == []
    assert detail["annotations"] == []


def test_task_detail_unknown_task(client):
    response = client.get("/tasks/ghost@error_annotation")
    assert response.status_code == 404
    assert response.json()["detail"]["error"] == "unknown_task"


def test_post_annotation_happy_path(client):
    response = client.post(
        "/tasks/s1@categorization/annotations",
        headers={"X-Annotator": "a1"},
        json={
            "char_start": 44,
            "char_end": 58,
            "category": "circumstantial_inference",
            "evidence_turns": [0, 1],
        },
    )
    assert response.status_code == 201
    body = response.json()
    assert body["seq"] == 1
    assert SUMMARY_TEXT[body["char_start"] : body["char_end"]] == "their daughter"
    assert body["annotator_id"] == "a1"
    assert body["round"] == "categorization"

    # The annotation is immediately visible on the task detail.
    detail = client.get("/tasks/s1@categorization", headers={"X-Annotator": "a1"}).json()
    assert len(detail["annotations"]) == 1
    assert detail["annotations"][0]["char_start"] == 44


def test_post_annotation_requires_annotator(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        json={"char_start": 0, "char_end": 7},
    )
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "annotator_required"


def test_post_annotation_round2_requires_category(client):
    response = client.post(
        "/tasks/s1@categorization/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 0, "char_end": 7},
    )
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "category_required"


def test_post_annotation_round1_category_optional(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 0, "char_end": 7},
    )
    assert response.status_code == 201
    assert response.json()["category"] is None


def test_post_annotation_unknown_category(client):
    response = client.post(
        "/tasks/s1@categorization/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 0, "char_end": 7, "category": "vibes"},
    )
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "unknown_category"
    assert "circumstantial_inference" in detail["accepted"]


def test_post_annotation_invalid_offsets(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 50, "char_end": 500},
    )
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "invalid_offsets"
    assert detail["char_start"] == 50
    assert detail["char_end"] == 500
    assert detail["summary_length"] == len(SUMMARY_TEXT)


def test_post_annotation_invalid_evidence_turns(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 0, "char_end": 7, "evidence_turns": [0, 5]},
    )
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "invalid_evidence_turns"
    assert detail["turns"] == [5]


def test_post_annotation_non_integer_offsets_rejected(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": "zero", "char_end": 7},
    )
    assert response.status_code == 422


def test_annotator_query_param_works_too(client):
    response = client.post(
        "/tasks/s1@error_annotation/annotations",
        params={"annotator": "a2"},
        json={"char_start": 0, "char_end": 7},
    )
    assert response.status_code == 201
    assert response.json()["annotator_id"] == "a2"


def test_round2_sees_round1_spans(client):
    client.post(
        "/tasks/s1@error_annotation/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 44, "char_end": 58},
    )
    detail = client.get("/tasks/s1@categorization").json()
    assert [s["char_start"] for s in detail["existing_spans"]] == [44]
    # Round-1 detail never lists prior-round spans.
    assert client.get("/tasks/s1@error_annotation").json()["existing_spans"] == []


def test_round2_sees_corpus_round1_spans(tmp_path):
    corpus = make_corpus()
    corpus.annotations.append(
        SpanAnnotation("s1", 44, 58, None, (), "seed", Round.ERROR_ANNOTATION)
    )
    store = SessionStore(tmp_path / "session.jsonl")
    with TestClient(create_app(corpus, store)) as client:
        detail = client.get("/tasks/s1@categorization").json()
        assert [s["annotator_id"] for s in detail["existing_spans"]] == ["seed"]


def test_done_flow(client):
    response = client.post("/tasks/s1@error_annotation/done", headers={"X-Annotator": "a1"})
    assert response.status_code == 200
    listing = client.get("/tasks", headers={"X-Annotator": "a1"}).json()
    by_id = {t["task_id"]: t["status"] for t in listing}
    assert by_id["s1@error_annotation"] == "done"
    assert by_id["s1@categorization"] == "open"
    # Another annotator still sees it open.
    other = client.get("/tasks", headers={"X-Annotator": "a2"}).json()
    assert all(t["status"] == "open" for t in other)


def test_agreement_identical_annotators(client):
    for annotator in ("a1", "a2"):
        client.post(
            "/tasks/s1@error_annotation/annotations",
            headers={"X-Annotator": annotator},
            json={"char_start": 44, "char_end": 58},
        )
        client.post("/tasks/s1@error_annotation/done", headers={"X-Annotator": annotator})
    response = client.get("/agreement", params={"a": "a1", "b": "a2"})
    assert response.status_code == 200
    body = response.json()
    assert body["agreement"] == 1.0
    assert body["summaries"] == ["s1"]
    assert body["shared_tasks"] == ["s1@error_annotation"]


def test_agreement_requires_shared_completed_tasks(client):
    client.post("/tasks/s1@error_annotation/done", headers={"X-Annotator": "a1"})
    response = client.get("/agreement", params={"a": "a1", "b": "a2"})
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "no_shared_completed_tasks"


def test_agreement_scopes_to_shared_round(client):
    # Both complete round 1 with identical spans; a1 also writes a round-2
    # annotation that must not dilute the round-1 agreement scope.
    for annotator in ("a1", "a2"):
        client.post(
            "/tasks/s1@error_annotation/annotations",
            headers={"X-Annotator": annotator},
            json={"char_start": 0, "char_end": 7},
        )
        client.post("/tasks/s1@error_annotation/done", headers={"X-Annotator": annotator})
    client.post(
        "/tasks/s1@categorization/annotations",
        headers={"X-Annotator": "a1"},
        json={"char_start": 44, "char_end": 58, "category": "circumstantial_inference"},
    )
    body = client.get("/agreement", params={"a": "a1", "b": "a2"}).json()
    assert body["agreement"] == 1.0


def test_service_persists_across_restart(tmp_path):
    corpus = make_corpus()
    path = tmp_path / "session.jsonl"
    with TestClient(create_app(corpus, SessionStore(path))) as client:
        client.post(
            "/tasks/s1@error_annotation/annotations",
            headers={"X-Annotator": "a1"},
            json={"char_start": 44, "char_end": 58},
        )
    with TestClient(create_app(corpus, SessionStore(path))) as client:
        detail = client.get("/tasks/s1@error_annotation", headers={"X-Annotator": "a1"}).json()
        assert [a["char_start"] for a in detail["annotations"]] == [44]


def test_static_ui_mount(tmp_path):
    ui_dir = tmp_path / "ui"
    ui_dir.mkdir()
    (ui_dir / "index.html").write_text("<!doctype html><title>annotator</title>")
    corpus = make_corpus()
    store = SessionStore(tmp_path / "session.jsonl")
    with TestClient(create_app(corpus, store, ui_dir=ui_dir)) as client:
        response = client.get("/")
        assert response.status_code == 200
        assert "annotator" in response.text
        # API routes still win over the static mount.
        assert client.get("/tasks").status_code == 200
