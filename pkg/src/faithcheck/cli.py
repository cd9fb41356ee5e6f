"""Command-line interface.

Thin wrappers over the library: every command is deterministic given its
inputs, writes outputs atomically (temp file plus rename), exits 0 on
success and non-zero with the error classification on stderr otherwise.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import detector as detector_mod
from . import metrics as metrics_mod
from .backend import ScriptedBackend, load_http_config, load_script
from .corpus import CorpusFormat, ErrorCategory, Label, load_corpus, load_mapping, save_corpus
from .detector import Detector, Method, Shots, detect_corpus, load_detections, save_detections
from .metrics import (
    Polarity,
    calibrate_threshold,
    calibration_split,
    category_distribution,
    error_rate,
    evaluate,
    load_scores,
    pairwise_agreement,
    save_eval_report,
    threshold_to_record,
)
from .prompts import load_fewshot_bundle
from .records import dumps_record, read_records, write_text_atomic
from .store import SessionStore


def handle_errors(func):
    """Surface module errors with their classification; exit non-zero."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValueError, KeyError, OSError, RuntimeError) as exc:
            message = str(exc) or repr(exc)
            click.echo(f"error[{type(exc).__name__}]: {message}", err=True)
            sys.exit(1)

    return wrapper


def build_backend(spec: str):
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise click.BadParameter("backend spec must be mock:<script> or http:<config>")
    if kind == "mock":
        return ScriptedBackend(load_script(rest))
    if kind == "http":
        return load_http_config(rest)
    raise click.BadParameter(f"unknown backend kind {kind!r}; use mock: or http:")


@click.group()
def main() -> None:
    """Faithfulness auditing for dialogue summarization."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "format_", default="native", type=click.Choice([f.value for f in CorpusFormat]))
@click.option("--mapping", "mapping_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="JSON override for the legacy error-type mapping tables.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def ingest(corpus_path: str, format_: str, mapping_path: str | None, out_path: str) -> None:
    """Load a corpus file and store it in the native format."""
    mapping = load_mapping(mapping_path) if mapping_path else None
    loaded = load_corpus(corpus_path, format_, mapping=mapping)
    save_corpus(loaded, out_path)
    click.echo(
        f"ingested {len(loaded.dialogues)} dialogues, {len(loaded.summaries)} summaries, "
        f"{len(loaded.annotations)} annotations -> {out_path}"
    )


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", required=True, type=click.Choice([m.value for m in Method]))
@click.option("--shots", default="zero", type=click.Choice([s.value for s in Shots]))
@click.option("--backend", "backend_spec", required=True,
              help="mock:<script.jsonl> or http:<config.json>.")
@click.option("--fewshot", "fewshot_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Few-shot bundle JSON; defaults to the packaged bundle.")
@click.option("--workers", default=1, type=int, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def detect(corpus_path, method, shots, backend_spec, fewshot_path, workers, out_path) -> None:
    """Run a detection pipeline over every summary in the corpus."""
    loaded = load_corpus(corpus_path)
    backend = build_backend(backend_spec)
    bundle = load_fewshot_bundle(fewshot_path) if fewshot_path else None
    runner = Detector(backend, fewshot=bundle)
    results = detect_corpus(runner, loaded, Method(method), Shots(shots), workers=workers)
    save_detections(results, out_path)
    flagged = sum(1 for r in results if r.binary_label is Label.INCONSISTENT)
    click.echo(f"detected {flagged}/{len(results)} inconsistent summaries -> {out_path}")


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--polarity", required=True, type=click.Choice([p.value for p in Polarity]))
@click.option("--metric-name", default=None, help="Defaults to the scores file stem.")
@click.option("--dataset", default="all", show_default=True)
@click.option("--model-category", default="all", show_default=True)
@click.option("--split-fraction", default=None, type=float,
              help="Calibrate on a deterministic subset of this fraction.")
@click.option("--split-seed", default=0, type=int, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def calibrate(scores_path, corpus_path, polarity, metric_name, dataset, model_category,
              split_fraction, split_seed, out_path) -> None:
    """Pick the balanced-accuracy-maximizing threshold for a score file."""
    loaded = load_corpus(corpus_path)
    scores = load_scores(scores_path, metric_name)
    unknown = sorted({s.summary_id for s in scores} - loaded.summaries.keys())
    if unknown:
        raise metrics_mod.CoverageError(f"scores name unknown summaries: {unknown}")
    if split_fraction is not None:
        key = f"{scores[0].metric_name if scores else ''}:{dataset}:{model_category}"
        subset = set(
            calibration_split(
                [s.summary_id for s in scores], split_fraction, seed=split_seed, key=key
            )
        )
        scores = [s for s in scores if s.summary_id in subset]
    annotated = {ann.summary_id for ann in loaded.annotations}
    gold = [
        Label.INCONSISTENT if s.summary_id in annotated else Label.CONSISTENT for s in scores
    ]
    threshold = calibrate_threshold(
        scores, gold, Polarity(polarity), dataset=dataset, model_category=model_category
    )
    write_text_atomic(out_path, dumps_record(threshold_to_record(threshold)) + "\n")
    click.echo(f"threshold {threshold.value!r} ({threshold.polarity.value}) -> {out_path}")


@main.command(name="eval")
@click.option("--detections", "detections_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--exclude-nonsensical", is_flag=True, default=False,
              help="Drop summaries whose gold annotations are exclusively nonsensical.")
@click.option("--out-json", "json_path", default=None, type=click.Path(dir_okay=False))
@click.option("--out-csv", "csv_path", default=None, type=click.Path(dir_okay=False))
@handle_errors
def eval_cmd(detections_path, corpus_path, exclude_nonsensical, json_path, csv_path) -> None:
    """Score a detection run against gold annotations."""
    loaded = load_corpus(corpus_path)
    detections = load_detections(detections_path)
    report = evaluate(detections, loaded, exclude_nonsensical=exclude_nonsensical)
    if json_path is None and csv_path is None:
        click.echo(dumps_record(metrics_mod.eval_report_to_record(report)))
        return
    save_eval_report(report, json_path, csv_path)
    written = ", ".join(p for p in (json_path, csv_path) if p)
    click.echo(f"balanced_accuracy={report.balanced_accuracy!r} span_f1={report.span_f1!r} -> {written}")


def _load_annotation_file(path: str) -> list:
    annotations = []
    for lineno, record in read_records(path):
        if record.get("kind") in (None, "annotation"):
            annotations.append(corpus_mod.annotation_from_record(record, f"{path}:{lineno}"))
    return annotations


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--a", "annotator_a", default=None, help="Annotator id found in the corpus.")
@click.option("--b", "annotator_b", default=None, help="Annotator id found in the corpus.")
@click.option("--file-a", "file_a", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Annotation record file for side A.")
@click.option("--file-b", "file_b", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Annotation record file for side B.")
@handle_errors
def agreement(corpus_path, annotator_a, annotator_b, file_a, file_b) -> None:
    """Print the pairwise span agreement between two annotators."""
    loaded = load_corpus(corpus_path)
    if file_a and file_b:
        ann_a = _load_annotation_file(file_a)
        ann_b = _load_annotation_file(file_b)
    elif annotator_a and annotator_b:
        ann_a = [ann for ann in loaded.annotations if ann.annotator_id == annotator_a]
        ann_b = [ann for ann in loaded.annotations if ann.annotator_id == annotator_b]
    else:
        raise click.UsageError("pass either --a/--b annotator ids or --file-a/--file-b record files")
    value = pairwise_agreement(ann_a, ann_b, loaded)
    click.echo(repr(value))


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--exclude-nonsensical", is_flag=True, default=False,
              help="Ignore nonsensical spans when counting error rates.")
@click.option("--out-dir", "out_dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def report(corpus_path, exclude_nonsensical, out_dir) -> None:
    """Write per-model error-rate and category-distribution tables."""
    loaded = load_corpus(corpus_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exclusions = frozenset({ErrorCategory.NONSENSICAL}) if exclude_nonsensical else frozenset()
    models = sorted({s.model_id for s in loaded.summaries.values()})

    rate_lines = ["model_id,error_rate"]
    for model_id in models:
        rate_lines.append(f"{model_id},{error_rate(loaded, model_id, exclusions)!r}")
    write_text_atomic(out / "error_rates.csv", "\n".join(rate_lines) + "\n")

    dist_lines = ["model_id,category,share"]
    for model_id in models:
        try:
            distribution = category_distribution(loaded, model_id)
        except metrics_mod.UndefinedDistributionError:
            continue
        for category in ErrorCategory:
            dist_lines.append(f"{model_id},{category.value},{distribution[category]!r}")
    write_text_atomic(out / "category_distribution.csv", "\n".join(dist_lines) + "\n")
    click.echo(f"wrote error_rates.csv and category_distribution.csv -> {out}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None, type=click.Path(dir_okay=False),
              help="Session log path; defaults to <corpus>.session.jsonl.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
@click.option("--ui-dir", "ui_dir", default=None, type=click.Path(file_okay=False),
              help="Static directory with the built annotation UI.")
@handle_errors
def serve(corpus_path, store_path, host, port, ui_dir) -> None:
    """Serve the annotation workflow over HTTP."""
    import uvicorn

    from .service import create_app

    loaded = load_corpus(corpus_path)
    store = SessionStore(store_path or f"{corpus_path}.session.jsonl")
    app = create_app(loaded, store, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
