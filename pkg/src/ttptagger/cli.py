"""Command-line interface.

Subcommands: ingest, train, predict, evaluate, compare, export-stix, serve.
Exit status 0 on success, 1 on usage errors, 2 on runtime errors. Diagnostics
go to standard error; structured results go to standard output or the file
named by --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import classifier, evaluate, postprocess, stix_export
from .attack_kb import build_association_stats, load_bundle as load_taxonomy_bundle, parse_bundle
from .classifier import ModelBundle, TrainConfig
from .ingest import Document, TrainingStore, bootstrap_store, extract_html_text
from .postprocess import ALL_STRATEGIES, TACTICS_AS_FEATURES


class CliError(RuntimeError):
    """Operational failure; reported on stderr with exit status 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems by default; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def prediction_payload(bundle: ModelBundle, pred) -> dict:
    """The JSON body shared by the predict subcommand and POST /api/predict."""

    def block(predictions):
        return [
            {
                "label_id": p.label_id,
                "name": bundle.taxonomy.name_of(p.label_id),
                "confidence": round(p.confidence, 6),
                "decided": p.decided,
            }
            for p in sorted(predictions, key=lambda p: (-p.confidence, p.label_id))
        ]

    return {
        "doc_id": pred.doc_id,
        "tactics": block(pred.tactics),
        "techniques": block(pred.techniques),
        "model_version": bundle.model_version(),
    }


def run_prediction(bundle: ModelBundle, text: str, doc_id: str, strategy: str | None = None):
    """Score a report and apply the bundle's (or the overridden) strategy."""
    strategy = strategy or bundle.strategy
    if strategy == TACTICS_AS_FEATURES and bundle.strategy != TACTICS_AS_FEATURES:
        raise CliError(
            "tactics-as-features changes how technique models are trained; "
            "retrain with --postprocess tactics-as-features instead of overriding at predict time"
        )
    raw = classifier.predict(bundle, Document(doc_id=doc_id, source="", text=text))
    ctx = postprocess.context_from_artifacts(bundle.taxonomy, bundle.artifacts, bundle.config)
    return postprocess.apply_strategy(raw, strategy, ctx)


def _load_taxonomy(path):
    bundle = load_taxonomy_bundle(path)
    taxonomy, diags = parse_bundle(bundle)
    for line in diags:
        print(f"taxonomy: {line}", file=sys.stderr)
    return bundle, taxonomy


def _load_stats(bundle, taxonomy):
    stats, diags = build_association_stats(bundle, taxonomy)
    for line in diags:
        print(f"associations: {line}", file=sys.stderr)
    return stats


def _config_from_args(args) -> TrainConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            config = TrainConfig.from_dict(json.load(fh))
    else:
        config = TrainConfig()
    for name in ("seed", "folds", "mode", "min_df", "max_df", "min_reports"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "postprocess", None):
        config.postprocess = args.postprocess
    if getattr(args, "resample", False):
        config.resampling = classifier.ResamplingPolicy(enabled=True)
    return config


def _read_report(path_arg: str, force_html: bool) -> str:
    if path_arg == "-":
        data = sys.stdin.buffer.read()
        return extract_html_text(data) if force_html else data.decode("utf-8", errors="replace")
    path = Path(path_arg)
    if not path.exists():
        raise CliError(f"report file not found: {path}")
    data = path.read_bytes()
    if force_html or path.suffix.lower() in (".html", ".htm"):
        return extract_html_text(data)
    return data.decode("utf-8", errors="replace")


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def cmd_ingest(args) -> int:
    bundle, taxonomy = _load_taxonomy(args.taxonomy)
    store, diags = bootstrap_store(bundle, taxonomy, args.corpus, args.store)
    for line in diags:
        print(f"ingest: {line}", file=sys.stderr)
    print(f"wrote {len(store)} documents to {args.store}")
    return 0


def cmd_train(args) -> int:
    bundle_json, taxonomy = _load_taxonomy(args.taxonomy)
    stats = _load_stats(bundle_json, taxonomy)
    store = TrainingStore.load(args.store)
    config = _config_from_args(args)
    model = classifier.train_bundle(store, taxonomy, config, stats=stats)
    classifier.save_bundle(model, args.model)
    chosen = model.postprocessing["strategy"]
    print(f"trained {len(model.tactic_models)} tactic and {len(model.technique_models)} "
          f"technique models; post-processing: {chosen}; saved to {args.model}")
    if model.skipped_labels:
        print(f"skipped single-class labels: {', '.join(model.skipped_labels)}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    bundle = classifier.load_bundle(args.model)
    text = _read_report(args.report, args.html)
    if not text.strip():
        raise CliError("report text is empty")
    doc_id = "stdin" if args.report == "-" else Path(args.report).stem
    pred = run_prediction(bundle, text, doc_id, args.postprocess)
    payload = prediction_payload(bundle, pred)
    _write_or_print(json.dumps(payload, indent=2) + "\n", args.out)
    return 0


def cmd_evaluate(args) -> int:
    bundle_json, taxonomy = _load_taxonomy(args.taxonomy)
    stats = _load_stats(bundle_json, taxonomy)
    store = TrainingStore.load(args.store)
    config = _config_from_args(args)
    strategy = args.postprocess or postprocess.STRATEGY_NONE
    rows = evaluate.compare_strategies(store, taxonomy, config, [strategy], stats=stats)
    _emit_rows(rows, args)
    return 0


def cmd_compare(args) -> int:
    bundle_json, taxonomy = _load_taxonomy(args.taxonomy)
    stats = _load_stats(bundle_json, taxonomy)
    store = TrainingStore.load(args.store)
    config = _config_from_args(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategies if s not in ALL_STRATEGIES]
    if unknown:
        raise CliError(f"unknown strategies: {', '.join(unknown)}")
    rows = evaluate.compare_strategies(store, taxonomy, config, strategies, stats=stats)
    _emit_rows(rows, args)
    return 0


def _emit_rows(rows, args) -> None:
    csv_text = evaluate.rows_to_csv(rows)
    print(evaluate.rows_to_text(rows), file=sys.stderr)
    _write_or_print(csv_text, args.out)
    if args.out and not args.no_figures:
        from . import reporting

        fig_path = Path(args.out).with_suffix(".png")
        reporting.render_comparison(rows, fig_path)
        print(f"figure written to {fig_path}", file=sys.stderr)


def cmd_export_stix(args) -> int:
    bundle = classifier.load_bundle(args.model)
    text = _read_report(args.report, args.html)
    if not text.strip():
        raise CliError("report text is empty")
    doc_id = "stdin" if args.report == "-" else Path(args.report).stem
    pred = run_prediction(bundle, text, doc_id, args.postprocess)
    doc = Document(doc_id=doc_id, source=args.report, text=text)
    out = stix_export.export_json(pred, doc, bundle.taxonomy, args.title, args.published)
    _write_or_print(out, args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.bind.rpartition(":")
    app = create_app(args.model, args.store, ui_dist=args.ui_dist)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ttptagger", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a training store from a local corpus directory")
    p.add_argument("--taxonomy", required=True, help="ATT&CK Enterprise STIX bundle JSON")
    p.add_argument("--corpus", required=True, help="directory of <sha256(url)>.txt|.html files")
    p.add_argument("--store", required=True, help="output training store (JSON lines)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model bundle from the store")
    p.add_argument("--store", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--model", required=True, help="output bundle path")
    p.add_argument("--config", help="JSON file of hyper-parameters")
    p.add_argument("--postprocess", choices=(classifier.AUTO, *ALL_STRATEGIES))
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--mode", choices=("tf", "tfidf"))
    p.add_argument("--min-df", dest="min_df", type=int)
    p.add_argument("--max-df", dest="max_df", type=float)
    p.add_argument("--min-reports", dest="min_reports", type=int)
    p.add_argument("--resample", action="store_true", help="over/undersample per label")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label one report (text/HTML file or '-' for stdin)")
    p.add_argument("--model", required=True)
    p.add_argument("--postprocess", choices=ALL_STRATEGIES)
    p.add_argument("--html", action="store_true", help="force HTML paragraph extraction")
    p.add_argument("--out")
    p.add_argument("report")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="cross-validate the pipeline on the store")
    p.add_argument("--store", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--config")
    p.add_argument("--postprocess", choices=ALL_STRATEGIES)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV output path (a PNG figure lands next to it)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare post-processing strategies")
    p.add_argument("--store", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--config")
    p.add_argument("--strategies", default=",".join(s for s in ALL_STRATEGIES if s != "none"))
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV output path (a PNG figure lands next to it)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-stix", help="predict and export a STIX bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--title", required=True)
    p.add_argument("--published", help="ISO timestamp; defaults to now")
    p.add_argument("--postprocess", choices=ALL_STRATEGIES)
    p.add_argument("--html", action="store_true")
    p.add_argument("--out")
    p.add_argument("report")
    p.set_defaults(func=cmd_export_stix)

    p = sub.add_parser("serve", help="run the HTTP JSON service for the review UI")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--bind", default="127.0.0.1:8150")
    p.add_argument("--ui-dist", help="directory of built UI assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"ttptagger: error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
