"""Command-line entry point.

Subcommands cover the pipeline stages: ``signal-list`` builds the model's
signal list, ``generate`` runs the intervention loop and exports preference
pairs, ``score`` applies a toxicity scorer, ``metrics`` aggregates score files
into a report (optionally with figures), ``eval-detection`` measures judgment
quality, ``dpo-check`` validates preference-loss math over a log-prob file,
and ``validate-pairs`` checks an exported pair file against the schema.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional

from . import dataset, dpo, intervention, io_utils, metrics, plots, scoring, signals
from .backend import (
    Backend,
    BackendConfig,
    BackendError,
    HttpBackend,
    MockBackend,
    Verdict,
)

logger = logging.getLogger("srd.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad flags, unreadable config, or missing input paths."""


# -------------------- configuration --------------------


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def load_run_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise UsageError(f"config file not found: {config_path}")
    try:
        with open(config_path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {config_path} must hold a JSON object")
    return doc


def backend_config(args: argparse.Namespace, config: dict) -> BackendConfig:
    cfg = BackendConfig()
    section = config.get("backend", {})
    known = {f.name for f in fields(BackendConfig)}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown backend config keys: {sorted(unknown)}")
    try:
        cfg = replace(cfg, **section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad backend config: {exc}") from exc
    overrides = {}
    if getattr(args, "endpoint", None):
        overrides["endpoint_url"] = args.endpoint
    if getattr(args, "model", None):
        overrides["model_name"] = args.model
    if getattr(args, "max_retries", None) is not None:
        overrides["max_retries"] = args.max_retries
    if getattr(args, "timeout", None) is not None:
        overrides["timeout"] = args.timeout
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def make_backend(args: argparse.Namespace, config: dict) -> Backend:
    cfg = backend_config(args, config)
    mock_path = getattr(args, "mock", None) or config.get("mock")
    if mock_path:
        script = _require_file(mock_path, "mock script")
        return MockBackend.from_file(script, cfg)
    return HttpBackend(cfg)


def _require_file(path: str, what: str) -> Path:
    resolved = Path(path)
    if not resolved.is_file():
        raise UsageError(f"{what} not found: {resolved}")
    return resolved


def _resolve_path(flag_value: Optional[str], config: dict, key: str, what: str,
                  required: bool = True) -> Optional[str]:
    """Flag wins over the config file's ``paths`` section."""
    value = flag_value or config.get("paths", {}).get(key)
    if value is None and required:
        raise UsageError(f"missing {what}: pass the flag or set paths.{key} in the config")
    return value


def _intervention_config(args: argparse.Namespace, config: dict) -> intervention.InterventionConfig:
    section = dict(config.get("intervention", {}))
    if getattr(args, "max_words", None) is not None:
        section["max_words"] = args.max_words
    if getattr(args, "no_recheck", False):
        section["rewrite_recheck"] = False
    try:
        return intervention.InterventionConfig(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad intervention config: {exc}") from exc


# -------------------- subcommands --------------------


def cmd_signal_list(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    prompts_path = _require_file(
        _resolve_path(args.prompts, config, "prompts", "prompts file"), "prompts file"
    )
    out = _resolve_path(args.out, config, "signals", "output path")
    prompts = io_utils.read_prompts(prompts_path)
    if not prompts:
        raise UsageError(f"prompts file is empty: {prompts_path}")
    length = args.length or config.get("signal_list_length", 50)
    backend = make_backend(args, config)
    signal_list, stats = signals.build_signal_list(
        io_utils.assign_prompt_ids(prompts),
        length,
        backend,
        parallelism=args.parallelism or config.get("parallelism", 1),
    )
    signals.save_signal_list(signal_list, out)
    print(
        f"signal list: {len(signal_list)} words (k={length}) from "
        f"{stats.prompts_total - stats.prompts_failed}/{stats.prompts_total} prompts, "
        f"{stats.total_flags} flags -> {out}"
    )
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    prompts_path = _require_file(
        _resolve_path(args.prompts, config, "prompts", "prompts file"), "prompts file"
    )
    signals_path = _require_file(
        _resolve_path(args.signals, config, "signals", "signals file"), "signals file"
    )
    out = _resolve_path(args.out, config, "output", "pairs output path")
    trace_path = _resolve_path(args.trace, config, "trace", "trace path", required=False)
    report_path = _resolve_path(args.report, config, "report", "report path", required=False)
    prompts = io_utils.read_prompts(prompts_path)
    if not prompts:
        raise UsageError(f"prompts file is empty: {prompts_path}")
    signal_list = signals.load_signal_list(signals_path)
    if not signal_list.entries:
        logger.warning("signal list is empty; generation will run without intervention")
    backend = make_backend(args, config)
    cfg = _intervention_config(args, config)
    parallelism = args.parallelism or config.get("parallelism", 1)

    sink = dataset.PairSink()
    report, results = intervention.run_corpus(
        io_utils.assign_prompt_ids(prompts), signal_list, cfg, backend, sink, parallelism
    )
    count = dataset.export_jsonl(sink, out)
    if trace_path:
        intervention.write_trace(results, trace_path)
    if report_path:
        io_utils.write_json(report.to_dict(), report_path)
    print(
        f"generate: {count} pairs from {report.prompts_total} prompts "
        f"({report.prompts_failed} failed, {report.signal_hits} signal hits, "
        f"{report.rewrites_applied} rewrites) -> {out}"
    )
    if report.prompts_failed == report.prompts_total:
        print("error: every prompt failed; backend unavailable?", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _read_texts(path: Path) -> list[tuple[str, str]]:
    if path.suffix == ".jsonl":
        records = io_utils.read_jsonl(path)
        try:
            return [(str(r["id"]), str(r["text"])) for r in records]
        except KeyError as exc:
            raise UsageError(f"{path}: records need id and text fields ({exc})") from exc
    lines = io_utils.read_prompts(path)
    return [(f"t{i:05d}", text) for i, text in enumerate(lines)]


def cmd_score(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    texts = _read_texts(_require_file(args.texts, "texts file"))
    if not texts:
        raise UsageError(f"no texts in {args.texts}")
    scorer_name = args.scorer or config.get("scorer", "lexicon")
    if scorer_name == "lexicon":
        lexicon = (
            scoring.Lexicon.from_json(_require_file(args.lexicon, "lexicon file"))
            if args.lexicon
            else scoring.Lexicon.default()
        )
        scorer = lambda text: scoring.lexicon_score(text, lexicon)  # noqa: E731
    else:
        remote_cfg = scoring.RemoteScorerConfig(
            api_root=args.api_root or config.get("api_root", "https://commentanalyzer.googleapis.com/v1alpha1"),
            rate_per_second=args.rate,
        )
        scorer = scoring.PerspectiveClient(remote_cfg).score
    outcomes = scoring.score_corpus(texts, scorer)
    records = []
    for outcome in outcomes:
        record = {"id": outcome.id, "score": outcome.score}
        if outcome.error is not None:
            record["error"] = outcome.error
        records.append(record)
    io_utils.write_jsonl(records, args.out)
    failures = sum(1 for o in outcomes if o.score is None)
    print(f"score: {len(outcomes) - failures} scored, {failures} failed -> {args.out}")
    return EXIT_OK


def _read_scores(path: Path) -> tuple[list[float], list[Optional[int]], list[str]]:
    records = io_utils.read_jsonl(path)
    scores, labels, ids = [], [], []
    for record in records:
        if record.get("score") is None:
            continue
        scores.append(float(record["score"]))
        label = record.get("label")
        labels.append(int(label) if label is not None else None)
        ids.append(str(record.get("id", len(ids))))
    return scores, labels, ids


def _parse_quality(values: list[str]) -> dict:
    parsed = {}
    for entry in values:
        if "=" not in entry:
            raise UsageError(f"--quality expects k=v entries, got {entry!r}")
        key, _, raw = entry.partition("=")
        if key not in ("sim", "sta", "fl"):
            raise UsageError(f"--quality keys must be sim/sta/fl, got {key!r}")
        parsed[key] = float(raw)
    missing = {"sim", "sta", "fl"} - set(parsed)
    if missing:
        raise UsageError(f"--quality missing {sorted(missing)}")
    return parsed


def cmd_metrics(args: argparse.Namespace) -> int:
    scores_path = _require_file(args.scores, "scores file")
    scores, labels, _ = _read_scores(scores_path)
    if not scores:
        raise UsageError(f"no usable scores in {scores_path}")

    quality = None
    if args.quality:
        q = _parse_quality(args.quality)
        quality = metrics.quality_summary(q["sim"], q["sta"], q["fl"])

    logprobs = None
    if args.logprobs:
        records = io_utils.read_jsonl(_require_file(args.logprobs, "logprobs file"))
        logprobs = [float(v) for record in records for v in record.get("logprobs", [])]
        if not logprobs:
            raise UsageError(f"no logprobs in {args.logprobs}")

    report = metrics.build_report(
        scores,
        labels=labels if any(l is not None for l in labels) else None,
        token_logprobs=logprobs,
        ppl_scorer=args.ppl_scorer,
        quality=quality,
        top_k=args.top_k,
    )
    doc = report.to_dict()

    plot_dir = Path(args.plot_dir) if args.plot_dir else None
    if plot_dir:
        plot_dir.mkdir(parents=True, exist_ok=True)
        plots.save_score_distribution(
            {"scores": metrics.histogram_pdf(scores, args.bins)},
            plot_dir / "score_distribution.png",
        )

    if args.groups:
        group_doc = {}
        group_pdfs = {}
        for group_path in args.groups:
            path = _require_file(group_path, "group score file")
            group_scores, _, _ = _read_scores(path)
            if not group_scores:
                raise UsageError(f"no usable scores in {path}")
            name = path.stem
            while name in group_pdfs:  # distinct files can share a stem
                name += "_b"
            pdf = metrics.histogram_pdf(group_scores, args.bins)
            group_doc[name] = pdf.to_dict()
            group_pdfs[name] = pdf
        doc["groups"] = group_doc
        if plot_dir:
            plots.save_score_distribution(group_pdfs, plot_dir / "group_distribution.png")

    if args.delta:
        triple = []
        for delta_path in args.delta:
            path = _require_file(delta_path, "delta score file")
            delta_scores, _, ids = _read_scores(path)
            triple.append(dict(zip(ids, delta_scores)))
        keys = sorted(set(triple[0]) & set(triple[1]) & set(triple[2]))
        if len(keys) < 2:
            raise UsageError("--delta needs at least 2 ids shared by all three files")
        p = [triple[0][k] for k in keys]
        o = [triple[1][k] for k in keys]
        r = [triple[2][k] for k in keys]
        analysis = metrics.delta_analysis(p, o, r)
        doc["delta"] = analysis.to_dict()
        if plot_dir:
            plots.save_delta_regression(
                p, [a - b for a, b in zip(p, r)], analysis.prompt_vs_rewrite,
                plot_dir / "delta_prompt.png", xlabel="prompt toxicity",
            )
            plots.save_delta_regression(
                o, [a - b for a, b in zip(o, r)], analysis.original_vs_rewrite,
                plot_dir / "delta_original.png", xlabel="original toxicity",
            )

    io_utils.write_json(doc, args.out)
    print(
        f"metrics: n={doc['sample_count']} toxic_ratio={doc['toxic_ratio']:.4f} "
        f"mtv={doc['mtv']:.4f} t5mtv={doc['t5mtv']:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_eval_detection(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if bool(args.corpus) == bool(args.judgments):
        raise UsageError("give exactly one of --corpus (judge now) or --judgments (precomputed)")
    if args.judgments:
        scores, labels, _ = _read_scores(_require_file(args.judgments, "judgments file"))
        if any(l is None for l in labels):
            raise UsageError("every judgment record needs a label")
    else:
        path = _require_file(args.corpus, "labeled corpus")
        records = io_utils.read_jsonl(path)
        backend = make_backend(args, config)
        scores, labels = [], []
        for record in records:
            try:
                item_id, text, label = str(record["id"]), record["text"], int(record["label"])
            except (KeyError, TypeError) as exc:
                raise UsageError(f"{path}: records need id, text, label fields ({exc})") from exc
            verdict = backend.judge_toxic(text, prompt_id=item_id, protocol="detection")
            scores.append(1.0 if verdict is Verdict.TOXIC else 0.0)
            labels.append(label)
    if not scores:
        raise UsageError("no labeled samples to evaluate")
    result = metrics.detection_metrics(scores, labels)
    doc = result.to_dict()
    if args.out:
        io_utils.write_json(doc, args.out)
    print(json.dumps(doc))
    return EXIT_OK


def cmd_dpo_check(args: argparse.Namespace) -> int:
    items_path = _require_file(args.input, "dpo input file")
    records = dpo.load_items(items_path)
    if not records:
        raise UsageError(f"no items in {items_path}")
    items = [item for _, item in records]
    cfg = dpo.DpoConfig(beta=args.beta)
    report = dpo.margin_report(items, cfg)
    passed, worst = dpo.gradient_check(items, cfg)
    doc = report.to_dict()
    doc["gradient_check"] = {"passed": passed, "worst_rel_error": worst, "rel_tol": 1e-6}
    if args.out:
        io_utils.write_json(doc, args.out)
    print(
        f"dpo-check: n={report.count} beta={cfg.beta} loss={report.mean_loss:.6f} "
        f"mean_margin={report.mean_margin:.6f} positive={report.positive_fraction:.3f}"
    )
    print(f"gradient check: {'PASS' if passed else 'FAIL'} (worst rel error {worst:.3e})")
    return EXIT_OK if passed else EXIT_RUNTIME


def cmd_validate_pairs(args: argparse.Namespace) -> int:
    path = _require_file(args.input, "pairs file")
    try:
        pairs = dataset.import_jsonl(path)
    except dataset.PairInvariantError as exc:
        print(f"invalid pair file: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"validate-pairs: {len(pairs)} valid pairs in {path}")
    return EXIT_OK


# -------------------- parser --------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backend_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--mock", help="mock script JSON; replaces the HTTP backend")
        p.add_argument("--endpoint", help="chat-completions endpoint URL")
        p.add_argument("--model", help="model name")
        p.add_argument("--max-retries", type=int, dest="max_retries")
        p.add_argument("--timeout", type=float)

    p = sub.add_parser("signal-list", help="build and save the model's signal list")
    add_backend_flags(p)
    p.add_argument("--prompts", help="prompt file, one per line")
    p.add_argument("--length", type=_positive_int, help="list length k (default 50)")
    p.add_argument("--parallelism", type=_positive_int)
    p.add_argument("--out", help="signal-list JSON output")
    p.set_defaults(func=cmd_signal_list)

    p = sub.add_parser("generate", help="run the intervention loop, export pairs")
    add_backend_flags(p)
    p.add_argument("--prompts", help="prompt file, one per line")
    p.add_argument("--signals", help="signal-list JSON input")
    p.add_argument("--out", help="pairs JSONL (.gz supported)")
    p.add_argument("--trace", help="audit trace JSONL")
    p.add_argument("--report", help="run report JSON")
    p.add_argument("--max-words", type=_positive_int, dest="max_words")
    p.add_argument("--no-recheck", action="store_true", dest="no_recheck",
                   help="skip the post-rewrite toxicity recheck")
    p.add_argument("--parallelism", type=_positive_int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="score texts with the selected scorer")
    add_backend_flags(p)
    p.add_argument("--texts", required=True, help=".txt (one per line) or .jsonl {id, text}")
    p.add_argument("--scorer", choices=("lexicon", "remote"))
    p.add_argument("--lexicon", help="lexicon JSON (word -> weight)")
    p.add_argument("--api-root", dest="api_root")
    p.add_argument("--rate", type=float, default=1.0, help="remote requests/second")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("metrics", help="aggregate score files into a report")
    add_backend_flags(p)  # accepted everywhere for interface uniformity; unused here
    p.add_argument("--scores", required=True, help="JSONL {id, score, label?}")
    p.add_argument("--logprobs", help="JSONL {id, logprobs: [...]} for corpus PPL")
    p.add_argument("--ppl-scorer", dest="ppl_scorer", default="backend",
                   help="identity of whatever produced the logprobs")
    p.add_argument("--quality", nargs="*", metavar="K=V",
                   help="sim=X sta=Y fl=Z rewrite-quality inputs")
    p.add_argument("--groups", nargs=2, metavar="SCORES",
                   help="two score files to compare as density histograms")
    p.add_argument("--delta", nargs=3, metavar="SCORES",
                   help="prompt/original/rewritten score files for drop regression")
    p.add_argument("--bins", type=_positive_int, default=20)
    p.add_argument("--top-k", type=_positive_int, default=50, dest="top_k")
    p.add_argument("--plot-dir", dest="plot_dir", help="render figures into this directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("eval-detection", help="FPR/FNR/AUC of toxicity judgments")
    add_backend_flags(p)
    p.add_argument("--corpus", help="JSONL {id, text, label}; judged via the backend")
    p.add_argument("--judgments", help="JSONL {id, score, label}; precomputed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_detection)

    p = sub.add_parser("dpo-check", help="loss/margin/gradient check over a log-prob file")
    add_backend_flags(p)
    p.add_argument("--input", required=True, help="JSONL with the four log-probs per item")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dpo_check)

    p = sub.add_parser("validate-pairs", help="validate an exported pair file")
    add_backend_flags(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_validate_pairs)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, scoring.ScoringError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
