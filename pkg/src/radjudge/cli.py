"""Command-line entry point: ``radjudge <subcommand> ...``.

Exit codes: 0 when every case succeeds, 1 when some cases fail, 2 for
configuration or usage errors. Settings resolve as command-line flag, then
environment variable, then the ``--config`` TOML file, then built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import tomli

from . import corpus
from .errors import BatchFailed, ConfigError, RadJudgeError
from .gateway import ENV_MODEL
from .pipeline import RunConfig, run_correlation_report, run_evaluation, run_refinement, sentence_kappa_report
from .regression import leave_one_out, load_training_rows, normalize_kind, train

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("radjudge")

_ENV_OVERRIDES = {"model_name": ENV_MODEL}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _read_config_file(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config file {path}: {exc}") from None
    # Allow an optional [radjudge] table; keys may use dashes.
    data = data.get("radjudge", data)
    return {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}


def resolve_config(args: argparse.Namespace, env: dict | None = None) -> RunConfig:
    """Merge flags, environment and config file into a :class:`RunConfig`."""
    env = os.environ if env is None else env
    file_values = _read_config_file(getattr(args, "config", None))
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = dict(file_values)
    for name, var in _ENV_OVERRIDES.items():
        if env.get(var):
            values[name] = env[var]
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


# -- argument definitions ------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML file with default settings (flags and env override it)")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per case")


def _add_judge_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("judge")
    g.add_argument("--instructions", choices=("simplistic", "detailed"), help="instruction set (default: detailed)")
    g.add_argument("--shots", type=int, metavar="K", help="number of worked templates in the prompt (default: 5)")
    g.add_argument("--templates-dir", dest="templates_dir", metavar="DIR",
                   help="directory of template files to use instead of the built-in ones")
    g.add_argument("--iterations", type=int, metavar="N", help="completions sampled per case (default: 3)")
    g.add_argument("--backend", choices=("live", "replay", "record"), help="completion backend (default: replay)")
    g.add_argument("--fixtures", dest="fixtures_dir", metavar="DIR", help="fixture directory for replay/record")
    g.add_argument("--model-name", dest="model_name", metavar="NAME",
                   help=f"chat model name (env {ENV_MODEL}; default: gpt-4)")
    g.add_argument("--temperature", type=float, help="sampling temperature in [0, 2] (default: 0)")
    g.add_argument("--max-tokens", dest="max_tokens", type=int, help="completion token limit (default: 2048)")
    g.add_argument("--max-inflight", dest="max_inflight", type=int, metavar="N",
                   help="concurrent requests and worker threads (default: 4)")
    g.add_argument("--regression-model", dest="regression_model", metavar="FILE",
                   help="trained model JSON used to add a regressed overall score")


def _add_label_options(p: argparse.ArgumentParser, refined: bool = False) -> None:
    g = p.add_argument_group("clinical labels")
    g.add_argument("--pred-labels", dest="pred_labels_path", metavar="FILE",
                   help="observation labels of the predicted reports (JSONL)")
    g.add_argument("--ref-labels", dest="ref_labels_path", metavar="FILE",
                   help="observation labels of the original reports (JSONL)")
    if refined:
        g.add_argument("--refined-labels", dest="refined_labels_path", metavar="FILE",
                       help="observation labels of the refined reports (JSONL)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radjudge", description="Sentence-level LLM evaluation of generated radiology reports.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("evaluate", help="score report pairs with the judge and persist a run directory")
    p.add_argument("--input", dest="input_path", required=True, metavar="FILE", help="report pairs (JSONL)")
    p.add_argument("--run-dir", dest="run_dir", required=True, metavar="DIR", help="output directory (must be new or empty)")
    p.add_argument("--annotations", dest="annotations_path", metavar="FILE",
                   help="human annotations; their overall scores become the features.csv target column")
    _add_judge_options(p)
    _add_label_options(p)
    _add_common(p)

    p = sub.add_parser("regress", help="train a regression aggregator on features and human overall scores")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", metavar="FILE", help="features.csv from an evaluate run")
    src.add_argument("--evaluations", metavar="FILE", help="evaluations.jsonl from an evaluate run")
    p.add_argument("--annotations", metavar="FILE", help="annotations providing the target overall scores")
    p.add_argument("--model", default="random-forest", metavar="KIND",
                   help="random-forest, decision-tree or knn (default: random-forest)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override a hyperparameter, e.g. n_trees=200 (repeatable)")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel workers for forest training")
    p.add_argument("--out", required=True, metavar="FILE", help="where to write the model JSON")
    p.add_argument("--loo", action="store_true", help="also report leave-one-out Kendall tau and MAE")
    _add_common(p)

    p = sub.add_parser("correlate", help="pairwise Kendall tau, Pearson r or Cohen's kappa between score columns")
    p.add_argument("--scores", metavar="FILE", help="metrics.csv with one column per metric")
    p.add_argument("--ground-truth", dest="ground_truth", metavar="FILE", help="annotations with the human overall score")
    p.add_argument("--method", choices=("kendall", "pearson", "kappa"), default="kendall",
                   help="statistic (default: kendall)")
    p.add_argument("--columns", metavar="A,B,...", help="comma-separated metric columns to include (default: all)")
    p.add_argument("--sentence-source", dest="sentence_sources", action="append", default=[], metavar="NAME=FILE",
                   help="sentence-level kappa between raters given as annotation or evaluations files (repeatable)")
    p.add_argument("--out", required=True, metavar="FILE", help="where to write correlations.csv")
    _add_common(p)

    p = sub.add_parser("refine", help="rewrite predicted reports from the judge's explanations and re-evaluate")
    p.add_argument("--prior-run", dest="prior_run", required=True, metavar="DIR", help="run directory from evaluate")
    p.add_argument("--input", dest="input_path", required=True, metavar="FILE", help="report pairs of the prior run")
    p.add_argument("--run-dir", dest="run_dir", required=True, metavar="DIR", help="output directory (must be new or empty)")
    p.add_argument("--sample", type=int, metavar="N", help="refine a random subset of N cases (default: all)")
    p.add_argument("--seed", type=int, help="seed for --sample (default: 0)")
    _add_judge_options(p)
    _add_label_options(p, refined=True)
    _add_common(p)

    p = sub.add_parser("metrics", help="compute NLG and clinical metrics without the judge")
    p.add_argument("--input", dest="input_path", required=True, metavar="FILE", help="report pairs (JSONL)")
    p.add_argument("--out", required=True, metavar="FILE", help="where to write metrics.csv")
    _add_label_options(p)
    _add_common(p)
    return parser


# -- subcommands -------------------------------------------------------------------------


def _exit_for(failures: dict) -> int:
    for cid, err in failures.items():
        print(f"case {cid} failed: {err}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def _cmd_evaluate(args) -> int:
    config = resolve_config(args)
    corpus.ensure_fresh_dir(config.run_dir)
    artifacts = run_evaluation(config)
    n = len(artifacts.evaluations) + len(artifacts.failures)
    print(f"evaluated {len(artifacts.evaluations)}/{n} case(s); run {artifacts.run_id} in {config.run_dir}")
    return _exit_for(artifacts.failures)


def _parse_params(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def _cmd_regress(args) -> int:
    kind = normalize_kind(args.model)
    if args.features:
        features, targets = corpus.read_features_csv(args.features)
    else:
        from .regression import average_features, extract_features

        evaluations = corpus.load_evaluations(args.evaluations)
        features = {cid: average_features([extract_features(ev) for ev in evs]) for cid, evs in evaluations.items()}
        targets = {}
    if args.annotations:
        targets = {a.case_id: a.overall for a in corpus.load_annotations(args.annotations)}
    if not targets:
        raise ConfigError("no target scores: pass --annotations or a features.csv with a target column")
    ids, X, Y = load_training_rows(features, targets)
    params = _parse_params(args.param)
    model = train(kind, X, Y, params, seed=args.seed, n_jobs=args.jobs)
    model.save(args.out)
    print(f"trained {kind} on {len(ids)} case(s); model written to {args.out}")
    if args.loo:
        from .stats import kendall_tau_b

        preds = leave_one_out(kind, X, Y, params, seed=args.seed)
        tau = kendall_tau_b(preds, Y)
        mae = sum(abs(p - y) for p, y in zip(preds, Y)) / len(Y)
        print(f"leave-one-out: kendall tau {tau.statistic:.4f} (p={tau.p_value:.3g}), MAE {mae:.4f}")
    return EXIT_OK


def _cmd_correlate(args) -> int:
    if args.sentence_sources:
        sources = {}
        for item in args.sentence_sources:
            name, sep, path = item.partition("=")
            if not sep:
                raise ConfigError(f"--sentence-source expects NAME=FILE, got {item!r}")
            sources[name] = path
        if len(sources) < 2:
            raise ConfigError("sentence-level kappa needs at least two --sentence-source entries")
        cells, dropped = sentence_kappa_report(sources, args.out)
        if dropped:
            print(f"dropped {dropped} sentence(s) not scored by every source", file=sys.stderr)
    else:
        if not args.scores or not args.ground_truth:
            raise ConfigError("correlate needs --scores and --ground-truth (or --sentence-source)")
        columns = [c.strip() for c in args.columns.split(",")] if args.columns else None
        cells = run_correlation_report(args.scores, args.ground_truth, args.method, args.out, columns)
    for cell in cells:
        print(f"{cell.metric_a} ~ {cell.metric_b}: {cell.result.statistic:.4f}")
    return EXIT_OK


def _cmd_refine(args) -> int:
    config = resolve_config(args)
    corpus.ensure_fresh_dir(config.run_dir)
    prior = corpus.load_run(args.prior_run)
    table, after = run_refinement(config, prior)
    print(f"refined {table.n_cases} case(s); overall column from {table.overall_source} scores")
    for name, (before, after_value) in table.columns.items():
        print(f"  {name:18s} {before:.4f} -> {after_value:.4f}")
    return _exit_for(after.failures)


def _cmd_metrics(args) -> int:
    from .ce_metrics import per_case_ce_scores
    from .nlg_metrics import nlg_scores

    pairs = corpus.load_report_pairs(args.input_path)
    table = {p.case_id: nlg_scores(p.predicted, p.original) for p in pairs}
    if args.pred_labels_path and args.ref_labels_path:
        ce = per_case_ce_scores(corpus.load_labels(args.pred_labels_path), corpus.load_labels(args.ref_labels_path))
        for cid, scores in ce.items():
            if cid in table:
                table[cid].update(scores.as_dict())
    elif args.pred_labels_path or args.ref_labels_path:
        raise ConfigError("clinical metrics need both --pred-labels and --ref-labels")
    Path(args.out).write_text(corpus.metrics_csv(table), encoding="utf-8")
    print(f"wrote metrics for {len(table)} case(s) to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "evaluate": _cmd_evaluate,
    "regress": _cmd_regress,
    "correlate": _cmd_correlate,
    "refine": _cmd_refine,
    "metrics": _cmd_metrics,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"radjudge: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"radjudge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BatchFailed as exc:
        print(f"radjudge: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except RadJudgeError as exc:
        print(f"radjudge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
