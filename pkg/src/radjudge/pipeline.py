"""Batch orchestration: evaluate, refine and correlate."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import corpus
from .ce_metrics import ce_scores, per_case_ce_scores
from .errors import BatchFailed, CaseMismatch, ConfigError, ParseError, RadJudgeError
from .gateway import (
    DEFAULT_MAX_INFLIGHT,
    DEFAULT_MAX_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    Backend,
    CompletionRequest,
    evaluate_with_iterations,
    make_backend,
)
from .models import (
    AnnotationRecord,
    CaseEvaluation,
    CorrelationCell,
    FeatureVector,
    ObservationLabels,
    ReportPair,
    Role,
    RunArtifacts,
)
from .nlg_metrics import METEOR_VARIANT, nlg_scores
from .parser import parse_evaluation
from .prompting import (
    TemplateCase,
    build_evaluation_prompt,
    build_refinement_prompt,
    extract_refined_report,
    load_templates,
    refinement_template,
    segment_pair,
)
from .regression import RegressionModel, average_features, extract_features
from .stats import ScoreTable, correlation_matrix, pooled_table

log = logging.getLogger(__name__)

BEFORE_AFTER_COLUMNS = (
    "bleu1", "meteor_lite", "rouge_l", "accuracy", "precision", "recall", "f1", "regressed_overall",
)


@dataclass
class RunConfig:
    input_path: str | None = None
    run_dir: str | None = None
    instructions: str = "detailed"
    shots: int = 5
    templates_dir: str | None = None
    iterations: int = 3
    backend: str = "replay"
    fixtures_dir: str | None = None
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    max_inflight: int = DEFAULT_MAX_INFLIGHT
    regression_model: str | None = None
    annotations_path: str | None = None
    pred_labels_path: str | None = None
    ref_labels_path: str | None = None
    refined_labels_path: str | None = None
    sample: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.shots < 0:
            raise ConfigError("shots must be >= 0")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.instructions not in ("simplistic", "detailed"):
            raise ConfigError(f"unknown instruction kind {self.instructions!r}")
        if self.backend not in ("live", "replay", "record"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend in ("replay", "record") and not self.fixtures_dir:
            raise ConfigError(f"the {self.backend} backend needs a fixtures directory")


@dataclass
class CaseResult:
    case_id: str
    raw: list[str] = field(default_factory=list)
    evaluations: list[CaseEvaluation] = field(default_factory=list)
    features: FeatureVector | None = None
    judge_overall: float | None = None
    error: str | None = None


@dataclass
class BeforeAfterTable:
    columns: dict[str, tuple[float, float]]
    n_cases: int
    overall_source: str = "regressed"

    def improved(self) -> dict[str, bool]:
        return {k: after >= before for k, (before, after) in self.columns.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = list(self.columns)
        writer.writerow(["", *names])
        writer.writerow(["before", *(repr(self.columns[n][0]) for n in names)])
        writer.writerow(["after", *(repr(self.columns[n][1]) for n in names)])
        return buf.getvalue()


# -- helpers --------------------------------------------------------------------------


def _labels_by_case(path) -> dict[str, ObservationLabels] | None:
    if not path:
        return None
    return {rec.case_id: rec for rec in corpus.load_labels(path)}


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest() if path else ""


def make_run_id(config: RunConfig, extra: str = "") -> str:
    """Deterministic id from the configuration (minus run_dir) and input contents."""
    cfg = asdict(config)
    cfg.pop("run_dir", None)
    digest = hashlib.sha256()
    digest.update(json.dumps(cfg, sort_keys=True).encode())
    for key in ("input_path", "annotations_path", "pred_labels_path", "ref_labels_path", "regression_model"):
        digest.update(_file_digest(cfg.get(key)).encode())
    digest.update(extra.encode())
    return digest.hexdigest()[:12]


def select_templates(config: RunConfig) -> list[TemplateCase]:
    templates = load_templates(config.templates_dir)
    if config.shots > len(templates):
        raise ConfigError(f"{config.shots} shots requested but only {len(templates)} templates available")
    return templates[: config.shots]


def evaluate_case(
    pair: ReportPair,
    backend: Backend,
    shots: Sequence[TemplateCase],
    config: RunConfig,
) -> CaseResult:
    """Prompt, sample and parse one pair; errors are captured, not raised."""
    result = CaseResult(pair.case_id)
    try:
        original, predicted = segment_pair(pair)
        bundle = build_evaluation_prompt(pair, config.instructions, shots)
        request = CompletionRequest(
            bundle.system_text, bundle.user_text, config.temperature, config.max_tokens, config.model_name
        )
        responses = evaluate_with_iterations(backend, request, config.iterations)
        result.raw = [r.text for r in responses]
        for text in result.raw:
            result.evaluations.append(parse_evaluation(text, original + predicted, pair.case_id))
        result.features = average_features([extract_features(ev) for ev in result.evaluations])
        result.judge_overall = _mean([ev.overall for ev in result.evaluations])
    except RadJudgeError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        result.evaluations = []
        log.warning("case %s failed: %s", pair.case_id, result.error)
    else:
        log.info("case %s: overall %.2f over %d iteration(s)", pair.case_id, result.judge_overall, len(result.raw))
    return result


def evaluate_pairs(
    pairs: Sequence[ReportPair],
    config: RunConfig,
    backend: Backend,
    *,
    model: RegressionModel | None = None,
    annotations: Mapping[str, AnnotationRecord] | None = None,
    pred_labels: Mapping[str, ObservationLabels] | None = None,
    ref_labels: Mapping[str, ObservationLabels] | None = None,
    run_id: str = "",
) -> RunArtifacts:
    shots = select_templates(config)
    with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
        results = list(pool.map(lambda p: evaluate_case(p, backend, shots, config), pairs))

    artifacts = RunArtifacts(run_id=run_id)
    artifacts.metadata = {
        "instructions": config.instructions,
        "shots": str(config.shots),
        "iterations": str(config.iterations),
        "backend": config.backend,
        "model_name": config.model_name,
        "meteor": METEOR_VARIANT,
        "regression_model": Path(config.regression_model).name if config.regression_model else "",
    }
    by_id = {p.case_id: p for p in pairs}
    ce_cases = None
    if pred_labels is not None and ref_labels is not None:
        ok_ids = [r.case_id for r in results if r.error is None]
        ce_cases = per_case_ce_scores(
            [pred_labels[c] for c in ok_ids if c in pred_labels],
            [ref_labels[c] for c in ok_ids if c in ref_labels],
        )

    for res in results:
        if res.raw:
            artifacts.raw_responses[res.case_id] = res.raw
        if res.error is not None:
            artifacts.failures[res.case_id] = res.error
            continue
        artifacts.evaluations[res.case_id] = res.evaluations
        artifacts.features[res.case_id] = res.features
        if annotations and res.case_id in annotations:
            artifacts.targets[res.case_id] = annotations[res.case_id].overall
        pair = by_id[res.case_id]
        row = nlg_scores(pair.predicted, pair.original)
        if ce_cases is not None:
            row.update(ce_cases[res.case_id].as_dict())
        row["judge_overall"] = res.judge_overall
        if model is not None:
            row["regressed_overall"] = model.predict_many([res.features])[0]
        artifacts.metric_table[res.case_id] = row
    return artifacts


def run_evaluation(config: RunConfig, backend: Backend | None = None) -> RunArtifacts:
    """Evaluate every pair in ``config.input_path`` and persist the run.

    Per-case failures land in ``artifacts.failures`` (and the manifest);
    :class:`BatchFailed` is raised only when every case fails.
    """
    config.validate()
    if not config.input_path:
        raise ConfigError("no input file given")
    pairs = corpus.load_report_pairs(config.input_path)
    backend = backend or make_backend(config.backend, config.fixtures_dir, max_inflight=config.max_inflight)
    model = RegressionModel.load(config.regression_model) if config.regression_model else None
    annotations = {a.case_id: a for a in corpus.load_annotations(config.annotations_path)} if config.annotations_path else None

    artifacts = evaluate_pairs(
        pairs,
        config,
        backend,
        model=model,
        annotations=annotations,
        pred_labels=_labels_by_case(config.pred_labels_path),
        ref_labels=_labels_by_case(config.ref_labels_path),
        run_id=make_run_id(config),
    )
    if config.run_dir:
        corpus.persist_run(config.run_dir, artifacts)
    if pairs and len(artifacts.failures) == len(pairs):
        raise BatchFailed(f"all {len(pairs)} cases failed")
    return artifacts


# -- refinement ------------------------------------------------------------------------


def _overall_column(table: Mapping[str, Mapping[str, float]], ids: Sequence[str]) -> tuple[str, list[float]]:
    if all("regressed_overall" in table[c] for c in ids):
        return "regressed", [table[c]["regressed_overall"] for c in ids]
    return "judge", [table[c]["judge_overall"] for c in ids]


def _side_metrics(
    ids: Sequence[str],
    pairs: Mapping[str, ReportPair],
    candidates: Mapping[str, str],
    table: Mapping[str, Mapping[str, float]],
    labels: Mapping[str, ObservationLabels] | None,
    ref_labels: Mapping[str, ObservationLabels] | None,
) -> tuple[dict[str, float], str]:
    scores = [nlg_scores(candidates[c], pairs[c].original) for c in ids]
    out = {k: _mean([s[k] for s in scores]) for k in ("bleu1", "meteor_lite", "rouge_l")}
    if labels is not None and ref_labels is not None:
        out.update(ce_scores([labels[c] for c in ids], [ref_labels[c] for c in ids]).as_dict())
    source, overall = _overall_column(table, ids)
    out["regressed_overall"] = _mean(overall)
    return out, source


def run_refinement(
    config: RunConfig,
    prior_run: RunArtifacts,
    backend: Backend | None = None,
) -> tuple[BeforeAfterTable, RunArtifacts]:
    """Rewrite predicted reports from the judge's explanations and re-evaluate them.

    The refinement prompt carries only the predicted report and the
    explanation; the original report never enters it.
    """
    config.validate()
    if not config.input_path:
        raise ConfigError("refinement needs the report-pair file of the prior run")
    pairs = {p.case_id: p for p in corpus.load_report_pairs(config.input_path)}
    backend = backend or make_backend(config.backend, config.fixtures_dir, max_inflight=config.max_inflight)
    model = RegressionModel.load(config.regression_model) if config.regression_model else None

    candidates = [c for c in prior_run.evaluations if c in pairs]
    if config.sample is not None and config.sample < len(candidates):
        candidates = sorted(random.Random(config.seed).sample(sorted(candidates), config.sample), key=candidates.index)

    shot = refinement_template()
    refine_raw: dict[str, str] = {}
    refined: dict[str, str] = {}
    failures: dict[str, str] = {}
    for cid in candidates:
        try:
            bundle = build_refinement_prompt(pairs[cid].predicted, prior_run.explanation(cid), shot)
            request = CompletionRequest(
                bundle.system_text, bundle.user_text, config.temperature, config.max_tokens, config.model_name
            )
            text = backend.complete(request, 0).text
            refine_raw[cid] = text
            report = extract_refined_report(text)
            if not report:
                raise ParseError("refiner returned an empty report")
            refined[cid] = report
        except RadJudgeError as exc:
            failures[cid] = f"{type(exc).__name__}: {exc}"
            log.warning("refinement of %s failed: %s", cid, failures[cid])

    refined_pairs = [ReportPair(cid, pairs[cid].original, refined[cid]) for cid in candidates if cid in refined]
    after = evaluate_pairs(refined_pairs, config, backend, model=model, run_id=make_run_id(config, "refine"))
    after.failures = {**failures, **after.failures}
    after.metadata["stage"] = "refinement"

    ids = [p.case_id for p in refined_pairs if p.case_id in after.metric_table and p.case_id in prior_run.metric_table]
    if not ids:
        if config.run_dir:
            corpus.persist_run(config.run_dir, after)
        raise BatchFailed("no case made it through refinement and re-evaluation")

    ref_labels = _labels_by_case(config.ref_labels_path)
    pred_labels = _labels_by_case(config.pred_labels_path)
    refined_labels = _labels_by_case(config.refined_labels_path)
    use_ce = ref_labels is not None and pred_labels is not None and refined_labels is not None
    before, source_before = _side_metrics(
        ids, pairs, {c: pairs[c].predicted for c in ids}, prior_run.metric_table,
        pred_labels if use_ce else None, ref_labels if use_ce else None,
    )
    after_vals, source_after = _side_metrics(
        ids, pairs, refined, after.metric_table,
        refined_labels if use_ce else None, ref_labels if use_ce else None,
    )
    table = BeforeAfterTable(
        {k: (before[k], after_vals[k]) for k in BEFORE_AFTER_COLUMNS if k in before},
        n_cases=len(ids),
        overall_source=source_after if source_before == source_after else f"{source_before}/{source_after}",
    )

    if config.run_dir:
        run_dir = Path(config.run_dir)
        corpus.persist_run(run_dir, after)
        refine_dir = run_dir / "refine"
        refine_dir.mkdir(exist_ok=True)
        for cid, text in refine_raw.items():
            with (refine_dir / f"{corpus.quote(cid, safe='')}.txt").open("w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        corpus.write_report_pairs(run_dir / "refined_pairs.jsonl", refined_pairs)
        (run_dir / "before_after.csv").write_text(table.to_csv(), encoding="utf-8")
    return table, after


# -- correlation -----------------------------------------------------------------------


def build_score_table(
    metric_table: Mapping[str, Mapping[str, float]],
    ground_truth: Mapping[str, float],
    columns: Sequence[str] | None = None,
) -> ScoreTable:
    for cid in sorted(set(metric_table) ^ set(ground_truth)):
        raise CaseMismatch(cid)
    ids = sorted(metric_table)
    if columns is None:
        columns = [c for c in corpus.metric_columns(dict(metric_table)) if all(c in metric_table[i] for i in ids)]
    cols = {}
    for name in columns:
        if name == "ground_truth":
            continue
        missing = [i for i in ids if name not in metric_table[i]]
        if missing:
            raise ConfigError(f"column {name!r} missing for case {missing[0]!r}")
        cols[name] = [metric_table[i][name] for i in ids]
    cols["ground_truth"] = [ground_truth[i] for i in ids]
    return ScoreTable(cols, ids)


def run_correlation_report(
    score_table_path,
    ground_truth_path,
    method: str = "kendall",
    out_path=None,
    columns: Sequence[str] | None = None,
) -> list[CorrelationCell]:
    """Pairwise statistics between metric columns and the human overall score."""
    metrics = corpus.read_metrics_csv(score_table_path)
    truth = {a.case_id: a.overall for a in corpus.load_annotations(ground_truth_path)}
    table = build_score_table(metrics, truth, columns)
    cells = correlation_matrix(table, method)
    if out_path:
        Path(out_path).write_text(corpus.correlations_csv(cells), encoding="utf-8")
    return cells


def sentence_scores_from_file(path) -> dict[tuple[str, str, str], float]:
    """Per-sentence scores keyed by (case_id, role, identifier).

    Accepts an annotation file or an evaluations.jsonl; for the latter the
    first iteration of each case is used.
    """
    with open(path, encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip()), "")
    if not first:
        return {}
    if "rows" in json.loads(first):
        out = {}
        for cid, evs in corpus.load_evaluations(path).items():
            for row in evs[0].rows:
                out[(cid, row.row_type.value, row.identifier)] = row.score
        return out
    out = {}
    for rec in corpus.load_annotations(path):
        for (role, ident), score in rec.sentence_scores.items():
            out[(rec.case_id, role.value, ident)] = score
    return out


def sentence_kappa_report(sources: Mapping[str, str], out_path=None) -> tuple[list[CorrelationCell], int]:
    """Pooled sentence-level Cohen's kappa between every pair of sources.

    Returns the cells and the number of sentence keys dropped because some
    source lacked them.
    """
    table, dropped = pooled_table({name: sentence_scores_from_file(p) for name, p in sources.items()})
    cells = correlation_matrix(table, "kappa")
    if out_path:
        Path(out_path).write_text(corpus.correlations_csv(cells), encoding="utf-8")
    return cells, dropped


__all__ = [
    "BeforeAfterTable",
    "RunConfig",
    "Role",
    "build_score_table",
    "evaluate_case",
    "evaluate_pairs",
    "make_run_id",
    "run_correlation_report",
    "run_evaluation",
    "run_refinement",
    "sentence_kappa_report",
]
