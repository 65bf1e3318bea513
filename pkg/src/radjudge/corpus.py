"""Loading input records and persisting run directories.

Input files are JSON lines. A run directory looks like::

    manifest.json
    raw/<case_id>.<iteration>.txt
    evaluations.jsonl
    features.csv
    metrics.csv
    correlations.csv

Only the manifest is mandatory; the other files are written when there is
something to put in them.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
from pathlib import Path
from typing import Iterator
from urllib.parse import quote

from .errors import (
    DuplicateCaseId,
    IoFailure,
    MalformedRecord,
    MissingFile,
    OverallOutOfRange,
    ScoreOutOfDomain,
    UnknownObservation,
)
from .models import (
    CHEXPERT_OBSERVATIONS,
    FEATURE_NAMES,
    AnnotationRecord,
    CaseEvaluation,
    CorrelationCell,
    CorrelationResult,
    FeatureVector,
    ObservationLabels,
    ReportPair,
    Role,
    RunArtifacts,
    SentenceEvaluation,
    format_score,
    is_valid_score,
)

MANIFEST = "manifest.json"
RAW_DIR = "raw"
EVALUATIONS = "evaluations.jsonl"
FEATURES = "features.csv"
METRICS = "metrics.csv"
CORRELATIONS = "correlations.csv"

METRIC_COLUMN_ORDER = (
    "bleu1", "bleu4", "rouge_l", "meteor_lite",
    "accuracy", "precision", "recall", "f1",
    "judge_overall", "regressed_overall",
)


def _iter_json_lines(path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if not isinstance(record, dict):
                raise MalformedRecord(lineno, "record is not a JSON object")
            yield lineno, record


def _require_str(record: dict, key: str, lineno: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value.strip():
        raise MalformedRecord(lineno, f"{key!r} must be a non-empty string")
    return value


def load_report_pairs(path) -> list[ReportPair]:
    """Read original/predicted pairs, preserving file order."""
    pairs: list[ReportPair] = []
    seen: set[str] = set()
    for lineno, rec in _iter_json_lines(path):
        case_id = _require_str(rec, "case_id", lineno)
        original = _require_str(rec, "original", lineno)
        predicted = _require_str(rec, "predicted", lineno)
        if case_id in seen:
            raise DuplicateCaseId(case_id)
        seen.add(case_id)
        pairs.append(ReportPair(case_id, original, predicted))
    return pairs


def _parse_score(value, lineno: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise MalformedRecord(lineno, f"score {value!r} is not a number")
    try:
        number = float(value)
    except ValueError:
        raise MalformedRecord(lineno, f"score {value!r} is not a number") from None
    if not is_valid_score(number):
        raise ScoreOutOfDomain(number)
    return number


def _parse_score_map(rec: dict, key: str, lineno: int) -> dict[str, float]:
    raw = rec.get(key)
    if not isinstance(raw, dict):
        raise MalformedRecord(lineno, f"{key!r} must be an object mapping id to score")
    return {str(k): _parse_score(v, lineno) for k, v in raw.items()}


def load_annotations(path) -> list[AnnotationRecord]:
    records: list[AnnotationRecord] = []
    seen: set[str] = set()
    for lineno, rec in _iter_json_lines(path):
        case_id = _require_str(rec, "case_id", lineno)
        original = _parse_score_map(rec, "original_scores", lineno)
        predicted = _parse_score_map(rec, "predicted_scores", lineno)
        overall = rec.get("overall")
        if isinstance(overall, bool) or not isinstance(overall, (int, float, str)):
            raise MalformedRecord(lineno, "'overall' must be a number")
        try:
            overall = float(overall)
        except ValueError:
            raise MalformedRecord(lineno, "'overall' must be a number") from None
        if not 0.0 <= overall <= 5.0:
            raise OverallOutOfRange(overall)
        if case_id in seen:
            raise DuplicateCaseId(case_id)
        seen.add(case_id)
        records.append(AnnotationRecord(case_id, original, predicted, overall))
    return records


def load_labels(path) -> list[ObservationLabels]:
    """Read CheXpert positive-label sets (one record per case)."""
    vocabulary = set(CHEXPERT_OBSERVATIONS)
    out: list[ObservationLabels] = []
    seen: set[str] = set()
    for lineno, rec in _iter_json_lines(path):
        case_id = _require_str(rec, "case_id", lineno)
        positives = rec.get("positives")
        if not isinstance(positives, list) or not all(isinstance(p, str) for p in positives):
            raise MalformedRecord(lineno, "'positives' must be an array of strings")
        for name in positives:
            if name not in vocabulary:
                raise UnknownObservation(name)
        if case_id in seen:
            raise DuplicateCaseId(case_id)
        seen.add(case_id)
        out.append(ObservationLabels(case_id, frozenset(positives)))
    return out


def write_report_pairs(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps({"case_id": p.case_id, "original": p.original, "predicted": p.predicted}))
            fh.write("\n")


# -- evaluation (de)serialization ------------------------------------------------


def evaluation_to_dict(ev: CaseEvaluation, iteration: int | None = None) -> dict:
    out: dict = {"case_id": ev.case_id}
    if iteration is not None:
        out["iteration"] = iteration
    out["overall"] = ev.overall
    out["explanation"] = ev.explanation
    out["rows"] = [
        {
            "type": r.row_type.value,
            "id": r.identifier,
            "sentence": r.sentence,
            "match_ids": list(r.match_ids),
            "score": format_score(r.score),
        }
        for r in ev.rows
    ]
    out["skipped_lines"] = ev.skipped_lines
    out["warnings"] = list(ev.warnings)
    return out


def evaluation_from_dict(d: dict) -> CaseEvaluation:
    rows = tuple(
        SentenceEvaluation(
            row_type=Role(r["type"]),
            identifier=r["id"],
            sentence=r["sentence"],
            match_ids=tuple(r["match_ids"]),
            score=float(r["score"]),
        )
        for r in d["rows"]
    )
    return CaseEvaluation(
        case_id=d["case_id"],
        rows=rows,
        overall=float(d["overall"]),
        explanation=d["explanation"],
        skipped_lines=int(d.get("skipped_lines", 0)),
        warnings=tuple(d.get("warnings", ())),
    )


def load_evaluations(path) -> dict[str, list[CaseEvaluation]]:
    """Read an evaluations.jsonl file into per-case iteration lists."""
    grouped: dict[str, dict[int, CaseEvaluation]] = {}
    for lineno, rec in _iter_json_lines(path):
        try:
            ev = evaluation_from_dict(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(lineno, str(exc)) from None
        grouped.setdefault(ev.case_id, {})[int(rec.get("iteration", 0))] = ev
    return {cid: [its[i] for i in sorted(its)] for cid, its in grouped.items()}


# -- run directories -------------------------------------------------------------


def _raw_name(case_id: str, iteration: int) -> str:
    return f"{quote(case_id, safe='')}.{iteration}.txt"


def _fmt(value: float) -> str:
    return repr(float(value))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def metric_columns(table: dict[str, dict[str, float]]) -> list[str]:
    present = {k for row in table.values() for k in row}
    known = [c for c in METRIC_COLUMN_ORDER if c in present]
    return known + sorted(present - set(known))


def features_csv(features: dict[str, FeatureVector], targets: dict[str, float] | None = None) -> str:
    targets = targets or {}
    header = ["case_id", *FEATURE_NAMES] + (["target"] if targets else [])
    rows = []
    for cid, fv in features.items():
        row = [cid, *(_fmt(v) for v in fv.as_tuple())]
        if targets:
            row.append(_fmt(targets[cid]) if cid in targets else "")
        rows.append(row)
    return _csv_text(header, rows)


def metrics_csv(table: dict[str, dict[str, float]]) -> str:
    columns = metric_columns(table)
    rows = [
        [cid, *(_fmt(vals[c]) if c in vals else "" for c in columns)]
        for cid, vals in table.items()
    ]
    return _csv_text(["case_id", *columns], rows)


def correlations_csv(cells: list[CorrelationCell]) -> str:
    rows = [
        [
            c.metric_a,
            c.metric_b,
            c.method,
            _fmt(c.result.statistic),
            "" if c.result.p_value is None else _fmt(c.result.p_value),
            str(c.result.n),
        ]
        for c in cells
    ]
    return _csv_text(["metric_a", "metric_b", "method", "statistic", "p_value", "n"], rows)


def read_features_csv(path) -> tuple[dict[str, FeatureVector], dict[str, float]]:
    features: dict[str, FeatureVector] = {}
    targets: dict[str, float] = {}
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                cid = row["case_id"]
                features[cid] = FeatureVector.from_sequence(row[n] for n in FEATURE_NAMES)
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if row.get("target"):
                targets[cid] = float(row["target"])
    return features, targets


def read_metrics_csv(path) -> dict[str, dict[str, float]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    table: dict[str, dict[str, float]] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            cid = row.pop("case_id", None)
            if not cid:
                raise MalformedRecord(lineno, "missing case_id")
            try:
                table[cid] = {k: float(v) for k, v in row.items() if v not in ("", None)}
            except ValueError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
    return table


def read_correlations_csv(path) -> list[CorrelationCell]:
    cells = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            cells.append(
                CorrelationCell(
                    row["metric_a"],
                    row["metric_b"],
                    row["method"],
                    CorrelationResult(
                        float(row["statistic"]),
                        float(row["p_value"]) if row["p_value"] else None,
                        int(row["n"]),
                    ),
                )
            )
    return cells


def _write(path: Path, text: str) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from exc


def persist_run(run_dir, artifacts: RunArtifacts) -> None:
    """Write ``artifacts`` under ``run_dir`` (see module docstring for the layout)."""
    artifacts.check()
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(run_dir, exc.strerror or str(exc)) from exc

    case_ids = list(dict.fromkeys([*artifacts.raw_responses, *artifacts.failures]))
    cases = {}
    for cid in case_ids:
        entry = {
            "iterations": len(artifacts.raw_responses.get(cid, [])),
            "has_raw": cid in artifacts.raw_responses,
        }
        if cid in artifacts.failures:
            entry["status"] = "failed"
            entry["error"] = artifacts.failures[cid]
        else:
            entry["status"] = "ok"
        cases[cid] = entry
    manifest = {
        "run_id": artifacts.run_id,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "metadata": artifacts.metadata,
        "cases": cases,
        "succeeded": sum(1 for c in cases.values() if c["status"] == "ok"),
        "failed": len(artifacts.failures),
    }
    _write(run_dir / MANIFEST, json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")

    if artifacts.raw_responses:
        raw_dir = run_dir / RAW_DIR
        raw_dir.mkdir(exist_ok=True)
        for cid, texts in artifacts.raw_responses.items():
            for i, text in enumerate(texts):
                _write(raw_dir / _raw_name(cid, i), text)

    if artifacts.evaluations:
        lines = [
            json.dumps(evaluation_to_dict(ev, i), ensure_ascii=False)
            for cid, evs in artifacts.evaluations.items()
            for i, ev in enumerate(evs)
        ]
        _write(run_dir / EVALUATIONS, "\n".join(lines) + "\n")
    if artifacts.features:
        _write(run_dir / FEATURES, features_csv(artifacts.features, artifacts.targets))
    if artifacts.metric_table:
        _write(run_dir / METRICS, metrics_csv(artifacts.metric_table))
    if artifacts.correlation_matrix:
        _write(run_dir / CORRELATIONS, correlations_csv(artifacts.correlation_matrix))


def load_run(run_dir) -> RunArtifacts:
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST
    if not manifest_path.is_file():
        raise MissingFile(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    art = RunArtifacts(run_id=manifest["run_id"], metadata=dict(manifest.get("metadata", {})))

    for cid, entry in manifest.get("cases", {}).items():
        if entry.get("status") == "failed":
            art.failures[cid] = entry.get("error", "")
        n = entry.get("iterations", 0)
        if entry.get("has_raw", n > 0):
            texts = []
            for i in range(n):
                with (run_dir / RAW_DIR / _raw_name(cid, i)).open(encoding="utf-8", newline="") as fh:
                    texts.append(fh.read())
            art.raw_responses[cid] = texts

    if (run_dir / EVALUATIONS).is_file():
        art.evaluations = load_evaluations(run_dir / EVALUATIONS)
    if (run_dir / FEATURES).is_file():
        art.features, art.targets = read_features_csv(run_dir / FEATURES)
    if (run_dir / METRICS).is_file():
        art.metric_table = read_metrics_csv(run_dir / METRICS)
    if (run_dir / CORRELATIONS).is_file():
        art.correlation_matrix = read_correlations_csv(run_dir / CORRELATIONS)
    return art


def ensure_fresh_dir(path) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        raise IoFailure(path, "run directory is not empty")
    os.makedirs(path, exist_ok=True)
    return path
