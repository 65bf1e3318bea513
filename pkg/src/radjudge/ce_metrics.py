"""Clinical-efficacy scores over positive CheXpert observation labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import CaseMismatch, UnknownObservation
from .models import CHEXPERT_OBSERVATIONS, ObservationLabels

N_OBSERVATIONS = len(CHEXPERT_OBSERVATIONS)


@dataclass(frozen=True)
class CeScores:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _validate(labels: Sequence[ObservationLabels]) -> dict[str, frozenset[str]]:
    vocabulary = set(CHEXPERT_OBSERVATIONS)
    out = {}
    for rec in labels:
        for name in rec.positives:
            if name not in vocabulary:
                raise UnknownObservation(name)
        out[rec.case_id] = rec.positives
    return out


def confusion_counts(pred: frozenset[str], ref: frozenset[str]) -> tuple[int, int, int, int]:
    tp = len(pred & ref)
    fp = len(pred - ref)
    fn = len(ref - pred)
    return tp, fp, fn, N_OBSERVATIONS - tp - fp - fn


def scores_from_counts(tp: int, fp: int, fn: int, tn: int) -> CeScores:
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return CeScores((tp + tn) / total, precision, recall, f1)


def ce_scores(pred: Sequence[ObservationLabels], ref: Sequence[ObservationLabels]) -> CeScores:
    """Micro-averaged accuracy/precision/recall/F1 over every (case, observation) cell."""
    pred_map = _validate(pred)
    ref_map = _validate(ref)
    for cid in sorted(pred_map.keys() ^ ref_map.keys()):
        raise CaseMismatch(cid)
    totals = [0, 0, 0, 0]
    for cid, ref_pos in ref_map.items():
        for k, v in enumerate(confusion_counts(pred_map[cid], ref_pos)):
            totals[k] += v
    return scores_from_counts(*totals)


def per_case_ce_scores(pred: Sequence[ObservationLabels], ref: Sequence[ObservationLabels]) -> dict[str, CeScores]:
    pred_map = _validate(pred)
    ref_map = _validate(ref)
    for cid in sorted(pred_map.keys() ^ ref_map.keys()):
        raise CaseMismatch(cid)
    return {cid: scores_from_counts(*confusion_counts(pred_map[cid], ref_map[cid])) for cid in ref_map}
