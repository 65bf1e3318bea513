"""Value types shared by the evaluation pipeline.

All types are immutable (frozen dataclasses holding tuples) except
:class:`RunArtifacts`, which is a plain container assembled by the pipeline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

SCORE_DOMAIN: tuple[float, ...] = (-1.0, 0.0, 0.5, 1.0)

_SCORE_TEXT = {-1.0: "-1", 0.0: "0", 0.5: "0.5", 1.0: "1"}


def format_score(score: float) -> str:
    """Exact decimal text for an entailment score ("-1", "0", "0.5", "1")."""
    return _SCORE_TEXT[float(score)]


def is_valid_score(value) -> bool:
    if isinstance(value, bool):
        return False
    try:
        return float(value) in _SCORE_TEXT
    except (TypeError, ValueError):
        return False


class Role(str, enum.Enum):
    ORIGINAL = "original"
    PREDICTED = "predicted"

    @property
    def opposite(self) -> "Role":
        return Role.PREDICTED if self is Role.ORIGINAL else Role.ORIGINAL


@dataclass(frozen=True)
class ReportPair:
    case_id: str
    original: str
    predicted: str


@dataclass(frozen=True)
class AnnotationRecord:
    """Consensus human scores for one case."""

    case_id: str
    original_scores: dict[str, float]
    predicted_scores: dict[str, float]
    overall: float

    @property
    def sentence_scores(self) -> dict[tuple[Role, str], float]:
        scores = {(Role.ORIGINAL, k): v for k, v in self.original_scores.items()}
        scores.update({(Role.PREDICTED, k): v for k, v in self.predicted_scores.items()})
        return scores


@dataclass(frozen=True)
class ObservationLabels:
    case_id: str
    positives: frozenset[str]


@dataclass(frozen=True)
class SentenceUnit:
    role: Role
    identifier: str
    text: str


@dataclass(frozen=True)
class SentenceEvaluation:
    row_type: Role
    identifier: str
    sentence: str
    match_ids: tuple[str, ...]
    score: float


@dataclass(frozen=True)
class CaseEvaluation:
    case_id: str
    rows: tuple[SentenceEvaluation, ...]
    overall: float
    explanation: str
    skipped_lines: int = 0
    warnings: tuple[str, ...] = ()

    def rows_for(self, role: Role) -> tuple[SentenceEvaluation, ...]:
        return tuple(r for r in self.rows if r.row_type is role)


FEATURE_NAMES: tuple[str, ...] = (
    "r_o0", "r_o05", "r_o1", "r_om1",
    "r_p0", "r_p05", "r_p1", "r_pm1",
)


@dataclass(frozen=True)
class FeatureVector:
    """Per-role frequencies of the scores 0, 0.5, 1 and -1 (in that order)."""

    r_o0: float
    r_o05: float
    r_o1: float
    r_om1: float
    r_p0: float
    r_p05: float
    r_p1: float
    r_pm1: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURE_NAMES)

    @classmethod
    def from_sequence(cls, values) -> "FeatureVector":
        values = [float(v) for v in values]
        if len(values) != len(FEATURE_NAMES):
            raise ValueError(f"expected {len(FEATURE_NAMES)} feature values, got {len(values)}")
        return cls(*values)

    def is_consistent(self, tol: float = 1e-9) -> bool:
        o = self.as_tuple()[:4]
        p = self.as_tuple()[4:]
        in_range = all(-tol <= v <= 1 + tol for v in o + p)
        return in_range and abs(math.fsum(o) - 1) <= tol and abs(math.fsum(p) - 1) <= tol


@dataclass(frozen=True)
class CorrelationResult:
    statistic: float
    p_value: float | None
    n: int


@dataclass(frozen=True)
class CorrelationCell:
    metric_a: str
    metric_b: str
    method: str
    result: CorrelationResult


@dataclass
class RunArtifacts:
    """Everything a pipeline run produces, keyed by case id.

    ``evaluations`` holds one parsed evaluation per sampling iteration, aligned
    with ``raw_responses``. ``targets`` carries the human overall score where
    annotations were supplied.
    """

    run_id: str
    raw_responses: dict[str, list[str]] = field(default_factory=dict)
    evaluations: dict[str, list[CaseEvaluation]] = field(default_factory=dict)
    features: dict[str, FeatureVector] = field(default_factory=dict)
    targets: dict[str, float] = field(default_factory=dict)
    metric_table: dict[str, dict[str, float]] = field(default_factory=dict)
    correlation_matrix: list[CorrelationCell] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def check(self) -> None:
        missing = set(self.evaluations) - set(self.raw_responses)
        if missing:
            raise ValueError(f"evaluations without raw responses: {sorted(missing)}")

    def explanation(self, case_id: str) -> str:
        """Explanation of the first iteration that produced one."""
        for ev in self.evaluations.get(case_id, []):
            if ev.explanation.strip():
                return ev.explanation
        return ""


CHEXPERT_OBSERVATIONS: tuple[str, ...] = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Lesion",
    "Airspace Opacity",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
