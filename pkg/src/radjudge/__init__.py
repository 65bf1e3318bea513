"""Sentence-level LLM judging of generated radiology reports.

The judge scores each sentence of a generated report against the original,
a regression model turns the score frequencies into an overall 0-5 rating,
and the judge's explanation can drive a rewrite of the report.
"""

from .models import (
    AnnotationRecord,
    CaseEvaluation,
    FeatureVector,
    ReportPair,
    Role,
    RunArtifacts,
    SentenceEvaluation,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "CaseEvaluation",
    "FeatureVector",
    "ReportPair",
    "Role",
    "RunArtifacts",
    "SentenceEvaluation",
    "__version__",
]
