"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RadJudgeError(Exception):
    """Base class for every error raised by radjudge."""


class ConfigError(RadJudgeError):
    pass


# -- ingestion / persistence -------------------------------------------------


class MissingFile(RadJudgeError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")
        self.path = path


class MalformedRecord(RadJudgeError, ValueError):
    def __init__(self, line: int, reason: str = ""):
        msg = f"malformed record at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line = line
        self.reason = reason


class DuplicateCaseId(RadJudgeError, ValueError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case_id {case_id!r}")
        self.case_id = case_id


class ScoreOutOfDomain(RadJudgeError, ValueError):
    def __init__(self, value):
        super().__init__(f"entailment score {value!r} not in {{-1, 0, 0.5, 1}}")
        self.value = value


class OverallOutOfRange(RadJudgeError, ValueError):
    def __init__(self, value):
        super().__init__(f"overall score {value!r} outside [0, 5]")
        self.value = value


class IoFailure(RadJudgeError, OSError):
    def __init__(self, path, reason: str = ""):
        super().__init__(f"I/O failure at {path}" + (f": {reason}" if reason else ""))
        self.path = path


# -- prompting -----------------------------------------------------------------


class EmptyAfterSegmentation(RadJudgeError, ValueError):
    pass


class TemplateInconsistent(RadJudgeError, ValueError):
    def __init__(self, index: int, reason: str = ""):
        super().__init__(f"template {index} output block does not parse: {reason}")
        self.index = index


class EmptyExplanation(RadJudgeError, ValueError):
    pass


# -- gateway ---------------------------------------------------------------------


class GatewayError(RadJudgeError):
    """Base for backend failures; ``iteration`` is set when raised from a sampling loop."""

    iteration: int | None = None


class MissingCredential(GatewayError):
    pass


class FixtureMiss(GatewayError, KeyError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        where = "" if self.iteration is None else f" (iteration {self.iteration})"
        return f"no replay fixture for key {self.key}{where}"


class TransportFailure(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]


# -- parser ----------------------------------------------------------------------


class ParseError(RadJudgeError, ValueError):
    pass


class NoOverallLine(ParseError):
    pass


class UnparsableScore(ParseError):
    def __init__(self, line: str):
        super().__init__(f"unparsable sentence score in line: {line!r}")
        self.line = line


class UnknownIdentifier(ParseError):
    def __init__(self, identifier: str):
        super().__init__(f"unknown sentence identifier {identifier!r}")
        self.identifier = identifier


class EmptyEvaluation(ParseError):
    pass


class UnparsableOverall(ParseError):
    def __init__(self, field: str):
        super().__init__(f"cannot parse overall score from {field!r}")
        self.field = field


class OutOfRange(ParseError):
    def __init__(self, value: float):
        super().__init__(f"overall score {value} outside [0, 5]")
        self.value = value


# -- metrics / statistics --------------------------------------------------------------


class EmptyInput(RadJudgeError, ValueError):
    pass


class CaseMismatch(RadJudgeError, ValueError):
    def __init__(self, case_id: str):
        super().__init__(f"case {case_id!r} missing on one side")
        self.case_id = case_id


class UnknownObservation(RadJudgeError, ValueError):
    def __init__(self, name: str):
        super().__init__(f"unknown CheXpert observation {name!r}")
        self.name = name


class StatisticsError(RadJudgeError, ValueError):
    """Base for statistics failures; ``pair`` names the offending columns inside a matrix."""

    pair: tuple[str, str] | None = None


class LengthMismatch(StatisticsError):
    pass


class DegenerateInput(StatisticsError):
    pass


class ZeroVariance(StatisticsError):
    pass


class ValueOutsideCategories(StatisticsError):
    def __init__(self, value):
        super().__init__(f"value {value!r} outside the category set")
        self.value = value


# -- regression --------------------------------------------------------------------


class RegressionError(RadJudgeError, ValueError):
    pass


class EmptyRole(RegressionError):
    def __init__(self, role: str):
        super().__init__(f"evaluation has no {role} rows")
        self.role = role


class EmptySequence(RegressionError):
    pass


class TooFewSamples(RegressionError):
    pass


class TargetOutOfRange(RegressionError):
    pass


class UntrainedModel(RegressionError):
    pass


class UnsupportedModelKind(RegressionError, ConfigError):
    def __init__(self, kind: str):
        super().__init__(f"unsupported model kind {kind!r}")
        self.kind = kind


class BatchFailed(RadJudgeError):
    pass
