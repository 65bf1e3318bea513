"""Sentence segmentation and prompt assembly for the judge and the refiner."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import (
    EmptyAfterSegmentation,
    EmptyExplanation,
    ParseError,
    RadJudgeError,
    TemplateInconsistent,
)
from .models import ReportPair, Role, SentenceUnit
from .parser import parse_evaluation

INPUT_MARKER = "--- input ---"
OUTPUT_MARKER = "--- output ---"


class InstructionKind(str, enum.Enum):
    SIMPLISTIC = "simplistic"
    DETAILED = "detailed"


@dataclass(frozen=True)
class TemplateCase:
    input_block: str
    output_block: str
    name: str = ""


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    shot_blocks: tuple[TemplateCase, ...]
    query_block: str

    @property
    def user_text(self) -> str:
        parts = []
        for shot in self.shot_blocks:
            parts.append(f"Input:\n{shot.input_block}\nOutput:\n{shot.output_block}\n")
        parts.append(f"Input:\n{self.query_block}\nOutput:\n")
        return "\n".join(parts)

    def full_text(self) -> str:
        return f"{self.system_text}\n\n{self.user_text}"


def identifier(index: int, role: Role) -> str:
    """Spreadsheet-style letters: 0 -> a, 25 -> z, 26 -> aa (uppercase for predictions)."""
    if index < 0:
        raise ValueError("index must be non-negative")
    letters = ""
    n = index + 1
    while n:
        n, rem = divmod(n - 1, 26)
        letters = chr(ord("a") + rem) + letters
    return letters if role is Role.ORIGINAL else letters.upper()


def segment_report(text: str, role: Role | str) -> list[SentenceUnit]:
    """Split on '.', trim, drop empty fragments and label sentences a, b, ... / A, B, ...

    Decimal numbers ("1.5 cm") are split as well; this mirrors the plain
    period rule the prompts were designed around.
    """
    role = Role(role)
    fragments = [frag.strip() for frag in text.split(".")]
    fragments = [frag for frag in fragments if frag]
    if not fragments:
        raise EmptyAfterSegmentation(f"no sentences in {text!r}")
    return [SentenceUnit(role, identifier(i, role), frag) for i, frag in enumerate(fragments)]


def render_units(units: Sequence[SentenceUnit]) -> str:
    label = "Original" if units[0].role is Role.ORIGINAL else "Prediction"
    body = " ".join(f"{u.identifier}. {u.text}" for u in units)
    return f'{label} "{body}."'


def render_pair(original: Sequence[SentenceUnit], predicted: Sequence[SentenceUnit]) -> str:
    return f"{render_units(original)}\n{render_units(predicted)}"


def segment_pair(pair: ReportPair) -> tuple[list[SentenceUnit], list[SentenceUnit]]:
    return segment_report(pair.original, Role.ORIGINAL), segment_report(pair.predicted, Role.PREDICTED)


# -- resources ---------------------------------------------------------------------


def _resource_text(*parts: str) -> str:
    return resources.files("radjudge").joinpath("resources", *parts).read_text(encoding="utf-8")


def load_instruction(kind: InstructionKind | str) -> str:
    kind = InstructionKind(kind)
    return _resource_text("instructions", f"{kind.value}.txt").strip()


def refinement_instruction() -> str:
    return _resource_text("instructions", "refine.txt").strip()


def parse_template(text: str, name: str = "") -> TemplateCase:
    if INPUT_MARKER not in text or OUTPUT_MARKER not in text:
        raise RadJudgeError(f"template {name or '<text>'} lacks input/output markers")
    head, _, output = text.partition(OUTPUT_MARKER)
    _, _, input_block = head.partition(INPUT_MARKER)
    return TemplateCase(input_block.strip("\n").strip(), output.strip("\n").strip(), name)


def load_template_file(path) -> TemplateCase:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), path.stem)


def builtin_templates() -> list[TemplateCase]:
    """The shipped evaluation templates, in file-name order."""
    folder = resources.files("radjudge").joinpath("resources", "templates")
    names = sorted(p.name for p in folder.iterdir() if p.name.endswith(".txt"))
    return [parse_template(folder.joinpath(n).read_text(encoding="utf-8"), n[:-4]) for n in names]


def load_templates(directory=None) -> list[TemplateCase]:
    if directory is None:
        return builtin_templates()
    paths = sorted(Path(directory).glob("*.txt"))
    return [load_template_file(p) for p in paths]


def refinement_template() -> TemplateCase:
    return parse_template(_resource_text("refine_template.txt"), "refine")


# -- prompt construction -------------------------------------------------------------


def check_template(shot: TemplateCase, index: int = 0) -> None:
    try:
        parse_evaluation(shot.output_block)
    except ParseError as exc:
        raise TemplateInconsistent(index, str(exc)) from exc


def build_evaluation_prompt(
    pair: ReportPair,
    kind: InstructionKind | str,
    shots: Sequence[TemplateCase],
) -> PromptBundle:
    for i, shot in enumerate(shots):
        check_template(shot, i)
    original, predicted = segment_pair(pair)
    return PromptBundle(
        system_text=load_instruction(kind),
        shot_blocks=tuple(shots),
        query_block=render_pair(original, predicted),
    )


def _quoted(text: str) -> str:
    return '"' + text.replace('"', "'") + '"'


def build_refinement_prompt(predicted: str, explanation: str, shot: TemplateCase | None = None) -> PromptBundle:
    """Ask for a revised report from the AI report and the judge's review only."""
    if not explanation or not explanation.strip():
        raise EmptyExplanation("refinement needs a non-empty explanation")
    shot = shot if shot is not None else refinement_template()
    query = f"Report,{_quoted(predicted.strip())}\nReview,{_quoted(explanation.strip())}"
    return PromptBundle(system_text=refinement_instruction(), shot_blocks=(shot,), query_block=query)


def extract_refined_report(text: str) -> str:
    """Pull the report body out of a ``Refined Report,"..."`` style reply."""
    stripped = text.strip()
    lowered = stripped.lower()
    for label in ("refined report", "revised report"):
        pos = lowered.find(label)
        if pos >= 0:
            stripped = stripped[pos + len(label):].lstrip(" :,\t")
            break
    stripped = stripped.strip()
    if len(stripped) >= 2 and stripped[0] in "\"“" and stripped[-1] in "\"”":
        stripped = stripped[1:-1]
    return stripped.strip()
