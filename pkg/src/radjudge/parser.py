"""Parse the judge's CSV-shaped evaluation text.

Judges are asked for rows of ``Type,ID,Sentence,Match ID,Score,`` followed by a
terminal ``,,-,,,<overall>, "<explanation>"`` line. Real output drifts: the Type
column is sometimes wrong, sentences contain commas, the match column goes
missing, and chatter or markdown fences surround the table. The parser reads
fields positionally from both ends and treats identifier case as the source of
truth for the row role.
"""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .errors import (
    EmptyEvaluation,
    NoOverallLine,
    OutOfRange,
    UnknownIdentifier,
    UnparsableOverall,
    UnparsableScore,
)
from .models import CaseEvaluation, Role, SentenceEvaluation, SentenceUnit, is_valid_score

_TYPE_WORDS = {
    "original": Role.ORIGINAL,
    "orig": Role.ORIGINAL,
    "reference": Role.ORIGINAL,
    "prediction": Role.PREDICTED,
    "predicted": Role.PREDICTED,
    "pred": Role.PREDICTED,
}
_ID_RE = re.compile(r"^[A-Za-z]{1,3}$")
_OVERALL_RE = re.compile(r"^([+-]?\d+(?:\.\d+)?)\s*(?:/\s*(\d+(?:\.\d+)?))?$")
_QUOTES = "\"'“”‘’`"


def role_for_identifier(identifier: str) -> Role | None:
    if identifier.islower():
        return Role.ORIGINAL
    if identifier.isupper():
        return Role.PREDICTED
    return None


def parse_match_ids(field: str) -> list[str]:
    """``"-"`` or blank gives ``[]``; otherwise a comma list, order preserved."""
    text = field.strip().strip(_QUOTES).strip()
    if text in ("", "-"):
        return []
    return [part.strip().strip(_QUOTES) for part in text.split(",") if part.strip().strip(_QUOTES)]


def parse_overall(field: str) -> float:
    text = field.strip().strip(_QUOTES).strip()
    m = _OVERALL_RE.match(text)
    if not m:
        raise UnparsableOverall(field)
    if m.group(2) is not None and float(m.group(2)) != 5.0:
        raise UnparsableOverall(field)
    value = float(m.group(1))
    if not 0.0 <= value <= 5.0:
        raise OutOfRange(value)
    return value


def _split(line: str) -> list[tuple[str, int, int]]:
    """CSV fields as ``(value, start, end)`` with spans into ``line``.

    Follows ``csv`` quoting (doubled quotes escape, leading spaces before a
    quote are skipped, an unterminated quote runs to the end of the line);
    the spans let callers recover text verbatim.
    """
    fields = []
    i, n = 0, len(line)
    while True:
        start = i
        j = i
        while j < n and line[j] == " ":
            j += 1
        if j < n and line[j] == '"':
            j += 1
            buf = []
            while True:
                if j >= n:  # unterminated quote: the rest of the line is the field
                    fields.append(("".join(buf), start, n))
                    return fields
                if line[j] == '"':
                    if j + 1 < n and line[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    j += 1
                    break
                buf.append(line[j])
                j += 1
            end = line.find(",", j)
            end = n if end < 0 else end
            value = "".join(buf) + line[j:end]
        else:
            end = line.find(",", i)
            end = n if end < 0 else end
            value = line[i:end]
        fields.append((value, start, end))
        if end >= n:
            return fields
        i = end + 1


def _looks_like_overall(field: str) -> bool:
    return bool(_OVERALL_RE.match(field.strip().strip(_QUOTES).strip()))


def _is_match_field(field: str, known: set[str] | None) -> bool:
    if field in ("", "-"):
        return True
    parts = parse_match_ids(field)
    if not parts or not all(_ID_RE.match(p) for p in parts):
        return False
    return known is None or all(p in known for p in parts)


def _unquote_text(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1]
    elif text and text[0] in _QUOTES and text.count(text[0]) == 1:
        text = text[1:]  # truncated reply: opening quote never closed
    return text.strip().replace('""', '"')


def parse_evaluation(
    raw: str,
    pair_units: Sequence[SentenceUnit] | None = None,
    case_id: str = "",
) -> CaseEvaluation:
    """Turn one judge response into a :class:`CaseEvaluation`.

    When ``pair_units`` is given, row identifiers and match ids are checked
    against the segmented pair and unknown ones raise :class:`UnknownIdentifier`.
    Unrecognised lines are skipped and counted in ``skipped_lines``.
    """
    if not raw or not raw.strip():
        raise EmptyEvaluation("empty judge response")

    known_ids = None if pair_units is None else {u.identifier for u in pair_units}
    rows: dict[tuple[Role, str], SentenceEvaluation] = {}
    warnings: list[str] = []
    overall: float | None = None
    explanation = ""
    skipped = 0

    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("```"):
            skipped += 1
            continue
        if stripped.lower().startswith("explanation"):
            text = re.sub(r"^explanation\s*[:,]?\s*", "", stripped, flags=re.IGNORECASE)
            if text:
                explanation = _unquote_text(text)
            continue

        spans = _split(stripped)
        raw_fields = [v for v, _, _ in spans]
        fields = [f.strip() for f in raw_fields]
        while fields and fields[-1] == "":
            fields.pop()
            raw_fields.pop()
            spans.pop()
        if len(fields) >= 2 and fields[0].isdigit() and fields[1].lower() in _TYPE_WORDS:
            fields, raw_fields, spans = fields[1:], raw_fields[1:], spans[1:]

        is_overall = (len(fields) >= 3 and fields[0] == "" and fields[1] == "") or (
            bool(fields) and fields[0].lower().startswith("overall")
        )
        if is_overall:
            start = 1 if fields[0] else 2
            for idx in range(start, len(fields)):
                if _looks_like_overall(fields[idx]):
                    overall = parse_overall(fields[idx])
                    rest = stripped[spans[idx + 1][1]:] if idx + 1 < len(spans) else ""
                    if rest.strip():
                        explanation = _unquote_text(rest)
                    break
            else:
                skipped += 1
            continue

        if len(fields) >= 4 and fields[0].lower() in _TYPE_WORDS and _ID_RE.match(fields[1]):
            identifier = fields[1]
            declared = _TYPE_WORDS[fields[0].lower()]
            role = role_for_identifier(identifier) or declared
            if role is not declared:
                warnings.append(f"row {identifier}: type column says {declared.value}")
            try:
                score = float(fields[-1])
            except ValueError:
                raise UnparsableScore(line) from None
            if not is_valid_score(score):
                raise UnparsableScore(line)

            middle = spans[2:-1]
            match_ids: list[str] = []
            if len(middle) >= 2 and _is_match_field(fields[-2], known_ids):
                match_ids = parse_match_ids(fields[-2])
                middle = middle[:-1]
            if len(middle) == 1:
                sentence = middle[0][0].strip()
            else:
                sentence = stripped[middle[0][1]:middle[-1][2]].strip()

            key = (role, identifier)
            if key in rows:
                warnings.append(f"row {identifier} repeated; last one kept")
            rows[key] = SentenceEvaluation(role, identifier, sentence, tuple(match_ids), score)
            continue

        skipped += 1

    if not rows:
        raise EmptyEvaluation("no sentence rows found")
    if overall is None:
        raise NoOverallLine("no overall score line found")
    roles = {r.row_type for r in rows.values()}
    if Role.ORIGINAL not in roles or Role.PREDICTED not in roles:
        raise EmptyEvaluation("evaluation needs at least one original and one predicted row")

    ids_by_role = _ids_by_role(pair_units) if pair_units is not None else _ids_by_role(rows.values(), attr="row_type")
    for row in rows.values():
        if row.identifier not in ids_by_role[row.row_type]:
            raise UnknownIdentifier(row.identifier)
        for mid in row.match_ids:
            if mid not in ids_by_role[row.row_type.opposite]:
                raise UnknownIdentifier(mid)
        if row.row_type is Role.PREDICTED and row.score == 0 and row.match_ids:
            warnings.append(f"row {row.identifier}: score 0 with matches {','.join(row.match_ids)}")
    if pair_units is not None:
        seen = {(r.row_type, r.identifier) for r in rows.values()}
        for unit in pair_units:
            if (unit.role, unit.identifier) not in seen:
                warnings.append(f"no row for {unit.identifier}")

    return CaseEvaluation(
        case_id=case_id,
        rows=tuple(rows.values()),
        overall=overall,
        explanation=explanation,
        skipped_lines=skipped,
        warnings=tuple(warnings),
    )


def _ids_by_role(items: Iterable, attr: str = "role") -> dict[Role, set[str]]:
    out: dict[Role, set[str]] = {Role.ORIGINAL: set(), Role.PREDICTED: set()}
    for item in items:
        out[getattr(item, attr)].add(item.identifier)
    return out
