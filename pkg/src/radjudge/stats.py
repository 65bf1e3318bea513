"""Rank correlation and agreement statistics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import (
    DegenerateInput,
    LengthMismatch,
    StatisticsError,
    ValueOutsideCategories,
    ZeroVariance,
)
from .models import SCORE_DOMAIN, CorrelationCell, CorrelationResult


@dataclass
class ScoreTable:
    """Equal-length metric columns aligned by ``case_ids``."""

    columns: dict[str, list[float]]
    case_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise LengthMismatch(f"columns have different lengths: {sorted(lengths)}")
        if lengths and lengths.pop() < 2:
            raise StatisticsError("score table needs at least two rows")
        if self.case_ids and self.columns and len(self.case_ids) != len(next(iter(self.columns.values()))):
            raise LengthMismatch("case_ids and columns differ in length")


def _tie_sums(values: Sequence) -> tuple[int, int, int]:
    """Sums of t(t-1)/2, t(t-1)(2t+5) and t(t-1)(t-2) over tie groups."""
    pairs = v0 = v2 = 0
    for t in Counter(values).values():
        pairs += t * (t - 1) // 2
        v0 += t * (t - 1) * (2 * t + 5)
        v2 += t * (t - 1) * (t - 2)
    return pairs, v0, v2


def _count_swaps(seq: list) -> int:
    """Inversions in ``seq`` via merge sort; sorts ``seq`` in place."""
    n = len(seq)
    if n < 2:
        return 0
    mid = n // 2
    left, right = seq[:mid], seq[mid:]
    swaps = _count_swaps(left) + _count_swaps(right)
    i = j = k = 0
    while i < len(left) and j < len(right):
        if right[j] < left[i]:
            seq[k] = right[j]
            j += 1
            swaps += len(left) - i
        else:
            seq[k] = left[i]
            i += 1
        k += 1
    seq[k:] = left[i:] + right[j:]
    return swaps


def _check_lengths(x: Sequence, y: Sequence, minimum: int) -> int:
    if len(x) != len(y):
        raise LengthMismatch(f"sequences differ in length ({len(x)} vs {len(y)})")
    if len(x) < minimum:
        raise StatisticsError(f"need at least {minimum} observations")
    return len(x)


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Tie-corrected Kendall tau with a two-sided normal-approximation p-value.

    O(n log n): sort by (x, y), then count discordant pairs as inversions of y.
    """
    n = _check_lengths(x, y, 2)
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n0 = n * (n - 1) // 2
    x_ties, x_v0, x_v2 = _tie_sums(x)
    y_ties, y_v0, y_v2 = _tie_sums(y)
    if x_ties == n0 or y_ties == n0:
        raise DegenerateInput("all values tied in one sequence")
    joint_ties = sum(t * (t - 1) // 2 for t in Counter(zip(x, y)).values())

    order = sorted(range(n), key=lambda i: (x[i], y[i]))
    swaps = _count_swaps([y[i] for i in order])
    s = n0 - x_ties - y_ties + joint_ties - 2 * swaps
    tau = s / math.sqrt((n0 - x_ties) * (n0 - y_ties))
    tau = max(-1.0, min(1.0, tau))

    var = (n * (n - 1) * (2 * n + 5) - x_v0 - y_v0) / 18.0
    var += (2 * x_ties) * (2 * y_ties) / (2.0 * n * (n - 1))
    if n > 2:
        var += x_v2 * y_v2 / (9.0 * n * (n - 1) * (n - 2))
    if var <= 0:
        p = 1.0
    else:
        p = math.erfc(abs(s) / math.sqrt(var) / math.sqrt(2.0))
    return CorrelationResult(tau, min(1.0, max(0.0, p)), n)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    n = _check_lengths(x, y, 2)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("pearson_r needs non-constant sequences")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable], categories: Iterable[Hashable] = SCORE_DOMAIN) -> float:
    """Unweighted Cohen's kappa between two raters."""
    n = _check_lengths(a, b, 1)
    cats = set(categories)
    for v in (*a, *b):
        if v not in cats:
            raise ValueOutsideCategories(v)
    p_o = sum(1 for u, v in zip(a, b) if u == v) / n
    ca, cb = Counter(a), Counter(b)
    p_e = math.fsum(ca[c] * cb[c] for c in cats) / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)


def correlation_matrix(table: ScoreTable, method: str = "kendall", categories=SCORE_DOMAIN) -> list[CorrelationCell]:
    """Statistics for every column pair below the diagonal, in column order."""
    names = list(table.columns)
    if len(names) < 2:
        raise StatisticsError("need at least two columns")
    cells = []
    for i, a in enumerate(names):
        for b in names[:i]:
            xs, ys = table.columns[a], table.columns[b]
            try:
                if method == "kendall":
                    result = kendall_tau_b(xs, ys)
                elif method == "kappa":
                    result = CorrelationResult(cohens_kappa(xs, ys, categories), None, len(xs))
                elif method == "pearson":
                    result = CorrelationResult(pearson_r(xs, ys), None, len(xs))
                else:
                    raise ValueError(f"unknown method {method!r}")
            except StatisticsError as exc:
                exc.pair = (a, b)
                exc.args = (f"{a} vs {b}: {exc}",)
                raise
            cells.append(CorrelationCell(a, b, method, result))
    return cells


def pooled_table(sources: Mapping[str, Mapping[Hashable, float]]) -> tuple[ScoreTable, int]:
    """Align per-key scores from several raters; keys missing anywhere are dropped.

    Returns the table (keys sorted for determinism) and the number of dropped keys.
    """
    key_sets = [set(s) for s in sources.values()]
    if not key_sets:
        raise StatisticsError("no sources")
    common = set.intersection(*key_sets)
    dropped = len(set.union(*key_sets) - common)
    keys = sorted(common, key=repr)
    table = ScoreTable({name: [float(s[k]) for k in keys] for name, s in sources.items()}, [repr(k) for k in keys])
    return table, dropped
