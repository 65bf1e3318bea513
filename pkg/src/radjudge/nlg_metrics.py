"""BLEU, ROUGE-L and a synonym-free METEOR over single-reference token lists."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from itertools import permutations, product
from typing import Sequence

from .errors import EmptyInput

METEOR_VARIANT = "meteor-lite"

_UNK = "<unk>"
_PUNCT_RE = re.compile("[" + re.escape(string.punctuation) + "]")


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces (keeping ``<unk>``), split."""
    tokens: list[str] = []
    for k, chunk in enumerate(text.lower().split(_UNK)):
        if k:
            tokens.append(_UNK)
        tokens.extend(_PUNCT_RE.sub(" ", chunk).split())
    return tokens


def _check(candidate: Sequence[str], reference: Sequence[str]) -> None:
    if not candidate or not reference:
        raise EmptyInput("candidate and reference must be non-empty")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """Clipped n-gram matches and total candidate n-grams."""
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
    return clipped, sum(cand.values())


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Unsmoothed sentence BLEU with uniform weights over 1..max_n."""
    _check(candidate, reference)
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in [1, 4]")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = modified_precision(candidate, reference, n)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    _check(candidate, reference)
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


# -- METEOR (exact matching only) -------------------------------------------------------

_EXHAUSTIVE_LIMIT = 5000


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    """Runs of matches contiguous in both candidate and reference."""
    pairs = sorted(alignment)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _positions(tokens: Sequence[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, tok in enumerate(tokens):
        out.setdefault(tok, []).append(i)
    return out


def _word_alignments(cpos: list[int], rpos: list[int]):
    """All maximal one-to-one pairings between two occurrence lists of one word."""
    if len(cpos) <= len(rpos):
        for chosen in permutations(rpos, len(cpos)):
            yield list(zip(cpos, chosen))
    else:
        for chosen in permutations(cpos, len(rpos)):
            yield list(zip(chosen, rpos))


def _alignment_count(cpos: list[int], rpos: list[int]) -> int:
    hi, lo = max(len(cpos), len(rpos)), min(len(cpos), len(rpos))
    return math.perm(hi, lo)


def _greedy_alignment(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    # Repeatedly take the longest run shared by unaligned tokens.
    used_c = [False] * len(candidate)
    used_r = [False] * len(reference)
    alignment: list[tuple[int, int]] = []
    while True:
        best = (0, 0, 0)
        for i in range(len(candidate)):
            if used_c[i]:
                continue
            for j in range(len(reference)):
                if used_r[j] or candidate[i] != reference[j]:
                    continue
                k = 0
                while (
                    i + k < len(candidate) and j + k < len(reference)
                    and not used_c[i + k] and not used_r[j + k]
                    and candidate[i + k] == reference[j + k]
                ):
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        k, i, j = best
        if k == 0:
            return alignment
        for d in range(k):
            used_c[i + d] = used_r[j + d] = True
            alignment.append((i + d, j + d))


def align(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Exact-match alignment with the most matches and, among those, fewest chunks.

    Searched exhaustively while the number of maximal alignments is small;
    otherwise a longest-run-first greedy tiling is used, which still reaches
    the maximum match count.
    """
    cpos = _positions(candidate)
    rpos = _positions(reference)
    shared = [w for w in cpos if w in rpos]
    total = 1
    for w in shared:
        total *= _alignment_count(cpos[w], rpos[w])
        if total > _EXHAUSTIVE_LIMIT:
            return _greedy_alignment(candidate, reference)
    best: list[tuple[int, int]] = []
    best_chunks = None
    for combo in product(*(_word_alignments(cpos[w], rpos[w]) for w in shared)):
        alignment = [pair for part in combo for pair in part]
        chunks = count_chunks(alignment)
        if best_chunks is None or chunks < best_chunks:
            best, best_chunks = alignment, chunks
    return best


def meteor_lite(candidate: Sequence[str], reference: Sequence[str]) -> float:
    _check(candidate, reference)
    alignment = align(candidate, reference)
    m = len(alignment)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (count_chunks(alignment) / m) ** 3
    return f_mean * (1 - penalty)


def nlg_scores(candidate_text: str, reference_text: str) -> dict[str, float]:
    """The four per-case NLG columns of metrics.csv."""
    cand = tokenize(candidate_text)
    ref = tokenize(reference_text)
    return {
        "bleu1": bleu(cand, ref, 1),
        "bleu4": bleu(cand, ref, 4),
        "rouge_l": rouge_l(cand, ref),
        "meteor_lite": meteor_lite(cand, ref),
    }
