"""Transcription quality metrics: BLEU1, ROUGE-L, METEOR (exact match) and CIDEr.

All metrics take token tuples produced by :func:`tokenize`. CIDEr is reported
on a 0..10 scale, the others on 0..1; :func:`normalize_unit` maps any score to
the unit interval.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

TokenSeq = tuple  # tuple[str, ...]

METRIC_RANGES = {"bleu1": 1.0, "rouge_l": 1.0, "meteor": 1.0, "cider": 10.0}
METRIC_NAMES = ("meteor", "rouge_l", "cider", "bleu1")

ROUGE_BETA = 1.2
METEOR_ALPHA_WEIGHT = 9.0  # F_mean = 10PR / (R + 9P)
METEOR_PENALTY_GAMMA = 0.5
METEOR_PENALTY_EXP = 3.0
CIDER_MAX_N = 4
CIDER_SCALE = 10.0

_PUNCT = string.punctuation


@dataclass(frozen=True)
class MetricScore:
    name: str
    value: float
    range_max: float = field(default=None)

    def __post_init__(self):
        if self.name not in METRIC_RANGES:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.range_max is None:
            object.__setattr__(self, "range_max", METRIC_RANGES[self.name])
        if not 0.0 <= self.value <= self.range_max:
            raise ValueError(f"{self.name} value {self.value} outside [0, {self.range_max}]")

    def __float__(self):
        return float(self.value)


def tokenize(text: str) -> TokenSeq:
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return tuple(out)


def _require_tokens(*seqs):
    for s in seqs:
        if len(s) == 0:
            raise ValueError("metric inputs must be nonempty token sequences")


def _score(name: str, value: float) -> MetricScore:
    # guards against 1 + eps from floating point
    return MetricScore(name, min(max(value, 0.0), METRIC_RANGES[name]))


def bleu1(candidate: Sequence[str], reference: Sequence[str]) -> MetricScore:
    _require_tokens(candidate, reference)
    c, r = len(candidate), len(reference)
    ref_counts = Counter(reference)
    clipped = sum(min(n, ref_counts[w]) for w, n in Counter(candidate).items())
    precision = clipped / c
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return _score("bleu1", precision * bp)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = ROUGE_BETA) -> MetricScore:
    _require_tokens(candidate, reference)
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return _score("rouge_l", 0.0)
    rec = lcs / len(reference)
    prec = lcs / len(candidate)
    b2 = beta * beta
    return _score("rouge_l", (1 + b2) * rec * prec / (rec + b2 * prec))


def meteor_alignment(candidate: Sequence[str], reference: Sequence[str]) -> tuple[int, int]:
    """Exact-match alignment with the most matches, then the fewest chunks.

    Returns ``(matches, chunks)``. A chunk is a run of candidate words matched,
    in order, to consecutive reference words.
    """
    cand = tuple(candidate)
    positions = {}
    for j, w in enumerate(reference):
        positions.setdefault(w, []).append(j)
    n = len(cand)

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> tuple[int, int]:
        # value is (matches, -chunks) so that max() orders it lexicographically
        if i == n:
            return (0, 0)
        m, neg_ch = best(i + 1, used, -1)
        result = (m, neg_ch)
        for j in positions.get(cand[i], ()):
            if used >> j & 1:
                continue
            m, neg_ch = best(i + 1, used | (1 << j), j)
            opens_chunk = 0 if (prev >= 0 and j == prev + 1) else 1
            option = (m + 1, neg_ch - opens_chunk)
            if option > result:
                result = option
        return result

    m, neg_ch = best(0, 0, -1)
    best.cache_clear()
    return m, -neg_ch


def meteor(candidate: Sequence[str], reference: Sequence[str]) -> MetricScore:
    _require_tokens(candidate, reference)
    m, chunks = meteor_alignment(candidate, reference)
    if m == 0:
        return _score("meteor", 0.0)
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = (1 + METEOR_ALPHA_WEIGHT) * p * r / (r + METEOR_ALPHA_WEIGHT * p)
    penalty = METEOR_PENALTY_GAMMA * (chunks / m) ** METEOR_PENALTY_EXP
    return _score("meteor", f_mean * (1 - penalty))


# --- CIDEr --------------------------------------------------------------------


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class IdfTable:
    doc_count: int
    df: dict
    n_max: int = CIDER_MAX_N

    def __post_init__(self):
        if self.doc_count < 1:
            raise ValueError("IDF table needs at least one document")

    def weight(self, gram: tuple) -> float:
        # unseen n-grams count as appearing in one document
        return math.log(self.doc_count / self.df.get(gram, 1))


def build_idf(corpus: Iterable[Sequence[str]], n_max: int = CIDER_MAX_N) -> IdfTable:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build IDF table from an empty corpus")
    df: Counter = Counter()
    for doc in corpus:
        present = set()
        for n in range(1, n_max + 1):
            present.update(ngrams(doc, n))
        df.update(present)
    return IdfTable(doc_count=len(corpus), df=dict(df), n_max=n_max)


def _tfidf(tokens: Sequence[str], n: int, idf: IdfTable) -> dict:
    return {g: tf * idf.weight(g) for g, tf in ngrams(tokens, n).items()}


def _cosine(a: dict, b: dict) -> float:
    na = sum(v * v for v in a.values())
    nb = sum(v * v for v in b.values())
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return min(1.0, dot / math.sqrt(na * nb))


def cider(candidate: Sequence[str], references: Sequence[Sequence[str]], idf: IdfTable) -> MetricScore:
    _require_tokens(candidate)
    if not references:
        raise ValueError("CIDEr needs at least one reference")
    _require_tokens(*references)
    per_order = []
    for n in range(1, idf.n_max + 1):
        vc = _tfidf(candidate, n, idf)
        sims = [_cosine(vc, _tfidf(ref, n, idf)) for ref in references]
        per_order.append(sum(sims) / len(sims))
    return _score("cider", CIDER_SCALE * sum(per_order) / len(per_order))


# --- score analysis -----------------------------------------------------------


def normalize_unit(score: MetricScore) -> float:
    return score.value / score.range_max


def score_all(candidate: Sequence[str], reference: Sequence[str], idf: IdfTable) -> dict:
    """All four metrics of one candidate against one reference, by name."""
    return {
        "meteor": meteor(candidate, reference),
        "rouge_l": rouge_l(candidate, reference),
        "cider": cider(candidate, [reference], idf),
        "bleu1": bleu1(candidate, reference),
    }


def skewness(values) -> float:
    """Fisher-Pearson coefficient g1 = m3 / m2**1.5 (biased central moments)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 3:
        raise ValueError("skewness needs at least 3 values")
    d = x - x.mean()
    m2 = np.mean(d**2)
    if m2 == 0.0:
        raise ValueError("skewness undefined for zero variance")
    return float(np.mean(d**3) / m2**1.5)


def unit_histogram(scores: Iterable[MetricScore], bins: int = 10) -> np.ndarray:
    """Counts of unit-normalized scores in ``bins`` equal-width bins over [0, 1]."""
    vals = [normalize_unit(s) for s in scores]
    counts, _ = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    return counts
