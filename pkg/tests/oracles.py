"""Slow, independent reference implementations used only by the tests.

Each oracle follows the textbook definition as literally as possible
(enumeration instead of dynamic programming, explicit loops instead of
Counters) so it shares no code path with the package.
"""

import itertools
import math

import numpy as np


def bleu1(cand, ref):
    used = [False] * len(ref)
    matched = 0
    for w in cand:
        for j, r in enumerate(ref):
            if not used[j] and r == w:
                used[j] = True
                matched += 1
                break
    p = matched / len(cand)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return p * bp


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def lcs(a, b):
    """Longest common subsequence by enumerating subsequences of ``a``."""
    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            if _is_subsequence([a[i] for i in idx], b):
                return size
    return 0


def rouge_l(cand, ref, beta=1.2):
    n = lcs(cand, ref)
    if n == 0:
        return 0.0
    r, p = n / len(ref), n / len(cand)
    return (1 + beta**2) * r * p / (r + beta**2 * p)


def _alignments(cand, ref):
    """Every partial one-to-one exact-match alignment, as (cand_i, ref_j) lists."""

    def rec(i, used):
        if i == len(cand):
            yield []
            return
        for rest in rec(i + 1, used):
            yield rest
        for j, r in enumerate(ref):
            if j not in used and r == cand[i]:
                for rest in rec(i + 1, used | {j}):
                    yield [(i, j)] + rest

    return rec(0, frozenset())


def _chunks(pairs):
    pairs = sorted(pairs)
    count = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            count += 1
    return count


def meteor_alignment(cand, ref):
    best = (0, 0)
    for pairs in _alignments(cand, ref):
        key = (len(pairs), -_chunks(pairs))
        if key > (best[0], -best[1]):
            best = (len(pairs), _chunks(pairs))
    return best


def meteor(cand, ref):
    m, ch = meteor_alignment(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (ch / m) ** 3)


def grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def document_frequency(corpus, gram):
    n = len(gram)
    return sum(1 for doc in corpus if gram in grams(doc, n))


def cider(cand, refs, corpus):
    """CIDEr over dense vectors indexed by every n-gram in play."""
    N = len(corpus)
    total = 0.0
    for n in range(1, 5):
        vocab = sorted({g for s in [cand, *refs] for g in grams(s, n)})

        def vec(s):
            v = np.zeros(len(vocab))
            for k, g in enumerate(vocab):
                tf = grams(s, n).count(g)
                df = document_frequency(corpus, g) or 1
                v[k] = tf * math.log(N / df)
            return v

        vc = vec(cand)
        sims = []
        for ref in refs:
            vr = vec(ref)
            denom = np.linalg.norm(vc) * np.linalg.norm(vr)
            sims.append(float(vc @ vr / denom) if denom > 0 else 0.0)
        total += sum(sims) / len(sims)
    return 10 * total / 4


def skewness(values):
    n = len(values)
    mean = sum(values) / n
    m2 = sum((x - mean) ** 2 for x in values) / n
    m3 = sum((x - mean) ** 3 for x in values) / n
    return m3 / m2**1.5


def iou(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def acc_at_1(pairs, threshold=0.5):
    hits = 0
    for pred, gt in pairs:
        if pred is not None and iou(pred, gt) > threshold:
            hits += 1
    return hits / len(pairs)


def recall_at(ranked, gts, t, k):
    """``ranked[i]`` is the ranked box list for ground-truth box ``gts[i]``."""
    hits = 0
    for boxes, gt in zip(ranked, gts):
        for box in boxes[:k]:
            if iou(box, gt) >= t:
                hits += 1
                break
    return hits / len(gts)


# twenty hand-written (candidate, reference) pairs covering repeats, reorders,
# partial overlaps, length mismatches and disjoint vocabularies
GOLDEN_PAIRS = [
    ("the cat", "the cat sat"),
    ("a b c", "a c"),
    ("the big window in the middle", "the big window in the middle"),
    ("the bald man using the laptop", "the bed man using the laptop"),
    ("b a", "a b"),
    ("red car on the left", "the red car on the left side"),
    ("the the the the", "the cat is on the mat"),
    ("a dog", "the cat"),
    ("left window near the door", "the window left of the door"),
    ("man with a red hat and a blue shirt", "the man in a blue shirt and red hat"),
    ("car", "car car car"),
    ("the person on the right holding a bottle", "person holding bottle on the right"),
    ("green chair", "the small green chair in the corner"),
    ("a b a b a", "b a b a b"),
    ("the white laptop on the desk on the left", "white laptop on the left desk"),
    ("big small big small", "small big small big"),
    ("the car that is parked near the tree", "the parked car near the tree"),
    ("one two three four five six", "six five four three two one"),
    ("the window", "the window the window"),
    ("black dog on the middle of the road", "the black dog in the middle of the road"),
]
