"""Corpus BLEU-4, ROUGE-L and exact-match METEOR on whitespace tokens.

All scores are on a 0-100 scale. METEOR here uses exact unigram matching only
(no stemming or synonym resources).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache

from . import _kernels

METEOR_NOTE = "METEOR: exact-match unigram alignment only (no stemming, no synonyms)"


@dataclass
class MetricReport:
    bleu: float
    rouge_l: float
    meteor: float
    n: int

    def to_dict(self):
        return asdict(self)


def _tok(x):
    return x.split() if isinstance(x, str) else list(x)


def _check(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    return [_tok(c) for c in candidates], [_tok(r) for r in references]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4, smooth=True) -> float:
    """Corpus BLEU with pooled modified precisions; add-one smoothing for n >= 2."""
    cands, refs = _check(candidates, references)
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for c, r in zip(cands, refs):
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    if c_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        add = 1 if (smooth and n >= 1) else 0
        num, den = matches[n] + add, totals[n] + add
        if num == 0 or den == 0:
            return 0.0
        log_p += math.log(num / den)
    bp = math.exp(1.0 - r_len / c_len) if c_len <= r_len else 1.0
    return 100.0 * bp * math.exp(log_p / max_n)


def sentence_bleu(candidate, reference, **kw) -> float:
    return bleu([candidate], [reference], **kw)


def _as_ids(a, b):
    table = {}
    return ([table.setdefault(t, len(table)) for t in a], [table.setdefault(t, len(table)) for t in b])


def lcs_length(a, b) -> int:
    ia, ib = _as_ids(_tok(a), _tok(b))
    return _kernels.lcs_length(ia, ib)


def rouge_l_pair(candidate, reference, beta=1.2) -> float:
    c, r = _tok(candidate), _tok(reference)
    if not c or not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)


def rouge_l(candidates, references, beta=1.2) -> float:
    cands, refs = _check(candidates, references)
    if not cands:
        return 0.0
    return 100.0 * sum(rouge_l_pair(c, r, beta) for c, r in zip(cands, refs)) / len(cands)


# ------------------------------------------------------------------ METEOR

_SEARCH_LIMIT = 200_000


def _greedy_alignment(c, r):
    used = set()
    pairs = []
    for i, w in enumerate(c):
        for j, x in enumerate(r):
            if x == w and j not in used:
                # prefer continuing the previous pair
                if pairs and pairs[-1][0] == i - 1 and pairs[-1][1] + 1 < len(r) \
                        and r[pairs[-1][1] + 1] == w and pairs[-1][1] + 1 not in used:
                    j = pairs[-1][1] + 1
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def count_chunks(pairs) -> int:
    """Contiguous, same-order runs in an alignment given as (cand_pos, ref_pos) pairs."""
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or not (i == prev[0] + 1 and j == prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_alignment(candidate, reference):
    """(matches, chunks) for a maximum exact-match alignment with fewest chunks."""
    c, r = _tok(candidate), _tok(reference)
    cc, rc = Counter(c), Counter(r)
    need = {w: min(cc[w], rc[w]) for w in cc}
    m = sum(need.values())
    if m == 0:
        return 0, 0
    positions = {}
    for j, w in enumerate(r):
        positions.setdefault(w, []).append(j)
    remaining_after = [0] * (len(c) + 1)  # occurrences of c[i] at positions >= i
    seen = Counter()
    for i in range(len(c) - 1, -1, -1):
        seen[c[i]] += 1
        remaining_after[i] = seen[c[i]]

    calls = [0]

    @lru_cache(maxsize=None)
    def best(i, prev_j, used, taken_key):
        # maximum number of adjacency links from position i on
        calls[0] += 1
        if calls[0] > _SEARCH_LIMIT:
            raise _TooLarge
        if i == len(c):
            return 0
        w = c[i]
        taken = dict(taken_key)
        still = need.get(w, 0) - taken.get(w, 0)
        result = -1
        if still < remaining_after[i]:
            result = best(i + 1, -1, used, taken_key)
        if still > 0:
            taken[w] = taken.get(w, 0) + 1
            tk = tuple(sorted(taken.items()))
            for j in positions.get(w, ()):
                if used >> j & 1:
                    continue
                link = 1 if prev_j >= 0 and j == prev_j + 1 else 0
                sub = best(i + 1, j, used | (1 << j), tk)
                if sub >= 0 and sub + link > result:
                    result = sub + link
        return result

    try:
        links = best(0, -1, 0, ())
        return m, m - links
    except _TooLarge:
        return m, count_chunks(_greedy_alignment(c, r))


class _TooLarge(Exception):
    pass


def meteor_pair(candidate, reference) -> float:
    c, r = _tok(candidate), _tok(reference)
    m, chunks = meteor_alignment(c, r)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


def meteor(candidates, references) -> float:
    cands, refs = _check(candidates, references)
    if not cands:
        return 0.0
    return 100.0 * sum(meteor_pair(c, r) for c, r in zip(cands, refs)) / len(cands)


def report(candidates, references) -> MetricReport:
    return MetricReport(bleu(candidates, references), rouge_l(candidates, references),
                        meteor(candidates, references), len(candidates))
