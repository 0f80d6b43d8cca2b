"""Corpus-level caption metrics: BLEU-1/4, ROUGE-L, CIDEr.

All scores are reported on a 0-100 scale. Candidates and references share
the tokenizer's normalization; the lemmatized protocol additionally maps
both sides through the lemmatizer before scoring. Corpus reductions use
``math.fsum`` so pair order never changes a score.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass

from .text import lemmatize, tokenize

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
CIDER_MAX_N = 4
CIDER_SIGMA = 6.0


class MetricError(ValueError):
    pass


class DegenerateCorpusError(MetricError):
    """CIDEr inverse-document-frequency is undefined on this corpus."""


@dataclass
class EvalPair:
    candidate: str
    references: list[str]

    def __post_init__(self):
        if not self.references:
            raise MetricError("every pair needs at least one reference")


@dataclass
class MetricReport:
    bleu1: float
    bleu4: float
    rougeL: float
    cider: float
    n_pairs: int
    lemmatized: bool

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "rougeL": self.rougeL,
            "cider": self.cider,
            "n_pairs": self.n_pairs,
            "lemmatized": self.lemmatized,
        }

    def average(self) -> float:
        return (self.bleu1 + self.bleu4 + self.rougeL + self.cider) / 4.0


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs: list[EvalPair], n: int) -> float:
    """Corpus BLEU with clipped modified precisions pooled over all pairs,
    epsilon smoothing for zero counts, and the closest-reference brevity
    penalty."""
    if not pairs:
        raise MetricError("bleu: empty pair list")
    if n < 1:
        raise MetricError("bleu: order must be >= 1")
    clipped = [0] * (n + 1)
    totals = [0] * (n + 1)
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        cand = tokenize(pair.candidate)
        refs = [tokenize(r) for r in pair.references]
        cand_len += len(cand)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for order in range(1, n + 1):
            counts = _ngrams(cand, order)
            if not counts:
                continue
            max_ref: Counter = Counter()
            for r in refs:
                for gram, c in _ngrams(r, order).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            clipped[order] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[order] += sum(counts.values())
    if cand_len == 0:
        warnings.warn("bleu: all candidates are empty", stacklevel=2)
        return 0.0
    log_sum = 0.0
    for order in range(1, n + 1):
        if clipped[order] > 0 and totals[order] > 0:
            p = clipped[order] / totals[order]
        else:
            p = BLEU_EPS
        log_sum += math.log(p)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / n) * 100.0


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pairs: list[EvalPair]) -> float:
    """Mean over pairs of the best F-beta(LCS) across references."""
    if not pairs:
        raise MetricError("rouge_l: empty pair list")
    beta_sq = ROUGE_BETA**2
    scores = []
    for pair in pairs:
        cand = tokenize(pair.candidate)
        best = 0.0
        for ref_text in pair.references:
            ref = tokenize(ref_text)
            lcs = _lcs_len(cand, ref)
            if lcs == 0 or not cand or not ref:
                continue
            recall = lcs / len(ref)
            precision = lcs / len(cand)
            f = (1 + beta_sq) * recall * precision / (recall + beta_sq * precision)
            best = max(best, f)
        scores.append(best)
    return math.fsum(scores) / len(scores) * 100.0


def cider(pairs: list[EvalPair]) -> float:
    """TF-IDF n-gram consensus with a Gaussian length penalty.

    IDF uses ln(N / (1 + df)) + 1 smoothing over the N reference sets so no
    n-gram vector collapses to zero when a term appears in every document.
    """
    if len(pairs) < 2:
        raise DegenerateCorpusError(
            "cider needs at least 2 pairs; document frequency is degenerate otherwise"
        )
    n_docs = len(pairs)
    cand_tokens = [tokenize(p.candidate) for p in pairs]
    ref_tokens = [[tokenize(r) for r in p.references] for p in pairs]
    per_order = []
    for order in range(1, CIDER_MAX_N + 1):
        df: Counter = Counter()
        for refs in ref_tokens:
            seen = set()
            for r in refs:
                seen.update(_ngrams(r, order))
            df.update(seen)

        def vec(tokens):
            # unseen n-grams carry the df = 0 weight ln(N) + 1
            return {
                g: c * (math.log(n_docs / (1 + df[g])) + 1.0)
                for g, c in _ngrams(tokens, order).items()
            }

        pair_scores = []
        for cand, refs in zip(cand_tokens, ref_tokens):
            cv = vec(cand)
            cnorm = math.sqrt(math.fsum(v * v for v in cv.values()))
            ref_scores = []
            for r in refs:
                rv = vec(r)
                rnorm = math.sqrt(math.fsum(v * v for v in rv.values()))
                if cnorm == 0.0 or rnorm == 0.0:
                    ref_scores.append(0.0)
                    continue
                dot = math.fsum(cv[g] * rv[g] for g in cv if g in rv)
                penalty = math.exp(-((len(cand) - len(r)) ** 2) / (2 * CIDER_SIGMA**2))
                ref_scores.append(dot / (cnorm * rnorm) * penalty)
            pair_scores.append(math.fsum(ref_scores) / len(refs))
        per_order.append(math.fsum(pair_scores) / n_docs)
    return math.fsum(per_order) / CIDER_MAX_N * 100.0


def evaluate(pairs: list[EvalPair], lemmatized: bool = False) -> MetricReport:
    """All four metrics under the chosen ground-truth preprocessing protocol."""
    if not pairs:
        raise MetricError("evaluate: empty pair list")
    if lemmatized:
        pairs = [
            EvalPair(lemmatize(p.candidate), [lemmatize(r) for r in p.references])
            for p in pairs
        ]
    return MetricReport(
        bleu1=bleu(pairs, 1),
        bleu4=bleu(pairs, 4),
        rougeL=rouge_l(pairs),
        cider=cider(pairs),
        n_pairs=len(pairs),
        lemmatized=lemmatized,
    )
