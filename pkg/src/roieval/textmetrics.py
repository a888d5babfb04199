"""N-gram and embedding-based text metrics, reported as percentages.

Tokenizer: NFC normalization, lowercasing, then maximal runs of word
characters (``\\w+``); whitespace and punctuation only separate tokens.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ._kernels import lcs_length
from .embedding import Embedder
from .errors import SchemaError

_TOKEN = re.compile(r"\w+")
MAX_N = 4


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(unicodedata.normalize("NFC", text).lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class _BleuStats:
    matches: list[int]
    totals: list[int]
    cand_len: int
    ref_len: int

    def __add__(self, other: "_BleuStats") -> "_BleuStats":
        return _BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
        )

    def score(self) -> float:
        if self.cand_len == 0 or any(m == 0 for m in self.matches):
            return 0.0
        log_p = math.fsum(math.log(m / t) for m, t in zip(self.matches, self.totals)) / MAX_N
        bp = 1.0 if self.cand_len >= self.ref_len else math.exp(1 - self.ref_len / self.cand_len)
        return 100.0 * bp * math.exp(log_p)


def _bleu_stats(cand: Sequence[str], ref: Sequence[str]) -> _BleuStats:
    matches, totals = [], []
    for n in range(1, MAX_N + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        matches.append(sum(min(k, r[g]) for g, k in c.items()))
        totals.append(max(0, len(cand) - n + 1))
    return _BleuStats(matches, totals, len(cand), len(ref))


def bleu4(candidate: str, reference: str) -> float:
    """BLEU-4 of one candidate against one reference, unsmoothed, in [0, 100]."""
    return _bleu_stats(tokenize(candidate), tokenize(reference)).score()


def corpus_bleu4(pairs: Iterable[tuple[str, str]]) -> float:
    """BLEU-4 with n-gram counts and lengths pooled over all (candidate, reference) pairs."""
    total = _BleuStats([0] * MAX_N, [0] * MAX_N, 0, 0)
    for cand, ref in pairs:
        total = total + _bleu_stats(tokenize(cand), tokenize(ref))
    return total.score()


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_dict(self):
        return asdict(self)


def _prf(overlap: float, n_cand: int, n_ref: int) -> PRF:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(100 * p, 100 * r, 100 * f)


def rouge(candidate: str, reference: str) -> dict[str, PRF]:
    """ROUGE-1 (clipped unigram overlap) and ROUGE-L (LCS), as percentages."""
    cand, ref = tokenize(candidate), tokenize(reference)
    c1, r1 = Counter(cand), Counter(ref)
    overlap = sum(min(k, r1[t]) for t, k in c1.items())
    vocab: dict[str, int] = {}
    ids_c = [vocab.setdefault(t, len(vocab)) for t in cand]
    ids_r = [vocab.setdefault(t, len(vocab)) for t in ref]
    lcs = lcs_length(ids_c, ids_r)
    return {"rouge1": _prf(overlap, len(cand), len(ref)),
            "rougeL": _prf(lcs, len(cand), len(ref))}


def embed_score(candidate: str, reference: str, embedder: Embedder) -> PRF:
    """Greedy token matching in embedding space (no IDF weighting).

    Precision averages, over candidate tokens, the best clamped cosine to
    any reference token; recall is the mirror image.
    """
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        raise SchemaError("empty text")
    vecs = embedder.embed_many(sorted(set(cand) | set(ref)))
    lookup = dict(zip(sorted(set(cand) | set(ref)), vecs))
    a = np.stack([lookup[t] for t in cand])
    b = np.stack([lookup[t] for t in ref])
    sims = np.clip(a @ b.T, 0.0, 1.0)
    p = float(sims.max(axis=1).mean())
    r = float(sims.max(axis=0).mean())
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(100 * p, 100 * r, 100 * f)


@dataclass
class TextScores:
    bleu4: float
    bleu4_sentence_mean: float
    rouge1: float
    rougeL: float
    embed_score: float | None

    def to_dict(self):
        return asdict(self)


def corpus_text_scores(pairs: Sequence[tuple[str, str]], embedder: Embedder | None = None) -> TextScores:
    """Corpus BLEU-4 (primary) plus mean sentence BLEU, mean ROUGE F1 and
    mean embedding-score F1 over pairs with non-empty texts on both sides."""
    pairs = list(pairs)
    if not pairs:
        return TextScores(0.0, 0.0, 0.0, 0.0, None)
    r_scores = [rouge(c, r) for c, r in pairs]
    emb = None
    if embedder is not None:
        usable = [(c, r) for c, r in pairs if tokenize(c) and tokenize(r)]
        if usable:
            emb = math.fsum(embed_score(c, r, embedder).f1 for c, r in usable) / len(usable)
    return TextScores(
        bleu4=corpus_bleu4(pairs),
        bleu4_sentence_mean=math.fsum(bleu4(c, r) for c, r in pairs) / len(pairs),
        rouge1=math.fsum(s["rouge1"].f1 for s in r_scores) / len(pairs),
        rougeL=math.fsum(s["rougeL"].f1 for s in r_scores) / len(pairs),
        embed_score=emb,
    )
