"""Similarity matrix, Hungarian assignment and threshold gating.

Pair similarity is the arithmetic mean of the clamped (``max(0, cos)``)
field cosines over the five comparable fields that are non-empty on both
sides; 0 when no field is comparable. The assignment is solved once per
report; thresholds are applied afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .embedding import Embedder, cosine
from .errors import ConfigError
from .metrics import AttributeSimilarities, CoverageMetrics, coverage_from_counts, mean_or_none, roiq

FIELDS = ("anatomic_region", "lesion_type", "density", "morphology", "fdg_uptake")
OPTIONAL_FIELDS = {"density": "s_density", "morphology": "s_morphology", "fdg_uptake": "s_uptake"}
DEFAULT_TAU = 0.70
SENTINEL = -1.0
_TIE_TOL = 1e-9


def _fields_of(roi) -> dict[str, str]:
    return {name: (getattr(roi, name) or "").strip() for name in FIELDS}


def field_similarities(pred, gt, embedder: Embedder) -> dict[str, Optional[float]]:
    """Clamped cosine per field, or None where either side is empty."""
    p, g = _fields_of(pred), _fields_of(gt)
    out: dict[str, Optional[float]] = {}
    for name in FIELDS:
        if p[name] and g[name]:
            out[name] = max(0.0, cosine(embedder.embed(p[name]), embedder.embed(g[name])))
        else:
            out[name] = None
    return out


def aggregate_fields(sims: dict[str, Optional[float]]) -> float:
    present = [v for v in sims.values() if v is not None]
    return math.fsum(present) / len(present) if present else 0.0


def pair_similarity(pred, gt, embedder: Embedder) -> float:
    return aggregate_fields(field_similarities(pred, gt, embedder))


def attribute_similarities(sims: dict[str, Optional[float]], gt) -> AttributeSimilarities:
    """RoIQ inputs from matching-time field cosines.

    A core field with nothing to compare scores 0. An optional descriptor is
    present iff the ground truth states it; if the prediction omits it, it
    scores 0.
    """
    g = _fields_of(gt)
    kwargs: dict[str, Optional[float]] = {
        "s_region": sims["anatomic_region"] or 0.0,
        "s_lesion": sims["lesion_type"] or 0.0,
    }
    for name, attr in OPTIONAL_FIELDS.items():
        kwargs[attr] = (sims[name] or 0.0) if g[name] else None
    return AttributeSimilarities(**kwargs)


@dataclass
class SimilarityMatrix:
    entries: np.ndarray
    field_sims: list[list[dict[str, Optional[float]]]] = field(default_factory=list)

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.size == 0 and arr.ndim < 2:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ConfigError("similarity matrix must be 2-D")
        self.entries = arr

    @property
    def pred_count(self) -> int:
        return self.entries.shape[0]

    @property
    def gt_count(self) -> int:
        return self.entries.shape[1]


def build_similarity_matrix(preds: Sequence, gts: Sequence, embedder: Embedder) -> SimilarityMatrix:
    texts = {t for roi in list(preds) + list(gts) for t in _fields_of(roi).values() if t}
    embedder.embed_many(sorted(texts))  # one batched warm-up of the cache
    sims = [[field_similarities(p, g, embedder) for g in gts] for p in preds]
    entries = np.array([[aggregate_fields(s) for s in row] for row in sims],
                       dtype=np.float64).reshape(len(preds), len(gts))
    return SimilarityMatrix(entries, sims)


@dataclass
class Assignment:
    """Optimal one-to-one pairing: ``(pred, gt, score)`` tuples sorted by pred."""

    pairs: list[tuple[int, int, float]]
    pred_count: int
    gt_count: int

    def __iter__(self) -> Iterator[tuple[int, int, float]]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def total(self) -> float:
        return math.fsum(s for _, _, s in self.pairs)


def _solve(scores: np.ndarray):
    cost = (-scores).tolist()
    return _kernels.solve_min_cost(cost)


def _lexicographic_refine(scores: np.ndarray, assign: list[int], u: list[float],
                          v: list[float]) -> list[int]:
    """Among optimal assignments, pick the one whose row->col vector is
    lexicographically smallest.

    Only tight cells (zero reduced cost under the optimal potentials) can
    appear in any optimal assignment, so alternatives are tried only there
    and confirmed by re-solving the remaining rows.
    """
    n = len(assign)
    cost = -scores
    best = math.fsum(scores[i, assign[i]] for i in range(n))
    tol = _TIE_TOL * max(1.0, abs(best))
    current = list(assign)
    free_cols = list(range(n))
    fixed = 0.0
    for i in range(n):
        for j in free_cols:
            if j >= current[i]:
                break
            if cost[i, j] - u[i] - v[j] > tol:
                continue
            rest_rows = list(range(i + 1, n))
            rest_cols = [c for c in free_cols if c != j]
            sub = scores[np.ix_(rest_rows, rest_cols)]
            sub_assign = _solve(sub)[0] if rest_rows else []
            sub_total = math.fsum(sub[r, c] for r, c in enumerate(sub_assign))
            if fixed + scores[i, j] + sub_total >= best - tol:
                current[i] = j
                for r, c in enumerate(sub_assign):
                    current[rest_rows[r]] = rest_cols[c]
                break
        fixed += scores[i, current[i]]
        free_cols.remove(current[i])
    return current


def hungarian_assign(matrix: SimilarityMatrix | Sequence[Sequence[float]] | np.ndarray) -> Assignment:
    """Maximum-total one-to-one assignment.

    Rectangular inputs are padded to square with a -1 sentinel and sentinel
    pairs dropped, so ``min(|P|, |G|)`` pairs come back. Among equally good
    assignments the lexicographically smallest (pred, gt) pairing wins.
    """
    if not isinstance(matrix, SimilarityMatrix):
        matrix = SimilarityMatrix(matrix)
    entries = matrix.entries
    n_pred, n_gt = entries.shape
    if n_pred == 0 or n_gt == 0:
        return Assignment([], n_pred, n_gt)
    if not np.all(np.isfinite(entries)):
        raise ConfigError("similarity matrix has non-finite entries")
    n = max(n_pred, n_gt)
    padded = np.full((n, n), SENTINEL)
    padded[:n_pred, :n_gt] = entries
    assign, u, v = _solve(padded)
    assign = _lexicographic_refine(padded, assign, u, v)
    pairs = [(i, j, float(entries[i, j])) for i, j in enumerate(assign)
             if i < n_pred and j < n_gt]
    return Assignment(pairs, n_pred, n_gt)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    tau: float
    tp: int
    fp: int
    fn: int

    def coverage(self) -> CoverageMetrics:
        return coverage_from_counts(self.tp, self.fp, self.fn)


def check_tau(tau: float) -> float:
    if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau!r}")
    return float(tau)


def match_with_threshold(assignment: Assignment, tau: float = DEFAULT_TAU) -> MatchResult:
    """Keep assigned pairs scoring at least ``tau`` (inclusive) and count TP/FP/FN."""
    tau = check_tau(tau)
    kept = [p for p in assignment.pairs if p[2] >= tau]
    tp = len(kept)
    return MatchResult(kept, tau, tp, assignment.pred_count - tp, assignment.gt_count - tp)


@dataclass
class ReportMatch:
    """Everything threshold-independent about one report pair."""

    report_id: str
    matrix: SimilarityMatrix
    assignment: Assignment
    pair_details: dict[tuple[int, int], dict[str, Any]]

    def at(self, tau: float) -> MatchResult:
        return match_with_threshold(self.assignment, tau)


def match_report(report_id: str, preds: Sequence, gts: Sequence, embedder: Embedder) -> ReportMatch:
    matrix = build_similarity_matrix(preds, gts, embedder)
    assignment = hungarian_assign(matrix)
    details = {}
    for i, j, score in assignment:
        sims = matrix.field_sims[i][j]
        attrs = attribute_similarities(sims, gts[j])
        details[(i, j)] = {
            "pred_index": i,
            "gt_index": j,
            "score": score,
            "field_similarities": sims,
            "attributes": attrs.to_dict(),
            "roiq": roiq(attrs),
        }
    return ReportMatch(report_id, matrix, assignment, details)


@dataclass(frozen=True)
class ThresholdGrid:
    min: float = 0.50
    max: float = 0.95
    step: float = 0.05

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"grid step must be > 0, got {self.step}")
        for bound in (self.min, self.max):
            check_tau(bound)
        if self.min > self.max + 1e-12:
            raise ConfigError(f"empty grid: min {self.min} > max {self.max}")

    def values(self) -> list[float]:
        count = math.floor((self.max - self.min) / self.step + 1e-9) + 1
        return [round(self.min + k * self.step, 10) for k in range(count)]


@dataclass
class SweepRow:
    tau: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mean_roiq: Optional[float]
    matched_pair_count: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def evaluate_at(matches: Sequence[ReportMatch], tau: float) -> SweepRow:
    tp = fp = fn = 0
    kept_roiq = []
    for rm in matches:
        res = rm.at(tau)
        tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
        kept_roiq.extend(rm.pair_details[(i, j)]["roiq"] for i, j, _ in res.pairs)
    cov = coverage_from_counts(tp, fp, fn, empty_is_perfect=False)
    return SweepRow(tau, tp, fp, fn, cov.precision, cov.recall, cov.f1,
                    mean_or_none(kept_roiq), len(kept_roiq))


def sweep_thresholds(matches: Sequence[ReportMatch], grid: ThresholdGrid = ThresholdGrid()) -> list[SweepRow]:
    """Corpus P/R/F1 and mean RoIQ at every grid threshold, ascending.

    Assignments are reused as-is; only the gate moves.
    """
    return [evaluate_at(matches, tau) for tau in grid.values()]
