"""RoI Coverage, the RoI Quality Index, and corpus aggregation.

Text metrics (BLEU, ROUGE, embedding score) live in ``textmetrics``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class CoverageMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def coverage_from_counts(tp: int, fp: int, fn: int, empty_is_perfect: bool = True) -> CoverageMetrics:
    """Precision/recall/F1 from counts.

    With no predictions and no ground truth at all the result is 1/1/1 when
    ``empty_is_perfect`` (per-report display), otherwise 0/0/0.
    """
    if min(tp, fp, fn) < 0:
        raise ConfigError("counts must be non-negative")
    if tp + fp + fn == 0:
        v = 1.0 if empty_is_perfect else 0.0
        return CoverageMetrics(v, v, v, 0, 0, 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return CoverageMetrics(precision, recall, f1_score(precision, recall), tp, fp, fn)


def coverage(match) -> CoverageMetrics:
    """RoI Coverage of one MatchResult (anything with tp/fp/fn)."""
    return coverage_from_counts(match.tp, match.fp, match.fn)


@dataclass(frozen=True)
class AttributeSimilarities:
    """Per-field similarities of one matched pair.

    Optional descriptors are None when the ground truth leaves them empty;
    they then drop out of the descriptor mean instead of counting as zero.
    """

    s_region: float
    s_lesion: float
    s_density: Optional[float] = None
    s_morphology: Optional[float] = None
    s_uptake: Optional[float] = None

    def __post_init__(self):
        for name in ("s_region", "s_lesion", "s_density", "s_morphology", "s_uptake"):
            value = getattr(self, name)
            if value is None:
                if name in ("s_region", "s_lesion"):
                    raise ConfigError(f"{name} is required")
                continue
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, min(1.0, max(0.0, float(value))))

    @property
    def descriptors(self) -> list[float]:
        return [v for v in (self.s_density, self.s_morphology, self.s_uptake) if v is not None]

    def to_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)


def roiq(sims: AttributeSimilarities) -> float:
    """RoI Quality Index of one matched pair.

    ``sqrt(s_region * s_lesion)`` times the mean of the present descriptor
    similarities; with no descriptor present the second factor is 1.
    """
    core = math.sqrt(sims.s_region * sims.s_lesion)
    present = sims.descriptors
    if not present:
        return core
    return core * (math.fsum(present) / len(present))


@dataclass
class ReportScore:
    report_id: str
    coverage: CoverageMetrics
    pairs: list[dict[str, Any]] = field(default_factory=list)

    @property
    def mean_roiq(self) -> Optional[float]:
        vals = [p["roiq"] for p in self.pairs]
        return math.fsum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_id": self.report_id,
            "coverage": self.coverage.to_dict(),
            "mean_roiq": self.mean_roiq,
            "pairs": self.pairs,
        }


@dataclass
class CorpusScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mean_roiq: Optional[float]
    matched_pair_count: int
    mean_report_roiq: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def aggregate_corpus(reports: Sequence[ReportScore]) -> CorpusScore:
    """Micro-averaged coverage plus the mean RoIQ over all matched pairs.

    Unmatched RoIs only enter the counts. ``mean_report_roiq`` is the
    unweighted mean of per-report means, over reports with any match.
    """
    if not reports:
        raise ConfigError("cannot aggregate an empty corpus")
    tp = sum(r.coverage.tp for r in reports)
    fp = sum(r.coverage.fp for r in reports)
    fn = sum(r.coverage.fn for r in reports)
    cov = coverage_from_counts(tp, fp, fn, empty_is_perfect=False)
    pair_vals = [p["roiq"] for r in reports for p in r.pairs]
    per_report = [m for m in (r.mean_roiq for r in reports) if m is not None]
    return CorpusScore(
        tp=tp, fp=fp, fn=fn,
        precision=cov.precision, recall=cov.recall, f1=cov.f1,
        mean_roiq=math.fsum(pair_vals) / len(pair_vals) if pair_vals else None,
        matched_pair_count=len(pair_vals),
        mean_report_roiq=math.fsum(per_report) / len(per_report) if per_report else None,
    )


def mean_or_none(values: Iterable[float]) -> Optional[float]:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else None
