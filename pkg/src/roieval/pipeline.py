"""Corpus-level evaluation runs: load, extract, match, score, report."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .corpus import ReportRecord
from .embedding import Embedder
from .errors import ConfigError, SchemaError
from .extraction import ExtractedRoI, Extractor, validate_extracted
from .matching import ReportMatch, SweepRow, ThresholdGrid, check_tau, match_report, sweep_thresholds
from .metrics import ReportScore, aggregate_corpus, coverage_from_counts
from .textmetrics import corpus_text_scores

log = logging.getLogger(__name__)

PRE_EXTRACTED = "pre-extracted"
EXTRACTED = "extracted"


@dataclass(frozen=True)
class PredictionRecord:
    report_id: str
    report_text: Optional[str] = None
    rois: Optional[tuple[ExtractedRoI, ...]] = None


def parse_predictions(data: Any) -> list[PredictionRecord]:
    """Predictions JSON: an array of ``{"report_id", "rois"?: [...], "report_text"?}``.

    Records carrying ``rois`` are used as-is; the rest need ``report_text``
    and go through extraction.
    """
    if not isinstance(data, list):
        raise SchemaError("predictions file must hold a JSON array")
    out, seen = [], set()
    for k, obj in enumerate(data):
        if not isinstance(obj, dict) or obj.get("report_id") is None:
            raise SchemaError(f"prediction #{k} needs a report_id")
        rid = str(obj["report_id"])
        if rid in seen:
            raise SchemaError(f"duplicate prediction for report {rid!r}")
        seen.add(rid)
        text = obj.get("report_text")
        if text is not None and not isinstance(text, str):
            raise SchemaError(f"prediction {rid}: report_text must be text")
        rois = obj.get("rois")
        if rois is not None:
            if not isinstance(rois, list):
                raise SchemaError(f"prediction {rid}: rois must be a list")
            try:
                rois = tuple(validate_extracted(r) for r in rois)
            except SchemaError as exc:
                raise SchemaError(f"prediction {rid}: {exc}") from None
        elif text is None:
            raise SchemaError(f"prediction {rid}: needs rois or report_text")
        out.append(PredictionRecord(rid, text, rois))
    return out


def load_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    return parse_predictions(load_json(path))


@dataclass
class ReportRun:
    """Threshold-independent per-report state."""

    gt: ReportRecord
    source: str
    preds: tuple[ExtractedRoI, ...]
    candidate_text: str
    match: ReportMatch


def _run_one(gt: ReportRecord, pred: Optional[PredictionRecord], embedder: Embedder,
             extractor: Optional[Extractor]) -> ReportRun:
    if pred is None:
        source, rois, text = "missing", (), ""
    elif pred.rois is not None:
        source, rois = PRE_EXTRACTED, pred.rois
        text = pred.report_text if pred.report_text is not None else " ".join(
            r.extraction_text for r in rois)
    else:
        if extractor is None:
            raise ConfigError(
                f"report {gt.report_id} has raw text only; configure an extractor backend")
        source, text = EXTRACTED, pred.report_text or ""
        rois = tuple(extractor.extract(text))
    match = match_report(gt.report_id, list(rois), list(gt.rois), embedder)
    return ReportRun(gt, source, rois, text, match)


def run_matching(gt_records: Sequence[ReportRecord], predictions: Sequence[PredictionRecord],
                 embedder: Embedder, extractor: Optional[Extractor] = None,
                 parallelism: int = 1) -> list[ReportRun]:
    """Extract (when needed) and solve the assignment once per report, in corpus order."""
    if not gt_records:
        raise ConfigError("ground-truth corpus is empty")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    by_id = {p.report_id: p for p in predictions}
    unknown = sorted(set(by_id) - {g.report_id for g in gt_records})
    if unknown:
        raise SchemaError(f"predictions for unknown report ids: {unknown[:5]}")
    jobs = [(g, by_id.get(g.report_id)) for g in gt_records]
    missing = [g.report_id for g, p in jobs if p is None]
    if missing:
        log.warning("%d reports have no prediction and count as empty: %s",
                    len(missing), missing[:5])
    if parallelism == 1:
        return [_run_one(g, p, embedder, extractor) for g, p in jobs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(_run_one, g, p, embedder, extractor) for g, p in jobs]
        return [f.result() for f in futures]


def _source_summary(runs: Sequence[ReportRun]) -> str:
    sources = {r.source for r in runs} - {"missing"}
    if not sources:
        return "missing"
    return sources.pop() if len(sources) == 1 else "mixed"


def score_runs(runs: Sequence[ReportRun], tau: float) -> list[ReportScore]:
    scores = []
    for run in runs:
        res = run.match.at(tau)
        pairs = [run.match.pair_details[(i, j)] for i, j, _ in res.pairs]
        scores.append(ReportScore(run.gt.report_id,
                                  coverage_from_counts(res.tp, res.fp, res.fn), pairs))
    return scores


def toolkit_info() -> dict[str, str]:
    return {"name": "roieval", "version": __version__}


def evaluate(runs: Sequence[ReportRun], tau: float, embedder: Embedder,
             extractor: Optional[Extractor] = None, inputs: Optional[dict] = None,
             text_metrics: bool = True) -> dict[str, Any]:
    """The EvaluationReport as a JSON-ready dict."""
    tau = check_tau(tau)
    scores = score_runs(runs, tau)
    corpus = aggregate_corpus(scores)
    per_report = []
    for run, score in zip(runs, scores):
        entry = score.to_dict()
        entry.update(prediction_source=run.source, pred_count=len(run.preds),
                     gt_count=len(run.gt.rois),
                     assigned_pairs=[list(p) for p in run.match.assignment])
        per_report.append(entry)
    nlp = None
    if text_metrics:
        pairs = [(r.candidate_text, r.gt.report_text) for r in runs]
        nlp = corpus_text_scores(pairs, embedder).to_dict()
    return {
        "toolkit": toolkit_info(),
        "config": {
            "tau": tau,
            "embedder": embedder.descriptor(),
            "extractor": None if extractor is None else extractor.descriptor(),
            "prediction_source": _source_summary(runs),
            "inputs": inputs or {},
        },
        "corpus": corpus.to_dict(),
        "nlp": nlp,
        "per_report": per_report,
    }


def sweep(runs: Sequence[ReportRun], grid: ThresholdGrid, embedder: Embedder,
          extractor: Optional[Extractor] = None, inputs: Optional[dict] = None) -> dict[str, Any]:
    rows: list[SweepRow] = sweep_thresholds([r.match for r in runs], grid)
    return {
        "toolkit": toolkit_info(),
        "config": {
            "grid": {"min": grid.min, "max": grid.max, "step": grid.step},
            "embedder": embedder.descriptor(),
            "extractor": None if extractor is None else extractor.descriptor(),
            "prediction_source": _source_summary(runs),
            "inputs": inputs or {},
        },
        "rows": [r.to_dict() for r in rows],
    }


# --- rendering ------------------------------------------------------------------------


def _pct(x: Optional[float]) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[k]) for r in rows)) if rows else len(h)
              for k, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def render_evaluation(report: dict[str, Any]) -> str:
    c = report["corpus"]
    cfg = report["config"]
    out = [f"roieval {report['toolkit']['version']}  tau={cfg['tau']:.2f}  "
           f"embedder={cfg['embedder']['provider']}  predictions={cfg['prediction_source']}", ""]
    out.append(_table(
        ["TP", "FP", "FN", "Prec", "Rec", "F1", "RoIQ", "Pairs"],
        [[str(c["tp"]), str(c["fp"]), str(c["fn"]), _pct(c["precision"]), _pct(c["recall"]),
          _pct(c["f1"]), _pct(c["mean_roiq"]), str(c["matched_pair_count"])]]))
    if report.get("nlp"):
        n = report["nlp"]
        emb = "-" if n["embed_score"] is None else f"{n['embed_score']:.2f}"
        out += ["", _table(["BLEU-4", "BLEU-4 (sent)", "ROUGE-1", "ROUGE-L", "EmbedScore"],
                           [[f"{n['bleu4']:.2f}", f"{n['bleu4_sentence_mean']:.2f}",
                             f"{n['rouge1']:.2f}", f"{n['rougeL']:.2f}", emb]])]
    rows = []
    for r in report["per_report"]:
        cov = r["coverage"]
        rows.append([r["report_id"], str(cov["tp"]), str(cov["fp"]), str(cov["fn"]),
                     _pct(cov["precision"]), _pct(cov["recall"]), _pct(cov["f1"]),
                     _pct(r["mean_roiq"])])
    out += ["", _table(["Report", "TP", "FP", "FN", "Prec", "Rec", "F1", "RoIQ"], rows)]
    return "\n".join(out) + "\n"


def render_sweep(result: dict[str, Any]) -> str:
    rows = [[f"{r['tau']:.2f}", str(r["tp"]), str(r["fp"]), str(r["fn"]), _pct(r["precision"]),
             _pct(r["recall"]), _pct(r["f1"]), _pct(r["mean_roiq"])] for r in result["rows"]]
    return _table(["tau", "TP", "FP", "FN", "Prec", "Rec", "F1", "RoIQ"], rows) + "\n"


def write_json(path: str | Path, payload: Any) -> None:
    """Write via a temporary sibling so a failed run never leaves a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    tmp.replace(path)
