"""Command-line interface.

Exit codes: 0 success, 2 input/output problem (missing or unreadable file,
bad usage), 3 external service failure, 4 validation or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .corpus import SplitConfig, compute_region_ranges, load_corpus, parse_annotation
from .embedding import EmbedderConfig, make_embedder
from .errors import AnnotationError, ExternalServiceError, RoIEvalError, SchemaError
from .extraction import ExtractorConfig, make_extractor
from .matching import DEFAULT_TAU, ThresholdGrid
from .pipeline import (
    evaluate,
    load_json,
    load_predictions,
    render_evaluation,
    render_sweep,
    run_matching,
    sweep,
    toolkit_info,
    write_json,
)
from .roigraph import GraphConfig, build_graph, load_nodes

EXIT_OK, EXIT_IO, EXIT_SERVICE, EXIT_INVALID = 0, 2, 3, 4

EMBEDDER_ALIASES = {"local": "local-hash", "local-hash": "local-hash", "remote": "remote",
                    "onehot": "one-hot", "one-hot": "one-hot"}
BACKEND_ALIASES = {"llm": "remote-llm", "remote-llm": "remote-llm", "rules": "rules"}

log = logging.getLogger("roieval")


# --- shared option groups ---------------------------------------------------------------


def _add_embedder_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding")
    g.add_argument("--embedder", choices=sorted(EMBEDDER_ALIASES), default="local")
    g.add_argument("--embed-dim", type=int, default=None,
                   help="vector dimension (local default 256, one-hot default 4096)")
    g.add_argument("--embed-model", default="", help="model name for the remote embedder")
    g.add_argument("--embed-endpoint", default=None,
                   help="remote embedder URL (default: $EMBEDDER_ENDPOINT)")


def _add_extractor_opts(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("extraction")
    g.add_argument("--backend", choices=sorted(BACKEND_ALIASES), default=None,
                   required=required)
    g.add_argument("--lexicon", default=None, help="lexicon JSON for the rules backend")
    g.add_argument("--endpoint", default=None,
                   help="extraction service URL (default: $EXTRACTOR_ENDPOINT)")
    g.add_argument("--model", default="", help="model name for the LLM backend")
    g.add_argument("--prompt-file", default=None, help="prompt template for the LLM backend")


def _embedder(args):
    cfg = EmbedderConfig(provider=EMBEDDER_ALIASES[args.embedder], endpoint=args.embed_endpoint,
                         model_name=args.embed_model, dimension=args.embed_dim)
    return make_embedder(cfg)


def _extractor(args):
    if args.backend is None:
        return None
    kw = {}
    if args.prompt_file:
        kw["prompt_template"] = Path(args.prompt_file).read_text(encoding="utf-8")
    cfg = ExtractorConfig(backend=BACKEND_ALIASES[args.backend], endpoint=args.endpoint,
                          model_name=args.model, lexicon_path=args.lexicon, **kw)
    return make_extractor(cfg)


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# --- subcommands ------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    gt = load_corpus(args.gt)
    preds = load_predictions(args.pred)
    embedder = _embedder(args)
    extractor = _extractor(args)
    runs = run_matching(gt, preds, embedder, extractor, args.parallelism)
    report = evaluate(runs, args.tau, embedder, extractor,
                      inputs={"gt": args.gt, "pred": args.pred},
                      text_metrics=not args.no_text_metrics)
    write_json(args.out, report)
    _emit(render_evaluation(report), args.summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = ThresholdGrid(args.grid_min, args.grid_max, args.grid_step)
    gt = load_corpus(args.gt)
    preds = load_predictions(args.pred)
    embedder = _embedder(args)
    extractor = _extractor(args)
    runs = run_matching(gt, preds, embedder, extractor, args.parallelism)
    result = sweep(runs, grid, embedder, extractor, inputs={"gt": args.gt, "pred": args.pred})
    write_json(args.out, result)
    _emit(render_sweep(result), args.summary)
    return EXIT_OK


def _read_reports(path: str) -> list[tuple[str, str]]:
    """(report_id, text) pairs from a JSON array of reports or a plain text file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        return [(Path(path).stem, raw)]
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON array of reports")
    out = []
    for k, obj in enumerate(data):
        if not isinstance(obj, dict) or obj.get("report_id") is None \
                or not isinstance(obj.get("report_text"), str):
            raise SchemaError(f"{path}: item #{k} needs report_id and report_text")
        out.append((str(obj["report_id"]), obj["report_text"]))
    return out


def cmd_extract(args) -> int:
    reports = _read_reports(args.input)
    extractor = _extractor(args)
    with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
        results = list(pool.map(lambda rt: extractor.extract(rt[1]), reports))
    payload = [{"report_id": rid, "report_text": text, "rois": [r.to_dict() for r in rois]}
               for (rid, text), rois in zip(reports, results)]
    write_json(args.out, payload)
    total = sum(len(r) for r in results)
    print(f"extracted {total} RoIs from {len(reports)} reports -> {args.out}")
    return EXIT_OK


def _diagnose_lines(path: str) -> tuple[int, list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    ok, problems = 0, []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            parse_annotation(line)
            ok += 1
        except AnnotationError as exc:
            problems.append(f"{path}:{n}: {exc}")
    return ok, problems


def cmd_parse_gt(args) -> int:
    """Validate annotations; a JSON corpus stops at the first error, a text
    file (one annotation per line) reports every bad line."""
    text = Path(args.input).read_text(encoding="utf-8")
    try:
        json.loads(text)
        is_json = True
    except json.JSONDecodeError:
        is_json = False
    if is_json:
        try:
            records = load_corpus(args.input)
        except SchemaError as exc:
            print(f"{args.input}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        count = sum(len(r.rois) for r in records)
        print(f"{args.input}: {len(records)} reports, {count} annotations, all valid")
        if args.out:
            write_json(args.out, [r.to_dict() for r in records])
        return EXIT_OK
    ok, problems = _diagnose_lines(args.input)
    for p in problems:
        print(p, file=sys.stderr)
    print(f"{args.input}: {ok} valid, {len(problems)} invalid annotations")
    if args.out and not problems:
        rois = [parse_annotation(l).to_dict() for l in text.splitlines() if l.strip()]
        write_json(args.out, rois)
    return EXIT_INVALID if problems else EXIT_OK


def cmd_split(args) -> int:
    cfg = SplitConfig(args.overlap, args.head_frac, args.chest_end_frac)
    split = compute_region_ranges(args.slices, cfg)
    payload = {"toolkit": toolkit_info(), **split.to_dict()}
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_graph(args) -> int:
    nodes = load_nodes(args.nodes)
    graph = build_graph(nodes, GraphConfig(args.tau_d, args.tau_s))
    graph.extra["toolkit"] = toolkit_info()
    graph.extra["inputs"] = {"nodes": args.nodes}
    write_json(args.out, graph.to_dict(include_edge_inputs=not args.no_edge_inputs))
    print(f"{len(nodes)} nodes, {len(graph.edges)} directed edges -> {args.out}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roieval",
                                     description="Region-of-interest report evaluation toolkit")
    parser.add_argument("--version", action="version", version=f"roieval {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("evaluate", cmd_evaluate, "score predictions against ground truth"),
                               ("sweep", cmd_sweep, "coverage across a threshold grid")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--gt", required=True, help="ground-truth corpus JSON")
        p.add_argument("--pred", required=True, help="predictions JSON")
        p.add_argument("--out", required=True, help="output JSON path")
        p.add_argument("--summary", default=None, help="also write the text table here")
        p.add_argument("--parallelism", type=int, default=1)
        if name == "evaluate":
            p.add_argument("--tau", type=float, default=DEFAULT_TAU)
            p.add_argument("--no-text-metrics", action="store_true",
                           help="skip BLEU/ROUGE/embedding scores")
        else:
            p.add_argument("--grid-min", type=float, default=0.50)
            p.add_argument("--grid-max", type=float, default=0.95)
            p.add_argument("--grid-step", type=float, default=0.05)
        _add_embedder_opts(p)
        _add_extractor_opts(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("extract", help="extract RoI records from report text")
    _add_extractor_opts(p, required=True)
    p.add_argument("--in", dest="input", required=True,
                   help="JSON array of {report_id, report_text} or a plain text report")
    p.add_argument("--out", required=True)
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("parse-gt", help="validate ground-truth annotations")
    p.add_argument("--in", dest="input", required=True,
                   help="corpus JSON or a text file with one annotation per line")
    p.add_argument("--out", default=None, help="write the parsed records as JSON")
    p.set_defaults(func=cmd_parse_gt)

    p = sub.add_parser("split", help="slice ranges of the three physical regions")
    p.add_argument("--slices", type=int, required=True)
    p.add_argument("--overlap", type=int, default=SplitConfig.overlap_slices)
    p.add_argument("--head-frac", type=float, default=SplitConfig.head_fraction)
    p.add_argument("--chest-end-frac", type=float, default=SplitConfig.chest_end_fraction)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("graph", help="build the RoI relational graph")
    p.add_argument("--nodes", required=True, help="node JSON (optionally with a feature sidecar)")
    p.add_argument("--tau-d", type=float, required=True)
    p.add_argument("--tau-s", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-edge-inputs", action="store_true")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ExternalServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except RoIEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
