import json

import numpy as np
import pytest

import synth
from roieval.cli import main
from roieval.embedding import OneHotEmbedder
from roieval.pipeline import evaluate, parse_predictions, run_matching


@pytest.fixture
def noisy(tmp_path):
    corpus = synth.make_gt_corpus(12, seed=5)
    return synth.write_fixture(tmp_path, corpus, synth.noisy_predictions(corpus, seed=6))


def run_eval(gt, pred, out, *extra):
    return main(["evaluate", "--gt", str(gt), "--pred", str(pred), "--out", str(out), *extra])


def test_identity_corpus_scores_perfectly(tmp_path, capsys):
    corpus = synth.make_gt_corpus(6, seed=1)
    gt, pred = synth.write_fixture(tmp_path, corpus, synth.identity_predictions(corpus))
    assert run_eval(gt, pred, tmp_path / "out.json", "--embedder", "onehot") == 0
    report = json.loads((tmp_path / "out.json").read_text())
    c = report["corpus"]
    assert (c["precision"], c["recall"], c["f1"], c["mean_roiq"]) == (1.0, 1.0, 1.0, 1.0)
    assert report["config"]["prediction_source"] == "pre-extracted"
    assert report["nlp"]["bleu4"] == pytest.approx(100.0)
    assert "100.00" in capsys.readouterr().out


def test_missing_gt_exits_2_without_output(tmp_path, noisy):
    _, pred = noisy
    out = tmp_path / "never.json"
    assert run_eval(tmp_path / "absent.json", pred, out) == 2
    assert not out.exists()


def test_bad_prediction_schema_exits_4(tmp_path, noisy):
    gt, _ = noisy
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"report_id": "r000", "rois": [{"anatomic_region": "x"}]}]))
    assert run_eval(gt, bad, tmp_path / "o.json") == 4


def test_invalid_tau_and_grid_exit_4(tmp_path, noisy):
    gt, pred = noisy
    assert run_eval(gt, pred, tmp_path / "o.json", "--tau", "1.5") == 4
    assert main(["sweep", "--gt", str(gt), "--pred", str(pred), "--out", str(tmp_path / "s.json"),
                 "--grid-step", "0"]) == 4


def test_byte_identical_reruns(tmp_path, noisy):
    gt, pred = noisy
    run_eval(gt, pred, tmp_path / "a.json")
    run_eval(gt, pred, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_parallel_matches_serial(tmp_path, noisy):
    gt, pred = noisy
    run_eval(gt, pred, tmp_path / "serial.json")
    run_eval(gt, pred, tmp_path / "par.json", "--parallelism", "4")
    assert (tmp_path / "serial.json").read_bytes() == (tmp_path / "par.json").read_bytes()


def test_sweep_rows_and_consistency(tmp_path, noisy):
    gt, pred = noisy
    assert main(["sweep", "--gt", str(gt), "--pred", str(pred),
                 "--out", str(tmp_path / "s.json")]) == 0
    run_eval(gt, pred, tmp_path / "e.json")
    rows = json.loads((tmp_path / "s.json").read_text())["rows"]
    assert len(rows) == 10
    assert [r["tau"] for r in rows] == sorted(r["tau"] for r in rows)
    tps = [r["tp"] for r in rows]
    assert all(a >= b for a, b in zip(tps, tps[1:]))
    at_default = next(r for r in rows if r["tau"] == 0.7)
    corpus = json.loads((tmp_path / "e.json").read_text())["corpus"]
    for key in ("tp", "fp", "fn", "precision", "recall", "f1", "mean_roiq"):
        assert at_default[key] == corpus[key]


def test_extract_then_evaluate_records_path(tmp_path):
    corpus = synth.make_gt_corpus(3, seed=2, descriptors=False)
    lexicon = {r: "anatomic_region" for r in synth.REGIONS}
    lexicon.update({l: "lesion_type" for l in synth.LESIONS})
    lexicon.update({u: "fdg_uptake" for u in synth.UPTAKES})
    (tmp_path / "lex.json").write_text(json.dumps(lexicon))
    raw = [{"report_id": r.report_id, "report_text": r.report_text} for r in corpus]
    gt, pred = synth.write_fixture(tmp_path, corpus, raw)

    assert main(["extract", "--backend", "rules", "--lexicon", str(tmp_path / "lex.json"),
                 "--in", str(pred), "--out", str(tmp_path / "ex.json")]) == 0
    extracted = json.loads((tmp_path / "ex.json").read_text())
    assert [len(e["rois"]) for e in extracted] == [len(r.rois) for r in corpus]

    # online path: raw text evaluated with the rules backend
    assert run_eval(gt, pred, tmp_path / "online.json", "--backend", "rules",
                    "--lexicon", str(tmp_path / "lex.json")) == 0
    online = json.loads((tmp_path / "online.json").read_text())
    assert online["config"]["prediction_source"] == "extracted"
    assert online["config"]["extractor"]["backend"] == "rules"
    assert online["corpus"]["f1"] == 1.0

    # raw text with no extractor configured is a configuration error
    assert run_eval(gt, pred, tmp_path / "x.json") == 4


def test_parse_gt_diagnostics(tmp_path, capsys):
    good = "[Liver] - [Nodule] - [10 mm] - [3.1] - [] - [] - [Mild] - [A] - [B] - [3] - []"
    bad = "[Liver] - [Nodule] - [10 mm]"
    (tmp_path / "ann.txt").write_text(good + "\n" + bad + "\n")
    assert main(["parse-gt", "--in", str(tmp_path / "ann.txt")]) == 4
    err = capsys.readouterr().err
    assert "ann.txt:2:" in err and "byte offset" in err
    (tmp_path / "ok.txt").write_text(good + "\n")
    assert main(["parse-gt", "--in", str(tmp_path / "ok.txt")]) == 0


def test_split_command(capsys):
    assert main(["split", "--slices", "313"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["head_neck"] == [0, 78]
    assert out["toolkit"]["name"] == "roieval"
    assert main(["split", "--slices", "10"]) == 4


def test_graph_command(tmp_path):
    nodes = [{"bbox": [0, 0, 0, 2, 2, 2], "feature": [1, 0]},
             {"bbox": [6, 8, 0, 8, 10, 2], "feature": [0, 1]}]
    (tmp_path / "n.json").write_text(json.dumps(nodes))
    assert main(["graph", "--nodes", str(tmp_path / "n.json"), "--tau-d", "11", "--tau-s", "0.5",
                 "--out", str(tmp_path / "g.json")]) == 0
    g = json.loads((tmp_path / "g.json").read_text())
    assert [(e["i"], e["j"]) for e in g["edges"]] == [(0, 1), (1, 0)]
    assert g["edges"][0]["spatial_features"][:4] == [10.0, 0.6, 0.8, 0.0]
    assert g["toolkit"]["version"]


def test_missing_prediction_counts_as_empty():
    corpus = synth.make_gt_corpus(3, seed=4)
    preds = parse_predictions(synth.identity_predictions(corpus)[:2])
    emb = OneHotEmbedder()
    report = evaluate(run_matching(corpus, preds, emb), 0.7, emb, text_metrics=False)
    last = report["per_report"][-1]
    assert last["prediction_source"] == "missing"
    assert last["coverage"]["tp"] == 0 and last["coverage"]["fn"] == len(corpus[-1].rois)
    assert report["corpus"]["fn"] == len(corpus[-1].rois)


def test_unknown_prediction_id_rejected():
    corpus = synth.make_gt_corpus(1)
    preds = parse_predictions([{"report_id": "zzz", "rois": []}])
    with pytest.raises(ValueError):
        run_matching(corpus, preds, OneHotEmbedder())


def test_embedding_vectors_stay_read_only():
    v = OneHotEmbedder().embed("liver")
    with pytest.raises(ValueError):
        v[0] = 2.0
    assert np.count_nonzero(v) == 1
