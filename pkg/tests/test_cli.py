import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pmiv import forest
from pmiv.cli import EXIT_DATA, EXIT_PARSE, EXIT_USAGE, main, read_vectors
from conftest import HELLO_WORLD


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--preset", "texture", "--n-files", 25, "--seed", 3, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run("vectorize", corpus, "--out", d / "vec.jsonl", "--workers", 1) == 0
    assert run("train", d / "vec.jsonl", "--labels", corpus / "manifest.json",
               "--out", d / "model.json", "--report", d / "report.json", "--workers", 1) == 0
    return d


def test_vectorize_outputs_and_sidecar(trained):
    vectors = read_vectors(str(trained / "vec.jsonl"))
    assert len(vectors) == 50 and len(vectors[0].values) == 667
    with open(str(trained / "vec.jsonl") + ".schema.json") as fh:
        side = json.load(fh)
    assert side["schema_hash"] == vectors[0].schema_hash and side["length"] == 667
    assert side["config"]["mode"] == "pmiv"


def test_vectorize_rerun_byte_identical(corpus, trained, tmp_path):
    assert run("vectorize", corpus, "--out", tmp_path / "again.jsonl", "--workers", 2) == 0
    assert (tmp_path / "again.jsonl").read_bytes() == (trained / "vec.jsonl").read_bytes()


def test_csv_matches_jsonl(corpus, trained, tmp_path):
    assert run("vectorize", corpus, "--format", "csv", "--out", tmp_path / "v.csv") == 0
    a = read_vectors(str(trained / "vec.jsonl"))
    b = read_vectors(str(tmp_path / "v.csv"))
    assert [v.file_id for v in a] == [v.file_id for v in b]
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    with open(tmp_path / "v.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "file_id" and header[1] == "AddressOf_ExpectedType_1_mean"


def test_umiv_mode(corpus, tmp_path):
    assert run("vectorize", corpus, "--mode", "umiv", "--out", tmp_path / "u.jsonl") == 0
    assert len(read_vectors(str(tmp_path / "u.jsonl"))[0].values) == 73


def test_hello_world_vector(tmp_path, capsys):
    path = tmp_path / "hello.json"
    path.write_text(json.dumps(HELLO_WORLD))
    assert run("vectorize", path, "--dot-dir", tmp_path / "dot") == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["values"][-7:] == [1.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0]
    dots = sorted(os.listdir(tmp_path / "dot" / "hello-world"))
    assert dots == ["000_Main.dot", "001_.ctor.dot", "callgraph.dot"]


def test_input_errors(tmp_path):
    assert run("vectorize", tmp_path / "nope") == EXIT_USAGE
    (tmp_path / "empty").mkdir()
    assert run("vectorize", tmp_path / "empty") == EXIT_DATA
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.json").write_text("{not json")
    assert run("vectorize", bad) == EXIT_PARSE


def test_bad_files_skipped(tmp_path, capsys, caplog):
    (tmp_path / "x.json").write_text("{not json")
    (tmp_path / "h.json").write_text(json.dumps(HELLO_WORLD))
    assert run("vectorize", tmp_path) == 0
    captured = capsys.readouterr()
    assert len(captured.out.splitlines()) == 1
    assert "x.json" in caplog.text


def test_train_report_and_determinism(corpus, trained, tmp_path, capsys):
    report = json.loads((trained / "report.json").read_text())
    assert report["n_train"] == 35 and report["n_validation"] == 5 and report["n_test"] == 10
    assert set(report["test"]["classes"]) == {"benign", "malicious"}
    capsys.readouterr()
    assert run("train", trained / "vec.jsonl", "--labels", corpus / "manifest.json",
               "--out", tmp_path / "m.json", "--report", tmp_path / "r.json") == 0
    text = capsys.readouterr().out
    assert "Class" in text and "Precision" in text and "False Negative Rate" in text
    assert (tmp_path / "m.json").read_bytes() == (trained / "model.json").read_bytes()
    assert (tmp_path / "r.json").read_bytes() == (trained / "report.json").read_bytes()


def test_train_errors(corpus, trained, tmp_path):
    assert run("train", trained / "vec.jsonl", "--out", tmp_path / "m.json") == EXIT_USAGE
    assert run("train", trained / "vec.jsonl", "--labels", tmp_path / "missing.json",
               "--out", tmp_path / "m.json") == EXIT_USAGE
    labels = {v.file_id: "benign" for v in read_vectors(str(trained / "vec.jsonl"))}
    lab = tmp_path / "one.csv"
    lab.write_text("file_id,label\n" + "".join(f"{k},{v}\n" for k, v in labels.items()))
    assert run("train", trained / "vec.jsonl", "--labels", lab,
               "--out", tmp_path / "m.json") == EXIT_DATA


def test_score_reproduces_training_predictions(corpus, trained, tmp_path):
    assert run("score", corpus, "--model", trained / "model.json", "--out",
               tmp_path / "s.jsonl", "--timing", tmp_path / "t.json") == 0
    scores = [json.loads(l) for l in (tmp_path / "s.jsonl").read_text().splitlines()]
    model = forest.load((trained / "model.json").read_bytes())
    vectors = read_vectors(str(trained / "vec.jsonl"))
    expect = {v.file_id: forest.predict(model, v) for v in vectors}
    assert {s["file_id"]: (s["label"], s["score"]) for s in scores} == expect
    timing = json.loads((tmp_path / "t.json").read_text())
    assert timing["files"] == 50 and 0 < timing["median_ms"] <= timing["p95_ms"]
    assert run("score", corpus, "--model", trained / "model.json", "--out",
               tmp_path / "s2.jsonl") == 0
    assert (tmp_path / "s2.jsonl").read_bytes() == (tmp_path / "s.jsonl").read_bytes()


def test_score_errors(corpus, trained, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_bytes((trained / "model.json").read_bytes()[:100])
    assert run("score", corpus, "--model", bad) == EXIT_PARSE
    assert run("score", corpus, "--model", trained / "model.json", "--mode", "umiv") == EXIT_DATA


def test_similarity_matrix(corpus, tmp_path):
    files = sorted(p for p in os.listdir(corpus) if p != "manifest.json")[:4]
    assert run("similarity", *[corpus / f for f in files], "--out", tmp_path / "d.csv") == 0
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    m = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert m.shape == (4, 4) and (m == m.T).all() and (np.diag(m) == 0).all()
    assert run("similarity", corpus / files[0], "--level", "graph", "--p", 1,
               "--out", tmp_path / "g.csv") == 0
    assert ":Main" in (tmp_path / "g.csv").read_text()
    assert run("similarity", corpus / files[0], "--p", 0.5) == EXIT_USAGE


def test_dedup_groups_duplicates(tmp_path, capsys):
    a = dict(HELLO_WORLD)
    b = {**HELLO_WORLD, "file_id": "copy", "functions": HELLO_WORLD["functions"][::-1]}
    (tmp_path / "a.json").write_text(json.dumps(a))
    (tmp_path / "b.json").write_text(json.dumps(b))
    assert run("dedup", tmp_path) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["unique"] == 1
    assert out["duplicates"][0]["file_ids"] == ["hello-world", "copy"]


def test_config_file(tmp_path, corpus):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "pmiv", "partition": [0.5, 1.0], "workers": 1,
                               "forest": {"n_estimators": 3}}))
    f = sorted(p for p in os.listdir(corpus) if p != "manifest.json")[0]
    assert run("vectorize", corpus / f, "--config", cfg, "--out", tmp_path / "v.jsonl") == 0
    assert len(read_vectors(str(tmp_path / "v.jsonl"))[0].values) == 33 * 2 * 2 + 7
    for bad in ({"colour": 1}, {"mode": "x"}, {"split": [0.5, 0.5, 0.5]},
                {"forest": {"warm_start": True}}, {"partition": [0.4]}):
        cfg.write_text(json.dumps(bad))
        assert run("vectorize", corpus / f, "--config", cfg) == EXIT_USAGE


def test_synth_errors(tmp_path):
    assert run("synth", "--out", tmp_path) == EXIT_USAGE
    assert run("synth", "--preset", "texture") == EXIT_USAGE
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"preset": "topology", "n_files": 0}))
    assert run("synth", "--spec", spec, "--out", tmp_path / "c") == EXIT_DATA


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["vectorize", "x", "--mode", "bogus"])
    assert e.value.code == EXIT_USAGE


def test_module_entry_point(tmp_path):
    (tmp_path / "h.json").write_text(json.dumps(HELLO_WORLD))
    res = subprocess.run([sys.executable, "-m", "pmiv", "dedup", str(tmp_path / "h.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["unique"] == 1
