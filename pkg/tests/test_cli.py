import csv
import json

import pytest

from multiacct.cli import main
from multiacct.graphcore import BipartiteGraph

from conftest import FAST_EMBED


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


@pytest.fixture(scope="module")
def split_dir(tmp_path_factory, small_log):
    d = tmp_path_factory.mktemp("split")
    assert main(["simulate-split", str(small_log), "--s", "4", "--min-activities", "1",
                 "--records", str(d / "acts.csv"), "--ownership", str(d / "own.csv")]) == 0
    assert main(["ingest", str(d / "acts.csv"), "-o", str(d / "graph.txt"),
                 "--removed", str(d / "removed.txt")]) == 0
    return d


def fast_sets():
    out = []
    for k, v in FAST_EMBED.items():
        out += ["--set", f"{k}={v}"]
    return out


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_generate_and_split(tmp_path, capsys):
    code, out = run(capsys, "generate", "--users", "5", "--activities", "30", "--pages", "40",
                    "-o", tmp_path / "log.csv")
    assert code == 0 and json.loads(out)["users"] == 5
    code, out = run(capsys, "simulate-split", tmp_path / "log.csv", "--s", "3",
                    "--min-activities", "1", "--records", tmp_path / "a.csv",
                    "--ownership", tmp_path / "o.csv")
    info = json.loads(out)
    assert code == 0 and info["accounts"] == 15 and info["users"] == 5


def test_ingest_summary(split_dir, capsys):
    code, out = run(capsys, "ingest", split_dir / "acts.csv", "-o", split_dir / "g2.txt")
    info = json.loads(out)
    assert code == 0
    assert info["accounts"] == 160
    assert info["accounts_after"] + info["removed"] == info["accounts"]
    g = BipartiteGraph.load(split_dir / "g2.txt")
    assert g.n_accounts == info["accounts_after"]


def test_ingest_stdout(split_dir, capsys):
    code, out = run(capsys, "ingest", split_dir / "acts.csv", "--no-clean")
    assert code == 0 and out.count("\n") > 100


def test_katz_predictions_and_eval(split_dir, tmp_path, capsys):
    code, out = run(capsys, "katz", "--graph", split_dir / "graph.txt", "--alpha", "99",
                    "--predictions", tmp_path / "pred.csv", "--truth", split_dir / "own.csv",
                    "-o", tmp_path / "katz.npz")
    info = json.loads(out)
    assert code == 0 and info["converged"]
    assert 0 <= info["report"]["precision"] <= 1
    rows = list(csv.DictReader(open(tmp_path / "pred.csv")))
    assert rows and set(rows[0]) == {"u", "v", "prob", "label", "source_cluster"}
    code, out = run(capsys, "evaluate", "--predictions", tmp_path / "pred.csv",
                    "--truth", split_dir / "own.csv", "--graph", split_dir / "graph.txt",
                    "--roc", tmp_path / "roc.csv")
    rep = json.loads(out)
    assert code == 0
    assert rep["precision"] == pytest.approx(info["report"]["precision"])
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr")


def test_katz_nonconvergence_exit(split_dir, tmp_path, capsys):
    code, out = run(capsys, "katz", "--graph", split_dir / "graph.txt", "--method", "series",
                    "--max-terms", "2", "--tol", "1e-14")
    assert code == 4 and json.loads(out)["converged"] is False


def test_embed_and_cluster(split_dir, tmp_path, capsys):
    code, out = run(capsys, "embed", "--graph", split_dir / "graph.txt", "--d", "8",
                    "--num-walks", "2", "--walk-length", "10", "--window", "3",
                    "-o", tmp_path / "emb.txt")
    assert code == 0 and json.loads(out)["d"] == 8
    code, out = run(capsys, "cluster", "--embeddings", tmp_path / "emb.txt",
                    "--graph", split_dir / "graph.txt", "-c", "2", "-o", tmp_path / "cl.csv")
    info = json.loads(out)
    g = BipartiteGraph.load(split_dir / "graph.txt")
    assert code == 0 and sum(info["sizes"]) == g.n_accounts
    code, out = run(capsys, "cluster", "--embeddings", tmp_path / "emb.txt",
                    "--graph", split_dir / "graph.txt", "-c", "2")
    assert out.startswith("account_id,cluster\n")


@pytest.mark.parametrize("method", ["unsup-katz", "semi-katz", "semi-embed"])
def test_detect(small_log, tmp_path, capsys, method):
    code, out = run(capsys, "detect", small_log, "--method", method, "--out", tmp_path / "d",
                    "-c", "2", "--set", "simulate.s=4", *fast_sets())
    rep = json.loads(out)
    assert code == 0 and rep["auc"] > 0.7
    assert (tmp_path / "d" / "predictions.csv").exists()


def test_detect_then_evaluate_matches(small_log, tmp_path, capsys):
    code, out = run(capsys, "detect", small_log, "--out", tmp_path / "d", "-c", "2",
                    "--set", "simulate.s=4", *fast_sets(), "--emit", "all")
    rep = json.loads(out)
    d = tmp_path / "d"
    code, out = run(capsys, "evaluate", "--predictions", d / "predictions.csv",
                    "--truth", d / "ownership.csv", "--graph", d / "graph.txt",
                    "--queried", d / "queried.txt", "--clusters", d / "clusters.csv")
    again = json.loads(out)
    assert code == 0
    for k in ("precision", "recall", "f1"):
        assert again[k] == pytest.approx(rep[k], abs=1e-9), k
    # the file stores prob, which saturates where the in-run log-odds does not
    assert again["auc"] == pytest.approx(rep["auc"], abs=0.01)


def test_sweep_cli(small_log, tmp_path, capsys):
    code, out = run(capsys, "sweep", "alpha", "90,99", small_log, "--out", tmp_path / "sw",
                    "--set", "simulate.s=4")
    assert code == 0 and "value" in out.splitlines()[0].split(",")
    assert len(list((tmp_path / "sw").glob("*.png"))) == 4


def test_config_error_exit(small_log, tmp_path, capsys):
    code = main(["detect", str(small_log), "--set", "embed.d=abc", "--out", str(tmp_path)])
    assert code == 2
    assert "error" in capsys.readouterr().err
    assert main(["sweep", "alpha", "x,y", str(small_log)]) == 2


def test_data_error_exit(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "missing.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("account_id,page_id\na1,p1\n")
    own = tmp_path / "own.csv"
    own.write_text("account_id,user_id\nzz,u1\n")
    pred = tmp_path / "pred.csv"
    pred.write_text("u,v,prob,label,source_cluster\n")
    assert main(["evaluate", "--predictions", str(pred), "--truth", str(own)]) == 3
