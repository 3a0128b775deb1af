import csv
import subprocess
import sys

import numpy as np
import pytest

from vimco import cli, train

TOY = ["--data", "toy", "--latent-sizes", "6", "--batch-size", "4", "--baseline-hidden", "8", "--lr", "0.05"]


def run_train(out, *extra):
    return cli.main(["train", "--out", str(out), *TOY, *extra])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def read_pgm(path):
    raw = open(path, "rb").read()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    w, h = map(int, dims.split())
    assert magic == b"P5" and maxval == b"255"
    return np.frombuffer(rest, np.uint8).reshape(h, w)


def test_train_run_directory(tmp_path):
    assert run_train(tmp_path / "r", "--epochs", "3") == 0
    r = tmp_path / "r"
    for name in ("config.resolved", "metrics.csv", "report.csv", "checkpoints/best.nta", "checkpoints/final.nta"):
        assert (r / name).is_file(), name
    resolved = (r / "config.resolved").read_text()
    assert "train.lr = 0.05" in resolved and "data.source = toy" in resolved
    rows = read_csv(r / "metrics.csv")
    assert list(rows[0]) == list(train.METRIC_COLUMNS)
    rep = read_csv(r / "report.csv")
    assert len(rep) == 1 and int(rep[0]["steps"]) == 12


def test_training_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run_train(tmp_path / d, "--epochs", "2", "--estimator", "nvil", "--k", "3") == 0
    for name in ("metrics.csv", "config.resolved", "checkpoints/best.nta", "checkpoints/final.nta"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_sweep_makes_one_run_per_rate(tmp_path):
    assert run_train(tmp_path, "--epochs", "1", "--sweep", "0.1,0.01,0.001") == 0
    for v in ("0.1", "0.01", "0.001"):
        assert (tmp_path / f"lr-{v}" / "checkpoints" / "best.nta").is_file()
    rep = read_csv(tmp_path / "report.csv")
    assert [r["lr"] for r in rep] == ["0.1", "0.01", "0.001"]


@pytest.mark.parametrize("args", [
    ["train", "--estimator", "vimco", "--k", "1", "--out", "{tmp}"],
    ["train", "--data", "toy"],
    ["train", "--k", "two", "--out", "{tmp}"],
    ["train", "--data", "/nonexistent.amat", "--out", "{tmp}"],
    ["oracle-check", "--ks", "0", "--instances", "1"],
    ["eval-nll", "--checkpoint", "/nonexistent.nta"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(args, tmp_path, capsys):
    args = [a.replace("{tmp}", str(tmp_path / "o")) for a in args]
    assert cli.main(args) == 1
    assert "error" in capsys.readouterr().err


def test_vimco_k1_error_message(tmp_path, capsys):
    assert run_train(tmp_path, "--k", "1") == 1
    assert "K >= 2" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# toy run\ntrain.k = 3\ntrain.epochs = 1\ntrain.estimator = naive\ndata.source = toy\n"
                   "train.latent_sizes = 4\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--k", "2"]) == 0
    text = (tmp_path / "r" / "config.resolved").read_text()
    assert "train.k = 2" in text and "train.estimator = naive" in text and "train.latent_sizes = 4" in text
    cfg.write_text("train.kk = 3\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 1


def test_eval_commands(tmp_path):
    assert run_train(tmp_path / "r", "--epochs", "2") == 0
    ck = str(tmp_path / "r" / "checkpoints" / "best.nta")
    assert cli.main(["eval-nll", "--checkpoint", ck, "--data", "toy", "--samples", "50",
                     "--out", str(tmp_path / "n.csv")]) == 0
    assert cli.main(["eval-bound", "--checkpoint", ck, "--data", "toy", "--k", "1",
                     "--out", str(tmp_path / "b.csv")]) == 0
    n, = read_csv(tmp_path / "n.csv")
    b, = read_csv(tmp_path / "b.csv")
    assert n["split"] == "test" and int(n["cases"]) == 8 and int(n["samples"]) == 50
    assert float(n["nll"]) <= -float(b["bound"]) + 1e-9
    model, prop, _ = train.load_model(ck)
    from vimco import data
    x, _ = data.bars_and_stripes().view("test", False)
    assert float(n["nll"]) == train.eval_nll(model, prop, x, 50)


def test_oracle_check_report(tmp_path):
    out = tmp_path / "o.csv"
    assert cli.main(["oracle-check", "--instances", "2", "--ks", "2,3", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == list(cli.checks.REPORT_COLUMNS)
    assert all(r["pass"] == "1" for r in rows)
    assert any("finite_diff" in r["name"] for r in rows)
    assert cli.main(["oracle-check", "--instances", "1", "--ks", "5", "--budget", "10"]) == 1


def test_oracle_check_failure_exits_2(tmp_path, monkeypatch):
    bad = cli.checks.Check("x", 1.0, 2.0, 1.0, 1.0, False)
    monkeypatch.setattr(cli.checks, "oracle_suite", lambda *a: [bad])
    assert cli.main(["oracle-check", "--out", str(tmp_path / "o.csv")]) == 2


def test_probe_variance(tmp_path):
    out = tmp_path / "p.csv"
    assert cli.main(["probe-variance", "--instances", "1", "--ks", "2,5", "--out", str(out),
                     "--train-steps", "20", "--train-k", "3", "--data", "toy"]) == 0
    rows = read_csv(out)
    assert {r["source"] for r in rows} == {"exact", "train"}
    assert {r["estimator"] for r in rows if r["source"] == "exact"} == {"naive", "nvil", "vimco", "rws-wake"}


def test_complete_grid(tmp_path):
    assert run_train(tmp_path / "r", "--epochs", "3", "--mode", "sop-learned") == 0
    pgm = tmp_path / "g.pgm"
    assert cli.main(["complete", "--checkpoint", str(tmp_path / "r" / "checkpoints" / "best.nta"),
                     "--data", "toy", "--cases", "3", "--n", "5", "--out", str(pgm)]) == 0
    g = read_pgm(pgm)
    assert g.shape == (6 * 4, 3 * 4)
    # top halves are the given contexts in every row
    tops = g.reshape(6, 4, 3, 4)[:, :2]
    assert np.all(tops == tops[:1])
    bottoms = g.reshape(6, 4, 3, 4)[1:, 2:].astype(float)
    assert bottoms.var(axis=0).max() > 0


def test_complete_rejects_generative_checkpoint(tmp_path):
    assert run_train(tmp_path / "r", "--epochs", "1") == 0
    assert cli.main(["complete", "--checkpoint", str(tmp_path / "r" / "checkpoints" / "best.nta"),
                     "--data", "toy", "--out", str(tmp_path / "g.pgm")]) == 1


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "vimco.cli", "oracle-check", "--instances", "1", "--ks", "2"],
                       capture_output=True, text=True)
    assert p.returncode == 0
    assert p.stdout.startswith("name,expected,actual")
