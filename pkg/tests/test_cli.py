import csv
import os
import subprocess
import sys

import pytest

from coupled_mtl.cli import main
from coupled_mtl.harness import default_suite_config

CONFIG = """\
[experiment]
mode = mt_c
steps = 40
eval_every = 20

[model]
hidden_dims = 8

[synth]
n_cls_only = 40
n_att_only = 200
n_joint = 200
n_test = 100
seed = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(CONFIG)
    return path


def test_gen_synth_then_infer(tmp_path, config, capsys):
    out = tmp_path / "synth"
    assert main(["gen-synth", "--config", str(config), "--out", str(out)]) == 0
    names = sorted(os.listdir(out))
    assert names == ["relatedness.rel", "schema.ini", "synth.ini", "test.csv", "train_att_only.csv",
                     "train_cls_only.csv", "train_joint.csv"]
    rel = tmp_path / "emp.rel"
    assert main(["infer-rel", "--data", str(out / "train_joint.csv"), "--out", str(rel)]) == 0
    assert "emp=" in rel.read_text()


def test_bundled_config_is_the_default(tmp_path, capsys):
    out = tmp_path / "synth"
    assert main(["gen-synth", "--out", str(out)]) == 0
    assert "train_joint.csv" not in os.listdir(out)
    assert (out / "synth.ini").read_text() == default_suite_config().data.synth.to_ini()


def test_train_then_eval(tmp_path, config, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(run)]) == 0
    trained = capsys.readouterr().out
    assert sorted(os.listdir(run)) == ["checkpoint.json", "metrics.csv", "runlog.csv"]
    assert trained == (run / "metrics.csv").read_text()

    synth = tmp_path / "synth"
    main(["gen-synth", "--config", str(config), "--out", str(synth)])
    capsys.readouterr()
    preds = tmp_path / "preds.csv"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.json"), "--data", str(synth / "test.csv"),
                 "--predictions", str(preds)]) == 0
    evaluated = capsys.readouterr().out
    # the run log's test metrics were computed on the same generated test split
    assert evaluated == trained
    assert len(list(csv.reader(open(preds)))) == 101


def test_suite_command(tmp_path, config, capsys):
    out = tmp_path / "suite"
    assert main(["suite", "--config", str(config), "--modes", "st_cls,mt_nc", "--seeds", "2", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text == (out / "table.txt").read_text()
    assert {"table.csv", "table.txt", "transfer.csv", "metrics.csv", "st_cls_seed0", "mt_nc_seed1"} <= set(os.listdir(out))


@pytest.mark.parametrize("args, kind", [
    (["train", "--config", "missing.ini", "--out", "x"], "io"),
    (["suite", "--config", "{cfg}", "--modes", "bogus", "--seeds", "1", "--out", "{tmp}/s"], "config"),
    (["infer-rel", "--data", "{tmp}/d.csv", "--schema", "{tmp}/schema.ini", "--out", "{tmp}/r.rel"], "parse"),
])
def test_errors_are_one_line(args, kind, tmp_path, config, capsys):
    (tmp_path / "d.csv").write_text("id,x0\n")
    (tmp_path / "schema.ini").write_text("[schema]\nclasses = a, b\nattributes = u\nfeature_dim = 1\n")
    args = [a.format(cfg=config, tmp=tmp_path) for a in args]
    assert main(args) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error: {kind}: ")


def test_console_script_entry_point(tmp_path, config):
    proc = subprocess.run([sys.executable, "-m", "coupled_mtl.cli", "train", "--config", str(config),
                           "--out", str(tmp_path / "r"), "--mode", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "coupled_mtl.cli", "eval", "--checkpoint",
                           str(tmp_path / "none.json"), "--data", str(tmp_path / "none.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith("error: ")
