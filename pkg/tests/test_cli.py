import subprocess
import sys

import pytest

from gkedm.checkpoint import load_checkpoint
from gkedm.cli import run
from gkedm.datasets import load_dataset


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--blocks", "4", "--nodes-per-block", "20", "--seed", "7", "--out", str(d / "g.jsonl")]) == 0
    assert run(["pretrain", "--data", str(d / "g.jsonl"), "--arch", "gcn:16,16", "--epochs", "20",
                "--out", str(d / "p.ckpt")]) == 0
    assert run(["enhance", "--ckpt", str(d / "p.ckpt"), "--m", "4", "--heads", "2", "--epochs", "20",
                "--out", str(d / "t.ckpt")]) == 0
    return d


def test_gen_data_loads(work):
    assert load_dataset(work / "g.jsonl").n_nodes == 80


def test_pretrain_writes_checkpoint_and_csv(work):
    assert run(["pretrain", "--data", str(work / "g.jsonl"), "--arch", "gcn:64,64", "--epochs", "5",
                "--out", str(work / "ckpt"), "--report", str(work / "r.csv")]) == 0
    assert (work / "r.csv").read_text().splitlines()[0].startswith("epoch,train_loss,val_metric")
    assert load_checkpoint(work / "ckpt")[1]["layer_dims"] == [16, 64, 64]


def test_distill_row_components(work):
    out = work / "d.csv"
    assert run(["distill", "--teacher", str(work / "t.ckpt"), "--student-arch", "sage:16", "--mode", "attn",
                "--relations", "value", "--alpha", "0.1", "--epochs", "3", "--report", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert {"L_CE", "L_A", "L_VR"} <= set(header)


def test_eval_and_report(work, capsys):
    assert run(["eval", "--ckpt", str(work / "t.ckpt"), "--split", "val", "--out", str(work / "e.json")]) == 0
    assert "val metric=" in capsys.readouterr().out
    assert run(["distill", "--teacher", str(work / "t.ckpt"), "--student-arch", "sage:8", "--mode", "kd",
                "--epochs", "2", "--json", str(work / "k.json")]) == 0
    assert run(["report", str(work / "k.json"), "--out", str(work / "s.csv")]) == 0
    assert len((work / "s.csv").read_text().splitlines()) == 2


def test_alpha_sweep_command(work):
    assert run(["alpha-sweep", "--teacher", str(work / "t.ckpt"), "--student-arch", "sage:8", "--alphas", "0.01,0.1,1",
                "--seeds", "0", "--epochs", "2", "--out", str(work / "sw.csv")]) == 0
    assert len((work / "sw.csv").read_text().splitlines()) == 4


def test_config_file_and_flag_precedence(work):
    cfg = work / "c.yaml"
    cfg.write_text(f"data: {{path: {work / 'g.jsonl'}}}\nmodel: {{arch: 'gcn:8'}}\ntrain: {{epochs: 4, seed: 2}}\n")
    assert run(["pretrain", "--config", str(cfg), "--epochs", "2", "--out", str(work / "c.ckpt"),
                "--json", str(work / "c.json")]) == 0
    import json
    rep = json.loads((work / "c.json").read_text())
    assert len(rep["rows"]) == 2
    assert rep["config"]["train"]["epochs"] == 2 and rep["config"]["train"]["seed"] == 2
    assert rep["config"]["train"]["learning_rate"] == 0.01 and rep["config"]["model"]["arch"] == "gcn:8"
    assert rep["seed"] == 2


def test_exit_codes(work, capsys):
    assert run(["pretrain", "--nonsense"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert run(["pretrain", "--data", str(work / "nope.jsonl"), "--arch", "gcn:4", "--out", str(work / "x")]) == 1
    assert run(["pretrain", "--data", str(work / "g.jsonl"), "--arch", "gcn:4", "--lr", "-1", "--out", str(work / "x")]) == 1
    bad = work / "bad.yaml"
    bad.write_text("train: {learning_rate: fast}\n")
    assert run(["pretrain", "--config", str(bad), "--out", str(work / "x")]) == 1
    assert "train.learning_rate" in capsys.readouterr().err
    assert run([]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(work):
    text = (work / "g.jsonl").read_text().splitlines()
    import json
    node = json.loads(text[1])
    node["features"][0] = 1e308
    text[1] = json.dumps(node)
    (work / "huge.jsonl").write_text("\n".join(text) + "\n")
    assert run(["pretrain", "--data", str(work / "huge.jsonl"), "--arch", "gcn:8", "--lr", "1e6", "--epochs", "50",
                "--out", str(work / "h.ckpt")]) == 2


def test_module_entry_point(work):
    out = subprocess.run([sys.executable, "-m", "gkedm", "eval", "--ckpt", str(work / "t.ckpt")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "test metric=" in out.stdout
