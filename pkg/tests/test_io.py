"""Checkpoints, config files and summary reports."""

import json

import numpy as np
import pytest

from gkedm.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from gkedm.config import ConfigFileError, load_config, validate_config
from gkedm.datasets import sbm_generate
from gkedm.layers import Architecture, GraphModel
from gkedm.pipeline import TrainReport
from gkedm.report import SUMMARY_COLUMNS, epoch_csv, load_report_json, read_summary, report_emit, report_json


# ----- checkpoints ----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    ds = sbm_generate(2, 5, 0.6, 0.1, 3, 0.5, seed=0)
    model = GraphModel(Architecture("sage", (6, 4), 3, 2, n_heads=2, pe_dim=3), seed=5)
    path = save_checkpoint(model, tmp_path / "m.ckpt", {"note": "x"})
    loaded, manifest = load_checkpoint(path)
    assert loaded.checksum() == model.checksum()
    assert manifest["layer_dims"] == [3, 6, 4] and manifest["n_heads"] == 2 and manifest["m"] == 3
    assert manifest["extra"] == {"note": "x"}
    a, b = model(ds.graph, ds.features).logits.data, loaded(ds.graph, ds.features).logits.data
    assert np.array_equal(a, b)


def test_checkpoint_overwrite_leaves_no_temp(tmp_path):
    arch = Architecture("gcn", (4,), 3, 2)
    save_checkpoint(GraphModel(arch, seed=0), tmp_path / "c")
    save_checkpoint(GraphModel(arch, seed=1), tmp_path / "c")
    assert load_checkpoint(tmp_path / "c")[0].checksum() == GraphModel(arch, seed=1).checksum()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c"]


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")
    path = save_checkpoint(GraphModel(Architecture("gcn", (4,), 3, 2)), tmp_path / "c")
    (path / "params.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# ----- config ---------------------------------------------------------------

def test_config_defaults_and_types(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model: {arch: 'gcn:8,8', m: 4}\ntrain: {epochs: 5, learning_rate: 1}\ndistill: {relation_set: [value, key]}\n")
    cfg = load_config(p)
    assert cfg["train"] == {"epochs": 5, "learning_rate": 1.0}
    assert cfg["distill"]["relation_set"] == ("value", "key")


@pytest.mark.parametrize("raw, path", [
    ({"train": {"learning_rate": "fast"}}, "train.learning_rate: expected float, got str"),
    ({"train": {"epochz": 3}}, "train.epochz: unknown key"),
    ({"data": {"generator": {"blocks": 2.5}}}, "data.generator.blocks: expected int"),
    ({"model": {"m": True}}, "model.m: expected int"),
    ({"extra": {}}, "extra: unknown section"),
    ({"distill": {"mode": "magic"}}, "distill: mode must be"),
])
def test_config_error_paths(raw, path):
    with pytest.raises(ConfigFileError, match=path.replace(".", r"\.")):
        validate_config(raw)


def test_config_yaml_syntax_error(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train: {epochs: [\n")
    with pytest.raises(ConfigFileError, match="line"):
        load_config(p)


# ----- reports --------------------------------------------------------------

def make_report(**kw):
    base = dict(rows=[{"epoch": 0, "train_loss": 1.5, "val_metric": 0.5, "L_CE": 1.5, "L_A": 0.2}],
                test_metric=0.8125, best_val_metric=0.75, best_epoch=0, param_count=1812, wall_time=3.0,
                config={"lr": 0.01}, seed=3, model="sage:16", dataset="sbm", method="attn", alpha=0.1,
                baseline_metric=0.7)
    base.update(kw)
    return TrainReport(**base)


def test_single_report_csv(tmp_path):
    report_emit([make_report()], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == list(SUMMARY_COLUMNS)
    assert len(lines) == 2


def test_improvement_column(tmp_path):
    report_emit([make_report(), make_report(baseline_metric=None)], tmp_path / "s.csv")
    rows = read_summary(tmp_path / "s.csv")
    assert abs(rows[0]["improvement"] - (rows[0]["final_metric"] - rows[0]["baseline_metric"])) <= 1e-12
    assert rows[1]["improvement"] is None


def test_json_csv_json_round_trip(tmp_path):
    report_emit([make_report(), make_report(seed=4, method="kd", alpha=0.0)], tmp_path / "a.json", "json")
    first = read_summary(tmp_path / "a.json")
    report_emit(first, tmp_path / "b.csv", "csv")
    report_emit(read_summary(tmp_path / "b.csv"), tmp_path / "c.json", "json")
    assert read_summary(tmp_path / "c.json") == first


def test_report_needs_rows_and_valid_format(tmp_path):
    with pytest.raises(ValueError):
        report_emit([], tmp_path / "x.csv")
    with pytest.raises(ValueError):
        report_emit([make_report()], tmp_path / "x.txt", "txt")


def test_report_json_omits_timing_by_default(tmp_path):
    rep = make_report()
    d = json.loads(report_json(rep))
    assert "wall_time" not in d and json.loads(report_json(rep, True))["wall_time"] == 3.0
    (tmp_path / "r.json").write_text(report_json(rep))
    back = load_report_json(tmp_path / "r.json")
    assert back.test_metric == rep.test_metric and back.rows == rep.rows


def test_epoch_csv_columns():
    text = epoch_csv(make_report())
    assert text.splitlines()[0] == "epoch,train_loss,val_metric,L_CE,L_A"
