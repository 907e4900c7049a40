from dataclasses import replace

import numpy as np
import pytest

from gkedm.datasets import multilabel_sbm_generate, sbm_generate
from gkedm.distill import DistillConfig
from gkedm.layers import ConfigError, GraphModel, param_count
from gkedm.pipeline import (
    DivergenceError, TrainConfig, alpha_sweep, build_architecture, compare_baselines, distill_student,
    enhance_with_gkedm, enhanced_architecture, evaluate, micro_f1, pretrain_gcn, student_architecture, train_loop,
    train_model, _plain_loss,
)
from gkedm.tensor import ContractError, Tensor

FAST = TrainConfig(epochs=40, early_stop_patience=0)


@pytest.fixture(scope="module")
def ds():
    return sbm_generate(4, 15, 0.3, 0.03, 8, 1.0, seed=0)


@pytest.fixture(scope="module")
def teacher(ds):
    pre, _ = pretrain_gcn(ds, build_architecture(ds, "gcn", (16, 16)), FAST)
    model, _ = enhance_with_gkedm(pre, ds, m=4, n_heads=2, cfg=FAST)
    return model


# ----- metrics --------------------------------------------------------------

def test_micro_f1_cases():
    truth = np.array([[1, 0], [1, 1], [0, 0]], dtype=bool)
    assert micro_f1(truth, truth) == 1.0
    assert micro_f1(np.zeros_like(truth), truth) == 0.0
    pred = np.array([[1, 1], [1, 0], [0, 0]], dtype=bool)  # TP 2, FP 1, FN 1
    assert micro_f1(pred, truth) == pytest.approx(2 / 3, abs=1e-15)


def test_evaluate_multilabel_runs():
    ml = multilabel_sbm_generate(2, 10, 0.5, 0.05, 4, 0.5, seed=1, n_labels=3)
    model, rep = pretrain_gcn(ml, build_architecture(ml, "gcn", (8,)), replace(FAST, epochs=5))
    assert 0.0 <= rep.test_metric <= 1.0 and rep.test_metric == evaluate(model, ml)


# ----- training loop --------------------------------------------------------

def test_separable_sbm_reaches_full_accuracy():
    easy = sbm_generate(2, 20, 1.0, 0.0, 4, 0.1, seed=0)
    _, rep = pretrain_gcn(easy, build_architecture(easy, "gcn", (8,)), TrainConfig(epochs=200))
    assert rep.test_metric == 1.0


def test_training_is_deterministic(ds):
    arch = build_architecture(ds, "sage", (8,))
    a = pretrain_gcn(ds, arch, FAST)[1].to_dict()
    b = pretrain_gcn(ds, arch, FAST)[1].to_dict()
    assert a == b


def test_zero_epochs(ds):
    arch = build_architecture(ds, "gcn", (8,))
    model, rep = pretrain_gcn(ds, arch, replace(FAST, epochs=0))
    assert rep.rows == [] and model.checksum() == GraphModel(arch, seed=0).checksum()


def test_divergence_detected(ds):
    bad = replace(ds, features=Tensor(np.full(ds.features.shape, np.nan)))
    with pytest.raises(DivergenceError):
        pretrain_gcn(bad, build_architecture(ds, "gcn", (8,)), FAST)


def test_early_stopping_keeps_best(ds):
    model, rep = pretrain_gcn(ds, build_architecture(ds, "gcn", (8,)), TrainConfig(epochs=300, early_stop_patience=5))
    assert len(rep.rows) < 300
    assert rep.best_val_metric == max(r["val_metric"] for r in rep.rows)
    assert evaluate(model, ds, "val") == rep.best_val_metric


def test_train_config_validation():
    for bad in (dict(epochs=-1), dict(learning_rate=0), dict(optimizer="rmsprop"), dict(early_stop_patience=-2)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


# ----- enhancement ----------------------------------------------------------

def test_enhance_rejects_shallow_backbone_and_bad_heads(ds):
    with pytest.raises(ContractError):
        enhanced_architecture(build_architecture(ds, "gcn", (8,)), 4, 2)
    with pytest.raises(ConfigError):
        enhanced_architecture(build_architecture(ds, "gcn", (6, 8)), 4, 4)


def test_enhanced_param_count(ds):
    base = build_architecture(ds, "gcn", (12, 16))
    d, m = 12, 4
    model = GraphModel(enhanced_architecture(base, m, 3))
    conv = 8 * 12 + 12
    head = d * d + d + d * 4 + 4
    assert param_count(model) == conv + 3 * (d * d + d) + m * d + head


def test_enhance_with_frozen_backbone_keeps_weights(ds):
    pre, _ = pretrain_gcn(ds, build_architecture(ds, "gcn", (16, 16)), FAST)
    model, rep = enhance_with_gkedm(pre, ds, 4, 2, replace(FAST, backbone_lr_scale=0.0))
    assert np.array_equal(model.convs[0].weight.data, pre.convs[0].weight.data)
    assert rep.method == "gkedm"


def test_frozen_features_linear_probe_oracle(ds):
    """With f_v = 0, PE map = 0 and a frozen backbone only the head learns, so the
    validation metric should sit near a logistic-regression probe on the frozen features."""
    sklearn = pytest.importorskip("sklearn.linear_model")
    pre, _ = pretrain_gcn(ds, build_architecture(ds, "gcn", (16, 16)), TrainConfig(epochs=100))
    model = GraphModel(enhanced_architecture(pre.arch, 4, 2), seed=1)
    for new, old in zip(model.convs, pre.convs):
        for pn, po in zip(new.parameters(), old.parameters()):
            pn.data[...] = po.data
    model.gkedm.w_v.data[...] = 0
    model.gkedm.pe_map.data[...] = 0
    cfg = TrainConfig(epochs=200, early_stop_patience=0)
    head = {id(p) for p in model.head.parameters()}
    groups = [(p, cfg.learning_rate if id(p) in head else 0.0) for p in model.parameters()]
    rep = train_loop(model, ds, cfg, _plain_loss(ds), groups)
    feats = model(ds.graph, ds.features).hidden.data
    probe = sklearn.LogisticRegression(max_iter=2000).fit(feats[ds.train_mask], ds.labels[ds.train_mask])
    oracle = probe.score(feats[ds.val_mask], ds.labels[ds.val_mask])
    assert abs(rep.rows[-1]["val_metric"] - oracle) <= 0.2


# ----- distillation ---------------------------------------------------------

def test_distill_leaves_teacher_untouched(ds, teacher):
    before = teacher.checksum()
    sarch = student_architecture(ds, "sage", (8,), teacher)
    for mode in ("attn", "kd", "fitnet", "lsp"):
        distill_student(teacher, sarch, ds, DistillConfig(mode=mode), replace(FAST, epochs=3))
    assert teacher.checksum() == before


def test_student_at_teacher_weights_has_zero_attention_loss(ds, teacher):
    _, rep = distill_student(teacher, teacher.arch, ds, DistillConfig(relation_set=("value", "query", "key")),
                             replace(FAST, epochs=1), init_state=teacher.state())
    row = rep.rows[0]
    for k in ("L_A", "L_VR", "L_QR", "L_KR"):
        assert abs(row[k]) < 1e-12


def test_mode_none_matches_plain_training(ds, teacher):
    sarch = student_architecture(ds, "sage", (8,), teacher)
    _, rep = distill_student(teacher, sarch, ds, DistillConfig(mode="none", alpha=0.0), FAST)
    plain = train_model(GraphModel(sarch, seed=FAST.seed), ds, FAST)
    assert [r["train_loss"] for r in rep.rows] == [r["train_loss"] for r in plain.rows]
    assert rep.test_metric == plain.test_metric


def test_attention_mode_needs_teacher_attention(ds):
    plain, _ = pretrain_gcn(ds, build_architecture(ds, "gcn", (8,)), replace(FAST, epochs=1))
    with pytest.raises(ConfigError):
        distill_student(plain, build_architecture(ds, "sage", (8,), 2, 4), ds, DistillConfig(), FAST)


def test_attn_rows_carry_components(ds, teacher):
    _, rep = distill_student(teacher, student_architecture(ds, "sage", (8,), teacher), ds,
                             DistillConfig(alpha=0.1), replace(FAST, epochs=2))
    assert {"L_CE", "L_A", "L_VR"} <= set(rep.rows[0])
    assert rep.method == "attn" and rep.alpha == 0.1


def test_alpha_sweep_shape(ds, teacher):
    sarch = student_architecture(ds, "sage", (8,), teacher)
    cfg = replace(FAST, epochs=10)
    rows = alpha_sweep(teacher, sarch, ds, [0.0], cfg, seeds=(0, 1), min_points=1)
    assert len(rows) == 1 and rows[0].improvement == 0.0
    rows = alpha_sweep(teacher, sarch, ds, [0.01, 0.1, 1.0], cfg, seeds=(0,))
    assert [r.alpha for r in rows] == [0.01, 0.1, 1.0]
    with pytest.raises(ContractError):
        alpha_sweep(teacher, sarch, ds, [0.1], cfg)


def test_parallel_sweep_matches_serial(ds, teacher):
    sarch = student_architecture(ds, "sage", (8,), teacher)
    cfg = replace(FAST, epochs=5)
    serial = alpha_sweep(teacher, sarch, ds, [0.1, 1.0, 3.0], cfg, seeds=(0, 1))
    threaded = alpha_sweep(teacher, sarch, ds, [0.1, 1.0, 3.0], cfg, seeds=(0, 1), workers=4)
    assert serial == threaded


def test_compare_baselines_sets_baseline(ds, teacher):
    reps = compare_baselines(teacher, student_architecture(ds, "sage", (8,), teacher), ds, replace(FAST, epochs=5))
    assert [r.method for r in reps] == ["kd", "fitnet", "lsp", "attn"]
    assert len({r.baseline_metric for r in reps}) == 1
