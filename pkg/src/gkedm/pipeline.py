"""Training, two-stage enhancement, distillation, evaluation and sweeps."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import distill as D
from . import tensor as T
from .datasets import MULTI_LABEL, NodeDataset
from .distill import DistillConfig
from .layers import Architecture, ConfigError, GraphModel, glorot, param_count
from .optim import Optimizer
from .tensor import ContractError, Tensor, backward

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """Raised when a training loss becomes NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1e-2
    backbone_lr_scale: float = 0.1
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    early_stop_patience: int = 50

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.backbone_lr_scale < 0:
            raise ConfigError("backbone_lr_scale must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)
    test_metric: float = float("nan")
    best_val_metric: float = float("nan")
    best_epoch: int = -1
    param_count: int = 0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    seed: int = 0
    model: str = ""
    dataset: str = ""
    method: str = "plain"
    alpha: float = 0.0
    baseline_metric: float | None = None

    @property
    def improvement(self) -> float | None:
        if self.baseline_metric is None:
            return None
        return self.test_metric - self.baseline_metric

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def micro_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def metric_from_logits(logits: np.ndarray, ds: NodeDataset, split: str) -> float:
    mask = ds.mask(split)
    if not mask.any():
        raise ContractError(f"split {split!r} is empty")
    z = logits[mask]
    if ds.task_kind == MULTI_LABEL:
        return micro_f1(z > 0.0, ds.labels[mask] == 1)
    return float(np.mean(np.argmax(z, axis=1) == ds.labels[mask]))


def evaluate(model: GraphModel, ds: NodeDataset, split: str = "test") -> float:
    """Accuracy (multi-class) or micro-F1 at sigmoid > 0.5 (multi-label) over a split."""
    if model.arch.in_dim != ds.feature_dim or model.arch.n_out != ds.n_outputs:
        raise ContractError(f"model expects {model.arch.in_dim}->{model.arch.n_out}, dataset is {ds.feature_dim}->{ds.n_outputs}")
    return metric_from_logits(model(ds.graph, ds.features).logits.data, ds, split)


# ---------------------------------------------------------------------------
# generic loop
# ---------------------------------------------------------------------------

LossFn = Callable[[GraphModel], tuple[Tensor, Tensor, dict[str, float]]]


def _make_optimizer(groups, cfg: TrainConfig) -> Optimizer:
    return Optimizer(groups, kind=cfg.optimizer, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                     momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def train_loop(model: GraphModel, ds: NodeDataset, cfg: TrainConfig, loss_fn: LossFn,
               groups: list[tuple[Tensor, float]], extra: Sequence[Tensor] = ()) -> TrainReport:
    """Full-batch training with early stopping on the validation metric.

    ``loss_fn`` returns ``(loss, logits, components)`` for the current
    parameters.  The model is left holding the best-validation parameters.
    """
    start = time.perf_counter()
    opt = _make_optimizer(groups, cfg)
    report = TrainReport(seed=cfg.seed, config=cfg.to_dict(), dataset=ds.name, model=model.arch.describe())
    best_state = model.state()
    best_val, best_epoch, since = -np.inf, -1, 0
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        for t in extra:
            t.grad = None
        loss, logits, comps = loss_fn(model)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"loss became {value} at epoch {epoch}")
        val = metric_from_logits(logits.data, ds, "val")
        report.rows.append({"epoch": epoch, "train_loss": value, "val_metric": val, **comps})
        if val > best_val:
            best_val, best_epoch, since = val, epoch, 0
            best_state = model.state()
        else:
            since += 1
        backward(loss)
        opt.step()
        if cfg.early_stop_patience and since >= cfg.early_stop_patience:
            break
    model.load_state(best_state)
    report.best_val_metric = float(best_val) if best_epoch >= 0 else evaluate(model, ds, "val")
    report.best_epoch = best_epoch
    report.test_metric = evaluate(model, ds, "test")
    report.param_count = param_count(model)
    report.wall_time = time.perf_counter() - start
    return report


def _plain_loss(ds: NodeDataset) -> LossFn:
    def fn(model: GraphModel):
        out = model(ds.graph, ds.features)
        loss = D.task_loss(out.logits, ds.labels, ds.train_mask, ds.task_kind)
        return loss, out.logits, {"L_CE": loss.item()}

    return fn


# ---------------------------------------------------------------------------
# stage 1: plain backbone
# ---------------------------------------------------------------------------


def build_architecture(ds: NodeDataset, kind: str, widths, n_heads: int = 0, m: int = 0, head_hidden=None,
                       pe_scale: str = "rms") -> Architecture:
    return Architecture(kind, tuple(widths), ds.feature_dim, ds.n_outputs, n_heads, m, head_hidden, pe_scale)


def train_model(model: GraphModel, ds: NodeDataset, cfg: TrainConfig) -> TrainReport:
    groups = [(p, cfg.learning_rate) for p in model.parameters()]
    return train_loop(model, ds, cfg, _plain_loss(ds), groups)


def pretrain_gcn(ds: NodeDataset, arch: Architecture, cfg: TrainConfig) -> tuple[GraphModel, TrainReport]:
    """Train a conv stack plus classifier on the task loss; returns the best-validation model."""
    if not arch.widths:
        raise ConfigError("backbone needs at least one conv layer")
    model = GraphModel(arch, seed=cfg.seed)
    report = train_model(model, ds, cfg)
    report.method = "pretrain"
    return model, report


# ---------------------------------------------------------------------------
# stage 2: replace the last conv layer with the attention layer
# ---------------------------------------------------------------------------


def enhanced_architecture(arch: Architecture, m: int, n_heads: int) -> Architecture:
    if len(arch.widths) < 2:
        raise ContractError("enhancement needs a backbone with at least two conv layers")
    d_model = arch.widths[-2]
    if n_heads < 1 or d_model % n_heads:
        raise ConfigError(f"n_heads={n_heads} must divide d_model={d_model}")
    return replace(arch, widths=arch.widths[:-1], n_heads=n_heads, pe_dim=m)


def enhance_with_gkedm(pretrained: GraphModel, ds: NodeDataset, m: int, n_heads: int, cfg: TrainConfig,
                       reuse_head: bool = False) -> tuple[GraphModel, TrainReport]:
    """Drop the last conv layer, attach PE injection + attention + head, fine-tune.

    The kept conv layers start from the pretrained weights and train at
    ``learning_rate * backbone_lr_scale``.  The head is fresh unless
    ``reuse_head`` is set and the widths allow transplanting it.
    """
    arch = enhanced_architecture(pretrained.arch, m, n_heads)
    model = GraphModel(arch, seed=cfg.seed + 1)
    for new, old in zip(model.convs, pretrained.convs):
        for (_, pn), (_, po) in zip(new.named_parameters(), old.named_parameters()):
            pn.data[...] = po.data
    if reuse_head:
        if pretrained.head.d_in != model.head.d_in or pretrained.head.hidden != model.head.hidden:
            raise ConfigError("cannot transplant the head: input widths differ")
        for (_, pn), (_, po) in zip(model.head.named_parameters(), pretrained.head.named_parameters()):
            pn.data[...] = po.data
    backbone = {id(p) for p in model.backbone_parameters()}
    groups = [(p, cfg.learning_rate * (cfg.backbone_lr_scale if id(p) in backbone else 1.0)) for p in model.parameters()]
    report = train_loop(model, ds, cfg, _plain_loss(ds), groups)
    report.method = "gkedm"
    return model, report


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------


def student_architecture(ds: NodeDataset, kind: str, widths, teacher: GraphModel | None = None, n_heads: int | None = None,
                         m: int | None = None, head_hidden=None) -> Architecture:
    """Student conv stack topped by an attention layer with the teacher's head count and PE settings."""
    pe_scale = "rms"
    if teacher is not None and teacher.gkedm is not None:
        n_heads = teacher.gkedm.n_heads if n_heads is None else n_heads
        m = teacher.gkedm.m if m is None else m
        pe_scale = teacher.arch.pe_scale
    if not n_heads or not m:
        raise ConfigError("student attention layer needs n_heads and m")
    return build_architecture(ds, kind, widths, n_heads, m, head_hidden, pe_scale)


def distill_student(teacher: GraphModel, student_arch: Architecture, ds: NodeDataset, dcfg: DistillConfig,
                    cfg: TrainConfig, init_state: dict | None = None) -> tuple[GraphModel, TrainReport]:
    """Train a student under ``dcfg.mode`` (attn, kd, fitnet, lsp or none).

    The teacher is evaluated once; its outputs and attention record are
    constants for the whole run.
    """
    if dcfg.mode == "attn":
        if teacher.gkedm is None:
            raise ConfigError("attention distillation needs a teacher with an attention layer")
        if not student_arch.has_gkedm:
            raise ConfigError("attention distillation needs a student with an attention layer")
        if student_arch.n_heads != teacher.gkedm.n_heads:
            raise ConfigError(f"student has {student_arch.n_heads} heads, teacher has {teacher.gkedm.n_heads}")
    t_out = teacher(ds.graph, ds.features, capture=teacher.gkedm is not None)
    t_logits, t_hidden = t_out.logits.data.copy(), t_out.hidden.data.copy()
    t_record = t_out.record.detach() if t_out.record is not None else None

    student = GraphModel(student_arch, seed=cfg.seed)
    if init_state is not None:
        student.load_state(init_state)
    groups = [(p, cfg.learning_rate) for p in student.parameters()]
    extra: list[Tensor] = []
    adapter = None
    if dcfg.mode == "fitnet":
        adapter = glorot(np.random.default_rng(cfg.seed + 7919), student_arch.widths[-1], t_hidden.shape[1])
        groups.append((adapter, cfg.learning_rate))
        extra.append(adapter)
    capture = dcfg.mode == "attn"

    def loss_fn(model: GraphModel):
        out = model(ds.graph, ds.features, capture=capture)
        task = D.task_loss(out.logits, ds.labels, ds.train_mask, ds.task_kind)
        comps = {"L_CE": task.item()}
        if dcfg.mode == "attn":
            parts = D.attention_components(t_record, out.record, dcfg.relation_set)
            comps.update({k: v.item() for k, v in parts.items()})
            loss = task if dcfg.alpha == 0 else T.add(task, T.scale(D._sum(list(parts.values())), dcfg.alpha))
        elif dcfg.mode == "kd":
            soft = D.kd_soft_loss(t_logits, out.logits, dcfg.kd_temperature)
            comps["L_KD"] = soft.item()
            loss = T.add(T.scale(task, dcfg.kd_hard_weight), T.scale(soft, dcfg.kd_soft_weight))
        elif dcfg.mode == "fitnet":
            fit = D.fitnet_loss(out.hidden, t_hidden, adapter)
            comps["L_FIT"] = fit.item()
            loss = T.add(task, T.scale(fit, dcfg.fitnet_weight))
        elif dcfg.mode == "lsp":
            lsp = D.lsp_loss(out.hidden, t_hidden, ds.graph, dcfg.lsp_kernel, dcfg.lsp_sigma, dcfg.lsp_degree)
            comps["L_LSP"] = lsp.item()
            loss = T.add(task, T.scale(lsp, dcfg.lsp_weight))
        else:
            loss = task
        return loss, out.logits, comps

    report = train_loop(student, ds, cfg, loss_fn, groups, extra)
    report.method = dcfg.mode
    report.alpha = dcfg.alpha if dcfg.mode == "attn" else 0.0
    report.config = {**report.config, "distill": dcfg.to_dict()}
    return student, report


def attention_loss_at(teacher: GraphModel, student: GraphModel, ds: NodeDataset, relations=("value",)) -> dict[str, float]:
    """Attention-distillation components for the current student parameters."""
    rt = teacher(ds.graph, ds.features, capture=True).record.detach()
    rs = student(ds.graph, ds.features, capture=True).record
    return {k: v.item() for k, v in D.attention_components(rt, rs, relations).items()}


# ---------------------------------------------------------------------------
# sweeps and comparisons
# ---------------------------------------------------------------------------


def _run_many(jobs: list[Callable[[], object]], workers: int = 1) -> list:
    if workers <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: j(), jobs))


@dataclass
class SweepRow:
    alpha: float
    distilled_metric: float
    baseline_metric: float
    improvement: float
    seeds: tuple[int, ...]


def alpha_sweep(teacher: GraphModel, student_arch: Architecture, ds: NodeDataset, alphas: Sequence[float],
                cfg: TrainConfig, dcfg: DistillConfig | None = None, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                workers: int = 1, min_points: int = 3) -> list[SweepRow]:
    """Improvement of attention distillation over the same-seed undistilled student, per alpha."""
    if len(alphas) < min_points:
        raise ContractError(f"alpha sweep needs at least {min_points} values, got {len(alphas)}")
    dcfg = dcfg or DistillConfig()
    seeds = tuple(seeds)

    def run(mode: str, alpha: float, seed: int) -> float:
        c = replace(dcfg, mode=mode, alpha=alpha)
        return distill_student(teacher, student_arch, ds, c, replace(cfg, seed=seed))[1].test_metric

    base = _run_many([lambda s=s: run("none", 0.0, s) for s in seeds], workers)
    rows = []
    for a in alphas:
        got = _run_many([lambda s=s, a=a: run("attn", float(a), s) for s in seeds], workers)
        rows.append(SweepRow(float(a), float(np.mean(got)), float(np.mean(base)),
                             float(np.mean(np.subtract(got, base))), seeds))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["alpha,distilled_metric,baseline_metric,improvement,n_seeds"]
    for r in rows:
        lines.append(f"{r.alpha!r},{r.distilled_metric!r},{r.baseline_metric!r},{r.improvement!r},{len(r.seeds)}")
    return "\n".join(lines) + "\n"


def compare_baselines(teacher: GraphModel, student_arch: Architecture, ds: NodeDataset, cfg: TrainConfig,
                      dcfg: DistillConfig | None = None, modes: Sequence[str] = ("kd", "fitnet", "lsp", "attn"),
                      seeds: Sequence[int] = (0,)) -> list[TrainReport]:
    """Run every distillation mode on one (teacher, student, dataset) triple.

    Each returned report carries the same-seed undistilled student metric as
    its baseline.
    """
    dcfg = dcfg or DistillConfig()
    reports = []
    for seed in seeds:
        c = replace(cfg, seed=seed)
        base = distill_student(teacher, student_arch, ds, replace(dcfg, mode="none"), c)[1]
        for mode in modes:
            rep = distill_student(teacher, student_arch, ds, replace(dcfg, mode=mode), c)[1]
            rep.baseline_metric = base.test_metric
            reports.append(rep)
    return reports
