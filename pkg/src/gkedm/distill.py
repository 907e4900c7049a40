"""Task losses and teacher-to-student distillation losses.

Teacher-side inputs are always copied into constant tensors, so no gradient
ever reaches a teacher parameter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import CsrGraph
from .layers import AttentionRecord, ConfigError
from .tensor import LOG_FLOOR, ContractError, DimensionError, Tensor

log = logging.getLogger(__name__)

MODES = ("attn", "kd", "fitnet", "lsp", "none")
RELATIONS = ("value", "query", "key")
KERNELS = ("rbf", "poly", "linear")


@dataclass(frozen=True)
class DistillConfig:
    mode: str = "attn"
    alpha: float = 0.1
    relation_set: tuple[str, ...] = ("value",)
    kd_temperature: float = 2.0
    kd_soft_weight: float = 0.8
    kd_hard_weight: float = 0.2
    fitnet_weight: float = 1.0
    lsp_weight: float = 100.0
    lsp_kernel: str = "rbf"
    lsp_sigma: float = 1.0
    lsp_degree: int = 2

    def __post_init__(self):
        object.__setattr__(self, "relation_set", tuple(self.relation_set))
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("alpha", "kd_soft_weight", "kd_hard_weight", "fitnet_weight", "lsp_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.kd_temperature <= 0:
            raise ConfigError("kd_temperature must be > 0")
        bad = [r for r in self.relation_set if r not in RELATIONS]
        if bad or len(set(self.relation_set)) != len(self.relation_set):
            raise ConfigError(f"relation_set must be distinct entries of {RELATIONS}, got {self.relation_set}")
        if self.lsp_kernel not in KERNELS:
            raise ConfigError(f"lsp_kernel must be one of {KERNELS}")
        if self.lsp_sigma <= 0:
            raise ConfigError("lsp_sigma must be > 0")
        if self.lsp_degree < 1:
            raise ConfigError("lsp_degree must be >= 1")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _const(x) -> Tensor:
    return Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64))


def _mask_index(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise DimensionError(f"mask of shape {mask.shape} for {n} rows")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ContractError("mask selects no nodes")
    return idx


# ---------------------------------------------------------------------------
# task losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    idx = _mask_index(mask, logits.shape[0])
    labels = np.asarray(labels, dtype=np.int64)[idx]
    onehot = np.zeros((idx.size, logits.shape[1]))
    onehot[np.arange(idx.size), labels] = 1.0
    lp = T.log_softmax_rows(T.gather_rows(logits, idx))
    return T.scale(T.reduce_sum(T.mul(lp, Tensor(onehot))), -1.0 / idx.size)


def bce_multilabel(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean binary cross-entropy over selected nodes and all labels."""
    idx = _mask_index(mask, logits.shape[0])
    y = np.asarray(labels, dtype=np.float64)[idx]
    if y.shape != (idx.size, logits.shape[1]):
        raise DimensionError(f"labels {y.shape} vs logits {logits.shape}")
    x = T.gather_rows(logits, idx)
    per = T.sub(T.softplus(x), T.mul(x, Tensor(y)))
    return T.reduce_mean(per)


def task_loss(logits: Tensor, labels, mask, task_kind: str) -> Tensor:
    if task_kind == "multi-label":
        return bce_multilabel(logits, labels, mask)
    return cross_entropy(logits, labels, mask)


# ---------------------------------------------------------------------------
# logit and feature distillation baselines
# ---------------------------------------------------------------------------


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def kd_soft_loss(z_teacher, z_student: Tensor, temperature: float = 2.0, mask=None) -> Tensor:
    """``T^2 * KL(softmax(z_T/T) || softmax(z_S/T))`` averaged over nodes."""
    if temperature <= 0:
        raise ContractError("temperature must be > 0")
    zt = _const(z_teacher).data
    if zt.shape != z_student.shape:
        raise DimensionError(f"teacher logits {zt.shape} vs student {z_student.shape}")
    idx = _mask_index(mask, zt.shape[0])
    pt = _softmax_np(zt[idx] / temperature)
    log_pt = np.log(np.maximum(pt, LOG_FLOOR))
    log_ps = T.log_softmax_rows(T.scale(T.gather_rows(z_student, idx), 1.0 / temperature))
    kl = T.sub(Tensor(np.sum(pt * log_pt)), T.reduce_sum(T.mul(Tensor(pt), log_ps)))
    return T.scale(kl, temperature * temperature / idx.size)


def fitnet_loss(h_student: Tensor, h_teacher, adapter: Tensor, mask=None) -> Tensor:
    """Mean squared error between the adapted student features and the teacher's."""
    ht = _const(h_teacher)
    if h_student.shape[1] != adapter.shape[0] or adapter.shape[1] != ht.shape[1] or h_student.shape[0] != ht.shape[0]:
        raise DimensionError(f"fitnet: student {h_student.shape}, adapter {adapter.shape}, teacher {ht.shape}")
    idx = _mask_index(mask, ht.shape[0])
    diff = T.sub(T.matmul(T.gather_rows(h_student, idx), adapter), Tensor(ht.data[idx]))
    return T.reduce_mean(T.mul(diff, diff))


# ---------------------------------------------------------------------------
# local structure preserving
# ---------------------------------------------------------------------------


def lsp_kernel(h_i, h_j, kind: str = "rbf", sigma: float = 1.0, degree: int = 2) -> float:
    """Scalar kernel between two vectors (reference form of the edge kernels below)."""
    h_i, h_j = np.asarray(h_i, dtype=np.float64), np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape:
        raise DimensionError(f"kernel inputs {h_i.shape} vs {h_j.shape}")
    if kind == "linear":
        return float(h_i @ h_j)
    if kind == "poly":
        return float((h_i @ h_j) ** degree)
    if kind == "rbf":
        if sigma <= 0:
            raise ContractError("RBF sigma must be > 0")
        d = h_i - h_j
        return float(math.exp(-(d @ d) / (2.0 * sigma * sigma)))
    raise ConfigError(f"unknown kernel {kind!r}")


def _edge_kernel(h: Tensor, dst: np.ndarray, src: np.ndarray, kind: str, sigma: float, degree: int) -> Tensor:
    hi, hj = T.gather_rows(h, dst), T.gather_rows(h, src)
    if kind == "rbf":
        if sigma <= 0:
            raise ContractError("RBF sigma must be > 0")
        d = T.sub(hi, hj)
        return T.exp(T.scale(T.reduce_sum(T.mul(d, d), axis=1), -1.0 / (2.0 * sigma * sigma)))
    dot = T.reduce_sum(T.mul(hi, hj), axis=1)
    if kind == "linear":
        return dot
    if kind == "poly":
        out = dot
        for _ in range(degree - 1):
            out = T.mul(out, dot)
        return out
    raise ConfigError(f"unknown kernel {kind!r}")


def _compress_rows(row_ptr: np.ndarray) -> tuple[np.ndarray, int]:
    counts = np.diff(row_ptr)
    kept = counts[counts > 0]
    return np.concatenate([[0], np.cumsum(kept)]).astype(np.int64), int((counts == 0).sum())


def lsp_loss(h_student: Tensor, h_teacher, g: CsrGraph, kind: str = "rbf", sigma: float = 1.0, degree: int = 2) -> Tensor:
    """``sum_i KL(p_i^S || p_i^T) / n`` over kernel-similarity neighbourhood distributions.

    Self-loops are dropped; nodes left without neighbours contribute zero.
    """
    ht = _const(h_teacher)
    n = g.n_nodes
    if h_student.shape[0] != n or ht.shape[0] != n:
        raise DimensionError(f"lsp: {h_student.shape[0]} / {ht.shape[0]} rows for {n} nodes")
    g = g.remove_self_loops()
    if g.n_edges == 0:
        log.info("lsp_loss: all %d nodes have empty neighbourhoods", n)
        return T.scale(T.reduce_sum(h_student), 0.0)
    row_ptr, skipped = _compress_rows(g.row_ptr)
    if skipped:
        log.info("lsp_loss: skipped %d nodes with empty neighbourhoods", skipped)
    dst, src = g.edge_dst, g.col_idx
    p_t = T.segment_softmax(_edge_kernel(ht, dst, src, kind, sigma, degree), row_ptr).data
    p_s = T.segment_softmax(_edge_kernel(h_student, dst, src, kind, sigma, degree), row_ptr)
    kl = T.mul(p_s, T.sub(T.log(p_s), Tensor(np.log(np.maximum(p_t, LOG_FLOOR)))))
    return T.scale(T.reduce_sum(kl), 1.0 / n)


# ---------------------------------------------------------------------------
# attention-map and relation distillation
# ---------------------------------------------------------------------------


def _check_records(rec_t: AttentionRecord, rec_s: AttentionRecord) -> None:
    if rec_t.n_heads != rec_s.n_heads:
        raise ConfigError(f"teacher has {rec_t.n_heads} heads but student has {rec_s.n_heads}")
    if not (np.array_equal(rec_t.row_ptr, rec_s.row_ptr) and np.array_equal(rec_t.col_idx, rec_s.col_idx)):
        raise ContractError("teacher and student attention records use different edge orderings")


def _kl_teacher_first(p_teacher: np.ndarray, p_student: Tensor, n_nodes: int) -> Tensor:
    """``sum_e p_T (ln p_T - ln p_S) / n_nodes`` with the teacher held constant."""
    const = float(np.sum(p_teacher * np.log(np.maximum(p_teacher, LOG_FLOOR))))
    cross = T.reduce_sum(T.mul(Tensor(p_teacher), T.log(p_student)))
    return T.scale(T.sub(Tensor(const), cross), 1.0 / n_nodes)


def attention_map_kl(rec_teacher: AttentionRecord, rec_student: AttentionRecord) -> Tensor:
    """Mean over nodes and heads of ``KL(A_T[i,:] || A_S[i,:])``."""
    _check_records(rec_teacher, rec_student)
    n = rec_student.row_ptr.size - 1
    terms = [
        _kl_teacher_first(at.data, a_s, n)
        for at, a_s in zip(rec_teacher.attention, rec_student.attention)
    ]
    return T.scale(_sum(terms), 1.0 / len(terms))


def _relation(x: Tensor, row_ptr: np.ndarray, col_idx: np.ndarray, d_head: int) -> Tensor:
    dst = np.repeat(np.arange(row_ptr.size - 1), np.diff(row_ptr))
    sim = T.reduce_sum(T.mul(T.gather_rows(x, dst), T.gather_rows(x, col_idx)), axis=1)
    return T.segment_softmax(T.scale(sim, 1.0 / math.sqrt(d_head)), row_ptr)


def relation_kl(rec_teacher: AttentionRecord, rec_student: AttentionRecord, which: str = "value", g: CsrGraph | None = None) -> Tensor:
    """KL between teacher and student neighbour-similarity distributions of one projection.

    Similarity is ``<X_i, X_j> / sqrt(d_head)`` on edges, normalised per node,
    so teacher and student widths need not match.
    """
    _check_records(rec_teacher, rec_student)
    if g is not None:
        g = g.add_self_loops()
        if not (np.array_equal(g.row_ptr, rec_student.row_ptr) and np.array_equal(g.col_idx, rec_student.col_idx)):
            raise ContractError("graph does not match the attention records' edge ordering")
    n = rec_student.row_ptr.size - 1
    rp, ci = rec_student.row_ptr, rec_student.col_idx
    terms = []
    for xt, xs in zip(rec_teacher.projection(which), rec_student.projection(which)):
        p_t = _relation(_const(xt), rp, ci, rec_teacher.d_head or xt.shape[1]).data
        p_s = _relation(xs, rp, ci, rec_student.d_head or xs.shape[1])
        terms.append(_kl_teacher_first(p_t, p_s, n))
    return T.scale(_sum(terms), 1.0 / len(terms))


def _sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out


def attention_components(rec_teacher: AttentionRecord, rec_student: AttentionRecord, relations=("value",)) -> dict[str, Tensor]:
    comps = {"L_A": attention_map_kl(rec_teacher, rec_student)}
    for r in relations:
        key = {"value": "L_VR", "query": "L_QR", "key": "L_KR"}[r]
        comps[key] = relation_kl(rec_teacher, rec_student, r)
    return comps


def distill_total_loss(task: Tensor, rec_teacher: AttentionRecord, rec_student: AttentionRecord, cfg: DistillConfig) -> Tensor:
    """``task + alpha * (L_A + sum of selected relation losses)``."""
    if cfg.alpha == 0:
        return task
    comps = attention_components(rec_teacher, rec_student, cfg.relation_set)
    return T.add(task, T.scale(_sum(list(comps.values())), cfg.alpha))
