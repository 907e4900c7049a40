"""Node-classification datasets: containers, synthetic SBM generators and JSON-lines I/O."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import CsrGraph, GraphValidationError, check_permutation
from .tensor import ContractError, Tensor

MULTI_CLASS = "multi-class"
MULTI_LABEL = "multi-label"
SPLITS = ("train", "val", "test")


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True)
class NodeDataset:
    graph: CsrGraph
    features: Tensor
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    task_kind: str = MULTI_CLASS
    n_outputs: int = 0
    name: str = "dataset"

    def __post_init__(self):
        n = self.graph.n_nodes
        if self.features.shape[0] != n:
            raise ContractError(f"{self.features.shape[0]} feature rows for {n} nodes")
        masks = [np.asarray(m, dtype=bool) for m in (self.train_mask, self.val_mask, self.test_mask)]
        for name, m in zip(SPLITS, masks):
            if m.shape != (n,):
                raise ContractError(f"{name} mask has shape {m.shape}, expected ({n},)")
        if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
            raise ContractError("train/val/test masks overlap")
        object.__setattr__(self, "train_mask", masks[0])
        object.__setattr__(self, "val_mask", masks[1])
        object.__setattr__(self, "test_mask", masks[2])
        labels = np.asarray(self.labels)
        if self.task_kind == MULTI_CLASS:
            labels = labels.astype(np.int64)
            if labels.shape != (n,):
                raise ContractError(f"class labels have shape {labels.shape}, expected ({n},)")
            if n and (labels.min() < 0 or labels.max() >= self.n_outputs):
                raise ContractError(f"class labels must lie in [0, {self.n_outputs})")
        elif self.task_kind == MULTI_LABEL:
            labels = labels.astype(np.int64)
            if labels.shape != (n, self.n_outputs):
                raise ContractError(f"label matrix has shape {labels.shape}, expected ({n}, {self.n_outputs})")
            if not np.isin(labels, (0, 1)).all():
                raise ContractError("multi-label entries must be 0 or 1")
        else:
            raise ContractError(f"unknown task kind {self.task_kind!r}")
        object.__setattr__(self, "labels", labels)

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ContractError(f"unknown split {split!r}")
        return getattr(self, f"{split}_mask")

    def equals(self, other: "NodeDataset") -> bool:
        return (
            self.graph == other.graph
            and self.task_kind == other.task_kind
            and self.n_outputs == other.n_outputs
            and np.array_equal(self.features.data, other.features.data)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(self.mask(s), other.mask(s)) for s in SPLITS)
        )


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _check_sbm_args(blocks, nodes_per_block, p_in, p_out, feature_dim, noise_sigma):
    if blocks < 1 or nodes_per_block < 1:
        raise ContractError(f"need at least one block and one node per block, got {blocks}x{nodes_per_block}")
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ContractError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_dim < blocks:
        raise ContractError(f"feature_dim {feature_dim} cannot hold {blocks} one-hot centroids")
    if noise_sigma < 0:
        raise ContractError("noise_sigma must be non-negative")


def _sbm_graph(rng: np.random.Generator, block_of: np.ndarray, p_in: float, p_out: float) -> CsrGraph:
    n = block_of.size
    same = block_of[:, None] == block_of[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n)) < prob
    upper = np.triu(draw, k=1)
    src, dst = np.nonzero(upper)
    return CsrGraph.from_edges(n, np.stack([src, dst], axis=1), symmetric=True)


def _stratified_masks(rng: np.random.Generator, block_of: np.ndarray, blocks: int):
    n = block_of.size
    train, val, test = (np.zeros(n, dtype=bool) for _ in range(3))
    for b in range(blocks):
        idx = rng.permutation(np.flatnonzero(block_of == b))
        k_tr = int(round(0.6 * idx.size))
        k_va = int(round(0.2 * idx.size))
        train[idx[:k_tr]] = True
        val[idx[k_tr:k_tr + k_va]] = True
        test[idx[k_tr + k_va:]] = True
    return train, val, test


def sbm_generate(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    noise_sigma: float,
    seed: int,
) -> NodeDataset:
    """Stochastic block model; label = block id, features = one-hot block centroid plus noise."""
    _check_sbm_args(blocks, nodes_per_block, p_in, p_out, feature_dim, noise_sigma)
    rng = np.random.default_rng(seed)
    block_of = np.repeat(np.arange(blocks), nodes_per_block)
    g = _sbm_graph(rng, block_of, p_in, p_out)
    feats = np.zeros((block_of.size, feature_dim))
    feats[np.arange(block_of.size), block_of] = 1.0
    feats += noise_sigma * rng.standard_normal(feats.shape)
    masks = _stratified_masks(rng, block_of, blocks)
    return NodeDataset(g, Tensor(feats), block_of, *masks, task_kind=MULTI_CLASS, n_outputs=blocks, name="sbm")


def multilabel_sbm_generate(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    noise_sigma: float,
    seed: int,
    n_labels: int = 5,
    label_probs=None,
) -> NodeDataset:
    """SBM whose nodes carry ``n_labels`` Bernoulli labels with block-dependent rates.

    ``label_probs`` (blocks x n_labels) defaults to uniform draws from the seed.
    """
    _check_sbm_args(blocks, nodes_per_block, p_in, p_out, feature_dim, noise_sigma)
    if n_labels < 1:
        raise ContractError("need at least one label")
    rng = np.random.default_rng(seed)
    block_of = np.repeat(np.arange(blocks), nodes_per_block)
    g = _sbm_graph(rng, block_of, p_in, p_out)
    feats = np.zeros((block_of.size, feature_dim))
    feats[np.arange(block_of.size), block_of] = 1.0
    feats += noise_sigma * rng.standard_normal(feats.shape)
    if label_probs is None:
        probs = rng.random((blocks, n_labels))
    else:
        probs = np.asarray(label_probs, dtype=np.float64)
        if probs.shape != (blocks, n_labels) or probs.min() < 0 or probs.max() > 1:
            raise ContractError(f"label_probs must be a ({blocks}, {n_labels}) matrix of probabilities")
    labels = (rng.random((block_of.size, n_labels)) < probs[block_of]).astype(np.int64)
    masks = _stratified_masks(rng, block_of, blocks)
    return NodeDataset(g, Tensor(feats), labels, *masks, task_kind=MULTI_LABEL, n_outputs=n_labels, name="sbm-multilabel")


def permute_nodes(ds: NodeDataset, perm) -> NodeDataset:
    """Relabel node ``i`` as ``perm[i]`` across graph, features, labels and masks."""
    perm = check_permutation(perm, ds.n_nodes)

    def move(a: np.ndarray) -> np.ndarray:
        out = np.empty_like(a)
        out[perm] = a
        return out

    return replace(
        ds,
        graph=ds.graph.permute(perm),
        features=Tensor(move(ds.features.data)),
        labels=move(ds.labels),
        train_mask=move(ds.train_mask),
        val_mask=move(ds.val_mask),
        test_mask=move(ds.test_mask),
    )


# ---------------------------------------------------------------------------
# JSON-lines I/O
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_jsonl(ds: NodeDataset) -> str:
    header = {
        "n_nodes": ds.n_nodes,
        "feature_dim": ds.feature_dim,
        "task_kind": ds.task_kind,
        ("n_classes" if ds.task_kind == MULTI_CLASS else "n_labels"): ds.n_outputs,
        "symmetric": ds.graph.symmetric,
        "name": ds.name,
    }
    lines = [json.dumps(header)]
    for i in range(ds.n_nodes):
        split = next((s for s in SPLITS if ds.mask(s)[i]), "none")
        label = int(ds.labels[i]) if ds.task_kind == MULTI_CLASS else [int(v) for v in ds.labels[i]]
        lines.append(json.dumps({"id": i, "features": [float(v) for v in ds.features.data[i]], "label": label, "split": split}))
    for dst, src in ds.graph.edges():
        if ds.graph.symmetric and src > dst:
            continue
        lines.append(json.dumps({"src": int(src), "dst": int(dst)}))
    return "\n".join(lines) + "\n"


def save_dataset(ds: NodeDataset, path) -> None:
    atomic_write_text(path, dataset_to_jsonl(ds))


def _require(obj: dict, key: str, kinds, lineno: int):
    if key not in obj:
        raise DatasetParseError(f"line {lineno}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise DatasetParseError(f"line {lineno}: field {key!r} has wrong type")
    if not isinstance(val, kinds):
        raise DatasetParseError(f"line {lineno}: field {key!r} has wrong type")
    return val


def load_dataset(path) -> NodeDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    records = []
    for lineno, line in enumerate(raw, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetParseError(f"line {lineno}: expected a JSON object")
        records.append((lineno, obj))
    if not records:
        raise DatasetParseError("line 1: missing header")
    lineno, header = records[0]
    n = _require(header, "n_nodes", int, lineno)
    d = _require(header, "feature_dim", int, lineno)
    kind = _require(header, "task_kind", str, lineno)
    symmetric = _require(header, "symmetric", bool, lineno)
    if kind == MULTI_CLASS:
        n_out = _require(header, "n_classes", int, lineno)
    elif kind == MULTI_LABEL:
        n_out = _require(header, "n_labels", int, lineno)
    else:
        raise DatasetParseError(f"line {lineno}: unknown task_kind {kind!r}")
    if n < 0 or d < 0:
        raise DatasetParseError(f"line {lineno}: negative size")

    feats = np.zeros((n, d))
    labels = np.zeros(n if kind == MULTI_CLASS else (n, n_out), dtype=np.int64)
    masks = {s: np.zeros(n, dtype=bool) for s in SPLITS}
    seen = np.zeros(n, dtype=bool)
    edges = []
    for lineno, obj in records[1:]:
        if "id" in obj:
            i = _require(obj, "id", int, lineno)
            if not 0 <= i < n:
                raise GraphValidationError(f"line {lineno}: node id {i} outside [0, {n})")
            if seen[i]:
                raise DatasetParseError(f"line {lineno}: duplicate node id {i}")
            seen[i] = True
            f = _require(obj, "features", list, lineno)
            if len(f) != d or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in f):
                raise DatasetParseError(f"line {lineno}: features must be {d} numbers")
            feats[i] = f
            lab = obj.get("label")
            if kind == MULTI_CLASS:
                if not isinstance(lab, int) or isinstance(lab, bool) or not 0 <= lab < n_out:
                    raise DatasetParseError(f"line {lineno}: label must be an int in [0, {n_out})")
                labels[i] = lab
            else:
                if not isinstance(lab, list) or len(lab) != n_out or any(v not in (0, 1) or isinstance(v, bool) for v in lab):
                    raise DatasetParseError(f"line {lineno}: label must be a list of {n_out} zeros/ones")
                labels[i] = lab
            split = _require(obj, "split", str, lineno)
            if split in masks:
                masks[split][i] = True
            elif split != "none":
                raise DatasetParseError(f"line {lineno}: unknown split {split!r}")
        elif "src" in obj or "dst" in obj:
            s = _require(obj, "src", int, lineno)
            t = _require(obj, "dst", int, lineno)
            if not (0 <= s < n and 0 <= t < n):
                raise GraphValidationError(f"line {lineno}: edge ({s}, {t}) references a node outside [0, {n})")
            edges.append((t, s))
        else:
            raise DatasetParseError(f"line {lineno}: neither a node nor an edge record")
    if not seen.all():
        raise DatasetParseError(f"node {int(np.flatnonzero(~seen)[0])} has no record")
    g = CsrGraph.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2), symmetric=symmetric)
    return NodeDataset(
        g, Tensor(feats), labels, masks["train"], masks["val"], masks["test"],
        task_kind=kind, n_outputs=n_out, name=str(header.get("name", path.stem)),
    )
