"""Message-passing convolutions, the classifier head and the neighbourhood attention layer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .graph import CsrGraph, PeMatrix, laplacian_pe
from .tensor import ContractError, DimensionError, Tensor


class ConfigError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return T.relu(x)
    if activation == "none":
        return x
    raise ConfigError(f"unknown activation {activation!r}")


def _check_width(h: Tensor, d: int, where: str) -> None:
    if h.data.ndim != 2 or h.shape[1] != d:
        raise DimensionError(f"{where}: expected input width {d}, got shape {h.shape}")


class Module:
    """Anything holding named trainable tensors."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


class GcnConv(Module):
    kind = "gcn"

    def __init__(self, d_in: int, d_out: int, activation: str = "relu", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in, self.d_out, self.activation = d_in, d_out, activation
        self.weight = glorot(rng, d_in, d_out)
        self.bias = zeros(d_out)

    def __call__(self, g: CsrGraph, h: Tensor) -> Tensor:
        return gcn_forward(self, g, h)


class SageConv(Module):
    kind = "sage"

    def __init__(self, d_in: int, d_out: int, activation: str = "relu", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in, self.d_out, self.activation = d_in, d_out, activation
        self.weight_self = glorot(rng, d_in, d_out)
        self.weight_neigh = glorot(rng, d_in, d_out)
        self.bias = zeros(d_out)

    def __call__(self, g: CsrGraph, h: Tensor) -> Tensor:
        return sage_forward(self, g, h)


def gcn_forward(layer: GcnConv, g: CsrGraph, h: Tensor) -> Tensor:
    """``act(D^-1/2 A D^-1/2 H W + b)`` with self-loops in ``A``."""
    _check_width(h, layer.d_in, "gcn_forward")
    if h.shape[0] != g.n_nodes:
        raise DimensionError(f"gcn_forward: {h.shape[0]} rows for {g.n_nodes} nodes")
    g = g.add_self_loops()
    agg = T.spmm(g.gcn_matrix(), T.matmul(h, layer.weight))
    return _activate(T.add(agg, layer.bias), layer.activation)


def _neighbour_mean_matrix(g: CsrGraph):
    import scipy.sparse as sp

    key = "sage_mean"
    if key not in g._cache:
        dst, src = g.edge_dst, g.col_idx
        keep = dst != src
        dst, src = dst[keep], src[keep]
        deg = np.bincount(dst, minlength=g.n_nodes).astype(np.float64)
        w = 1.0 / deg[dst]
        g._cache[key] = sp.csr_matrix((w, (dst, src)), shape=(g.n_nodes, g.n_nodes))
    return g._cache[key]


def sage_forward(layer: SageConv, g: CsrGraph, h: Tensor) -> Tensor:
    """``act(H W_self + mean_{j in N(i)\\{i}} H_j W_neigh + b)``; no neighbours gives a zero mean."""
    _check_width(h, layer.d_in, "sage_forward")
    if h.shape[0] != g.n_nodes:
        raise DimensionError(f"sage_forward: {h.shape[0]} rows for {g.n_nodes} nodes")
    neigh = T.spmm(_neighbour_mean_matrix(g), h)
    out = T.add(T.matmul(h, layer.weight_self), T.matmul(neigh, layer.weight_neigh))
    return _activate(T.add(out, layer.bias), layer.activation)


CONV_KINDS = {"gcn": GcnConv, "sage": SageConv}


# ---------------------------------------------------------------------------
# classifier head
# ---------------------------------------------------------------------------


class ClassifierHead(Module):
    def __init__(self, d_in: int, n_out: int, hidden: int | None = None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = d_in if hidden is None else hidden
        self.d_in, self.hidden, self.n_out = d_in, hidden, n_out
        self.w1 = glorot(rng, d_in, hidden)
        self.b1 = zeros(hidden)
        self.w2 = glorot(rng, hidden, n_out)
        self.b2 = zeros(n_out)

    def __call__(self, h: Tensor) -> Tensor:
        return classifier_forward(self, h)


def classifier_forward(head: ClassifierHead, h: Tensor) -> Tensor:
    _check_width(h, head.d_in, "classifier_forward")
    z = T.relu(T.add(T.matmul(h, head.w1), head.b1))
    return T.add(T.matmul(z, head.w2), head.b2)


# ---------------------------------------------------------------------------
# neighbourhood multi-head attention
# ---------------------------------------------------------------------------


@dataclass
class AttentionRecord:
    """Per-head edge-packed attention plus the per-head Q/K/V slices.

    ``attention[h][e]`` is the weight node ``edge_dst[e]`` puts on
    neighbour ``col_idx[e]``.
    """

    attention: list[Tensor]
    query: list[Tensor]
    key: list[Tensor]
    value: list[Tensor]
    row_ptr: np.ndarray
    col_idx: np.ndarray
    d_head: int = field(default=0)

    @property
    def n_heads(self) -> int:
        return len(self.attention)

    def projection(self, which: str) -> list[Tensor]:
        try:
            return {"value": self.value, "query": self.query, "key": self.key}[which]
        except KeyError:
            raise ConfigError(f"unknown relation {which!r}; expected value, query or key") from None

    def detach(self) -> "AttentionRecord":
        def cut(ts):
            return [t.detach() for t in ts]

        return AttentionRecord(
            cut(self.attention), cut(self.query), cut(self.key), cut(self.value),
            self.row_ptr, self.col_idx, self.d_head,
        )


class GkedmAttention(Module):
    """Q/K/V projections with bias, per-head split, plus the PE mapping ``f``."""

    kind = "gkedm"

    def __init__(self, d_model: int, n_heads: int, m: int, rng=None):
        if n_heads < 1 or d_model % n_heads:
            raise ConfigError(f"n_heads={n_heads} must divide d_model={d_model}")
        if m < 1:
            raise ConfigError(f"PE width must be positive, got {m}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model, self.n_heads, self.m = d_model, n_heads, m
        self.d_head = d_model // n_heads
        self.w_q = glorot(rng, d_model, d_model)
        self.b_q = zeros(d_model)
        self.w_k = glorot(rng, d_model, d_model)
        self.b_k = zeros(d_model)
        self.w_v = glorot(rng, d_model, d_model)
        self.b_v = zeros(d_model)
        self.pe_map = glorot(rng, m, d_model)
        self.capture = False


def pe_inject(h: Tensor, pe: PeMatrix, f: Tensor) -> Tensor:
    """``H + PE f``."""
    if f.shape != (pe.m, h.shape[1]) or pe.values.shape[0] != h.shape[0]:
        raise DimensionError(f"pe_inject: H {h.shape}, PE {pe.values.shape}, f {f.shape} do not line up")
    return T.add(h, T.matmul(pe.values, f))


def gkedm_forward(layer: GkedmAttention, g: CsrGraph, h_hat: Tensor, capture: bool | None = None):
    """Masked multi-head attention over 1-hop neighbourhoods plus the residual.

    Returns ``(H_next, record)``; ``record`` is None unless capture is on.
    """
    _check_width(h_hat, layer.d_model, "gkedm_forward")
    g = g.add_self_loops()
    if h_hat.shape[0] != g.n_nodes:
        raise DimensionError(f"gkedm_forward: {h_hat.shape[0]} rows for {g.n_nodes} nodes")
    capture = layer.capture if capture is None else capture
    dst, src = g.edge_dst, g.col_idx
    q = T.add(T.matmul(h_hat, layer.w_q), layer.b_q)
    k = T.add(T.matmul(h_hat, layer.w_k), layer.b_k)
    v = T.add(T.matmul(h_hat, layer.w_v), layer.b_v)
    inv_sqrt = 1.0 / math.sqrt(layer.d_head)
    heads, maps, qs, ks, vs = [], [], [], [], []
    for hd in range(layer.n_heads):
        lo, hi = hd * layer.d_head, (hd + 1) * layer.d_head
        qh, kh, vh = T.slice_cols(q, lo, hi), T.slice_cols(k, lo, hi), T.slice_cols(v, lo, hi)
        logits = T.scale(T.reduce_sum(T.mul(T.gather_rows(qh, dst), T.gather_rows(kh, src)), axis=1), inv_sqrt)
        attn = T.segment_softmax(logits, g.row_ptr)
        heads.append(T.segment_sum(T.scale_rows(T.gather_rows(vh, src), attn), g.row_ptr))
        maps.append(attn)
        qs.append(qh)
        ks.append(kh)
        vs.append(vh)
    out = T.add(T.concat_cols(heads) if len(heads) > 1 else heads[0], h_hat)
    record = AttentionRecord(maps, qs, ks, vs, g.row_ptr, g.col_idx, layer.d_head) if capture else None
    return out, record


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    """Conv stack (``kind``, ``widths``), optional attention layer, and head."""

    kind: str
    widths: tuple[int, ...]
    in_dim: int
    n_out: int
    n_heads: int = 0
    pe_dim: int = 0
    head_hidden: int | None = None
    pe_scale: str = "rms"

    @property
    def has_gkedm(self) -> bool:
        return self.n_heads > 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "widths": list(self.widths), "in_dim": self.in_dim, "n_out": self.n_out,
            "n_heads": self.n_heads, "pe_dim": self.pe_dim, "head_hidden": self.head_hidden,
            "pe_scale": self.pe_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(d["kind"], tuple(d["widths"]), d["in_dim"], d["n_out"], d.get("n_heads", 0), d.get("pe_dim", 0),
                   d.get("head_hidden"), d.get("pe_scale", "rms"))

    def describe(self) -> str:
        s = f"{self.kind}:{','.join(map(str, self.widths))}"
        return s + (f"+gkedm(h={self.n_heads},m={self.pe_dim})" if self.has_gkedm else "")


def parse_arch(text: str) -> tuple[str, tuple[int, ...]]:
    """Parse ``kind:w1,w2,...`` (kinds: gcn, sage)."""
    kind, sep, rest = text.partition(":")
    kind = kind.strip().lower()
    if not sep or kind not in CONV_KINDS:
        raise ConfigError(f"architecture {text!r} must look like gcn:64,64 or sage:16")
    try:
        widths = tuple(int(w) for w in rest.split(",") if w.strip())
    except ValueError:
        raise ConfigError(f"architecture {text!r} has a non-integer width") from None
    if not widths or min(widths) < 1:
        raise ConfigError(f"architecture {text!r} needs at least one positive width")
    return kind, widths


@dataclass
class ModelOutput:
    logits: Tensor
    hidden: Tensor
    record: AttentionRecord | None


class GraphModel(Module):
    def __init__(self, arch: Architecture, seed: int = 0):
        if arch.kind not in CONV_KINDS:
            raise ConfigError(f"unknown conv kind {arch.kind!r}")
        if arch.pe_scale not in ("rms", "unit"):
            raise ConfigError(f"pe_scale must be rms or unit, got {arch.pe_scale!r}")
        rng = np.random.default_rng(seed)
        self.arch = arch
        conv = CONV_KINDS[arch.kind]
        dims = (arch.in_dim,) + tuple(arch.widths)
        self.convs = [conv(dims[i], dims[i + 1], "relu", rng) for i in range(len(arch.widths))]
        d = dims[-1]
        self.gkedm = GkedmAttention(d, arch.n_heads, arch.pe_dim, rng) if arch.has_gkedm else None
        self.head = ClassifierHead(d, arch.n_out, arch.head_hidden, rng)

    def backbone_parameters(self) -> list[Tensor]:
        return [p for c in self.convs for p in c.parameters()]

    def forward(self, g: CsrGraph, x: Tensor, capture: bool = False) -> ModelOutput:
        g = g.add_self_loops()
        h = x
        for conv in self.convs:
            h = conv(g, h)
        record = None
        if self.gkedm is not None:
            pe = self.positional_encoding(g)
            h, record = gkedm_forward(self.gkedm, g, pe_inject(h, pe, self.gkedm.pe_map), capture=capture)
        elif capture:
            raise ConfigError("model has no attention layer to capture")
        return ModelOutput(self.head(h), h, record)

    __call__ = forward

    def positional_encoding(self, g: CsrGraph) -> PeMatrix:
        """Laplacian PE; ``rms`` scaling multiplies by sqrt(n) so entries are O(1) like hidden features."""
        pe = laplacian_pe(g, self.gkedm.m)
        return pe.rescaled(math.sqrt(g.n_nodes)) if self.arch.pe_scale == "rms" else pe

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            raise ContractError(f"state keys differ: {sorted(set(params) ^ set(state))}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise DimensionError(f"{name}: shape {state[name].shape} vs {p.shape}")
            p.data[...] = state[name]

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()
