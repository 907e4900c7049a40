"""Compressed-sparse-row graphs, the normalized Laplacian and its eigenvectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .tensor import ContractError, Tensor


class GraphValidationError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class CsrGraph:
    """Directed graph; row ``i`` lists the in-neighbours ``N(i)`` of node ``i``.

    Neighbour lists are sorted and duplicate-free.  ``symmetric`` promises
    that ``(i, j)`` is present iff ``(j, i)`` is.
    """

    n_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    symmetric: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        row_ptr.flags.writeable = False
        col_idx.flags.writeable = False
        self.validate()

    def validate(self) -> None:
        n = self.n_nodes
        if n < 0:
            raise GraphValidationError(f"negative node count {n}")
        if self.row_ptr.shape != (n + 1,) or self.row_ptr[0] != 0:
            raise GraphValidationError(f"row_ptr must have length {n + 1} and start at 0")
        if np.any(np.diff(self.row_ptr) < 0):
            raise GraphValidationError("row_ptr must be non-decreasing")
        if self.row_ptr[-1] != self.col_idx.size:
            raise GraphValidationError(f"row_ptr ends at {self.row_ptr[-1]} but there are {self.col_idx.size} edges")
        if self.col_idx.size and (self.col_idx.min() < 0 or self.col_idx.max() >= n):
            bad = int(self.col_idx[(self.col_idx < 0) | (self.col_idx >= n)][0])
            raise GraphValidationError(f"edge endpoint {bad} outside [0, {n})")
        for i in range(n):
            nb = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if nb.size > 1 and np.any(np.diff(nb) <= 0):
                raise GraphValidationError(f"neighbours of node {i} not strictly ascending")
        if self.symmetric:
            a = self.adjacency()
            if (a != a.T).nnz:
                raise GraphValidationError("graph flagged symmetric but has an unmatched edge")

    # construction -------------------------------------------------------

    @classmethod
    def from_edges(cls, n_nodes: int, edges, symmetric: bool = False) -> "CsrGraph":
        """Build from ``(dst, src)`` pairs; symmetric graphs get both directions."""
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n_nodes):
            bad = int(e[(e < 0) | (e >= n_nodes)][0])
            raise GraphValidationError(f"edge endpoint {bad} outside [0, {n_nodes})")
        if symmetric:
            e = np.concatenate([e, e[:, ::-1]], axis=0)
        if e.size:
            e = np.unique(e, axis=0)
        rows, cols = (e[:, 0], e[:, 1]) if e.size else (np.zeros(0, np.int64), np.zeros(0, np.int64))
        counts = np.bincount(rows, minlength=n_nodes)
        row_ptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(n_nodes, row_ptr, cols, symmetric)

    @classmethod
    def from_dense(cls, adj: np.ndarray, symmetric: bool | None = None) -> "CsrGraph":
        adj = np.asarray(adj) != 0
        if symmetric is None:
            symmetric = bool(np.array_equal(adj, adj.T))
        m = sp.csr_matrix(adj.astype(np.float64))
        m.sort_indices()
        return cls(adj.shape[0], m.indptr, m.indices, symmetric)

    # views --------------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return int(self.col_idx.size)

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @cached_property
    def edge_dst(self) -> np.ndarray:
        """Row (target) index of every packed edge."""
        return np.repeat(np.arange(self.n_nodes), np.diff(self.row_ptr))

    def edges(self) -> np.ndarray:
        return np.stack([self.edge_dst, self.col_idx], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.n_edges)
        return sp.csr_matrix((data, self.col_idx, self.row_ptr), shape=(self.n_nodes, self.n_nodes))

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency().toarray()

    def has_self_loops(self) -> bool:
        return all(i in set(self.neighbors(i).tolist()) for i in range(self.n_nodes))

    def same_structure(self, other: "CsrGraph") -> bool:
        return (
            self.n_nodes == other.n_nodes
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CsrGraph):
            return NotImplemented
        return self.same_structure(other) and self.symmetric == other.symmetric

    def __hash__(self) -> int:
        return hash((self.n_nodes, self.row_ptr.tobytes(), self.col_idx.tobytes(), self.symmetric))

    # transforms ---------------------------------------------------------

    def add_self_loops(self) -> "CsrGraph":
        """Idempotent; the looped graph is cached on the instance."""
        if "looped" not in self._cache:
            if self.has_self_loops():
                self._cache["looped"] = self
            else:
                loops = np.stack([np.arange(self.n_nodes)] * 2, axis=1)
                e = np.concatenate([self.edges(), loops]) if self.n_edges else loops
                looped = CsrGraph.from_edges(self.n_nodes, e, symmetric=False)._with_symmetric(self.symmetric)
                looped._cache["looped"] = looped
                self._cache["looped"] = looped
        return self._cache["looped"]

    def remove_self_loops(self) -> "CsrGraph":
        e = self.edges()
        e = e[e[:, 0] != e[:, 1]]
        return CsrGraph.from_edges(self.n_nodes, e, symmetric=False)._with_symmetric(self.symmetric)

    def _with_symmetric(self, flag: bool) -> "CsrGraph":
        return CsrGraph(self.n_nodes, self.row_ptr, self.col_idx, flag)

    def permute(self, perm) -> "CsrGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = check_permutation(perm, self.n_nodes)
        e = perm[self.edges()] if self.n_edges else np.zeros((0, 2), np.int64)
        return CsrGraph.from_edges(self.n_nodes, e, symmetric=False)._with_symmetric(self.symmetric)

    def gcn_matrix(self) -> sp.csr_matrix:
        """``D^-1/2 A D^-1/2`` over the graph as stored (self-loops included if present)."""
        if "gcn" not in self._cache:
            deg = self.degrees().astype(np.float64)
            inv = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1.0)), 0.0)
            w = inv[self.edge_dst] * inv[self.col_idx]
            self._cache["gcn"] = sp.csr_matrix((w, self.col_idx, self.row_ptr), shape=(self.n_nodes,) * 2)
        return self._cache["gcn"]


def check_permutation(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractError(f"not a permutation of range({n})")
    return perm


def normalized_laplacian(g: CsrGraph) -> np.ndarray:
    """Dense ``I - D^-1/2 A D^-1/2`` with self-loops ignored."""
    if not g.symmetric:
        raise ContractError("normalized Laplacian needs a symmetric graph")
    n = g.n_nodes
    a = g.dense_adjacency()
    np.fill_diagonal(a, 0.0)
    deg = a.sum(axis=1)
    inv = np.zeros(n)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(n) - inv[:, None] * a * inv[None, :]


# ---------------------------------------------------------------------------
# Jacobi eigensolver
# ---------------------------------------------------------------------------


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q) once per sweep, pairs disjoint within a round."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.int64), np.array(qs, dtype=np.int64)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def symmetric_eigendecomposition(m, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; returns ascending eigenvalues and column eigenvectors.

    Each round rotates a set of disjoint index pairs at once; rotations on
    disjoint pairs commute, so a round equals the sequential cyclic update.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"need a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10, rtol=0.0):
        raise ContractError("matrix is not symmetric within 1e-10")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []
    converged = _off_norm(a) < tol
    for _ in range(max_sweeps):
        if converged:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
        converged = _off_norm(a) < tol
    if not converged:
        raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {_off_norm(a):.3e})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


# ---------------------------------------------------------------------------
# Laplacian positional encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeMatrix:
    """``values`` is ``n x m``; ``eigenvalues`` lists the kept (non-padded) columns."""

    values: Tensor
    eigenvalues: np.ndarray

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def rescaled(self, factor: float) -> "PeMatrix":
        return PeMatrix(Tensor(self.values.data * factor), self.eigenvalues)

    def permute(self, perm) -> "PeMatrix":
        perm = check_permutation(perm, self.values.shape[0])
        out = np.empty_like(self.values.data)
        out[perm] = self.values.data
        return PeMatrix(Tensor(out), self.eigenvalues)


def fix_sign(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec)))
    return -vec if vec[k] < 0 else vec


def laplacian_pe(g: CsrGraph, m: int, gap: float = 1e-8) -> PeMatrix:
    """Eigenvectors for the ``m`` smallest distinct eigenvalues, zero-padded to width ``m``."""
    if m <= 0:
        raise ContractError(f"PE width must be positive, got {m}")
    key = ("pe", m, gap)
    if key in g._cache:
        return g._cache[key]
    lap = normalized_laplacian(g)
    w, v = symmetric_eigendecomposition(lap)
    kept: list[int] = []
    for i, lam in enumerate(w):
        if not kept or lam - w[kept[-1]] > gap:
            kept.append(i)
        if len(kept) == m:
            break
    cols = np.zeros((g.n_nodes, m))
    for c, i in enumerate(kept):
        cols[:, c] = fix_sign(v[:, i])
    pe = PeMatrix(Tensor(cols), w[kept].copy())
    g._cache[key] = pe
    return pe
