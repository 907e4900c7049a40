"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor, backward


class OracleError(RuntimeError):
    """The function under test is not deterministic, so finite differences are meaningless."""


@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_errors: list[np.ndarray]
    tol: float
    analytic: list[np.ndarray] = field(default_factory=list)
    numeric: list[np.ndarray] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def max_rel_error_above(self, scale: float) -> float:
        """Worst relative error over entries where either gradient reaches ``scale``.

        Entries far below the finite-difference round-off level carry no
        information about the backward rule; this isolates the rest.
        """
        worst = 0.0
        for r, a, n in zip(self.rel_errors, self.analytic, self.numeric):
            keep = np.maximum(np.abs(a), np.abs(n)) >= scale
            if keep.any():
                worst = max(worst, float(r[keep].max()))
        return worst


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return np.abs(g_ad - g_fd) / denom


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*inputs)`` against central differences.

    Every input must be a leaf with ``requires_grad``; its data is perturbed in
    place and restored afterwards.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)

    def value() -> float:
        out = f(*xs)
        if out.data.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
        return float(out.data.reshape(-1)[0])

    v1, v2 = value(), value()
    if v1 != v2:
        raise OracleError(f"function is not deterministic: {v1!r} != {v2!r}")

    for x in xs:
        x.grad = None
    backward(f(*xs))
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]

    rel, numeric = [], []
    for x, g_ad in zip(xs, analytic):
        flat = x.data.reshape(-1)
        g_fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            g_fd[i] = (fp - fm) / (2 * eps)
        rel.append(relative_error(g_ad.reshape(-1), g_fd).reshape(x.shape))
        numeric.append(g_fd.reshape(x.shape))
    worst = max((float(r.max()) for r in rel if r.size), default=0.0)
    return GradCheckReport(worst, rel, tol, analytic, numeric)
