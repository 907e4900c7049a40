"""Adam and SGD with per-parameter learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update of ``param``."""
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Optimizer:
    """Adam (default) or momentum SGD over ``(tensor, lr)`` pairs.

    Weight decay is coupled L2: ``weight_decay * p`` is added to the gradient.
    Parameters with learning rate 0 are left untouched.
    """

    groups: list[tuple[Tensor, float]]
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 0.0
    _state: dict = field(default_factory=dict, repr=False)

    def zero_grad(self) -> None:
        for p, _ in self.groups:
            p.grad = None

    def step(self) -> None:
        for p, lr in self.groups:
            if lr == 0 or p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            key = id(p)
            if self.kind == "adam":
                st = self._state.get(key)
                if st is None:
                    st = self._state[key] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
                adam_step(p.data, g, st, lr, self.beta1, self.beta2, self.eps)
            elif self.kind == "sgd":
                buf = self._state.get(key)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self._state[key] = buf
                p.data -= lr * buf
            else:
                raise ValueError(f"unknown optimizer {self.kind!r}")
