import numpy as np

from gkedm import tensor as T
from gkedm.optim import AdamState, Optimizer, adam_step
from gkedm.tensor import Tensor


def test_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    adam_step(p, np.zeros(2), AdamState(np.zeros(2), np.zeros(2)), lr=0.1)
    assert p.tolist() == [1.0, -2.0]


def test_first_adam_step_moves_by_lr():
    w = Tensor([1.0], requires_grad=True)
    opt = Optimizer([(w, 0.1)])
    T.backward(T.reduce_sum(T.mul(w, w)))
    opt.step()
    assert abs(w.data[0] - 0.9) < 1e-7


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    q = a @ a.T + np.eye(4)
    b = rng.normal(size=4)
    w = Tensor(np.zeros((1, 4)), requires_grad=True)
    opt = Optimizer([(w, 0.1)])
    for _ in range(200):
        opt.zero_grad()
        quad = T.scale(T.reduce_sum(T.mul(w, T.matmul(w, Tensor(q)))), 0.5)
        T.backward(T.sub(quad, T.reduce_sum(T.mul(w, Tensor(b[None, :])))))
        opt.step()
    w = w.data[0]
    assert np.linalg.norm(q @ w.data - b) < 1e-3


def test_zero_lr_parameter_untouched():
    a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=True)
    opt = Optimizer([(a, 0.0), (b, 0.1)], weight_decay=0.1)
    T.backward(T.reduce_sum(T.add(T.mul(a, a), T.mul(b, b))))
    opt.step()
    assert a.data[0] == 1.0 and b.data[0] < 1.0


def test_sgd_momentum():
    w = Tensor([1.0], requires_grad=True)
    opt = Optimizer([(w, 0.1)], kind="sgd", momentum=0.5)
    for _ in range(2):
        opt.zero_grad()
        w.grad = np.array([1.0])
        opt.step()
    assert abs(w.data[0] - (1.0 - 0.1 - 0.1 * 1.5)) < 1e-15
