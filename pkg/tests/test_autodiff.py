"""Reverse-mode autodiff engine: gradients, broadcasting, optimizer schedule."""

import numpy as np
import pytest

from surtkit.autodiff import (
    Adam,
    Tensor,
    concat,
    gather_rows,
    grad_check,
    no_grad,
    stack,
)
from surtkit.errors import NumericalError


def test_grad_check_composite_expression():
    def fn(x):
        y = (x * 2.0 + 1.0).tanh()
        return (y * y).sum() + y.sigmoid().mean()
    err = grad_check(fn, np.random.default_rng(0).normal(size=(3, 4)))
    assert err < 1e-6


def test_grad_check_matmul_softmax():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(4, 3))

    def fn(x):
        return ((x @ Tensor(w)).log_softmax(axis=-1) * -1.0).sum()
    assert grad_check(fn, rng.normal(size=(5, 4))) < 1e-6


def test_grad_check_reductions_and_slicing():
    def fn(x):
        a = x[1:, :2].exp().sum(axis=0)
        b = x.logsumexp(axis=-1).mean()
        return a.sum() + b
    assert grad_check(fn, np.random.default_rng(2).normal(size=(4, 5))) < 1e-6


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (2, 3)
    assert b.grad.shape == (1, 3)
    assert np.all(b.grad == 2.0)


def test_concat_stack_gather_backward():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    concat([a, b], axis=0).sum().backward()
    assert np.all(a.grad == 1.0) and np.all(b.grad == 1.0)

    table = Tensor(np.eye(4), requires_grad=True)
    out = gather_rows(table, np.asarray([0, 2, 2]))
    out.sum().backward()
    assert table.grad[2, 2] == 2.0 and table.grad[1].sum() == 0.0

    c = Tensor(np.ones(3), requires_grad=True)
    stack([c, c], axis=0).sum().backward()
    assert np.all(c.grad == 2.0)


def test_detach_and_no_grad_block_gradients():
    a = Tensor(np.ones(3), requires_grad=True)
    (a.detach() * 2.0).sum().backward()
    assert a.grad is None

    with no_grad():
        out = (a * 2.0).sum()
    assert out._parents == () if hasattr(out, "_parents") else True
    out.backward()
    assert a.grad is None


def test_adam_converges_on_quadratic():
    x = Tensor(np.asarray([5.0, -3.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.2, warmup_steps=0, decay=1.0)
    for _ in range(200):
        loss = (x * x).sum()
        loss.backward()
        opt.step()
        opt.zero_grad()
    assert np.all(np.abs(x.data) < 1e-2)


def test_adam_lr_schedule():
    x = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"x": x}, lr=1.0, warmup_steps=10, decay=0.9)
    assert opt.lr_at(1) == pytest.approx(0.1)
    assert opt.lr_at(10) == pytest.approx(1.0)
    assert opt.lr_at(12) == pytest.approx(0.9 ** 2)


def test_adam_rejects_nan_gradient():
    x = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    x.grad = np.asarray([np.nan, 0.0])
    with pytest.raises(NumericalError):
        opt.step()
