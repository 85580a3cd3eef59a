import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bitmol.numcore import (DTYPE, NonFiniteError, OptState, ParamStore, adamw_step, clip_grad_norm, gelu,
                            grad_check, layer_norm, lr_at_step, stable_softmax, value_and_grad)


def store(**arrays):
    return ParamStore({k: torch.tensor(v, dtype=DTYPE) for k, v in arrays.items()})


def test_param_store_sorted_and_frozen():
    p = store(b=[1.0], a=[2.0])
    assert p.names() == ["a", "b"]
    p.freeze("a")
    assert p.trainable_names() == ["b"]
    with pytest.raises(NonFiniteError):
        p["c"] = torch.tensor([float("nan")], dtype=DTYPE)


def test_grad_check_square():
    p = store(x=[1.0, 2.0])
    loss = lambda q: (q["x"] ** 2).sum()
    _, g = value_and_grad(loss, p)
    assert torch.equal(g["x"], torch.tensor([2.0, 4.0], dtype=DTYPE))
    rep = grad_check(loss, p, sample=2, tol=1e-8)
    assert rep.passed and rep.max_rel_error < 1e-8


def test_grad_check_layer_norm_affine():
    rng = np.random.default_rng(1)
    p = store(x=rng.normal(size=(3, 6)), s=rng.normal(size=6), b=rng.normal(size=6), w=rng.normal(size=(6, 2)))
    loss = lambda q: (layer_norm(q["x"], q["s"], q["b"]) @ q["w"]).pow(2).sum()
    rep = grad_check(loss, p, sample=40, eps=1e-5, tol=1e-5)
    assert rep.max_rel_error < 1e-5


PRIMITIVES = {
    "matmul": lambda a, b: (a @ b.T).sum(),
    "add": lambda a, b: ((a + b) ** 3).sum(),
    "mul": lambda a, b: (a * b).sum(),
    "gelu": lambda a, b: (gelu(a) * b).sum(),
    "softmax": lambda a, b: (stable_softmax(a) * b).sum(),
    "gather": lambda a, b: a[torch.tensor([0, 2, 2])].pow(2).sum() + b.sum(),
    "mean_square": lambda a, b: ((a - b) ** 2).mean(),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(7)
    p = store(a=rng.normal(size=(3, 4)), b=rng.normal(size=(3, 4)))
    rep = grad_check(lambda q: PRIMITIVES[name](q["a"], q["b"]), p, sample=24, tol=1e-5)
    assert rep.passed, rep.max_rel_error


def test_grad_check_rejects_nonfinite():
    p = store(x=[1.0])
    with pytest.raises(NonFiniteError):
        grad_check(lambda q: q["x"].sum() / 0.0, p, sample=1)


def test_adamw_examples():
    p = store(w=[1.0, -2.0])
    before = p["w"].clone()
    adamw_step(p, {"w": torch.zeros(2, dtype=DTYPE)}, OptState(), lr=0.1)
    assert torch.equal(p["w"], before)

    adamw_step(p, {"w": torch.zeros(2, dtype=DTYPE)}, OptState(), lr=0.1, weight_decay=0.01)
    assert torch.allclose(p["w"], before * 0.999, rtol=0, atol=1e-15)

    q = store(w=0.0)
    st_ = OptState()
    adamw_step(q, {"w": torch.tensor(0.5, dtype=DTYPE)}, st_, lr=1e-3)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    assert abs(float(q["w"]) - (-1e-3 * 0.5 / (0.5 + 1e-8))) < 1e-15
    assert st_.step == 1


def test_adamw_shape_mismatch():
    p = store(w=[1.0, 2.0])
    with pytest.raises(ValueError):
        adamw_step(p, {"w": torch.zeros(3, dtype=DTYPE)}, OptState(), lr=0.1)


def test_adamw_skips_frozen():
    p = store(w=[1.0], f=[3.0])
    p.freeze("f")
    adamw_step(p, {"w": torch.ones(1, dtype=DTYPE), "f": torch.ones(1, dtype=DTYPE)}, OptState(), lr=0.1)
    assert float(p["f"]) == 3.0 and float(p["w"]) != 1.0


def test_lr_schedule():
    assert lr_at_step(0, 12_000, 200_000, 2e-4) == 0.0
    assert lr_at_step(12_000, 12_000, 200_000, 2e-4) == 2e-4
    assert lr_at_step(200_000, 12_000, 200_000, 2e-4) == 0.0
    assert math.isclose(lr_at_step(6_000, 12_000, 200_000, 2e-4), 1e-4)
    for bad in [(-1, 10, 100), (101, 10, 100), (5, 100, 100)]:
        with pytest.raises(ValueError):
            lr_at_step(*bad, 1.0)


def test_softmax_examples():
    assert np.allclose(stable_softmax([0.0, 0.0]), [0.5, 0.5])
    out = stable_softmax([1000.0, 0.0])
    assert np.isfinite(out).all() and out[0] == 1.0 and out[1] < 1e-300
    out = stable_softmax([1.0, 2.0, 3.0], mask=[True, False, True])
    assert out[1] == 0.0 and abs(out.sum() - 1) < 1e-12
    with pytest.raises(ValueError):
        stable_softmax([1.0, 2.0], mask=[False, False])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(xs, c):
    a = stable_softmax(np.array(xs))
    b = stable_softmax(np.array(xs) + c)
    assert abs(a.sum() - 1) < 1e-12
    assert np.allclose(a, b, atol=1e-9)


def test_clip_grad_norm():
    g = {"a": torch.tensor([3.0], dtype=DTYPE), "b": torch.tensor([4.0], dtype=DTYPE)}
    assert clip_grad_norm(g, 1.0) == 5.0
    assert abs(math.sqrt(float(g["a"] ** 2 + g["b"] ** 2)) - 1.0) < 1e-9
    g = {"a": torch.tensor([0.3], dtype=DTYPE)}
    clip_grad_norm(g, 1.0)
    assert float(g["a"]) == 0.3


def test_gelu_tanh_constants():
    # tanh approximation at x = 1: 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
    expected = 0.5 * (1 + math.tanh(math.sqrt(2 / math.pi) * 1.044715))
    assert abs(float(gelu(torch.tensor(1.0, dtype=DTYPE))) - expected) < 1e-15
    assert abs(expected - 0.8411919906082768) < 1e-12


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    x = torch.tensor(rng.normal(size=(4, 8)), dtype=DTYPE)
    s, b = torch.ones(8, dtype=DTYPE), torch.zeros(8, dtype=DTYPE)
    assert torch.equal(gelu(layer_norm(x, s, b)), gelu(layer_norm(x, s, b)))
