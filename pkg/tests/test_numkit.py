import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glorepp.numkit import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    affine,
    autograd_gradients,
    concat,
    cross_entropy,
    gradient_check,
    layer_norm,
    masked_mean,
    noam_rate,
    scaled_dot_product_attention,
    soft_cross_entropy,
    softmax,
    stack,
)


def check(loss_fn, theta, tolerance=1e-4):
    _, grads = autograd_gradients(loss_fn, theta)
    f = lambda th: loss_fn({k: Tensor(v) for k, v in th.items()}).item()
    return gradient_check(f, theta, grads, tolerance=tolerance)


# --- softmax and cross-entropy ---------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(4)), 0.25, atol=1e-15)
    np.testing.assert_allclose(softmax(np.log([1.0, 3.0])), [0.25, 0.75], atol=1e-15)
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(softmax(x + 17.5), softmax(x), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)))
def test_softmax_is_distribution(x):
    p = softmax(x)
    assert np.all(p >= 0) and np.all(np.isfinite(p))
    assert abs(p.sum() - 1.0) <= 1e-12


def test_cross_entropy_examples():
    assert cross_entropy([1, 0, 0, 0], np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert cross_entropy([0.5, 0.5], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy([0.89, 0.11], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)


def test_gibbs_inequality():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = rng.integers(2, 8)
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert cross_entropy(p, q) >= cross_entropy(p, p) - 1e-12


# --- Adam -------------------------------------------------------------------

def test_adam_first_step_hand_value():
    state = AdamState.zeros_like(np.zeros(()), d_model=64, warmup_steps=400)
    eta = noam_rate(1, 64, 400)
    new, state = adam_step(np.array(1.0), np.array(0.5), state)
    # bias-corrected m_hat = g and v_hat = g^2 at step 1
    assert float(new) - 1.0 == pytest.approx(-eta * 0.5 / (0.5 + 1e-9), rel=1e-12)
    assert state.step == 1


def test_adam_zero_grad_no_move_and_determinism():
    p = np.array([1.0, -2.0])
    s = AdamState.zeros_like(p)
    new, _ = adam_step(p, np.zeros(2), s)
    np.testing.assert_array_equal(new, p)
    g = np.array([0.3, -0.1])
    a, sa = adam_step(p, g, s)
    b, sb = adam_step(p, g, s)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(sa.second_moment, sb.second_moment)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.zeros(2), AdamState.zeros_like(np.zeros(3)))


def test_noam_schedule_peaks_at_warmup():
    rates = [noam_rate(s, 64, 100) for s in range(1, 400)]
    assert int(np.argmax(rates)) + 1 == 100
    assert noam_rate(100, 64, 100) == pytest.approx(64 ** -0.5 * 100 ** -0.5)
    with pytest.raises(ValueError):
        noam_rate(0, 64, 100)


def test_adam_wrapper_matches_functional():
    params = {"w": np.array([1.0, 2.0])}
    opt = Adam(params, d_model=16, warmup_steps=10, constant_lr=0.01)
    opt.step({"w": np.array([0.5, -0.5])})
    ref, _ = adam_step(np.array([1.0, 2.0]), np.array([0.5, -0.5]),
                       AdamState.zeros_like(np.zeros(2), constant_lr=0.01))
    np.testing.assert_array_equal(params["w"], ref)


# --- gradient checking --------------------------------------------------------

def test_gradcheck_square():
    rep = gradient_check(lambda th: float(th["x"] ** 2), {"x": np.array(3.0)}, {"x": np.array(6.0)})
    assert rep.passed and rep.max_rel_error < 1e-7


def test_gradcheck_flags_corrupted_coordinate():
    theta = {"w": np.array([1.0, 2.0, 3.0])}
    f = lambda th: float(np.sum(th["w"] ** 2))
    rep = gradient_check(f, theta, {"w": np.array([2.0, 4.5, 6.0])})
    assert not rep.passed
    assert rep.worst == ("w", 1)


def test_gradcheck_rejects_non_finite():
    with pytest.raises(ValueError):
        gradient_check(lambda th: float("nan"), {"x": np.array(1.0)}, {"x": np.array(0.0)})


RNG = np.random.default_rng(5)
LN_W = RNG.normal(size=(2, 5))


@pytest.mark.parametrize("name,fn,theta", [
    ("matmul", lambda p: (p["a"] @ p["b"]).tanh().sum(),
     {"a": RNG.normal(size=(3, 4)), "b": RNG.normal(size=(4, 2))}),
    ("batched_matmul", lambda p: ((p["a"] @ p["b"]) ** 2).mean(),
     {"a": RNG.normal(size=(2, 3, 4)), "b": RNG.normal(size=(4, 5))}),
    ("affine", lambda p: affine(p["x"], p["w"], p["b"]).sigmoid().sum(),
     {"x": RNG.normal(size=(3, 4)), "w": RNG.normal(size=(4, 2)), "b": RNG.normal(size=2)}),
    ("layer_norm", lambda p: (layer_norm(p["x"], p["g"], p["b"]) * Tensor(LN_W)).sum(),
     {"x": RNG.normal(size=(2, 5)), "g": RNG.normal(size=5), "b": RNG.normal(size=5)}),
    ("attention", lambda p: scaled_dot_product_attention(
        p["q"], p["k"], p["v"], key_mask=np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)[:, None, :]).tanh().sum(),
     {"q": RNG.normal(size=(2, 3, 4)), "k": RNG.normal(size=(2, 3, 4)), "v": RNG.normal(size=(2, 3, 4))}),
    ("masked_mean", lambda p: (masked_mean(p["x"], np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)) ** 2).sum(),
     {"x": RNG.normal(size=(2, 3, 4))}),
    ("embedding", lambda p: (p["e"].take_rows(np.array([[0, 2, 2], [1, 0, 3]])).tanh() * Tensor(LN_W[0, :3])).sum(),
     {"e": RNG.normal(size=(4, 3))}),
    ("soft_xent", lambda p: soft_cross_entropy(p["z"], np.array([[0.89, 0.11, 0.0], [0.2, 0.3, 0.5]])),
     {"z": RNG.normal(size=(2, 3))}),
    ("elementwise", lambda p: ((p["x"].exp() + 1.0).log() / (p["x"] * p["x"] + 1.0) - p["x"].relu()).sum(),
     {"x": RNG.normal(size=7)}),
    ("stack_concat", lambda p: (concat([p["a"], p["b"]], axis=-1).sum(axis=0) * stack([p["a"][0], p["b"][1]]).sum()).sum(),
     {"a": RNG.normal(size=(2, 3)), "b": RNG.normal(size=(2, 3))}),
    ("transpose_softmax", lambda p: (p["x"].transpose(1, 0).softmax() * Tensor(np.arange(6.0).reshape(3, 2))).sum(),
     {"x": RNG.normal(size=(2, 3))}),
])
def test_primitive_gradients(name, fn, theta):
    rep = check(fn, theta)
    assert rep.passed, f"{name}: {rep}"


def test_backward_accumulates_shared_nodes():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [5.0])
