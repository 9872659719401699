import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itsc import nn
from itsc.nn import AdamState, BatchNormState, ConvSpec

from conftest import numeric_grad, rel_err


def direct_conv(x, w, b, d):
    """Nested-loop same-padded dilated convolution."""
    B, C, T = x.shape
    O, _, f = w.shape
    pad = d * (f - 1) // 2
    out = np.zeros((B, O, T))
    for bi in range(B):
        for o in range(O):
            for t in range(T):
                s = b[o]
                for c in range(C):
                    for k in range(f):
                        j = t + k * d - pad
                        if 0 <= j < T:
                            s += w[o, c, k] * x[bi, c, j]
                out[bi, o, t] = s
    return out


# -- conv1d ------------------------------------------------------------------

def test_conv_zero_input_gives_bias(rng):
    spec = ConvSpec(3, 4, 5, 2)
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    out, _ = nn.conv1d_forward(np.zeros((2, 3, 10)), spec, w, b)
    np.testing.assert_array_equal(out, np.broadcast_to(b[None, :, None], out.shape))


def test_conv_identity_kernel(rng):
    spec = ConvSpec(3, 3, 1, 1)
    w = np.eye(3)[:, :, None]
    x = rng.standard_normal((2, 3, 9))
    out, cache = nn.conv1d_forward(x, spec, w, np.zeros(3))
    np.testing.assert_array_equal(out, x)
    g = rng.standard_normal(out.shape)
    gx, _, _ = nn.conv1d_backward(g, cache)
    np.testing.assert_array_equal(gx, g)


def test_conv_matches_direct_loop_f7_d2(rng):
    spec = ConvSpec(2, 3, 7, 2)
    x = rng.standard_normal((1, 2, 16))
    w = rng.standard_normal((3, 2, 7))
    b = rng.standard_normal(3)
    out, _ = nn.conv1d_forward(x, spec, w, b)
    assert np.max(np.abs(out - direct_conv(x, w, b, 2))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(1, 4), st.integers(1, 32), st.integers(0, 2**31))
def test_conv_preserves_length(half, d, T, seed):
    f = 2 * half + 1
    r = np.random.default_rng(seed)
    spec = ConvSpec(2, 2, f, d)
    out, _ = nn.conv1d_forward(r.standard_normal((1, 2, T)), spec, r.standard_normal((2, 2, f)), np.zeros(2))
    assert out.shape == (1, 2, T)


def test_conv_rejects_channel_mismatch(rng):
    with pytest.raises(nn.ShapeError):
        nn.conv1d_forward(np.zeros((1, 2, 8)), ConvSpec(3, 1, 3), np.zeros((1, 3, 3)), np.zeros(1))


def test_conv_spec_rejects_even_kernel():
    with pytest.raises(ValueError):
        ConvSpec(1, 1, 4)


def test_conv_backward_without_cache():
    with pytest.raises(RuntimeError):
        nn.conv1d_backward(np.zeros((1, 1, 4)), None)


def test_conv_backward_zero_upstream(rng):
    spec = ConvSpec(2, 2, 3, 2)
    _, cache = nn.conv1d_forward(rng.standard_normal((2, 2, 7)), spec, rng.standard_normal((2, 2, 3)), np.zeros(2))
    for g in nn.conv1d_backward(np.zeros((2, 2, 7)), cache):
        assert not g.any()


def test_conv_backward_finite_differences(rng):
    spec = ConvSpec(2, 3, 5, 2)
    x = rng.standard_normal((2, 2, 9))
    w = rng.standard_normal((3, 2, 5))
    b = rng.standard_normal(3)
    proj = rng.standard_normal((2, 3, 9))
    loss = lambda: float((nn.conv1d_forward(x, spec, w, b)[0] * proj).sum())
    _, cache = nn.conv1d_forward(x, spec, w, b)
    gx, gw, gb = nn.conv1d_backward(proj, cache)
    assert rel_err(gx, numeric_grad(loss, x)) <= 1e-4
    assert rel_err(gw, numeric_grad(loss, w)) <= 1e-4
    assert rel_err(gb, numeric_grad(loss, b)) <= 1e-4


# -- relu --------------------------------------------------------------------

def test_relu_definition():
    out, mask = nn.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(nn.relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


def test_relu_positive_is_identity(rng):
    x = rng.random(10) + 0.1
    out, mask = nn.relu_forward(x)
    np.testing.assert_array_equal(out, x)
    g = rng.standard_normal(10)
    np.testing.assert_array_equal(nn.relu_backward(g, mask), g)


def test_relu_finite_differences(rng):
    x = rng.standard_normal(20)
    x[np.abs(x) < 0.05] += 0.2
    proj = rng.standard_normal(20)
    loss = lambda: float((nn.relu_forward(x)[0] * proj).sum())
    _, mask = nn.relu_forward(x)
    assert rel_err(nn.relu_backward(proj, mask), numeric_grad(loss, x)) <= 1e-4


# -- batch norm ----------------------------------------------------------------

def test_batchnorm_normalises(rng):
    x = rng.standard_normal((4, 3, 10)) * 30
    out, _ = nn.batchnorm1d_forward(x, np.ones(3), np.zeros(3), BatchNormState.fresh(3), train=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1, atol=1e-6)


def test_batchnorm_constant_channel_gives_beta():
    x = np.full((2, 2, 5), 3.0)
    beta = np.array([0.5, -1.0])
    out, _ = nn.batchnorm1d_forward(x, np.array([2.0, 3.0]), beta, BatchNormState.fresh(2), train=True)
    np.testing.assert_allclose(out, np.broadcast_to(beta[None, :, None], out.shape), atol=1e-12)


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.standard_normal((3, 2, 8)) + 5
    s = BatchNormState.fresh(2)
    nn.batchnorm1d_forward(x, np.ones(2), np.zeros(2), s, train=True)
    np.testing.assert_allclose(s.running_mean, 0.1 * x.mean(axis=(0, 2)))
    n = 24
    np.testing.assert_allclose(s.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)) * n / (n - 1))
    before = (s.running_mean.copy(), s.running_var.copy())
    out, _ = nn.batchnorm1d_forward(x, np.ones(2), np.zeros(2), s, train=False)
    np.testing.assert_array_equal(s.running_mean, before[0])
    np.testing.assert_allclose(out, (x - before[0][None, :, None]) / np.sqrt(before[1][None, :, None] + 1e-5))


def test_batchnorm_degenerate_batch():
    with pytest.raises(ValueError):
        nn.batchnorm1d_forward(np.ones((1, 2, 1)), np.ones(2), np.zeros(2), BatchNormState.fresh(2), train=True)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_finite_differences(rng, train):
    x = rng.standard_normal((3, 2, 5))
    gamma = rng.standard_normal(2)
    beta = rng.standard_normal(2)
    proj = rng.standard_normal(x.shape)
    state = BatchNormState(rng.standard_normal(2), rng.random(2) + 0.5)

    def loss():
        s = BatchNormState(state.running_mean.copy(), state.running_var.copy())
        return float((nn.batchnorm1d_forward(x, gamma, beta, s, train)[0] * proj).sum())

    s = BatchNormState(state.running_mean.copy(), state.running_var.copy())
    _, cache = nn.batchnorm1d_forward(x, gamma, beta, s, train)
    gx, gg, gb = nn.batchnorm1d_backward(proj, cache)
    assert rel_err(gx, numeric_grad(loss, x)) <= 1e-4
    assert rel_err(gg, numeric_grad(loss, gamma)) <= 1e-4
    assert rel_err(gb, numeric_grad(loss, beta)) <= 1e-4


# -- linear --------------------------------------------------------------------

def test_linear_identity_and_zero_input(rng):
    x = rng.standard_normal((3, 4))
    out, _ = nn.linear_forward(x, np.eye(4), np.zeros(4))
    np.testing.assert_array_equal(out, x)
    b = rng.standard_normal(2)
    out, _ = nn.linear_forward(np.zeros((3, 4)), rng.standard_normal((2, 4)), b)
    np.testing.assert_array_equal(out, np.broadcast_to(b, (3, 2)))


def test_linear_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.linear_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


def test_linear_finite_differences(rng):
    x = rng.standard_normal((3, 4))
    W = rng.standard_normal((2, 4))
    b = rng.standard_normal(2)
    proj = rng.standard_normal((3, 2))
    loss = lambda: float((nn.linear_forward(x, W, b)[0] * proj).sum())
    _, cache = nn.linear_forward(x, W, b)
    gx, gW, gb = nn.linear_backward(proj, cache)
    for analytic, arr in ((gx, x), (gW, W), (gb, b)):
        assert rel_err(analytic, numeric_grad(loss, arr)) <= 1e-4


# -- softmax cross-entropy -----------------------------------------------------

def test_softmax_ce_uniform():
    loss, _, p = nn.softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
    np.testing.assert_allclose(p, [[0.5, 0.5]])
    assert loss == pytest.approx(np.log(2))


def test_softmax_ce_stable():
    loss, g, p = nn.softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(g)) and np.all(np.isfinite(p))


def test_softmax_ce_label_out_of_range():
    with pytest.raises(ValueError):
        nn.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_softmax_ce_finite_differences(rng):
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    _, g, _ = nn.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_err(g, num) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_softmax_rows_and_shift_invariance(seed, shift):
    logits = np.random.default_rng(seed).standard_normal((4, 5)) * 10
    p = nn.softmax(logits)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(nn.softmax(logits + shift), p, atol=1e-12)


# -- adam ----------------------------------------------------------------------

def test_adam_zero_gradient_no_move():
    p = {"w": np.array([1.0, -2.0])}
    nn.adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = {"w": np.array([0.0])}
    s = AdamState(learning_rate=3e-4)
    nn.adam_step(p, {"w": np.array([0.37])}, s)
    assert p["w"][0] == pytest.approx(-3e-4, rel=1e-6)
    assert s.step_count == 1


def test_adam_two_steps_hand_recurrence():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 2.0
    p = {"w": np.array([1.0])}
    s = AdamState(learning_rate=lr)
    nn.adam_step(p, {"w": np.array([g])}, s)
    nn.adam_step(p, {"w": np.array([g])}, s)
    w = 1.0
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert p["w"][0] == pytest.approx(w, abs=1e-15)
    assert s.step_count == 2


def test_adam_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        nn.adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 1.0])}, AdamState())


def test_adam_deterministic(rng):
    g = {"w": rng.standard_normal(5)}
    a = {"w": np.ones(5)}
    b = {"w": np.ones(5)}
    nn.adam_step(a, g, AdamState())
    nn.adam_step(b, g, AdamState())
    np.testing.assert_array_equal(a["w"], b["w"])


# -- grad check ----------------------------------------------------------------

def _linear_problem(rng):
    params = {"W": rng.standard_normal((2, 3)), "b": rng.standard_normal(2)}
    x = rng.standard_normal((4, 3))
    proj = rng.standard_normal((4, 2))
    loss = lambda: float((nn.linear_forward(x, params["W"], params["b"])[0] * proj).sum())
    _, cache = nn.linear_forward(x, params["W"], params["b"])
    _, gW, gb = nn.linear_backward(proj, cache)
    return params, loss, {"W": gW, "b": gb}


def test_grad_check_linear_passes(rng):
    params, loss, grads = _linear_problem(rng)
    rep = nn.grad_check(loss, params, grads, tolerance=1e-4)
    assert rep.passed and rep.failing_coordinate is None


def test_grad_check_detects_corruption(rng):
    params, loss, grads = _linear_problem(rng)
    grads["W"] = grads["W"] * 1.1
    rep = nn.grad_check(loss, params, grads, tolerance=1e-4)
    assert not rep.passed
    assert rep.failing_coordinate[0] == "W"


def test_grad_check_conv_relu_linear_chain(rng):
    spec = ConvSpec(1, 2, 3, 1)
    params = {"cw": rng.standard_normal((2, 1, 3)), "cb": rng.standard_normal(2),
              "W": rng.standard_normal((3, 16)), "b": rng.standard_normal(3)}
    x = rng.standard_normal((2, 1, 8))
    labels = np.array([0, 2])

    def forward():
        h, c1 = nn.conv1d_forward(x, spec, params["cw"], params["cb"])
        h, c2 = nn.relu_forward(h)
        y, c3 = nn.linear_forward(h.reshape(2, -1), params["W"], params["b"])
        loss, g, _ = nn.softmax_cross_entropy(y, labels)
        return loss, g, (c1, c2, c3)

    _, g, (c1, c2, c3) = forward()
    gh, gW, gb = nn.linear_backward(g, c3)
    gh = nn.relu_backward(gh.reshape(2, 2, 8), c2)
    _, gcw, gcb = nn.conv1d_backward(gh, c1)
    rep = nn.grad_check(lambda: forward()[0], params, {"cw": gcw, "cb": gcb, "W": gW, "b": gb})
    assert rep.passed, rep


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_no_nan_on_finite_inputs(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 12)) * 100
    spec = ConvSpec(3, 2, 5, 2)
    y, _ = nn.conv1d_forward(x, spec, r.standard_normal((2, 3, 5)), r.standard_normal(2))
    y, _ = nn.relu_forward(y)
    y, _ = nn.batchnorm1d_forward(y, np.ones(2), np.zeros(2), BatchNormState.fresh(2), True)
    loss, g, p = nn.softmax_cross_entropy(y.mean(axis=2) * 1e3, np.array([0, 1]))
    assert np.isfinite(loss) and np.all(np.isfinite(g)) and np.all(np.isfinite(p))
