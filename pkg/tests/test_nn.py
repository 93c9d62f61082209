"""Layer-level checks for the numpy network kit."""

import numpy as np
import pytest

from blendiff import nn
from conftest import numeric_grad, rel_err

TOL = 1e-4


def _probe(loss, vec, analytic, rng, n=60):
    """Worst relative error over ``n`` random coordinates of ``vec``."""
    idx = rng.choice(vec.size, size=min(n, vec.size), replace=False)
    num = numeric_grad(loss, vec, idx)
    return rel_err(analytic[idx], num).max()


def test_linear_and_layernorm_gradients(rng):
    for kind in ("linear", "layernorm"):
        if kind == "linear":
            shapes = {"l.W": (5, 4), "l.b": (4,)}
            fwd, back = (lambda x, p: nn.linear_fwd(x, p, "l.")), nn.linear_back
        else:
            shapes = {"l.g": (5,), "l.b": (5,)}
            fwd, back = (lambda x, p: nn.layernorm_fwd(x, p, "l.")), nn.layernorm_back
        p = nn.Params(shapes, rng.standard_normal(sum(int(np.prod(s)) for s in shapes.values())))
        x = rng.standard_normal((2, 3, 5))
        y, cache = fwd(x, p)
        dy = rng.standard_normal(y.shape)
        g = p.zeros_like()
        dx = back(dy, cache, p, g, "l.")
        assert _probe(lambda: np.sum(dy * fwd(x, p)[0]), p.vector, g.vector, rng) < TOL
        flat = x.reshape(-1)
        assert _probe(lambda: np.sum(dy * fwd(flat.reshape(x.shape), p)[0]), flat, dx.reshape(-1), rng) < TOL


@pytest.mark.parametrize("act", ["gelu", "silu"])
def test_activation_gradients(act, rng):
    fwd, back = getattr(nn, act + "_fwd"), getattr(nn, act + "_back")
    x = rng.standard_normal(40) * 2
    y, cache = fwd(x)
    dy = rng.standard_normal(40)
    dx = back(dy, cache)
    h = 1e-6
    num = dy * (fwd(x + h)[0] - fwd(x - h)[0]) / (2 * h)
    assert rel_err(dx, num).max() < TOL


def test_attention_gradients(rng):
    W, heads = 8, 2
    p = nn.Params(nn.attention_shapes("a.", W))
    nn.init_attention(p, "a.", rng)
    p.vector[:] += 0.1 * rng.standard_normal(len(p))
    xq = rng.standard_normal((2, 5, W))
    xkv = rng.standard_normal((2, 7, W))

    def f():
        return nn.attention_fwd(xq, xkv, p, "a.", heads)[0]

    y, cache = nn.attention_fwd(xq, xkv, p, "a.", heads)
    dy = rng.standard_normal(y.shape)
    g = p.zeros_like()
    dxq, dxkv = nn.attention_back(dy, cache, p, g, "a.", heads)
    assert _probe(lambda: np.sum(dy * f()), p.vector, g.vector, rng) < TOL
    for x, d in ((xq, dxq), (xkv, dxkv)):
        flat = x.reshape(-1)
        assert _probe(lambda: np.sum(dy * f()), flat, d.reshape(-1), rng) < TOL


def test_attention_rows_are_convex_combinations(rng):
    W = 4
    p = nn.Params(nn.attention_shapes("a.", W))
    nn.init_attention(p, "a.", rng)
    p["a.Wo"][...] = np.eye(W)
    p["a.Wv"][...] = np.eye(W)
    kv = rng.standard_normal((1, 6, W))
    out, _ = nn.attention_fwd(rng.standard_normal((1, 3, W)), kv, p, "a.", 1)
    assert np.all(out <= kv.max(axis=1, keepdims=True) + 1e-12)
    assert np.all(out >= kv.min(axis=1, keepdims=True) - 1e-12)


def test_lstm_gradients(rng):
    p = nn.Params(nn.lstm_shapes("r.", 3, 4))
    nn.init_lstm(p, "r.", rng)
    x = rng.standard_normal((2, 6, 3))
    h, cache = nn.lstm_fwd(x, p, "r.")
    assert h.shape == (2, 6, 4)
    dy = rng.standard_normal(h.shape)
    g = p.zeros_like()
    dx = nn.lstm_back(dy, cache, p, g, "r.")
    assert _probe(lambda: np.sum(dy * nn.lstm_fwd(x, p, "r.")[0]), p.vector, g.vector, rng) < TOL
    flat = x.reshape(-1)
    assert _probe(lambda: np.sum(dy * nn.lstm_fwd(x, p, "r.")[0]), flat, dx.reshape(-1), rng) < TOL


def test_conv1d_gradients_and_same_padding(rng):
    p = nn.Params(nn.conv1d_shapes("c.", 3, 5, 3))
    nn.init_conv1d(p, "c.", rng)
    p.vector[:] += 0.1 * rng.standard_normal(len(p))
    x = rng.standard_normal((2, 4, 3))
    y, cache = nn.conv1d_fwd(x, p, "c.")
    assert y.shape == (2, 4, 5)
    dy = rng.standard_normal(y.shape)
    g = p.zeros_like()
    dx = nn.conv1d_back(dy, cache, p, g, "c.")
    assert _probe(lambda: np.sum(dy * nn.conv1d_fwd(x, p, "c.")[0]), p.vector, g.vector, rng) < TOL
    flat = x.reshape(-1)
    assert _probe(lambda: np.sum(dy * nn.conv1d_fwd(x, p, "c.")[0]), flat, dx.reshape(-1), rng) < TOL


def test_softmax_and_sinusoidal():
    s = nn.softmax(np.array([[1000.0, 1000.0], [0.0, np.log(3.0)]]))
    np.testing.assert_allclose(s, [[0.5, 0.5], [0.25, 0.75]])
    e = nn.sinusoidal(np.arange(4), 6)
    assert e.shape == (4, 6)
    np.testing.assert_allclose(e[0], [0, 0, 0, 1, 1, 1])


def test_adam_first_step_moves_by_lr():
    theta = np.array([1.0, -2.0, 0.5])
    opt = nn.Adam(3, lr=0.1)
    opt.step(theta, np.array([3.0, -0.5, 0.0]))
    np.testing.assert_allclose(theta, [0.9, -1.9, 0.5], atol=1e-7)
    frozen = theta.copy()
    nn.Adam(3, lr=0.0).step(theta, np.ones(3))
    assert np.array_equal(theta, frozen)


def test_adam_state_round_trip(rng):
    a = nn.Adam(4, lr=0.01)
    theta = rng.standard_normal(4)
    for _ in range(3):
        a.step(theta, rng.standard_normal(4))
    b = nn.Adam(4, lr=0.01)
    b.load_state(a.state())
    g = rng.standard_normal(4)
    t1, t2 = theta.copy(), theta.copy()
    a.step(t1, g)
    b.step(t2, g)
    assert np.array_equal(t1, t2)


def test_params_views_share_memory():
    p = nn.Params({"a": (2, 3), "b": (4,)})
    p["a"][1, 2] = 7.0
    assert p.vector[5] == 7.0 and len(p) == 10
    with pytest.raises(ValueError):
        nn.Params({"a": (2,)}, np.zeros(3))
