"""Small numpy neural-network kit with hand-written backward passes.

Everything is float64.  Parameters live in one flat vector (:class:`Params`)
with named views, so optimizers, checkpoints and finite-difference checks all
work on a single array.  Layer functions are stateless: ``*_fwd`` returns the
output and a cache, ``*_back`` takes the upstream gradient and the cache,
accumulates parameter gradients into a gradient :class:`Params`, and returns
the input gradient.
"""

from __future__ import annotations

import math

import numpy as np


class Params:
    """Flat parameter vector with a name -> shape registry."""

    def __init__(self, shapes: dict, vector: np.ndarray | None = None):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        self.slices = {}
        n = 0
        for name, shape in self.shapes.items():
            size = math.prod(shape)
            self.slices[name] = slice(n, n + size)
            n += size
        if vector is None:
            vector = np.zeros(n)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (n,):
            raise ValueError(f"parameter vector has shape {vector.shape}, registry needs ({n},)")
        self.vector = vector

    def __getitem__(self, name: str) -> np.ndarray:
        return self.vector[self.slices[name]].reshape(self.shapes[name])

    def __contains__(self, name):
        return name in self.shapes

    def __len__(self):
        return self.vector.size

    def names(self):
        return list(self.shapes)

    def zeros_like(self) -> "Params":
        return Params(self.shapes)

    def copy(self) -> "Params":
        return Params(self.shapes, self.vector.copy())


def sinusoidal(positions, dim: int) -> np.ndarray:
    """Sine/cosine embedding of (possibly fractional) positions, shape ``(len, dim)``."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = pos * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def init_linear(p: Params, prefix: str, rng: np.random.Generator, scale: float = 1.0) -> None:
    W = p[prefix + "W"]
    W[...] = rng.standard_normal(W.shape) * (scale / math.sqrt(W.shape[0]))


def init_layernorm(p: Params, prefix: str) -> None:
    p[prefix + "g"][...] = 1.0


def _flat2(a):
    return a.reshape(-1, a.shape[-1])


# linear -----------------------------------------------------------------

def linear_fwd(x, p: Params, prefix: str):
    return x @ p[prefix + "W"] + p[prefix + "b"], x


def linear_back(dy, x, p: Params, g: Params, prefix: str):
    g[prefix + "W"][...] += _flat2(x).T @ _flat2(dy)
    g[prefix + "b"][...] += _flat2(dy).sum(axis=0)
    return dy @ p[prefix + "W"].T


# layer norm -------------------------------------------------------------

LN_EPS = 1e-5


def layernorm_fwd(x, p: Params, prefix: str):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * p[prefix + "g"] + p[prefix + "b"], (xhat, rstd)


def layernorm_back(dy, cache, p: Params, g: Params, prefix: str):
    xhat, rstd = cache
    g[prefix + "g"][...] += _flat2(dy * xhat).sum(axis=0)
    g[prefix + "b"][...] += _flat2(dy).sum(axis=0)
    dxhat = dy * p[prefix + "g"]
    return rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                   - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


# activations ------------------------------------------------------------

_GELU_K = math.sqrt(2.0 / math.pi)


def gelu_fwd(x):
    inner = _GELU_K * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_back(dy, cache):
    x, th = cache
    dinner = _GELU_K * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_fwd(x):
    s = sigmoid(x)
    return x * s, (x, s)


def silu_back(dy, cache):
    x, s = cache
    return dy * (s + x * s * (1.0 - s))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# multi-head attention ---------------------------------------------------

ATTN_NAMES = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")


def attention_shapes(prefix: str, width: int, kv_width: int | None = None) -> dict:
    kv = width if kv_width is None else kv_width
    return {
        prefix + "Wq": (width, width), prefix + "bq": (width,),
        prefix + "Wk": (kv, width), prefix + "bk": (width,),
        prefix + "Wv": (kv, width), prefix + "bv": (width,),
        prefix + "Wo": (width, width), prefix + "bo": (width,),
    }


def init_attention(p: Params, prefix: str, rng: np.random.Generator) -> None:
    for w in ("Wq", "Wk", "Wv", "Wo"):
        W = p[prefix + w]
        W[...] = rng.standard_normal(W.shape) / math.sqrt(W.shape[0])


def _split(x, heads):
    b, n, w = x.shape
    return x.reshape(b, n, heads, w // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def attention_fwd(xq, xkv, p: Params, prefix: str, heads: int):
    """Scaled dot-product attention; queries from ``xq``, keys/values from ``xkv``."""
    q = _split(xq @ p[prefix + "Wq"] + p[prefix + "bq"], heads)
    k = _split(xkv @ p[prefix + "Wk"] + p[prefix + "bk"], heads)
    v = _split(xkv @ p[prefix + "Wv"] + p[prefix + "bv"], heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    a = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = _merge(a @ v)
    out = o @ p[prefix + "Wo"] + p[prefix + "bo"]
    return out, (xq, xkv, q, k, v, a, o, scale)


def attention_back(dout, cache, p: Params, g: Params, prefix: str, heads: int):
    xq, xkv, q, k, v, a, o, scale = cache
    g[prefix + "Wo"][...] += _flat2(o).T @ _flat2(dout)
    g[prefix + "bo"][...] += _flat2(dout).sum(axis=0)
    do = _split(dout @ p[prefix + "Wo"].T, heads)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = _merge(ds @ k)
    dk = _merge(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge(dv)
    for name, d, x in (("q", dq, xq), ("k", dk, xkv), ("v", dv, xkv)):
        g[prefix + "W" + name][...] += _flat2(x).T @ _flat2(d)
        g[prefix + "b" + name][...] += _flat2(d).sum(axis=0)
    dxq = dq @ p[prefix + "Wq"].T
    dxkv = dk @ p[prefix + "Wk"].T + dv @ p[prefix + "Wv"].T
    return dxq, dxkv


# LSTM -------------------------------------------------------------------

def lstm_shapes(prefix: str, in_dim: int, hidden: int) -> dict:
    return {prefix + "Wx": (in_dim, 4 * hidden), prefix + "Wh": (hidden, 4 * hidden),
            prefix + "b": (4 * hidden,)}


def init_lstm(p: Params, prefix: str, rng: np.random.Generator) -> None:
    Wx, Wh, b = p[prefix + "Wx"], p[prefix + "Wh"], p[prefix + "b"]
    hidden = Wh.shape[0]
    Wx[...] = rng.standard_normal(Wx.shape) / math.sqrt(Wx.shape[0])
    Wh[...] = rng.standard_normal(Wh.shape) / math.sqrt(hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate


def lstm_fwd(x, p: Params, prefix: str):
    """Unidirectional LSTM from zero state; gate order i, f, g, o.  Returns ``(B, T, H)``."""
    Wx, Wh, b = p[prefix + "Wx"], p[prefix + "Wh"], p[prefix + "b"]
    bsz, steps, _ = x.shape
    hidden = Wh.shape[0]
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    xw = x @ Wx + b
    hs, cache = [], []
    for t in range(steps):
        z = xw[:, t] + h @ Wh
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden:2 * hidden])
        gg = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = sigmoid(z[:, 3 * hidden:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h = o * tc
        cache.append((i, f, gg, o, c_prev, h_prev, tc))
        hs.append(h)
    return np.stack(hs, axis=1), (x, cache)


def lstm_back(dh_all, cache_all, p: Params, g: Params, prefix: str):
    x, cache = cache_all
    Wx, Wh = p[prefix + "Wx"], p[prefix + "Wh"]
    hidden = Wh.shape[0]
    dz_all = np.zeros(x.shape[:2] + (4 * hidden,))
    dh_next = np.zeros((x.shape[0], hidden))
    dc_next = np.zeros_like(dh_next)
    gWh = g[prefix + "Wh"]
    for t in reversed(range(x.shape[1])):
        i, f, gg, o, c_prev, h_prev, tc = cache[t]
        dh = dh_all[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ], axis=1)
        dz_all[:, t] = dz
        gWh += h_prev.T @ dz
        dh_next = dz @ Wh.T
        dc_next = dc * f
    g[prefix + "Wx"][...] += _flat2(x).T @ _flat2(dz_all)
    g[prefix + "b"][...] += _flat2(dz_all).sum(axis=0)
    return dz_all @ Wx.T


# 1-D convolution ("same" padding, odd kernel) ----------------------------

def conv1d_shapes(prefix: str, in_ch: int, out_ch: int, kernel: int) -> dict:
    return {prefix + "W": (kernel, in_ch, out_ch), prefix + "b": (out_ch,)}


def init_conv1d(p: Params, prefix: str, rng: np.random.Generator) -> None:
    W = p[prefix + "W"]
    W[...] = rng.standard_normal(W.shape) / math.sqrt(W.shape[0] * W.shape[1])


def conv1d_fwd(x, p: Params, prefix: str):
    W, b = p[prefix + "W"], p[prefix + "b"]
    k = W.shape[0]
    pad = k // 2
    n = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    y = b + sum(xp[:, j:j + n] @ W[j] for j in range(k))
    return y, xp


def conv1d_back(dy, xp, p: Params, g: Params, prefix: str):
    W = p[prefix + "W"]
    gW = g[prefix + "W"]
    k = W.shape[0]
    pad = k // 2
    n = dy.shape[1]
    dxp = np.zeros_like(xp)
    for j in range(k):
        gW[j] += _flat2(xp[:, j:j + n]).T @ _flat2(dy)
        dxp[:, j:j + n] += dy @ W[j].T
    g[prefix + "b"][...] += _flat2(dy).sum(axis=0)
    return dxp[:, pad:pad + n]


# optimizer --------------------------------------------------------------

class Adam:
    """Adaptive moment estimation on a flat parameter vector, no weight decay."""

    def __init__(self, size: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.step_count += 1
        self.m *= self.b1
        self.m += (1.0 - self.b1) * grad
        self.v *= self.b2
        self.v += (1.0 - self.b2) * grad * grad
        mhat = self.m / (1.0 - self.b1 ** self.step_count)
        vhat = self.v / (1.0 - self.b2 ** self.step_count)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "step": self.step_count,
                "lr": self.lr, "betas": [self.b1, self.b2], "eps": self.eps}

    def load_state(self, state: dict) -> None:
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.step_count = int(state["step"])
