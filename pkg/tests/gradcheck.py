"""Grouped finite-difference checks shared by the unit and acceptance suites."""

import numpy as np

from blendiff.denoiser import DenoiserConfig, DenoiserModel
from blendiff.lip import LipConfig, LipModel
from conftest import numeric_grad, rel_err

DENOISER_GROUPS = {
    "attention": ("self.", "cross."),
    "feed-forward": ("ff1.", "ff2."),
    "normalization": ("ln1.", "ln2.", "ln3.", "cond_ln.", "out_ln."),
    "embedding": ("in.", "cond.", "cond_in.", "time1.", "time2."),
    "output": ("out.",),
}
LIP_GROUPS = {"lstm": ("lstm.",), "conv": ("conv0.", "conv1."), "output": ("head.",)}


def _matches(name, key):
    # keys name a layer either at top level or inside a block prefix such as "l0."
    return name.startswith(key) or "." + key in name


def group_indices(params, groups):
    out = {}
    for group, keys in groups.items():
        idx = [np.arange(params.slices[n].start, params.slices[n].stop)
               for n in params.names() if any(_matches(n, k) for k in keys)]
        out[group] = np.concatenate(idx)
    return out


def _errors(model, loss, grad, groups, n_per_group, rng, h):
    errs = {}
    for group, idx in group_indices(model.params, groups).items():
        pick = rng.choice(idx, size=min(n_per_group, idx.size), replace=False)
        num = numeric_grad(loss, model.params.vector, pick, h)
        errs[group] = (float(rel_err(grad[pick], num).max()), len(pick))
    return errs


def denoiser_grad_errors(n_per_group=100, seed=0, h=1e-5):
    """``{group: (max relative error, coordinates probed)}`` for a small perturbed denoiser."""
    rng = np.random.default_rng(seed)
    D, A = 6, 3
    model = DenoiserModel(DenoiserConfig(D, D + 1 + A, width=16, layers=1, heads=2, ff_width=32), seed=seed)
    model.params.vector[:] += 0.1 * rng.standard_normal(model.n_params)
    model.data_mean = rng.standard_normal(D)
    model.data_std = rng.uniform(0.5, 2.0, D)
    x = rng.standard_normal((2, 6, D))
    t = np.array([3, 7])
    c = rng.standard_normal((2, 6, D + 1 + A))
    c[..., D] = rng.integers(0, 2, (2, 6))
    dout = rng.standard_normal(x.shape)
    out, cache = model.forward(x, t, c)
    grad = model.backward(dout, cache)
    return _errors(model, lambda: float(np.sum(model.forward(x, t, c)[0] * dout)), grad,
                   DENOISER_GROUPS, n_per_group, rng, h)


def lip_grad_errors(n_per_group=100, seed=0, h=1e-5):
    rng = np.random.default_rng(seed)
    model = LipModel(LipConfig(4, 7, 6, hidden=8, style_width=6, conv_layers=2, kernel=3), seed=seed)
    model.params.vector[:] += 0.1 * rng.standard_normal(model.n_params)
    audio = rng.standard_normal((3, 5, 4))
    style = rng.standard_normal((3, 3, 7))
    dy = rng.standard_normal((3, 5, 6))
    y, cache = model.forward(audio, style)
    grad = model.backward(dy, cache)
    return _errors(model, lambda: float(np.sum(model.forward(audio, style)[0] * dy)), grad,
                   LIP_GROUPS, n_per_group, rng, h)
