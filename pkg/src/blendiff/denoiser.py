"""Noise-prediction network and its training loop.

Noisy inputs are scaled to unit variance per step once a schedule is
attached (a no-op for standardised channels).  Frames are standardised per channel (``data_mean``/``data_std``, fixed from
the training set, identity by default) before diffusion; condition frames
are standardised inside :meth:`DenoiserModel.forward`, so callers always pass
raw frames.

Architecture (pre-norm transformer): noisy frames are projected to tokens,
plus the projection of the same frame's condition row, a sinusoidal frame
position and a timestep embedding (sinusoid -> MLP).
Condition rows are projected, layer-normed and given the same frame
positions.  Each block runs self-attention over the noisy tokens,
cross-attention into the condition tokens, and a GELU feed-forward.  The
output head is zero-initialised so an untrained model predicts zero noise.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint, nn
from .conditioning import build_condition, drop_condition, fuse_audio
from .data import draw_styles
from .diffusion import NoiseSchedule, forward_sample_batch
from .errors import ConfigError, DatasetError, DimensionError, TrainingDivergedError

log = logging.getLogger(__name__)

KIND = "denoiser"
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DenoiserConfig:
    seq_dim: int
    cond_dim: int
    width: int = 128
    layers: int = 4
    heads: int = 4
    ff_width: int | None = None

    def __post_init__(self):
        if self.ff_width is None:
            object.__setattr__(self, "ff_width", 4 * self.width)
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by {self.heads} heads")
        if min(self.seq_dim, self.cond_dim, self.width, self.layers, self.heads, self.ff_width) < 1:
            raise ConfigError("all denoiser sizes must be positive")


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 4e-4
    drop_prob: float = 0.1
    chunk_len: int = 32
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.chunk_len < 1 or self.lr < 0:
            raise ConfigError("epochs, batch_size and chunk_len must be positive and lr non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError(f"drop_prob must be in [0, 1], got {self.drop_prob}")


def _shapes(cfg: DenoiserConfig) -> dict:
    W, F = cfg.width, cfg.ff_width
    s = {
        "in.W": (cfg.seq_dim, W), "in.b": (W,),
        "cond.W": (cfg.cond_dim, W), "cond.b": (W,),
        "cond_in.W": (cfg.cond_dim, W), "cond_in.b": (W,),
        "cond_ln.g": (W,), "cond_ln.b": (W,),
        "time1.W": (W, W), "time1.b": (W,),
        "time2.W": (W, W), "time2.b": (W,),
    }
    for i in range(cfg.layers):
        p = f"l{i}."
        s |= {p + "ln1.g": (W,), p + "ln1.b": (W,)}
        s |= nn.attention_shapes(p + "self.", W)
        s |= {p + "ln2.g": (W,), p + "ln2.b": (W,)}
        s |= nn.attention_shapes(p + "cross.", W)
        s |= {p + "ln3.g": (W,), p + "ln3.b": (W,),
              p + "ff1.W": (W, F), p + "ff1.b": (F,),
              p + "ff2.W": (F, W), p + "ff2.b": (W,)}
    s |= {"out_ln.g": (W,), "out_ln.b": (W,), "out.W": (W, cfg.seq_dim), "out.b": (cfg.seq_dim,)}
    return s


class DenoiserModel:
    """``eps_theta(x_t, t, c)`` with explicit flat parameters and exact gradients."""

    def __init__(self, config: DenoiserConfig, seed: int = 0, params: np.ndarray | None = None):
        self.config = config
        self.params = nn.Params(_shapes(config), params)
        self.data_mean = np.zeros(config.seq_dim)
        self.data_std = np.ones(config.seq_dim)
        # input preconditioning; inactive until attach_schedule
        self.alpha_bar = None
        self.sigma_data = np.ones(config.seq_dim)
        if params is None:
            self._init(np.random.default_rng(seed))

    def fit_normalizer(self, x0: np.ndarray) -> None:
        """Per-channel mean/std over ``(..., D)`` data; near-constant channels keep std 1."""
        flat = np.asarray(x0, dtype=np.float64).reshape(-1, self.config.seq_dim)
        self.data_mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.data_std = np.where(std < STD_FLOOR, 1.0, std)

    def attach_schedule(self, schedule: NoiseSchedule, x0n: np.ndarray | None = None) -> None:
        """Scale inputs by ``1/sqrt(abar_t sigma^2 + 1 - abar_t)`` so ``x_t`` has unit variance.

        ``sigma`` is the per-channel std of the (normalised) data ``x0n``; it is
        1 for standardised channels, so only constant channels are affected.
        """
        self.alpha_bar = np.array(schedule.alpha_bar, dtype=np.float64)
        if x0n is not None:
            self.sigma_data = np.asarray(x0n, dtype=np.float64).reshape(-1, self.config.seq_dim).std(axis=0)

    def input_scale(self, t) -> np.ndarray:
        t = np.asarray(t).reshape(-1)
        if self.alpha_bar is None:
            return np.ones((len(t), 1, self.config.seq_dim))
        if t.max() >= len(self.alpha_bar):
            raise DimensionError(f"step {int(t.max())} beyond the attached schedule (T={len(self.alpha_bar) - 1})")
        ab = self.alpha_bar[t.astype(int)][:, None, None]
        return 1.0 / np.sqrt(ab * self.sigma_data ** 2 + 1.0 - ab)

    def encode(self, x):
        return (np.asarray(x) - self.data_mean) / self.data_std

    def decode(self, x):
        return np.asarray(x) * self.data_std + self.data_mean

    def _prep_condition(self, c):
        d = self.config.seq_dim
        out = c.copy()
        ind = c[..., d:d + 1]
        out[..., :d] = (c[..., :d] - self.data_mean) / self.data_std * ind
        return out

    def _init(self, rng):
        p, cfg = self.params, self.config
        for name in ("in.", "cond.", "cond_in.", "time1.", "time2."):
            nn.init_linear(p, name, rng)
        nn.init_layernorm(p, "cond_ln.")
        nn.init_layernorm(p, "out_ln.")
        for i in range(cfg.layers):
            pre = f"l{i}."
            for ln in ("ln1.", "ln2.", "ln3."):
                nn.init_layernorm(p, pre + ln)
            nn.init_attention(p, pre + "self.", rng)
            nn.init_attention(p, pre + "cross.", rng)
            nn.init_linear(p, pre + "ff1.", rng)
            nn.init_linear(p, pre + "ff2.", rng)
        # out.W / out.b stay zero

    @property
    def n_params(self) -> int:
        return len(self.params)

    def forward(self, x_t, t, c):
        """Batched forward: ``x_t (B, N, D)``, ``t (B,)``, ``c (B, N, C)`` -> ``(B, N, D)``."""
        cfg, p = self.config, self.params
        x_t = np.asarray(x_t, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if x_t.ndim != 3 or x_t.shape[2] != cfg.seq_dim:
            raise DimensionError(f"x_t has shape {x_t.shape}, expected (B, N, {cfg.seq_dim})")
        if c.shape != x_t.shape[:2] + (cfg.cond_dim,):
            raise DimensionError(f"condition has shape {c.shape}, expected {x_t.shape[:2] + (cfg.cond_dim,)}")
        if t.shape[0] != x_t.shape[0]:
            raise DimensionError(f"{t.shape[0]} steps for a batch of {x_t.shape[0]}")
        n = x_t.shape[1]
        pos = nn.sinusoidal(np.arange(n), cfg.width)

        u1, c_t1 = nn.linear_fwd(nn.sinusoidal(t, cfg.width), p, "time1.")
        s1, c_silu = nn.silu_fwd(u1)
        temb, c_t2 = nn.linear_fwd(s1, p, "time2.")

        cn = self._prep_condition(c)
        h, c_in = nn.linear_fwd(x_t * self.input_scale(t), p, "in.")
        hc, c_cin = nn.linear_fwd(cn, p, "cond_in.")
        h = h + hc + pos + temb[:, None, :]

        mc, c_cond = nn.linear_fwd(cn, p, "cond.")
        m, c_cln = nn.layernorm_fwd(mc, p, "cond_ln.")
        m = m + pos

        blocks = []
        for i in range(cfg.layers):
            pre = f"l{i}."
            a1, k1 = nn.layernorm_fwd(h, p, pre + "ln1.")
            o1, ka1 = nn.attention_fwd(a1, a1, p, pre + "self.", cfg.heads)
            h = h + o1
            a2, k2 = nn.layernorm_fwd(h, p, pre + "ln2.")
            o2, ka2 = nn.attention_fwd(a2, m, p, pre + "cross.", cfg.heads)
            h = h + o2
            a3, k3 = nn.layernorm_fwd(h, p, pre + "ln3.")
            f1, kf1 = nn.linear_fwd(a3, p, pre + "ff1.")
            g1, kg = nn.gelu_fwd(f1)
            f2, kf2 = nn.linear_fwd(g1, p, pre + "ff2.")
            h = h + f2
            blocks.append((k1, ka1, k2, ka2, k3, kf1, kg, kf2))

        y, c_oln = nn.layernorm_fwd(h, p, "out_ln.")
        out, c_out = nn.linear_fwd(y, p, "out.")
        cache = (c_t1, c_silu, c_t2, c_in, c_cin, c_cond, c_cln, blocks, c_oln, c_out)
        return out, cache

    def backward(self, dout, cache) -> np.ndarray:
        """Gradient of ``sum(dout * forward(...))`` w.r.t. the flat parameter vector."""
        cfg, p = self.config, self.params
        g = p.zeros_like()
        c_t1, c_silu, c_t2, c_in, c_cin, c_cond, c_cln, blocks, c_oln, c_out = cache

        dy = nn.linear_back(dout, c_out, p, g, "out.")
        dh = nn.layernorm_back(dy, c_oln, p, g, "out_ln.")
        dm = np.zeros(c_cond.shape[:2] + (cfg.width,))
        for i in reversed(range(cfg.layers)):
            pre = f"l{i}."
            k1, ka1, k2, ka2, k3, kf1, kg, kf2 = blocks[i]
            d = nn.linear_back(dh, kf2, p, g, pre + "ff2.")
            d = nn.gelu_back(d, kg)
            d = nn.linear_back(d, kf1, p, g, pre + "ff1.")
            dh = dh + nn.layernorm_back(d, k3, p, g, pre + "ln3.")
            dq, dkv = nn.attention_back(dh, ka2, p, g, pre + "cross.", cfg.heads)
            dm += dkv
            dh = dh + nn.layernorm_back(dq, k2, p, g, pre + "ln2.")
            dq, dkv = nn.attention_back(dh, ka1, p, g, pre + "self.", cfg.heads)
            dh = dh + nn.layernorm_back(dq + dkv, k1, p, g, pre + "ln1.")

        dmc = nn.layernorm_back(dm, c_cln, p, g, "cond_ln.")
        nn.linear_back(dmc, c_cond, p, g, "cond.")
        nn.linear_back(dh, c_in, p, g, "in.")
        nn.linear_back(dh, c_cin, p, g, "cond_in.")
        dtemb = dh.sum(axis=1)
        ds1 = nn.linear_back(dtemb, c_t2, p, g, "time2.")
        du1 = nn.silu_back(ds1, c_silu)
        nn.linear_back(du1, c_t1, p, g, "time1.")
        return g.vector

    def __call__(self, x_t, t, c):
        return denoise(self, x_t, t, c)

    def hyperparams(self) -> dict:
        return asdict(self.config)


def denoise(model, x_t, t, c) -> np.ndarray:
    """Single-sequence noise prediction: ``x_t (N, D)``, scalar ``t``, ``c (N, C)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x_t.ndim != 2 or c.ndim != 2:
        raise DimensionError(f"expected 2-D x_t and c, got {x_t.shape} and {c.shape}")
    out, _ = model.forward(x_t[None], np.array([t]), c[None])
    return out[0]


def loss_and_grad(model, batch, schedule: NoiseSchedule, rng: np.random.Generator,
                  drop_prob: float = 0.1) -> tuple[float, np.ndarray]:
    """Simple noise-prediction loss on one batch and its exact parameter gradient.

    ``batch`` is ``(x0, c)`` with shapes ``(B, N, D)`` and ``(B, N, C)``, both
    in raw units (the model's normaliser is applied here).  Draws,
    in order: ``B`` steps uniform on ``[1, T]``, the noise tensor, then one
    condition-dropout draw per element.
    """
    x0, c = (np.asarray(a, dtype=np.float64) for a in batch)
    if x0.shape[0] == 0:
        raise DatasetError("empty batch")
    if c.shape[:2] != x0.shape[:2]:
        raise DimensionError(f"x0 {x0.shape} and condition {c.shape} disagree")
    encode = getattr(model, "encode", None)
    if encode is not None:
        x0 = encode(x0)
    t = rng.integers(1, schedule.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    c = np.stack([drop_condition(ci, drop_prob, rng) for ci in c])
    x_t = forward_sample_batch(x0, t, eps, schedule)
    eps_hat, cache = model.forward(x_t, t, c)
    diff = eps_hat - eps
    loss = float(np.mean(diff * diff))
    grad = model.backward((2.0 / diff.size) * diff, cache)
    return loss, grad


@dataclass
class TrainResult:
    model: DenoiserModel
    loss_curve: list = field(default_factory=list)
    optimizer: nn.Adam | None = None
    rng: np.random.Generator | None = None


def training_conditions(chunks, rng: np.random.Generator) -> np.ndarray:
    """Fused conditions for every chunk with a fresh style triple from the chunk's own clip."""
    out = []
    for ch, idx in zip(chunks, draw_styles(chunks, rng)):
        cond = build_condition(ch.x0[0], ch.clip_values[idx], len(ch.x0))
        out.append(fuse_audio(cond, ch.audio))
    return np.stack(out)


def train(model: DenoiserModel, dataset, config: TrainConfig, schedule: NoiseSchedule,
          progress=None) -> TrainResult:
    """Adam on the simple loss.  ``dataset`` is a list of :class:`~blendiff.data.TrainingChunk`.

    With ``config.normalize`` the model's normaliser is fitted to the chunks first.
    """
    if not dataset:
        raise DatasetError("no training chunks")
    rng = np.random.default_rng(config.seed)
    opt = nn.Adam(model.n_params, config.lr)
    x0_all = np.stack([ch.x0 for ch in dataset])
    if config.normalize:
        model.fit_normalizer(x0_all)
    model.attach_schedule(schedule, model.encode(x0_all))
    curve = []
    step = 0
    for epoch in range(config.epochs):
        cond_all = training_conditions(dataset, rng)
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grad = loss_and_grad(model, (x0_all[idx], cond_all[idx]), schedule, rng,
                                       config.drop_prob)
            step += 1
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(step, config.lr, float(np.linalg.norm(grad)), loss)
            opt.step(model.params.vector, grad)
            total += loss * len(idx)
        curve.append(total / len(order))
        if progress is not None:
            progress(epoch, curve[-1])
        elif epoch % 50 == 0 or epoch == config.epochs - 1:
            log.info("epoch %d loss %.6f", epoch, curve[-1])
    return TrainResult(model, curve, opt, rng)


def save_denoiser(path, model: DenoiserModel, *, optimizer=None, epoch: int = 0,
                  rng: np.random.Generator | None = None, extra: dict | None = None) -> None:
    checkpoint.save(path, KIND, model.hyperparams(), model.params.vector, epoch=epoch,
                    rng_state=rng.bit_generator.state if rng is not None else None,
                    optimizer=optimizer, extra=extra,
                    arrays=_buffers(model))


def _buffers(model) -> dict:
    out = {"data_mean": model.data_mean, "data_std": model.data_std, "sigma_data": model.sigma_data}
    if model.alpha_bar is not None:
        out["alpha_bar"] = model.alpha_bar
    return out


def load_denoiser(path) -> tuple[DenoiserModel, dict]:
    meta = checkpoint.load(path, KIND)
    arrays = meta["arrays"]
    model = DenoiserModel(DenoiserConfig(**meta["hyperparams"]), params=arrays["params"].copy())
    model.data_mean = arrays["data_mean"].copy()
    model.data_std = arrays["data_std"].copy()
    model.sigma_data = arrays["sigma_data"].copy()
    if "alpha_bar" in arrays:
        model.alpha_bar = arrays["alpha_bar"].copy()
    return model, meta
