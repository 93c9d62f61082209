"""Mouth-channel regressor used to refine generated sequences.

An LSTM reads the audio window; a stack of 1-D convolutions over the three
style frames, mean-pooled, gives one style vector per window.  Each frame's
mouth values are a linear read-out of ``[lstm state, audio frame, style]``.
At inference the mouth channels of a base sequence are replaced by these
predictions; every other channel is copied through untouched.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint, nn
from .data import sliding_windows
from .errors import AlignmentError, ConfigError, DatasetError, DimensionError, TrainingDivergedError
from .layout import ChannelLayout, EmotionStyleClip, ExpressionSequence

log = logging.getLogger(__name__)

KIND = "lip"


@dataclass(frozen=True)
class LipConfig:
    audio_dim: int
    style_dim: int
    mouth_dim: int
    hidden: int = 64
    style_width: int = 32
    conv_layers: int = 2
    kernel: int = 3

    def __post_init__(self):
        if min(self.audio_dim, self.style_dim, self.mouth_dim, self.hidden, self.style_width,
               self.conv_layers) < 1:
            raise ConfigError("lip model sizes must be positive")
        if self.kernel % 2 == 0:
            raise ConfigError("convolution kernel must be odd")


@dataclass
class LipTrainConfig:
    window: int = 8
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError("window, epochs and batch_size must be positive and lr non-negative")


def _shapes(cfg: LipConfig) -> dict:
    s = nn.lstm_shapes("lstm.", cfg.audio_dim, cfg.hidden)
    cin = cfg.style_dim
    for i in range(cfg.conv_layers):
        s |= nn.conv1d_shapes(f"conv{i}.", cin, cfg.style_width, cfg.kernel)
        cin = cfg.style_width
    s |= {"head.W": (cfg.hidden + cfg.audio_dim + cfg.style_width, cfg.mouth_dim),
          "head.b": (cfg.mouth_dim,)}
    return s


class LipModel:
    def __init__(self, config: LipConfig, seed: int = 0, params: np.ndarray | None = None):
        self.config = config
        self.params = nn.Params(_shapes(config), params)
        if params is None:
            rng = np.random.default_rng(seed)
            nn.init_lstm(self.params, "lstm.", rng)
            for i in range(config.conv_layers):
                nn.init_conv1d(self.params, f"conv{i}.", rng)
            nn.init_linear(self.params, "head.", rng)

    @property
    def n_params(self) -> int:
        return len(self.params)

    def forward(self, audio, style):
        """``audio (B, T, A)``, ``style (B, 3, D)`` -> mouth ``(B, T, M)``."""
        cfg, p = self.config, self.params
        audio = np.asarray(audio, dtype=np.float64)
        style = np.asarray(style, dtype=np.float64)
        if audio.ndim != 3 or audio.shape[2] != cfg.audio_dim:
            raise DimensionError(f"audio has shape {audio.shape}, expected (B, T, {cfg.audio_dim})")
        if style.ndim != 3 or style.shape[0] != audio.shape[0] or style.shape[2] != cfg.style_dim:
            raise DimensionError(f"style has shape {style.shape}, expected (B, k, {cfg.style_dim})")
        h, c_lstm = nn.lstm_fwd(audio, p, "lstm.")
        s = style
        c_conv = []
        for i in range(cfg.conv_layers):
            s, kc = nn.conv1d_fwd(s, p, f"conv{i}.")
            s, kg = nn.gelu_fwd(s)
            c_conv.append((kc, kg))
        sv = s.mean(axis=1)
        steps = audio.shape[1]
        u = np.concatenate([h, audio, np.repeat(sv[:, None, :], steps, axis=1)], axis=2)
        y, c_head = nn.linear_fwd(u, p, "head.")
        return y, (c_lstm, c_conv, s.shape[1], c_head)

    def backward(self, dy, cache) -> np.ndarray:
        cfg, p = self.config, self.params
        g = p.zeros_like()
        c_lstm, c_conv, n_style, c_head = cache
        du = nn.linear_back(dy, c_head, p, g, "head.")
        H, A = cfg.hidden, cfg.audio_dim
        dh = du[..., :H]
        dsv = du[..., H + A:].sum(axis=1)
        ds = np.repeat(dsv[:, None, :] / n_style, n_style, axis=1)
        for i in reversed(range(cfg.conv_layers)):
            kc, kg = c_conv[i]
            ds = nn.gelu_back(ds, kg)
            ds = nn.conv1d_back(ds, kc, p, g, f"conv{i}.")
        nn.lstm_back(dh, c_lstm, p, g, "lstm.")
        return g.vector

    def predict(self, audio, style) -> np.ndarray:
        return self.forward(audio, style)[0]

    def hyperparams(self) -> dict:
        return asdict(self.config)


def lip_loss_and_grad(model: LipModel, audio, style, target) -> tuple[float, np.ndarray]:
    """Mean squared error over every mouth entry in the batch, and its gradient."""
    pred, cache = model.forward(audio, style)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"target {target.shape} does not match prediction {pred.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), model.backward((2.0 / diff.size) * diff, cache)


@dataclass
class LipWindow:
    audio: np.ndarray
    target: np.ndarray
    clip_values: np.ndarray


def lip_dataset(clips, window: int, stride: int = 1) -> list:
    """Windows from ``(sequence, audio)`` pairs; style frames are drawn per epoch in training."""
    out = []
    for seq, audio in clips:
        for a, m in sliding_windows(seq, audio, window, stride):
            out.append(LipWindow(a, m, seq.values))
    return out


@dataclass
class LipTrainResult:
    model: LipModel
    loss_curve: list = field(default_factory=list)
    optimizer: nn.Adam | None = None
    rng: np.random.Generator | None = None


def train_lip(model: LipModel, dataset, config: LipTrainConfig, progress=None) -> LipTrainResult:
    if not dataset:
        raise DatasetError("no lip training windows")
    rng = np.random.default_rng(config.seed)
    opt = nn.Adam(model.n_params, config.lr)
    audio = np.stack([w.audio for w in dataset])
    target = np.stack([w.target for w in dataset])
    curve = []
    step = 0
    for epoch in range(config.epochs):
        style = np.stack([w.clip_values[rng.choice(len(w.clip_values), 3, replace=False)]
                          for w in dataset])
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grad = lip_loss_and_grad(model, audio[idx], style[idx], target[idx])
            step += 1
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(step, config.lr, float(np.linalg.norm(grad)), loss)
            opt.step(model.params.vector, grad)
            total += loss * len(idx)
        curve.append(total / len(order))
        if progress is not None:
            progress(epoch, curve[-1])
        elif epoch % 10 == 0 or epoch == config.epochs - 1:
            log.info("lip epoch %d loss %.6f", epoch, curve[-1])
    return LipTrainResult(model, curve, opt, rng)


def style_triple(style) -> np.ndarray:
    """Three style frames: a clip contributes its first, middle and last frames."""
    if isinstance(style, EmotionStyleClip):
        vals = style.sequence.values
        idx = np.round(np.linspace(0, len(vals) - 1, 3)).astype(int)
        return vals[idx]
    arr = np.asarray(style, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != 3:
        raise DimensionError(f"style must be a clip or 3 frames, got shape {arr.shape}")
    return arr


def refine(model: LipModel, base: ExpressionSequence, audio, style,
           layout: ChannelLayout | None = None, window: int = 8) -> ExpressionSequence:
    """Replace the mouth channels of ``base`` with the model's predictions.

    Windows of ``window`` frames advance one frame at a time and overlapping
    predictions are averaged.  Channels outside the mouth mask are copied
    bit-exact.
    """
    layout = layout or base.layout
    feats = np.asarray(getattr(audio, "feats", audio), dtype=np.float64)
    n = len(base)
    if feats.shape[0] != n:
        raise AlignmentError(f"base has {n} frames but audio has {feats.shape[0]}")
    mask = list(layout.mouth_mask)
    out = base.values.copy()
    if not mask:
        return ExpressionSequence(out, base.layout, base.fps)
    if len(mask) != model.config.mouth_dim:
        raise DimensionError(f"layout has {len(mask)} mouth channels, model predicts {model.config.mouth_dim}")
    win = min(window, n)
    starts = np.arange(n - win + 1)
    windows = feats[starts[:, None] + np.arange(win)]
    style3 = np.broadcast_to(style_triple(style), (len(starts), 3, model.config.style_dim))
    pred = model.predict(windows, style3)
    acc = np.zeros((n, len(mask)))
    count = np.zeros((n, 1))
    for s, p in zip(starts, pred):
        acc[s:s + win] += p
        count[s:s + win] += 1
    out[:, mask] = acc / count
    return ExpressionSequence(out, base.layout, base.fps)


def save_lip(path, model: LipModel, *, optimizer=None, epoch: int = 0,
             rng: np.random.Generator | None = None, extra: dict | None = None) -> None:
    checkpoint.save(path, KIND, model.hyperparams(), model.params.vector, epoch=epoch,
                    rng_state=rng.bit_generator.state if rng is not None else None,
                    optimizer=optimizer, extra=extra)


def load_lip(path) -> tuple[LipModel, dict]:
    meta = checkpoint.load(path, KIND)
    return LipModel(LipConfig(**meta["hyperparams"]), params=meta["arrays"]["params"].copy()), meta
