"""Guided reverse-diffusion sampling and long-sequence chaining.

Long sequences are produced chunk by chunk.  Each chunk is conditioned on an
initial-state frame (the previous chunk's last frame), three style frames
drawn afresh from the style clip, and the matching audio rows.  With the
default stride ``N - 1`` consecutive chunks share one frame: the new chunk's
first frame overwrites the previous chunk's last one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import build_condition, fuse_audio
from .data import save_sequence
from .denoiser import denoise
from .diffusion import NoiseSchedule, cfg_combine, reverse_step
from .errors import ConfigError, DimensionError, ValidationError
from .layout import ChannelLayout, EmotionStyleClip, ExpressionSequence


@dataclass
class SamplerConfig:
    chunk_len: int = 32
    guidance: float | None = 2.0
    seed: int = 0
    step: int | None = None
    autoregressive: bool = True

    def __post_init__(self):
        if self.chunk_len < 4:
            raise ConfigError(f"chunk length must be >= 4, got {self.chunk_len}")
        if self.step is None:
            self.step = self.chunk_len - 1
        if self.step not in (self.chunk_len - 1, self.chunk_len):
            raise ConfigError(f"chunk step must be N-1 or N, got {self.step} for N={self.chunk_len}")


def sample_from_condition(model, c: np.ndarray, schedule: NoiseSchedule, w: float | None,
                          rng: np.random.Generator) -> np.ndarray:
    """Run the full reverse chain for one chunk given its fused condition.

    The chain runs in the model's normalised space and the result is decoded
    back to raw units.  ``w=None`` evaluates the conditional branch only.  The noise stream is the
    same either way: ``x_T`` first, then one ``z`` per step (including t=1,
    where it is ignored).
    """
    n = c.shape[0]
    dim = model.config.seq_dim
    phi = np.zeros_like(c)
    x = rng.standard_normal((n, dim))
    for t in range(schedule.T, 0, -1):
        eps = denoise(model, x, t, c)
        if w is not None:
            eps = cfg_combine(eps, denoise(model, x, t, phi), w)
        z = rng.standard_normal((n, dim))
        x = reverse_step(x, t, eps, z, schedule)
    decode = getattr(model, "decode", None)
    return decode(x) if decode is not None else x


def sample_chunk(model, initial, style3, audio_slice, schedule: NoiseSchedule,
                 w: float | None, rng: np.random.Generator) -> np.ndarray:
    """One ``(N, D)`` chunk; ``audio_slice`` must already have ``N`` rows."""
    audio_slice = np.asarray(getattr(audio_slice, "feats", audio_slice))
    n = audio_slice.shape[0]
    c = fuse_audio(build_condition(initial, style3, n, dim=model.config.seq_dim), audio_slice)
    return sample_from_condition(model, c, schedule, w, rng)


@dataclass
class LongSampleResult:
    values: np.ndarray
    chunk_starts: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    chunks: list = field(default_factory=list)
    style_indices: list = field(default_factory=list)
    initial_index: int = -1
    written: np.ndarray | None = None

    @property
    def boundaries(self) -> list:
        return [s for s in self.chunk_starts if s > 0]


def long_term_sample(model, audio, style: EmotionStyleClip, cfg: SamplerConfig,
                     schedule: NoiseSchedule, rng: np.random.Generator | None = None) -> LongSampleResult:
    """Chunked autoregressive generation over the whole audio track.

    Random draws, in order: the initial-state frame index, then per chunk the
    three style indices followed by the chunk's noise stream.  The initial
    index is drawn even with ``autoregressive=False`` so both modes see the
    same style frames and noise.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    feats = np.asarray(getattr(audio, "feats", audio), dtype=np.float64)
    total = feats.shape[0]
    if total < 1:
        raise ValidationError("audio has no frames")
    S = style.sequence.values
    if len(S) < 3:
        raise ValidationError(f"style clip has {len(S)} frames; need at least 3")
    dim = model.config.seq_dim
    if S.shape[1] != dim:
        raise DimensionError(f"style frames have {S.shape[1]} channels, model expects {dim}")
    n, step = cfg.chunk_len, cfg.step

    out = np.zeros((total, dim))
    written = np.zeros(total, dtype=bool)
    res = LongSampleResult(out, written=written)
    res.initial_index = int(rng.integers(len(S)))
    initial = S[res.initial_index] if cfg.autoregressive else None
    i = 0
    while True:
        sidx = rng.choice(len(S), size=3, replace=False)
        audio_slice = np.zeros((n, feats.shape[1]))
        part = feats[i:i + n]
        audio_slice[: len(part)] = part
        c = fuse_audio(build_condition(initial, S[sidx], n, dim=dim), audio_slice)
        chunk = sample_from_condition(model, c, schedule, cfg.guidance, rng)
        end = min(i + n, total)
        out[i:end] = chunk[: end - i]
        written[i:end] = True
        res.chunk_starts.append(i)
        res.conditions.append(c)
        res.chunks.append(chunk)
        res.style_indices.append(sidx)
        if cfg.autoregressive:
            initial = chunk[-1]
        if i + n >= total:
            break
        i += step
    return res


def continuity_jump(seq, boundaries) -> tuple[np.ndarray, float]:
    """Per boundary ``b``, the largest channel change ``|x[b] - x[b-1]|``; plus the overall max."""
    x = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
    jumps = []
    for b in boundaries:
        if not 1 <= b < len(x):
            raise ValidationError(f"boundary {b} outside [1, {len(x)})")
        jumps.append(float(np.max(np.abs(x[b] - x[b - 1]))))
    jumps = np.array(jumps)
    return jumps, float(jumps.max()) if jumps.size else 0.0


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_generated(path, result: LongSampleResult, layout: ChannelLayout, cfg: SamplerConfig,
                   fps: float = 25.0, extra: dict | None = None) -> ExpressionSequence:
    """Write the sequence CSV plus its JSON sidecar; returns the written sequence."""
    seq = ExpressionSequence(result.values, layout, fps)
    save_sequence(seq, path)
    meta = {
        "fps": fps,
        "layout": layout.to_dict(),
        "seed": cfg.seed,
        "w": cfg.guidance,
        "N": cfg.chunk_len,
        "step": cfg.step,
        "autoregressive": cfg.autoregressive,
        "chunk_boundaries": result.boundaries,
        "style_indices": [list(map(int, s)) for s in result.style_indices],
        "initial_index": result.initial_index,
    }
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=1) + "\n")
    return seq
