"""Gaussian diffusion on frame sequences: schedule, noising, reverse steps, guidance.

Step indices are 1-based, ``t in [1, T]``.  Schedule tables are stored with a
leading pad so ``schedule.beta[t]`` reads naturally; entry 0 is ``beta=0``,
``alpha_bar=1`` (the clean data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, StepError

TERMINAL_ALPHA_BAR_MAX = 0.01


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    def check_step(self, t) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise StepError(f"step {t} outside [1, {self.T}]")
        return t

    def to_dict(self) -> dict:
        return {"T": self.T, "betas": self.beta[1:].tolist()}


def schedule_from_betas(betas, terminal_max: float | None = None) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ConfigError("need at least one beta")
    if not np.all((betas > 0) & (betas < 1)):
        raise ConfigError("every beta must lie in (0, 1)")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if terminal_max is not None and not alpha_bar[-1] < terminal_max:
        raise ConfigError(
            f"alpha_bar[T]={alpha_bar[-1]:.4g} is not below {terminal_max}; x_T would not be close to N(0, I)"
        )
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                   kind: str = "linear", terminal_max: float | None = None) -> NoiseSchedule:
    """Linear beta schedule.

    ``terminal_max`` enforces ``alpha_bar[T] < terminal_max``; run configs pass
    :data:`TERMINAL_ALPHA_BAR_MAX`.
    """
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T)) if T > 1 else np.array([beta_start])
    return schedule_from_betas(betas, terminal_max)


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def forward_sample(x0, t, eps, s: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    t = s.check_step(t)
    _same_shape(x0, eps, "forward_sample")
    ab = s.alpha_bar[t]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def forward_sample_batch(x0, t, eps, s: NoiseSchedule) -> np.ndarray:
    """Batched noising with one step per leading-axis element."""
    t = np.asarray(t)
    _same_shape(x0, eps, "forward_sample_batch")
    if t.min() < 1 or t.max() > s.T:
        raise StepError(f"steps must lie in [1, {s.T}]")
    ab = s.alpha_bar[t].reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_mu(x_t, t, eps_hat, s: NoiseSchedule) -> np.ndarray:
    """Posterior mean from a noise prediction."""
    t = s.check_step(t)
    _same_shape(x_t, eps_hat, "predict_mu")
    a, ab = s.alpha[t], s.alpha_bar[t]
    return (np.asarray(x_t) - ((1.0 - a) / np.sqrt(1.0 - ab)) * np.asarray(eps_hat)) / np.sqrt(a)


def reverse_step(x_t, t, eps_hat, z, s: NoiseSchedule) -> np.ndarray:
    """One ancestral step with variance ``beta_t``; the final step (t=1) adds no noise."""
    t = s.check_step(t)
    mu = predict_mu(x_t, t, eps_hat, s)
    if t == 1:
        return mu
    _same_shape(x_t, z, "reverse_step")
    return mu + np.sqrt(s.beta[t]) * np.asarray(z)


def simple_loss(eps, eps_hat) -> float:
    _same_shape(eps, eps_hat, "simple_loss")
    d = np.asarray(eps, dtype=np.float64) - np.asarray(eps_hat, dtype=np.float64)
    return float(np.mean(d * d))


def cfg_combine(eps_cond, eps_uncond, w: float) -> np.ndarray:
    """Classifier-free guidance: ``(w + 1) eps_cond - w eps_uncond``."""
    _same_shape(eps_cond, eps_uncond, "cfg_combine")
    return (w + 1.0) * np.asarray(eps_cond) - w * np.asarray(eps_uncond)
