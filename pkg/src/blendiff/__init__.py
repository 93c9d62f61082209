"""Emotion-conditioned blendshape sequence diffusion.

Generates ARKit blendshape sequences from audio features with a
classifier-free-guided denoiser, chains chunks autoregressively for long
tracks, and refines the mouth channels with a separate audio-to-mouth model.
"""

from .diffusion import NoiseSchedule, build_schedule, cfg_combine, forward_sample, predict_mu, reverse_step, simple_loss
from .layout import ChannelLayout, EmotionStyleClip, ExpressionFrame, ExpressionSequence, default_layout

__version__ = "0.1.0"

__all__ = [
    "ChannelLayout", "EmotionStyleClip", "ExpressionFrame", "ExpressionSequence", "NoiseSchedule",
    "build_schedule", "cfg_combine", "default_layout", "forward_sample", "predict_mu", "reverse_step",
    "simple_loss",
]
