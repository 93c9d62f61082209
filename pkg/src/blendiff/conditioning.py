"""Time-position-aware condition matrix.

Row 0 carries the initial state, rows ``N//2 - 1 .. N//2 + 1`` carry the three
style frames.  The last column of the state/style block is an indicator that
is 1 on populated rows.  Audio features are appended column-wise, one row per
frame.  The all-zero matrix is the null condition used for guidance.
"""

from __future__ import annotations

import numpy as np

from .errors import ChunkLengthError, DimensionError, ValidationError


def style_rows(n: int) -> tuple[int, int, int]:
    mid = n // 2
    return (mid - 1, mid, mid + 1)


def build_condition(initial, style3, n: int, dim: int | None = None) -> np.ndarray:
    """State/style block of shape ``(n, dim + 1)``.

    ``initial`` is a length-``dim`` vector or None; ``style3`` a ``(3, dim)``
    array or None.  ``dim`` is required only when both are None.
    """
    if n < 4:
        raise ChunkLengthError(f"chunk length {n} < 4 leaves no room for the middle style rows")
    if initial is not None:
        initial = np.asarray(getattr(initial, "values", initial), dtype=np.float64)
        dim = initial.shape[-1]
    if style3 is not None:
        style3 = np.asarray(
            [getattr(f, "values", f) for f in style3] if isinstance(style3, (list, tuple)) else style3,
            dtype=np.float64,
        )
        if style3.ndim != 2 or style3.shape[0] != 3:
            raise DimensionError(f"style must be 3 frames, got shape {style3.shape}")
        if dim is not None and style3.shape[1] != dim:
            raise DimensionError(f"style frames have {style3.shape[1]} channels, expected {dim}")
        dim = style3.shape[1]
    if dim is None:
        raise DimensionError("dim is required when both initial state and style are absent")
    c = np.zeros((n, dim + 1))
    if initial is not None:
        c[0, :dim] = initial
        c[0, dim] = 1.0
    if style3 is not None:
        rows = list(style_rows(n))
        c[rows, :dim] = style3
        c[rows, dim] = 1.0
    return c


def fuse_audio(c: np.ndarray, audio) -> np.ndarray:
    """Per-row concatenation ``[state_style | audio]``."""
    a = np.asarray(getattr(audio, "feats", audio), dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != c.shape[0]:
        raise DimensionError(f"condition has {c.shape[0]} rows but audio has shape {a.shape}")
    return np.concatenate([c, a], axis=1)


def null_condition(n: int, dim: int, audio_dim: int) -> np.ndarray:
    return np.zeros((n, dim + 1 + audio_dim))


def drop_condition(c: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """With probability ``p`` return the null condition (audio included).

    Exactly one uniform draw is consumed per call, whatever ``p`` is.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"drop probability must be in [0, 1], got {p}")
    if rng.random() < p:
        return np.zeros_like(c)
    return c
