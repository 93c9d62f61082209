"""Blendshape channel layout, frames and sequences.

A frame is ``E`` ARKit-style blendshape weights followed by ``P`` head-pose
channels (3 rotations in radians, 3 translations).  The diffusion model works
on unclamped frames; :func:`clamp_frame` is applied only when exporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError

ARKIT_NAMES = (
    "eyeBlinkLeft", "eyeLookDownLeft", "eyeLookInLeft", "eyeLookOutLeft",
    "eyeLookUpLeft", "eyeSquintLeft", "eyeWideLeft",
    "eyeBlinkRight", "eyeLookDownRight", "eyeLookInRight", "eyeLookOutRight",
    "eyeLookUpRight", "eyeSquintRight", "eyeWideRight",
    "jawForward", "jawLeft", "jawRight", "jawOpen",
    "mouthClose", "mouthFunnel", "mouthPucker", "mouthLeft", "mouthRight",
    "mouthSmileLeft", "mouthSmileRight", "mouthFrownLeft", "mouthFrownRight",
    "mouthDimpleLeft", "mouthDimpleRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthPressLeft", "mouthPressRight", "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "noseSneerLeft", "noseSneerRight",
    "tongueOut",
)

POSE_NAMES = ("headPitch", "headYaw", "headRoll", "headTx", "headTy", "headTz")

MOUTH_PREFIXES = ("mouth", "jaw")


@dataclass(frozen=True)
class ChannelLayout:
    expression_dim: int
    pose_dim: int
    channel_names: tuple[str, ...]
    mouth_mask: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "mouth_mask", tuple(sorted(int(i) for i in self.mouth_mask)))
        if self.expression_dim < 1 or self.pose_dim < 0:
            raise ValidationError(
                f"need expression_dim >= 1 and pose_dim >= 0, got {self.expression_dim}, {self.pose_dim}"
            )
        if len(self.channel_names) != self.dim:
            raise DimensionError(
                f"{len(self.channel_names)} channel names for {self.dim} channels"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValidationError("channel names must be unique")
        if len(set(self.mouth_mask)) != len(self.mouth_mask):
            raise ValidationError("mouth_mask has duplicate indices")
        for i in self.mouth_mask:
            if not 0 <= i < self.expression_dim:
                raise ValidationError(
                    f"mouth_mask index {i} is outside the blendshape range [0, {self.expression_dim})"
                )

    @property
    def dim(self) -> int:
        return self.expression_dim + self.pose_dim

    @property
    def other_mask(self) -> tuple[int, ...]:
        mouth = set(self.mouth_mask)
        return tuple(i for i in range(self.dim) if i not in mouth)

    def index(self, name: str) -> int:
        return self.channel_names.index(name)

    def indices_with_prefix(self, prefix: str) -> tuple[int, ...]:
        return tuple(i for i, n in enumerate(self.channel_names[: self.expression_dim])
                     if n.startswith(prefix))

    def with_mouth_mask(self, mask) -> "ChannelLayout":
        return ChannelLayout(self.expression_dim, self.pose_dim, self.channel_names, tuple(mask))

    def to_dict(self) -> dict:
        return {
            "expression_dim": self.expression_dim,
            "pose_dim": self.pose_dim,
            "channel_names": list(self.channel_names),
            "mouth_mask": list(self.mouth_mask),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelLayout":
        try:
            return cls(int(d["expression_dim"]), int(d["pose_dim"]),
                       tuple(d["channel_names"]), tuple(d["mouth_mask"]))
        except KeyError as exc:
            raise ValidationError(f"layout is missing field {exc.args[0]!r}") from None


def default_layout() -> ChannelLayout:
    """52 ARKit blendshapes plus 6 pose channels; mouth = ``mouth*`` and ``jaw*``."""
    names = ARKIT_NAMES + POSE_NAMES
    mask = tuple(i for i, n in enumerate(ARKIT_NAMES) if n.startswith(MOUTH_PREFIXES))
    return ChannelLayout(len(ARKIT_NAMES), len(POSE_NAMES), names, mask)


def load_layout(path) -> ChannelLayout:
    with open(path) as fh:
        return ChannelLayout.from_dict(json.load(fh))


def save_layout(layout: ChannelLayout, path) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=2) + "\n")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def check_finite(values: np.ndarray, layout: ChannelLayout | None = None, what: str = "frame") -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        ch = int(idx[-1])
        name = layout.channel_names[ch] if layout is not None and ch < layout.dim else str(ch)
        raise ValidationError(f"non-finite value in {what} at channel {name!r}")


@dataclass(frozen=True)
class ExpressionFrame:
    values: np.ndarray
    layout: ChannelLayout = field(default_factory=default_layout, compare=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.layout.dim,):
            raise DimensionError(f"frame has shape {vals.shape}, layout expects ({self.layout.dim},)")
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        return (isinstance(other, ExpressionFrame) and self.layout == other.layout
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class ExpressionSequence:
    """``values`` has shape ``(frames, E+P)``."""

    values: np.ndarray
    layout: ChannelLayout = field(default_factory=default_layout)
    fps: float = 25.0

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2 or vals.shape[1] != self.layout.dim:
            raise DimensionError(
                f"sequence has shape {vals.shape}, layout expects (*, {self.layout.dim})"
            )
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> ExpressionFrame:
        return ExpressionFrame(self.values[i], self.layout)

    @property
    def frames(self) -> list[ExpressionFrame]:
        return [self[i] for i in range(len(self))]

    def __eq__(self, other):
        return (isinstance(other, ExpressionSequence) and self.layout == other.layout
                and self.fps == other.fps and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class EmotionStyleClip:
    sequence: ExpressionSequence
    emotion_label: str
    clip_id: str

    def __post_init__(self):
        if len(self.sequence) < 3:
            raise ValidationError(
                f"style clip {self.clip_id!r} has {len(self.sequence)} frames; at least 3 are needed"
            )


def clamp_frame(f: ExpressionFrame) -> ExpressionFrame:
    """Clip blendshape channels to [0, 1]; pose channels pass through."""
    check_finite(f.values, f.layout)
    vals = f.values.copy()
    e = f.layout.expression_dim
    vals[:e] = np.clip(vals[:e], 0.0, 1.0)
    return ExpressionFrame(vals, f.layout)


def clamp_values(values: np.ndarray, layout: ChannelLayout) -> np.ndarray:
    """Array form of :func:`clamp_frame` for ``(..., E+P)`` arrays."""
    check_finite(values, layout, "sequence")
    out = np.array(values, dtype=np.float64, copy=True)
    e = layout.expression_dim
    out[..., :e] = np.clip(out[..., :e], 0.0, 1.0)
    return out


def split_mouth(f: ExpressionFrame, layout: ChannelLayout) -> tuple[np.ndarray, np.ndarray]:
    if f.values.shape != (layout.dim,):
        raise DimensionError(f"frame of size {f.values.shape[0]} does not match layout dim {layout.dim}")
    return f.values[list(layout.mouth_mask)].copy(), f.values[list(layout.other_mask)].copy()


def merge_mouth(mouth: np.ndarray, other: np.ndarray, layout: ChannelLayout) -> ExpressionFrame:
    mouth = np.asarray(mouth, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if mouth.shape != (len(layout.mouth_mask),) or other.shape != (len(layout.other_mask),):
        raise DimensionError(
            f"parts of size {mouth.shape[0]}+{other.shape[0]} do not fit the layout partition"
        )
    vals = np.empty(layout.dim)
    vals[list(layout.mouth_mask)] = mouth
    vals[list(layout.other_mask)] = other
    return ExpressionFrame(vals, layout)
