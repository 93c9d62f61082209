import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from blendiff.errors import DimensionError, ValidationError
from blendiff.layout import (
    ARKIT_NAMES, ChannelLayout, EmotionStyleClip, ExpressionFrame, ExpressionSequence, clamp_frame,
    clamp_values, default_layout, load_layout, merge_mouth, save_layout, split_mouth,
)


def test_default_layout_has_52_blendshapes_and_pose(layout):
    assert layout.expression_dim == 52
    assert layout.pose_dim == 6
    assert layout.dim == 58
    assert len(set(ARKIT_NAMES)) == 52


def test_mouth_mask_is_mouth_and_jaw_names_only(layout):
    names = [layout.channel_names[i] for i in layout.mouth_mask]
    assert all(n.startswith(("mouth", "jaw")) for n in names)
    expected = sum(n.startswith(("mouth", "jaw")) for n in ARKIT_NAMES)
    assert len(layout.mouth_mask) == expected == 27
    assert not set(layout.mouth_mask) & set(range(52, 58))


def test_layout_json_round_trip(tmp_path, layout):
    p = tmp_path / "layout.json"
    save_layout(layout, p)
    assert load_layout(p) == layout
    assert json.loads(p.read_text())["mouth_mask"] == list(layout.mouth_mask)


@pytest.mark.parametrize("kwargs, err", [
    (dict(expression_dim=2, pose_dim=0, channel_names=("a",), mouth_mask=()), DimensionError),
    (dict(expression_dim=2, pose_dim=0, channel_names=("a", "a"), mouth_mask=()), ValidationError),
    (dict(expression_dim=2, pose_dim=1, channel_names=("a", "b", "p"), mouth_mask=(2,)), ValidationError),
    (dict(expression_dim=0, pose_dim=1, channel_names=("p",), mouth_mask=()), ValidationError),
])
def test_invalid_layouts_rejected(kwargs, err):
    with pytest.raises(err):
        ChannelLayout(**kwargs)


def test_clamp_examples(layout):
    v = np.full(58, 0.5)
    v[3] = 1.3
    v[52] = -0.4
    out = clamp_frame(ExpressionFrame(v, layout)).values
    assert out[3] == 1.0
    assert out[52] == -0.4
    ok = np.linspace(0, 1, 58)
    ok[52:] = 0.2
    assert clamp_frame(ExpressionFrame(ok, layout)) == ExpressionFrame(ok, layout)


def test_clamp_rejects_non_finite_naming_channel(layout):
    v = np.zeros(58)
    v[layout.index("jawOpen")] = np.nan
    with pytest.raises(ValidationError, match="jawOpen"):
        clamp_frame(ExpressionFrame(v, layout))


def test_split_mouth_small_layout():
    lay = ChannelLayout(4, 0, ("a", "b", "c", "d"), (1, 3))
    mouth, other = split_mouth(ExpressionFrame([1.0, 2.0, 3.0, 4.0], lay), lay)
    assert mouth.tolist() == [2.0, 4.0]
    assert other.tolist() == [1.0, 3.0]


def test_split_empty_mask(layout):
    lay = layout.with_mouth_mask(())
    f = ExpressionFrame(np.arange(58.0), lay)
    mouth, other = split_mouth(f, lay)
    assert mouth.size == 0
    assert np.array_equal(other, f.values)


def test_split_layout_mismatch():
    small = ChannelLayout(2, 0, ("a", "b"), (0,))
    with pytest.raises(DimensionError):
        split_mouth(ExpressionFrame(np.zeros(58)), small)
    with pytest.raises(DimensionError):
        merge_mouth(np.zeros(3), np.zeros(1), small)


frames = arrays(np.float64, 58, elements=st.floats(-3, 3, allow_nan=False))


@given(frames, st.sets(st.integers(0, 51)))
def test_split_merge_round_trip(values, mask):
    lay = default_layout().with_mouth_mask(mask)
    f = ExpressionFrame(values, lay)
    assert merge_mouth(*split_mouth(f, lay), lay) == f


@given(frames)
def test_clamp_idempotent_and_bounded(values):
    lay = default_layout()
    once = clamp_frame(ExpressionFrame(values, lay))
    assert clamp_frame(once) == once
    assert np.all((once.values[:52] >= 0) & (once.values[:52] <= 1))
    assert np.array_equal(once.values[52:], values[52:])


@given(frames, frames)
def test_clamp_monotone(a, b):
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    lay = default_layout()
    assert np.all(clamp_values(lo, lay) <= clamp_values(hi, lay))


def test_sequence_validation(layout):
    with pytest.raises(DimensionError):
        ExpressionSequence(np.zeros((4, 57)), layout)
    with pytest.raises(ValidationError):
        ExpressionSequence(np.zeros((4, 58)), layout, fps=0)
    seq = ExpressionSequence(np.zeros((4, 58)), layout)
    assert len(seq) == 4 and seq[2] == ExpressionFrame(np.zeros(58), layout)
    with pytest.raises(ValueError):
        seq.values[0, 0] = 1.0


def test_style_clip_needs_three_frames(layout):
    with pytest.raises(ValidationError):
        EmotionStyleClip(ExpressionSequence(np.zeros((2, 58)), layout), "happy", "x")
    EmotionStyleClip(ExpressionSequence(np.zeros((3, 58)), layout), "happy", "x")
