import numpy as np
import pytest
from hypothesis import given, strategies as st

from blendiff.conditioning import build_condition, drop_condition, fuse_audio, null_condition, style_rows
from blendiff.errors import ChunkLengthError, DimensionError, ValidationError


def test_n32_indicator_rows():
    c = build_condition(np.ones(58), np.ones((3, 58)), 32)
    assert c.shape == (32, 59)
    assert np.flatnonzero(c[:, -1]).tolist() == [0, 15, 16, 17]


def test_n4_layout():
    s = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    c = build_condition([0.1, 0.2], s, 4)
    expected = [[0.1, 0.2, 1], [1, 2, 1], [3, 4, 1], [5, 6, 1]]
    assert np.array_equal(c, np.array(expected))


def test_absent_parts_give_null():
    c = build_condition(None, None, 16, dim=5)
    assert np.array_equal(c, np.zeros((16, 6)))
    assert np.array_equal(fuse_audio(c, np.zeros((16, 3))), null_condition(16, 5, 3))
    with pytest.raises(DimensionError):
        build_condition(None, None, 16)


def test_only_initial_or_only_style():
    c = build_condition(None, np.ones((3, 2)), 8)
    assert np.flatnonzero(c[:, -1]).tolist() == [3, 4, 5]
    c = build_condition(np.ones(2), None, 8)
    assert np.flatnonzero(c[:, -1]).tolist() == [0]


def test_too_short_chunks():
    for n in (0, 1, 3):
        with pytest.raises(ChunkLengthError):
            build_condition(np.zeros(2), np.zeros((3, 2)), n)


def test_style_shape_checks():
    with pytest.raises(DimensionError):
        build_condition(np.zeros(2), np.zeros((2, 2)), 8)
    with pytest.raises(DimensionError):
        build_condition(np.zeros(2), np.zeros((3, 3)), 8)


def test_fuse_audio():
    c = build_condition([0.1, 0.2], np.zeros((3, 2)), 4)
    fused = fuse_audio(c, np.full((4, 1), 0.5))
    assert fused[0].tolist() == [0.1, 0.2, 1.0, 0.5]
    assert np.array_equal(fuse_audio(c, np.zeros((4, 2)))[:, :3], c)
    with pytest.raises(DimensionError):
        fuse_audio(np.zeros((32, 3)), np.zeros((31, 2)))


@given(st.integers(4, 64), st.integers(1, 6))
def test_condition_layout_property(n, dim):
    rng = np.random.default_rng(n * 7 + dim)
    init = rng.uniform(0.1, 1, dim)
    style = rng.uniform(0.1, 1, (3, dim))
    c = build_condition(init, style, n)
    rows = [0, n // 2 - 1, n // 2, n // 2 + 1]
    assert sorted(set(rows)) == np.flatnonzero(c[:, -1]).tolist()
    assert style_rows(n) == tuple(rows[1:])
    mask = np.ones(n, bool)
    mask[rows] = False
    assert not c[mask].any()
    assert np.array_equal(c[list(style_rows(n)), :dim], style)
    if 0 not in style_rows(n):
        assert np.array_equal(c[0, :dim], init)


def test_drop_probabilities():
    c = np.ones((4, 3))
    rng = np.random.default_rng(0)
    assert all(drop_condition(c, 0.0, rng) is c for _ in range(50))
    assert all(not drop_condition(c, 1.0, rng).any() for _ in range(50))
    with pytest.raises(ValidationError):
        drop_condition(c, 1.5, rng)


def test_drop_fraction():
    rng = np.random.default_rng(7)
    c = np.ones((2, 2))
    dropped = sum(not drop_condition(c, 0.1, rng).any() for _ in range(10_000))
    assert abs(dropped / 10_000 - 0.1) <= 0.01


def test_drop_consumes_one_draw():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    drop_condition(np.ones(3), 0.0, a)
    b.random()
    assert a.random() == b.random()
