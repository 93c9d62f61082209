import numpy as np
import pytest

from blendiff.checkpoint import save
from blendiff.conditioning import build_condition, fuse_audio
from blendiff.data import TrainingChunk
from blendiff.denoiser import (
    DenoiserConfig, DenoiserModel, TrainConfig, denoise, load_denoiser, loss_and_grad,
    save_denoiser, train,
)
from blendiff.diffusion import build_schedule
from blendiff.errors import ConfigError, DimensionError, ParseError, TrainingDivergedError
from gradcheck import denoiser_grad_errors

D, A, N = 5, 3, 8


def tiny(seed=0, **kw):
    return DenoiserModel(DenoiserConfig(D, D + 1 + A, width=16, layers=1, heads=2, **kw), seed=seed)


def perturbed(seed=0):
    m = tiny(seed)
    m.params.vector[:] += 0.05 * np.random.default_rng(seed).standard_normal(m.n_params)
    return m


def chunks(rng, n_chunks=6, n=N):
    clip = rng.uniform(0, 1, (3 * n, D))
    return [TrainingChunk(clip[i:i + n].copy(), rng.standard_normal((n, A)), clip)
            for i in range(n_chunks)]


def condition(rng, n=N):
    c = build_condition(rng.uniform(0, 1, D), rng.uniform(0, 1, (3, D)), n)
    return fuse_audio(c, rng.standard_normal((n, A)))


def test_output_shape_matches_input(rng):
    m = DenoiserModel(DenoiserConfig(58, 58 + 1 + 8, width=16, layers=1, heads=2))
    x = rng.standard_normal((32, 58))
    c = fuse_audio(build_condition(None, None, 32, dim=58), np.zeros((32, 8)))
    assert denoise(m, x, 7, c).shape == (32, 58)


def test_untrained_head_predicts_zero(rng):
    m = tiny()
    assert np.all(denoise(m, rng.standard_normal((N, D)), 3, condition(rng)) == 0.0)


def test_forward_is_deterministic(rng):
    m = perturbed()
    x, c = rng.standard_normal((N, D)), condition(rng)
    assert np.array_equal(denoise(m, x, 4, c), denoise(m, x, 4, c))
    assert np.array_equal(perturbed().params.vector, m.params.vector)


def test_batched_forward_matches_single(rng):
    m = perturbed()
    x = rng.standard_normal((3, N, D))
    c = np.stack([condition(rng) for _ in range(3)])
    t = np.array([1, 5, 9])
    out, _ = m.forward(x, t, c)
    for i in range(3):
        np.testing.assert_allclose(out[i], denoise(m, x[i], t[i], c[i]), rtol=1e-12, atol=1e-14)


def test_output_depends_on_frame_position(rng):
    m = perturbed()
    x = np.tile(rng.standard_normal(D), (N, 1))
    c = fuse_audio(build_condition(None, None, N, dim=D), np.zeros((N, A)))
    out = denoise(m, x, 5, c)
    assert np.abs(out[0] - out[-1]).max() > 1e-6


def test_output_depends_on_condition(rng):
    m = perturbed()
    x = rng.standard_normal((N, D))
    c = condition(rng)
    assert np.abs(denoise(m, x, 5, c) - denoise(m, x, 5, np.zeros_like(c))).max() > 1e-6


def test_shape_errors(rng):
    m = tiny()
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, N, D + 1)), np.array([1]), np.zeros((1, N, D + 1 + A)))
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, N, D)), np.array([1]), np.zeros((1, N - 1, D + 1 + A)))
    with pytest.raises(DimensionError):
        m.forward(np.zeros((2, N, D)), np.array([1]), np.zeros((2, N, D + 1 + A)))


def test_bad_configs():
    with pytest.raises(ConfigError):
        DenoiserConfig(D, D + 1, width=10, heads=4)
    with pytest.raises(ConfigError):
        TrainConfig(drop_prob=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def test_gradients_by_group():
    errs = denoiser_grad_errors(n_per_group=30, seed=1)
    for group, (err, n) in errs.items():
        assert n == 30
        assert err < 1e-4, group


def test_zero_head_loss_is_noise_power(rng, small_schedule):
    m = tiny()
    x0 = rng.uniform(0, 1, (4, N, D))
    c = np.stack([condition(rng) for _ in range(4)])
    loss, _ = loss_and_grad(m, (x0, c), small_schedule, np.random.default_rng(0))
    r = np.random.default_rng(0)
    r.integers(1, small_schedule.T + 1, size=4)
    eps = r.standard_normal(x0.shape)
    assert loss == pytest.approx(np.mean(eps ** 2), rel=1e-12)


def test_zero_lr_leaves_params(rng, small_schedule):
    m = tiny()
    before = m.params.vector.copy()
    train(m, chunks(rng), TrainConfig(epochs=2, batch_size=4, lr=0.0, chunk_len=N), small_schedule)
    assert np.array_equal(m.params.vector, before)


def test_training_is_reproducible(small_schedule):
    curves, params = [], []
    for _ in range(2):
        m = tiny()
        res = train(m, chunks(np.random.default_rng(5)),
                    TrainConfig(epochs=3, batch_size=4, lr=1e-3, chunk_len=N, seed=2), small_schedule)
        curves.append(res.loss_curve)
        params.append(m.params.vector.copy())
    assert curves[0] == curves[1]
    assert np.array_equal(params[0], params[1])


def test_normalizer_fitted_and_constant_channel_kept(rng, small_schedule):
    ch = chunks(rng)
    for c in ch:
        c.x0[:, 2] = 0.25
    m = tiny()
    train(m, ch, TrainConfig(epochs=1, batch_size=4, lr=1e-3, chunk_len=N), small_schedule)
    x0 = np.stack([c.x0 for c in ch])
    np.testing.assert_allclose(m.data_mean, x0.reshape(-1, D).mean(0), rtol=1e-12)
    assert m.data_std[2] == 1.0 and m.sigma_data[2] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(m.decode(m.encode(x0)), x0, atol=1e-12)


def test_input_scale_is_unit_for_standardised_channels(small_schedule):
    m = tiny()
    m.attach_schedule(small_schedule, np.random.default_rng(0).standard_normal((4000, D)))
    s = m.input_scale(np.array([1, 10]))
    assert s.shape == (2, 1, D)
    np.testing.assert_allclose(s, 1.0, atol=0.05)
    with pytest.raises(DimensionError):
        m.input_scale(np.array([11]))


def test_nan_data_diverges(rng, small_schedule):
    ch = chunks(rng)
    ch[0].x0[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError):
        train(tiny(), ch, TrainConfig(epochs=1, batch_size=64, chunk_len=N, normalize=False), small_schedule)


def test_checkpoint_roundtrip(tmp_path, rng, small_schedule):
    m = tiny()
    res = train(m, chunks(rng), TrainConfig(epochs=2, batch_size=4, lr=1e-3, chunk_len=N), small_schedule)
    path = tmp_path / "m.ckpt"
    save_denoiser(path, m, optimizer=res.optimizer, epoch=2, rng=res.rng)
    back, meta = load_denoiser(path)
    assert back.config == m.config and meta["epoch"] == 2
    for name in ("data_mean", "data_std", "sigma_data", "alpha_bar"):
        assert np.array_equal(getattr(back, name), getattr(m, name)), name
    assert np.array_equal(back.params.vector, m.params.vector)
    assert np.array_equal(meta["arrays"]["adam_m"], res.optimizer.state()["m"])
    x, c = rng.standard_normal((N, D)), condition(rng)
    assert np.array_equal(denoise(back, x, 3, c), denoise(m, x, 3, c))
    again = tmp_path / "again.ckpt"
    save_denoiser(again, m, optimizer=res.optimizer, epoch=2, rng=res.rng)
    assert path.read_bytes() == again.read_bytes()


def test_wrong_checkpoint_kind(tmp_path):
    path = tmp_path / "lip.ckpt"
    save(path, "lip", {}, np.zeros(3))
    with pytest.raises(ParseError):
        load_denoiser(path)
    bad = tmp_path / "junk.ckpt"
    bad.write_bytes(b"not a zip")
    with pytest.raises(ParseError):
        load_denoiser(bad)
