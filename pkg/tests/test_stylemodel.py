"""Style buffer, Bayesian channel statistics, and stratified sampling."""

import numpy as np
import pytest
from scipy import stats

from styleseg.special import reg_lower_gamma
from styleseg.stylemodel import (
    FORMAT_TAG,
    GammaChannelStats,
    GaussianChannelStats,
    StyleBuffer,
    StyleModel,
)


def test_buffer_add_len_drain():
    buf = StyleBuffer(num_channels=4, capacity=8)
    rng = np.random.default_rng(31)
    buf.add(rng.normal(size=(3, 4)), np.abs(rng.normal(size=(3, 4))))
    assert len(buf) == 3
    assert not buf.full
    buf.add(rng.normal(size=(5, 4)), np.abs(rng.normal(size=(5, 4))))
    assert buf.full
    means, stds = buf.drain()
    assert means.shape == (8, 4)
    assert stds.shape == (8, 4)
    assert len(buf) == 0
    empty_means, empty_stds = buf.drain()
    assert empty_means.shape == (0, 4)
    assert empty_stds.shape == (0, 4)


def test_buffer_validation():
    buf = StyleBuffer(num_channels=4, capacity=8)
    with pytest.raises(ValueError):
        buf.add(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        buf.add(np.zeros((2, 4)), -np.ones((2, 4)))


def test_gaussian_stats_recover_distribution():
    rng = np.random.default_rng(32)
    stats_ = GaussianChannelStats(num_channels=3)
    true_mean = np.array([3.0, -1.5, 0.0])
    true_std = np.array([0.5, 2.0, 1.0])
    for _ in range(100):
        stats_.update(rng.normal(true_mean, true_std, size=(100, 3)))
    loc, scale = stats_.posterior()
    assert np.abs(loc - true_mean).max() < 0.02
    assert np.abs(scale - true_std).max() < 0.02


def test_gaussian_stats_prior_only():
    stats_ = GaussianChannelStats(num_channels=2)
    loc, scale = stats_.posterior()
    assert np.allclose(loc, 0.0)
    assert np.all(scale > 0)
    assert np.all(np.isfinite(scale))


def test_gamma_stats_recover_distribution():
    rng = np.random.default_rng(33)
    stats_ = GammaChannelStats(num_channels=2)
    true_shape = np.array([2.0, 5.0])
    true_scale = np.array([0.5, 0.2])
    stats_.update(rng.gamma(true_shape, true_scale, size=(10000, 2)))
    shape, scale = stats_.posterior()
    assert np.abs(shape - true_shape).max() < 0.1
    assert np.abs(scale - true_scale).max() < 0.025


def test_gamma_stats_prior_pull_at_low_count():
    # 5 identical observations at 4.0 against 10 pseudo-samples at mean 1.0:
    # the blended mean must sit between, nearer the prior
    stats_ = GammaChannelStats(num_channels=1)
    stats_.update(np.full((5, 1), 4.0))
    shape, scale = stats_.posterior()
    blended_mean = shape * scale
    assert 1.0 < blended_mean[0] < 4.0
    assert blended_mean[0] == pytest.approx((10.0 * 1.0 + 5 * 4.0) / 15.0, rel=1e-12)


def test_gamma_stats_rejects_negative():
    stats_ = GammaChannelStats(num_channels=1)
    with pytest.raises(ValueError):
        stats_.update(np.array([[-0.1]]))


def _seeded_model(num_channels=6, rows=2048, seed=34):
    rng = np.random.default_rng(seed)
    model = StyleModel(num_channels, buffer_capacity=256)
    true_mean = np.linspace(-1.0, 2.0, num_channels)
    true_mstd = np.linspace(0.3, 1.2, num_channels)
    true_shape = np.linspace(2.0, 6.0, num_channels)
    true_scale = np.linspace(0.2, 0.6, num_channels)
    for _ in range(rows // 8):
        model.observe(rng.normal(true_mean, true_mstd, size=(8, num_channels)),
                      rng.gamma(true_shape, true_scale, size=(8, num_channels)))
    return model, rng


def test_model_auto_flush_and_accumulation():
    model, _ = _seeded_model(rows=512)
    assert model.ready
    assert model.num_observed == 512
    assert len(model.buffer) == 0
    before = model.num_observed
    model.observe(np.zeros((4, 6)), np.ones((4, 6)))
    assert model.num_observed == before  # below capacity, still buffered
    assert len(model.buffer) == 4
    model.flush()
    assert model.num_observed == before + 4


def test_model_sample_requires_data():
    model = StyleModel(4)
    with pytest.raises(RuntimeError):
        model.sample(8, np.random.default_rng(0))


def test_sampling_is_stratified_per_channel():
    model, rng = _seeded_model()
    loc, spread = model.mean_stats.posterior()
    shape, scale = model.std_stats.posterior()
    batch = 8
    for _ in range(20):
        means, stds = model.sample(batch, rng)
        mean_q = stats.norm.cdf(means, loc=loc[None, :], scale=spread[None, :])
        std_q = reg_lower_gamma(shape[None, :], stds / scale[None, :])
        for q in (mean_q, std_q):
            strata = np.floor(np.sort(q, axis=0) * batch).astype(int)
            # exactly one draw in each of the batch-many quantile strata
            assert np.all(strata == np.arange(batch)[:, None])


def test_sampling_permutes_channels_independently():
    model, rng = _seeded_model()
    loc, spread = model.mean_stats.posterior()
    means, _ = model.sample(8, rng)
    q = stats.norm.cdf(means, loc=loc[None, :], scale=spread[None, :])
    orders = {tuple(np.argsort(q[:, c])) for c in range(q.shape[1])}
    assert len(orders) > 1


def test_sampling_variance_reduction():
    model, rng = _seeded_model()
    loc, spread = model.mean_stats.posterior()
    batch = 8
    strat_means = np.array([model.sample(batch, rng)[0].mean(axis=0) for _ in range(400)])
    iid_means = np.array([rng.normal(loc, spread, size=(batch, loc.size)).mean(axis=0)
                          for _ in range(400)])
    assert np.all(strat_means.var(axis=0) < 0.5 * iid_means.var(axis=0))


def test_sampling_std_floor():
    model = StyleModel(2, buffer_capacity=8)
    # all-zero stds drive the fitted Gamma toward tiny draws
    model.observe(np.zeros((8, 2)), np.zeros((8, 2)))
    means, stds = model.sample(16, np.random.default_rng(35))
    assert np.all(stds >= model.STD_FLOOR)


def test_checkpoint_round_trip(tmp_path):
    model, _ = _seeded_model(rows=500)  # leaves a partial buffer behind
    model.observe(np.ones((3, 6)), np.ones((3, 6)))
    path = tmp_path / "style.npz"
    model.save(path)
    loaded = StyleModel.load(path)
    assert loaded.num_observed == model.num_observed
    assert np.array_equal(loaded.mean_stats.total, model.mean_stats.total)
    assert np.array_equal(loaded.mean_stats.total_sq, model.mean_stats.total_sq)
    assert np.array_equal(loaded.std_stats.total, model.std_stats.total)
    assert len(loaded.buffer) == len(model.buffer)
    for got, want in zip(loaded.buffer.peek(), model.buffer.peek()):
        assert np.array_equal(got, want)
    for got, want in zip(loaded.mean_stats.posterior(), model.mean_stats.posterior()):
        assert np.array_equal(got, want)
    for got, want in zip(loaded.std_stats.posterior(), model.std_stats.posterior()):
        assert np.array_equal(got, want)


def test_checkpoint_carries_format_tag(tmp_path):
    model, _ = _seeded_model(rows=256)
    assert model.state_dict()["format"] == FORMAT_TAG
    state = model.state_dict()
    state["format"] = "styleseg.style-model/v999"
    path = tmp_path / "bad.npz"
    np.savez(path, **state)
    with pytest.raises(ValueError):
        StyleModel.load(path)


def test_sampling_deterministic_under_seed():
    model, _ = _seeded_model()
    a = model.sample(8, np.random.default_rng(99))
    b = model.sample(8, np.random.default_rng(99))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_pooled_mode_fits_single_scalar_pair(tmp_path):
    rng = np.random.default_rng(61)
    model = StyleModel(4, buffer_capacity=64, pooled=True)
    # channels with very different locations; the pooled fit sees their union
    means = rng.normal([0.0, 0.0, 8.0, 8.0], 0.3, size=(512, 4))
    stds = rng.gamma(3.0, 0.4, size=(512, 4))
    model.observe(means, stds)
    assert model.num_observed == 512
    assert model.mean_stats.num_channels == 1
    loc, _ = model.mean_stats.posterior()
    assert loc.shape == (1,)
    assert abs(loc[0] - 4.0) < 0.2

    sampled_means, sampled_stds = model.sample(64, rng)
    assert sampled_means.shape == (64, 4)
    # every channel draws from the same pooled distribution, so channel means agree
    per_channel = sampled_means.mean(axis=0)
    assert np.all(np.abs(per_channel - per_channel.mean()) < 1.5)
    assert np.all(sampled_stds >= model.STD_FLOOR)

    path = tmp_path / "pooled.npz"
    model.save(path)
    loaded = StyleModel.load(path)
    assert loaded.pooled
    assert loaded.mean_stats.num_channels == 1
    assert loaded.num_observed == 512
