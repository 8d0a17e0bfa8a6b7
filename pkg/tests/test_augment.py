import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedccrl import kernels
from fedccrl.augment import (
    AugmentConfig,
    EmptyPoolError,
    SampleStatistics,
    StatisticsPool,
    batch_channel_stats,
    ccdt,
    channel_stats,
    difp_augmix,
    feature_extension,
    op_params,
    sample_augmix_plan,
    select_statistics,
    transfer_styles,
    upload_count,
)


def stats_oracle(img):
    """Eq.-by-eq. channel statistics with explicit loops."""
    c, h, w = img.shape
    means, stds = [], []
    for k in range(c):
        vals = [img[k, i, j] for i in range(h) for j in range(w)]
        mu = sum(vals) / len(vals)
        means.append(mu)
        stds.append(math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals)))
    return np.array(means), np.array(stds)


def pool_of(rng, n, channels=3, clients=(0, 1, 2)):
    return StatisticsPool(
        tuple(
            SampleStatistics(rng.random(channels), 0.05 + 0.3 * rng.random(channels), clients[k % len(clients)])
            for k in range(n)
        )
    )


# ---------------------------------------------------------------- statistics


def test_channel_stats_two_by_two():
    s = channel_stats(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert s.mean[0] == 2.5
    assert s.std[0] == pytest.approx(math.sqrt(1.25), abs=1e-15)
    assert s.std[0] == pytest.approx(1.118034, abs=1e-6)


def test_channel_stats_constant_image():
    s = channel_stats(np.full((3, 4, 4), 0.3))
    np.testing.assert_allclose(s.mean, 0.3, atol=1e-15)
    np.testing.assert_allclose(s.std, 0.0, atol=1e-15)


def test_channel_stats_matches_loop_oracle(rng):
    img = rng.random((3, 5, 7))
    s = channel_stats(img)
    mu, sd = stats_oracle(img)
    np.testing.assert_allclose(s.mean, mu, atol=1e-14)
    np.testing.assert_allclose(s.std, sd, atol=1e-14)


def test_channel_stats_rejects_empty_extent():
    with pytest.raises(ValueError):
        channel_stats(np.zeros((3, 0, 4)))


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(0, 1)), st.randoms(use_true_random=False))
def test_channel_stats_invariant_under_pixel_permutation(img, pyrandom):
    perm = list(range(12))
    pyrandom.shuffle(perm)
    shuffled = img.reshape(2, 12)[:, perm].reshape(2, 3, 4)
    a, b = channel_stats(img), channel_stats(shuffled)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)
    np.testing.assert_allclose(a.std, b.std, atol=1e-14)


def test_upload_count_is_ceiling():
    assert upload_count(37, 0.1) == 4
    assert upload_count(10, 0.99) == 10


def test_select_statistics_draws_distinct_samples(rng):
    images = rng.random((37, 3, 4, 4))
    chosen = select_statistics(images, 0.1, np.random.default_rng(5), client_id=2)
    assert len(chosen) == 4 and all(s.origin_client == 2 for s in chosen)
    mu_all, sd_all = batch_channel_stats(images)
    hits = [int(np.flatnonzero((mu_all == s.mean).all(axis=1) & (sd_all == s.std).all(axis=1))[0]) for s in chosen]
    assert len(set(hits)) == 4
    again = select_statistics(images, 0.1, np.random.default_rng(5), client_id=2)
    assert all(np.array_equal(a.mean, b.mean) for a, b in zip(chosen, again))
    assert len(select_statistics(images[:10], 0.99, rng)) == 10


@pytest.mark.parametrize("r", [0.0, 1.0, 1.5, -0.1])
def test_select_statistics_rejects_bad_ratio(rng, r):
    with pytest.raises(ValueError):
        select_statistics(rng.random((5, 1, 2, 2)), r, rng)


def test_statistics_wire_format():
    s = SampleStatistics(np.array([0.1, 0.2, 0.3]), np.array([0.4, 0.5, 0.6]), 7)
    raw = s.to_bytes()
    assert len(raw) == SampleStatistics.wire_size(3) == 4 + 2 + 6 * 8
    assert raw == struct.pack("<IH6d", 7, 3, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    back, end = SampleStatistics.from_bytes(raw)
    assert end == len(raw) and back.origin_client == 7
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.std, s.std)


def test_pool_roundtrip_and_views(rng):
    pool = pool_of(rng, 9)
    back = StatisticsPool.from_bytes(pool.to_bytes())
    assert np.array_equal(back.means, pool.means) and np.array_equal(back.stds, pool.stds)
    for cid in (0, 1, 2):
        view = pool.view_for(cid)
        assert cid not in view.clients()
        assert len(view) == 6


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        SampleStatistics(np.zeros(2), np.array([0.1, -0.1]))


@pytest.mark.parametrize("kw", [dict(alpha=0), dict(beta=-1), dict(severity=4)])
def test_augment_config_validation(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)


# ---------------------------------------------------------------- CCDT


def test_ccdt_lambda_zero_is_identity(rng):
    X = rng.random((5, 3, 4, 4))
    out = ccdt(X, pool_of(rng, 4), AugmentConfig(), rng, lam=0.0)
    assert np.array_equal(out, X)


def test_ccdt_lambda_one_adopts_donor(rng):
    X = rng.random((1, 3, 6, 6))
    pool = pool_of(rng, 1)
    out = ccdt(X, pool, AugmentConfig(), rng, lam=1.0)
    s = channel_stats(out[0])
    np.testing.assert_allclose(s.mean, pool.means[0], atol=1e-9)
    np.testing.assert_allclose(s.std, pool.stds[0], atol=1e-9)


def test_ccdt_transfer_law_random_lambda(rng):
    for _ in range(50):
        x = rng.random((1, 3, 5, 5))
        donor = pool_of(rng, 1)
        lam = rng.random()
        out = transfer_styles(x, donor.means, donor.stds, np.array([lam]))
        mu, sd = stats_oracle(x[0])
        got_mu, got_sd = stats_oracle(out[0])
        np.testing.assert_allclose(got_mu, lam * donor.means[0] + (1 - lam) * mu, atol=1e-9)
        np.testing.assert_allclose(got_sd, lam * donor.stds[0] + (1 - lam) * sd, atol=1e-9)


def test_ccdt_literal_variant_swaps_roles(rng):
    x = rng.random((1, 2, 5, 5))
    donor = pool_of(rng, 1, channels=2)
    lam = 0.3
    out = transfer_styles(x, donor.means, donor.stds, np.array([lam]), literal=True)
    mu, sd = stats_oracle(x[0])
    got_mu, got_sd = stats_oracle(out[0])
    # mixed std becomes the shift, mixed mean the scale
    np.testing.assert_allclose(got_mu, lam * donor.stds[0] + (1 - lam) * sd, atol=1e-9)
    np.testing.assert_allclose(got_sd, lam * donor.means[0] + (1 - lam) * mu, atol=1e-9)


def test_ccdt_constant_channel_is_safe(rng):
    X = np.full((2, 3, 4, 4), 0.5)
    out = ccdt(X, pool_of(rng, 3), AugmentConfig(), rng)
    assert np.isfinite(out).all()


def test_ccdt_empty_pool_raises(rng):
    X = rng.random((2, 3, 4, 4))
    with pytest.raises(EmptyPoolError, match="skip"):
        ccdt(X, StatisticsPool(), AugmentConfig(), rng)
    with pytest.raises(EmptyPoolError):
        ccdt(X, None, AugmentConfig(), rng)


def test_ccdt_draws_donors_from_the_view_only(rng):
    pool = StatisticsPool(
        (
            SampleStatistics(np.full(1, 0.9), np.full(1, 0.01), 1),
            SampleStatistics(np.full(1, 0.1), np.full(1, 0.01), 0),
        )
    )
    X = rng.random((64, 1, 4, 4))
    out = ccdt(X, pool.view_for(0), AugmentConfig(), rng, lam=1.0)
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.9, atol=1e-9)


# ---------------------------------------------------------------- AugMix


def test_op_params_at_full_intensity():
    assert op_params(kernels.POSTERIZE, 1.0, 1, 8, 8)[0] == 4
    assert op_params(kernels.SOLARIZE, 1.0, 1, 8, 8)[0] == 0.5
    rot = op_params(kernels.ROTATE, 1.0, 1, 8, 8)
    assert math.degrees(math.atan2(rot[1], rot[0])) == pytest.approx(30.0)
    assert op_params(kernels.SHEAR_X, 1.0, -1, 8, 8)[1] == pytest.approx(-0.3)
    assert abs(op_params(kernels.TRANSLATE_X, 1.0, 1, 9, 9)[2]) == pytest.approx(3.0)
    assert abs(op_params(kernels.TRANSLATE_Y, 1.0, 1, 6, 9)[5]) == pytest.approx(2.0)


def test_plan_structure(rng):
    plan = sample_augmix_plan(500, AugmentConfig(), rng, 8, 8)
    assert set(plan.nchains.tolist()) == {1, 2, 3}
    np.testing.assert_allclose(plan.weights.sum(axis=1), 1.0, atol=1e-12)
    for b in range(500):
        k = plan.nchains[b]
        assert np.all(plan.weights[b, k:] == 0) and np.all(plan.depth[b, k:] == 0)
        assert np.all((plan.depth[b, :k] >= 1) & (plan.depth[b, :k] <= 3))
    assert np.all((plan.m >= 0) & (plan.m <= 1))


def test_plan_survives_tiny_beta(rng):
    plan = sample_augmix_plan(200, AugmentConfig(beta=1e-3), rng, 4, 4)
    assert np.isfinite(plan.weights).all()
    np.testing.assert_allclose(plan.weights.sum(axis=1), 1.0, atol=1e-12)


def test_difp_m_one_returns_input(rng):
    X = rng.random((4, 3, 6, 6))
    plan = sample_augmix_plan(4, AugmentConfig(), rng, 6, 6)
    plan.m[:] = 1.0
    assert np.array_equal(difp_augmix(X, AugmentConfig(), plan=plan), X)


def test_difp_identity_ops_return_input(rng):
    X = rng.random((4, 3, 6, 6))
    plan = sample_augmix_plan(4, AugmentConfig(), rng, 6, 6)
    plan.ops[:] = kernels.IDENTITY
    np.testing.assert_allclose(difp_augmix(X, AugmentConfig(), plan=plan), X, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 10.0]), st.integers(1, 3))
def test_difp_output_in_unit_range(seed, beta, severity):
    rng = np.random.default_rng(seed)
    X = rng.random((8, 3, 5, 5))
    out = difp_augmix(X, AugmentConfig(beta=beta, severity=severity), rng)
    assert out.shape == X.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_difp_rejects_unnormalized_input(rng):
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        difp_augmix(rng.random((2, 3, 4, 4)) * 2 + 0.5, AugmentConfig(), rng)
    # within the slack is fine
    difp_augmix(np.full((1, 1, 2, 2), 1 + 1e-7), AugmentConfig(), rng)


# ---------------------------------------------------------------- composition


def test_feature_extension_identity_when_stages_off(rng):
    X = rng.random((3, 3, 4, 4))
    out = feature_extension(X, None, AugmentConfig(), rng, ccdt_on=False, difp_on=False)
    assert np.array_equal(out, X) and out is not X


def test_feature_extension_replay_and_independence(rng):
    X = rng.random((4, 3, 4, 4))
    pool = pool_of(rng, 6)
    cfg = AugmentConfig()
    a = feature_extension(X, pool, cfg, np.random.default_rng(3))
    b = feature_extension(X, pool, cfg, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert isinstance(a, np.ndarray)  # plain array: nothing to differentiate through
    assert a.min() >= 0 and a.max() <= 1
    differ = sum(
        not np.array_equal(
            feature_extension(X, pool, cfg, np.random.default_rng(2 * k)),
            feature_extension(X, pool, cfg, np.random.default_rng(2 * k + 1)),
        )
        for k in range(100)
    )
    assert differ == 100


def test_two_views_from_one_stream_differ(rng):
    X = rng.random((4, 3, 4, 4))
    pool = pool_of(rng, 6)
    g = np.random.default_rng(0)
    assert not np.array_equal(feature_extension(X, pool, AugmentConfig(), g), feature_extension(X, pool, AugmentConfig(), g))
