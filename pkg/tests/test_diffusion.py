import numpy as np
import pytest

from freqdiff.data_io import bandpass_images, smooth_mean_image
from freqdiff.denoiser import GaussianOracle
from freqdiff.diffusion import (
    ScheduleError,
    forward_jump,
    forward_step,
    make_schedule,
    per_item_loss,
    posterior_coeffs,
    project_to_support,
    reverse_step,
    sample,
    scaled_schedule,
    strided_steps,
    training_loss,
)
from freqdiff.spectral import BandPass, Flat, NoiseField, TwoBand, band_mask, build_grid, power_map, shape_noise


def exact_sampler_variance(schedule, v, s=1.0, stride=1, variance="posterior"):
    """Variance of one frequency bin after the linear reverse chain.

    Data variance ``v`` and noise variance ``s`` in that bin; the oracle's
    eps-estimate is linear, so the chain is a scalar AR recursion.
    """
    var = s
    steps = strided_steps(schedule.T, stride)
    for t, tp in zip(steps[:-1], steps[1:]):
        alpha, beta, sigma = posterior_coeffs(schedule, t, tp)
        ab = schedule.alpha_bar[t]
        gain = np.sqrt(1 - ab) * s / (ab * v + (1 - ab) * s)
        a = (1 - beta / np.sqrt(1 - ab) * gain) / np.sqrt(alpha)
        inj = 0.0 if tp == 0 else (sigma**2 if variance == "posterior" else beta) * s
        var = a * a * var + inj
    return var


# -- schedule -----------------------------------------------------------------


def test_linear_schedule_endpoints():
    s = make_schedule(1000, 1e-4, 0.02)
    assert s.beta[0] == pytest.approx(1e-4)
    assert s.beta[999] == pytest.approx(0.02)
    assert np.all(np.diff(s.beta) >= 0)
    assert np.all(np.diff(s.alpha_bar) < 0)
    np.testing.assert_allclose(s.alpha_bar, np.array([np.prod(s.alpha[: i + 1]) for i in range(1000)]), rtol=1e-12)


def test_two_step_product():
    s = make_schedule(2, 0.3, 0.3)
    assert s.alpha_bar[1] == pytest.approx(0.7**2, rel=1e-15)


def test_ten_step_product():
    s = make_schedule(10, 0.1, 0.1)
    assert s.alpha_bar[9] == pytest.approx(0.9**10, rel=1e-12)
    assert s.alpha_bar[9] == pytest.approx(0.34868, abs=1e-5)


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.02, 0.01), (10, 0.0, 0.01), (10, 0.1, 1.0)])
def test_schedule_errors(args):
    with pytest.raises(ScheduleError):
        make_schedule(*args)


def test_scaled_schedule_reaches_noise():
    s = scaled_schedule(200)
    assert s.alpha_bar[-1] < 1e-4
    assert s.beta[0] == pytest.approx(5e-4)


# -- forward ------------------------------------------------------------------


def test_forward_step_zero_noise():
    s = make_schedule(50, 1e-3, 0.05)
    x = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(forward_step(x, 7, s, np.zeros((4, 4))), np.sqrt(s.alpha[7]) * x)


def test_forward_step_zero_image():
    s = make_schedule(50, 1e-3, 0.05)
    n = shape_noise(Flat(), build_grid(4, 4), 0)
    np.testing.assert_allclose(forward_step(np.zeros((4, 4)), 3, s, n), np.sqrt(1 - s.alpha[3]) * n.values)


def test_forward_step_shape_mismatch():
    s = make_schedule(10, 1e-3, 0.05)
    with pytest.raises(ScheduleError):
        forward_step(np.zeros((4, 4)), 1, s, np.zeros((4, 5)))


def test_stepwise_matches_jump():
    s = make_schedule(20, 0.01, 0.1)
    g = build_grid(4, 4)
    x0 = np.ones((4, 4))
    t = 12
    trials = 10_000
    rng = np.random.default_rng(0)
    x = np.broadcast_to(x0, (trials, 4, 4)).copy()
    for k in range(t + 1):
        x = forward_step(x, k, s, shape_noise(Flat(), g, rng, n=trials))
    xj, _ = forward_jump(np.broadcast_to(x0, (trials, 4, 4)), t, s, Flat(), 1)
    assert x.mean() == pytest.approx(xj.mean(), rel=0.03)
    assert x.var(axis=0).mean() == pytest.approx(xj.var(axis=0).mean(), rel=0.03)
    assert xj.mean() == pytest.approx(np.sqrt(s.alpha_bar[t]), rel=0.03)


def test_jump_near_identity_at_zero():
    s = scaled_schedule(200)
    x0 = smooth_mean_image(16, 16)
    xt, eps = forward_jump(x0, 0, s, Flat(), 0)
    dev = np.linalg.norm(xt - x0) / np.linalg.norm(x0)
    assert dev < 3 * np.sqrt(1 - s.alpha_bar[0]) * np.linalg.norm(eps.values) / np.linalg.norm(x0)
    np.testing.assert_allclose(xt, np.sqrt(s.alpha_bar[0]) * x0 + np.sqrt(1 - s.alpha_bar[0]) * eps.values)


def test_jump_decorrelates_at_end():
    s = scaled_schedule(200)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((4000, 8, 8))
    xt, _ = forward_jump(x0, s.T - 1, s, Flat(), 1)
    c = np.mean((x0 - x0.mean(0)) * (xt - xt.mean(0)), axis=0) / (x0.std(0) * xt.std(0))
    assert np.abs(c).max() < 0.05


def test_jump_noise_follows_weight():
    s = scaled_schedule(200)
    x0 = np.random.default_rng(0).standard_normal((64, 32, 32))
    xt, eps = forward_jump(x0, 120, s, BandPass(0, 0.3), 2)
    resid = xt - np.sqrt(s.alpha_bar[120]) * x0
    p = power_map(resid)
    inside = band_mask(build_grid(32, 32).radial, 0, 0.3)
    assert (p * inside).sum() > 0.999 * p.sum()
    np.testing.assert_allclose(resid, np.sqrt(1 - s.alpha_bar[120]) * eps.values, atol=1e-12)


def test_forward_marginal_variance():
    s = scaled_schedule(200)
    g = build_grid(16, 16)
    w = TwoBand(0.8, 0.2)
    x0 = np.zeros((5000, 16, 16))
    for t in [0, 20, 70, 130, 199]:
        xt, _ = forward_jump(x0, t, s, w, t)
        # normalized shaped noise has unit per-pixel variance
        assert xt.var(axis=0).mean() == pytest.approx(1 - s.alpha_bar[t], rel=0.03)


# -- loss ---------------------------------------------------------------------


def test_loss_zero_for_perfect_predictor():
    s = scaled_schedule(50)
    x0 = smooth_mean_image(8, 8)
    batch = np.broadcast_to(x0, (32, 8, 8))

    def perfect(x_t, t):
        ab = s.alpha_bar[t]
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)

    assert training_loss(perfect, batch, s, TwoBand(0.3, 0.7), 0) < 1e-20


def test_loss_of_zero_model_is_unit():
    s = scaled_schedule(50)
    batch = np.zeros((2000, 16, 16))
    loss = training_loss(lambda x, t: np.zeros_like(x), batch, s, Flat(), 3)
    assert loss == pytest.approx(1.0, rel=0.03)


def test_loss_permutation_symmetric():
    s = scaled_schedule(50)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((10, 8, 8))
    t = rng.integers(0, 50, 10)
    eps = rng.standard_normal((10, 8, 8))
    model = GaussianOracle(s, Flat(), np.zeros((8, 8)), 1.0)
    perm = rng.permutation(10)
    a = per_item_loss(model, x0, t, eps, s).mean()
    b = per_item_loss(model, x0[perm], t[perm], eps[perm], s).mean()
    assert a == pytest.approx(b, rel=1e-14)


# -- reverse ------------------------------------------------------------------


def test_reverse_rejects_step_zero():
    s = scaled_schedule(20)
    with pytest.raises(ScheduleError):
        reverse_step(lambda x, t: x, np.zeros((4, 4)), 0, s, Flat(), 0)


def test_last_step_is_the_mean():
    s = scaled_schedule(20)
    x = np.random.default_rng(0).standard_normal((4, 4))
    model = lambda x_t, t: 0.3 * x_t  # noqa: E731
    out = reverse_step(model, x, 1, s, Flat(), 5)
    expected = (x - s.beta[1] / np.sqrt(1 - s.alpha_bar[1]) * 0.3 * x) / np.sqrt(s.alpha[1])
    np.testing.assert_allclose(out, expected, rtol=1e-14)


def test_deterministic_chain_recovers_single_point():
    s = scaled_schedule(200)
    x_star = smooth_mean_image(8, 8) + 0.2

    def perfect(x_t, t):
        ab = s.alpha_bar[t]
        return (x_t - np.sqrt(ab) * x_star) / np.sqrt(1 - ab)

    start = np.random.default_rng(3).standard_normal((8, 8)) * 2
    out = sample(perfect, s, Flat(), 1, (8, 8), 0, deterministic=True, x_init=start[None])[0]
    assert np.linalg.norm(out - x_star) / np.linalg.norm(x_star) < 0.01


def test_injected_noise_stays_in_band():
    s = scaled_schedule(50)
    w = BandPass(0.1, 0.4)
    x = np.random.default_rng(0).standard_normal((32, 16, 16))
    model = lambda x_t, t: 0.5 * x_t  # noqa: E731
    noisy = reverse_step(model, x, 30, s, w, 7)
    mean = reverse_step(model, x, 30, s, w, 7, deterministic=True)
    p = power_map(noisy - mean)
    mask = band_mask(build_grid(16, 16).radial, 0.1, 0.4)
    assert (p * (1 - mask)).sum() < 1e-10 * p.sum()
    white = reverse_step(model, x, 30, s, w, 7, noise_weight=Flat()) - mean
    assert (power_map(white) * (1 - mask)).sum() > 0.3 * power_map(white).sum()


# -- sampling -----------------------------------------------------------------


def test_sampling_deterministic_under_seed():
    s = scaled_schedule(30)
    o = GaussianOracle(s, Flat(), np.zeros((8, 8)), 0.5)
    a = sample(o, s, Flat(), 4, (8, 8), 11)
    b = sample(o, s, Flat(), 4, (8, 8), 11)
    np.testing.assert_array_equal(a, b)


def test_strided_steps():
    assert strided_steps(10, 1) == list(range(9, -1, -1))
    assert strided_steps(10, 4) == [9, 5, 1, 0]
    assert strided_steps(200, 10)[-1] == 0
    with pytest.raises(ScheduleError):
        strided_steps(10, 0)


def test_strided_alpha_bar_consistency():
    s = scaled_schedule(200)
    steps = strided_steps(200, 7)
    # product of jump alphas along the subsequence reproduces alpha_bar
    acc = s.alpha_bar[steps[-1]]
    for t, tp in reversed(list(zip(steps[:-1], steps[1:]))):
        alpha, _, _ = posterior_coeffs(s, t, tp)
        acc *= alpha
        assert acc == pytest.approx(s.alpha_bar[t], rel=1e-12)


def test_exact_recursion_matches_monte_carlo_stride_10():
    # the plain posterior-variance sampler under-disperses with a coarse stride
    s = scaled_schedule(200)
    H = W = 16
    mean = smooth_mean_image(H, W)
    o = GaussianOracle(s, Flat(), mean, 1.0)
    x = sample(o, s, Flat(), 2000, (H, W), 4, stride=10)
    expected = exact_sampler_variance(s, 1.0, stride=10)
    assert x.var(axis=0, ddof=1).mean() == pytest.approx(expected, rel=0.03)
    err = x.mean(axis=0) - mean
    assert np.sqrt(np.mean(err**2)) < 3 * np.sqrt(1.0 / 2000)


def test_stride_10_with_beta_variance():
    s = scaled_schedule(200)
    H = W = 16
    mean = smooth_mean_image(H, W)
    o = GaussianOracle(s, Flat(), mean, 1.0)
    x = sample(o, s, Flat(), 2000, (H, W), 4, stride=10, variance="beta")
    assert x.var(axis=0, ddof=1).mean() == pytest.approx(1.0, rel=0.15)
    assert np.sqrt(np.mean((x.mean(axis=0) - mean) ** 2)) < 3 * np.sqrt(1.0 / 2000)


def test_oracle_sampler_in_band_statistics():
    s = scaled_schedule(200)
    H = W = 16
    w = BandPass(0, 0.5)
    mean = smooth_mean_image(H, W) + 0.3
    o = GaussianOracle(s, w, mean, 1.0)
    x = sample(o, s, w, 1000, (H, W), 6)
    frac = band_mask(build_grid(H, W).radial, 0, 0.5).mean()
    xb = bandpass_images(x, 0, 0.5)
    mb = bandpass_images(mean, 0, 0.5)
    # per-bin noise density is 1/frac inside the band
    expected = exact_sampler_variance(s, 1.0, s=1 / frac) * frac
    assert xb.var(axis=0, ddof=1).mean() == pytest.approx(expected, rel=0.05)
    assert np.sqrt(np.mean((xb.mean(axis=0) - mb) ** 2)) < 3 * np.sqrt(frac / 1000)
    # nothing is generated outside the band
    assert np.abs(x - xb).max() < 1e-9


def test_projection_full_support_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 12, 12))
    np.testing.assert_array_equal(project_to_support(x, Flat()), x)
    np.testing.assert_array_equal(project_to_support(x, TwoBand(0.3, 0.7)), x)


def test_projection_removes_unsupported_bins():
    x = np.random.default_rng(1).normal(size=(4, 16, 16))
    w = BandPass(0.0, 0.5)
    y = project_to_support(x, w)
    off = ~band_mask(build_grid(16, 16).radial, 0.0, 0.5).astype(bool)
    assert power_map(y)[..., off].max() < 1e-20
    np.testing.assert_allclose(project_to_support(y, w), y, atol=1e-12)


def test_projection_stops_leak_growth():
    # a denoiser that leaks a fixed pattern into bins the forward noise never touches
    s = scaled_schedule(50)
    w = BandPass(0.0, 0.5)
    off = ~band_mask(build_grid(8, 8).radial, 0.0, 0.5).astype(bool)
    leak = np.random.default_rng(2).normal(size=(8, 8)) * 1e-3
    model = lambda x, t: np.broadcast_to(leak, np.shape(x))
    kept = sample(model, s, w, 4, (8, 8), rng=0, project=True)
    raw = sample(model, s, w, 4, (8, 8), rng=0, project=False)
    assert power_map(kept)[..., off].max() < 1e-20
    assert power_map(raw)[..., off].mean() > 1e-4
