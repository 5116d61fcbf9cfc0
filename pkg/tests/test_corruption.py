import numpy as np
import pytest

from freqdiff.corruption import CorruptionSpec, corrupt, corruption_noise, recovery_weight
from freqdiff.spectral import SpectralError, band_mask, build_grid, noise, power_density


def spectrum(x):
    return np.abs(np.fft.fft2(x, norm="ortho")) ** 2


def test_zero_gamma_is_identity():
    x = np.random.default_rng(0).uniform(-1, 1, (3, 16, 16))
    y = corrupt(x, CorruptionSpec(0.5, 0.6, 0.0), rng=1)
    np.testing.assert_array_equal(x, y)
    assert y is not x


def test_power_confined_to_band():
    spec = CorruptionSpec(0.5, 0.6, 1.0)
    e = corruption_noise((200, 32, 32), spec, rng=2)
    p = spectrum(e).sum(0)
    inside = band_mask(build_grid(32, 32).radial, 0.5, 0.6).astype(bool)
    assert p[inside].sum() / p.sum() > 0.999


def test_power_scales_with_gamma():
    grid = build_grid(32, 32)
    a = corruption_noise((32, 32), CorruptionSpec(0.2, 0.4, 1.0), rng=3)
    b = corruption_noise((32, 32), CorruptionSpec(0.2, 0.4, 2.5), rng=3)
    np.testing.assert_allclose(b, 2.5 * a)
    # raw noise: expected power per in-band bin is 1
    e = corruption_noise((4000, 32, 32), CorruptionSpec(0.2, 0.4), rng=4)
    inside = band_mask(grid.radial, 0.2, 0.4).astype(bool)
    assert abs(spectrum(e).mean(0)[inside].mean() - 1.0) < 0.02


def test_corruption_is_zero_mean():
    e = corruption_noise((10_000, 16, 16), CorruptionSpec(0.5, 0.6), rng=5)
    sd = e.std()
    assert np.abs(e.mean(0)).max() < 5 * sd / np.sqrt(10_000)


def test_outside_band_spectrum_preserved():
    x = np.random.default_rng(6).uniform(-1, 1, (4, 32, 32))
    y = corrupt(x, CorruptionSpec(0.5, 0.6), rng=7)
    outside = ~band_mask(build_grid(32, 32).radial, 0.5, 0.6).astype(bool)
    fx, fy = np.fft.fft2(x), np.fft.fft2(y)
    np.testing.assert_allclose(fx[:, outside], fy[:, outside], atol=1e-9)


def test_deterministic_and_shape_preserving():
    x = np.zeros((28, 28))
    a = corrupt(x, CorruptionSpec(0.1, 0.3), rng=8)
    np.testing.assert_array_equal(a, corrupt(x, CorruptionSpec(0.1, 0.3), rng=8))
    assert a.shape == x.shape


@pytest.mark.parametrize("a,b,g", [(0.6, 0.5, 1.0), (-0.1, 0.5, 1.0), (0.2, 0.4, -1.0)])
def test_invalid_spec(a, b, g):
    with pytest.raises(SpectralError):
        CorruptionSpec(a, b, g)


def test_recovery_weight_bands():
    w = recovery_weight(CorruptionSpec(0.5, 0.6), 0.5, 0.5)
    assert (w.a_l, w.b_l, w.a_h, w.b_h) == (0.0, 0.5, 0.6, 1.0)
    w = recovery_weight(CorruptionSpec(0.1, 0.3), 0.7, 0.2)
    assert (w.gamma_l, w.gamma_h, w.b_l, w.a_h) == (0.7, 0.2, 0.1, 0.3)


@pytest.mark.parametrize("a_c,b_c", [(0.5, 0.6), (0.2, 0.45), (0.0, 0.3), (0.7, 1.0)])
def test_recovery_weight_avoids_corrupted_band(a_c, b_c):
    grid = build_grid(32, 32)
    w = recovery_weight(CorruptionSpec(a_c, b_c))
    inside = band_mask(grid.radial, a_c, b_c).astype(bool)
    assert power_density(w, grid)[inside].max() == 0
    e = noise(w, grid, rng=9, n=500).values
    p = spectrum(e).mean(0)
    assert p[inside].sum() < 1e-10 * p.sum()


def test_recovery_weight_full_band_rejected():
    with pytest.raises(SpectralError):
        recovery_weight(CorruptionSpec(0.0, 1.0))
