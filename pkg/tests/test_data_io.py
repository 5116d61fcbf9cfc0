import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdiff.data_io import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    DataFormatError,
    Dataset,
    bandpass_images,
    contact_sheet,
    gen_bandlimited_dataset,
    gen_blob_images,
    gen_gaussian_dataset,
    load_dataset,
    load_digits_surrogate,
    load_mnist_idx,
    read_idx,
    save_contact_sheet,
    save_dataset,
    write_idx,
)
from freqdiff.spectral import SpectralError, band_mask, build_grid


@pytest.fixture
def idx_pair(tmp_path):
    raw = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    raw[0, 0, 0], raw[0, 0, 1] = 0, 255
    labels = np.arange(5, dtype=np.uint8)
    write_idx(tmp_path / "img.idx", raw)
    write_idx(tmp_path / "lab.idx", labels)
    return tmp_path / "img.idx", tmp_path / "lab.idx", raw


def test_idx_round_trip(idx_pair):
    img, lab, raw = idx_pair
    np.testing.assert_array_equal(read_idx(img, IDX_IMAGES_MAGIC), raw)
    np.testing.assert_array_equal(read_idx(lab, IDX_LABELS_MAGIC), np.arange(5))


def test_mnist_scaling(idx_pair):
    img, lab, raw = idx_pair
    ds = load_mnist_idx(img, lab)
    assert ds.images[0, 0, 0] == -1.0 and ds.images[0, 0, 1] == 1.0
    np.testing.assert_allclose(ds.images, raw / 127.5 - 1, atol=1e-6)
    assert ds.in_range() and ds.shape == (28, 28)
    np.testing.assert_array_equal(ds.labels, np.arange(5))


def test_idx_gzip(tmp_path, idx_pair):
    img, _, raw = idx_pair
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    np.testing.assert_array_equal(read_idx(gz, IDX_IMAGES_MAGIC), raw)


def test_idx_bad_magic(idx_pair):
    img, lab, _ = idx_pair
    with pytest.raises(DataFormatError, match="magic"):
        read_idx(lab, IDX_IMAGES_MAGIC)


def test_idx_truncated(tmp_path, idx_pair):
    img, _, _ = idx_pair
    short = tmp_path / "short.idx"
    short.write_bytes(img.read_bytes()[:-10])
    with pytest.raises(DataFormatError, match="payload"):
        read_idx(short, IDX_IMAGES_MAGIC)
    short.write_bytes(b"\x00\x00")
    with pytest.raises(DataFormatError):
        read_idx(short, IDX_IMAGES_MAGIC)


def test_label_count_mismatch(tmp_path, idx_pair):
    img, _, _ = idx_pair
    write_idx(tmp_path / "few.idx", np.arange(3, dtype=np.uint8))
    with pytest.raises(DataFormatError):
        load_mnist_idx(img, tmp_path / "few.idx")


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 4), h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2**31))
def test_fdds_round_trip_bit_exact(tmp_path_factory, n, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((n, h, w)).astype(np.float32)
    ds = Dataset(x, "demo", {"k": [1, 2]}, np.arange(n))
    path = tmp_path_factory.mktemp("d") / "x.fdds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.images.tobytes() == x.tobytes()
    assert back.name == "demo" and back.meta == {"k": [1, 2]}
    np.testing.assert_array_equal(back.labels, np.arange(n))


def test_fdds_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataFormatError):
        load_dataset(p)
    save_dataset(Dataset(np.zeros((2, 4, 4))), p)
    p.write_bytes(p.read_bytes()[:30])
    with pytest.raises(DataFormatError):
        load_dataset(p)


def test_dataset_validation_and_subset():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((4, 4)))
    ds = Dataset(np.zeros((6, 4, 4)), labels=np.arange(6))
    sub = ds.subset(slice(2, 4))
    assert len(sub) == 2 and list(sub.labels) == [2, 3]


def test_gaussian_dataset_moments():
    ds = gen_gaussian_dataset(2000, 16, 16, 0.0, 0.04, rng=1)
    assert abs(ds.images.var() - 0.04) < 0.05 * 0.04
    assert abs(ds.images.mean()) < 0.002
    mean = np.linspace(-0.5, 0.5, 64).reshape(8, 8)
    np.testing.assert_array_equal(gen_gaussian_dataset(3, 8, 8, mean, 0.0, rng=1).images[2], mean)
    clipped = gen_gaussian_dataset(200, 8, 8, 0.0, 4.0, rng=1, clip=True)
    assert clipped.in_range()
    with pytest.raises(ValueError):
        gen_gaussian_dataset(1, 4, 4, 0.0, -1.0)


def test_generators_reproducible():
    np.testing.assert_array_equal(gen_blob_images(4, 16, 16, rng=3), gen_blob_images(4, 16, 16, rng=3))
    a = gen_bandlimited_dataset(5, 16, 16, rng=3, noise_gamma=0.5).images
    np.testing.assert_array_equal(a, gen_bandlimited_dataset(5, 16, 16, rng=3, noise_gamma=0.5).images)
    b = gen_blob_images(50, 16, 16, rng=4)
    assert b.min() >= -1 and b.max() <= 1


def test_full_band_is_identity():
    x = np.random.default_rng(5).standard_normal((3, 16, 12))
    np.testing.assert_allclose(bandpass_images(x, 0.0, 1.0), x, atol=1e-9)


def test_bandlimited_confined():
    ds = gen_bandlimited_dataset(20, 28, 28, band=(0.1, 0.3), rng=6)
    p = np.abs(np.fft.fft2(ds.images, norm="ortho")) ** 2
    outside = band_mask(build_grid(28, 28).radial, 0.1, 0.3) == 0
    assert p[:, outside].max() < 1e-10
    assert ds.meta["band"] == [0.1, 0.3]


def test_bandlimited_complement_noise():
    ds = gen_bandlimited_dataset(400, 28, 28, band=(0.0, 0.3), rng=7, noise_gamma=0.5)
    p = (np.abs(np.fft.fft2(ds.images, norm="ortho")) ** 2).mean(0)
    hi = band_mask(build_grid(28, 28).radial, 0.3, 1.0).astype(bool)
    assert abs(p[hi].mean() - 0.25) < 0.02


def test_bandlimited_from_dataset_keeps_labels():
    src = Dataset(np.random.default_rng(0).uniform(-1, 1, (6, 8, 8)), "src", labels=np.arange(6))
    ds = gen_bandlimited_dataset(4, 8, 8, source=src, band=(0, 0.5))
    assert list(ds.labels) == [0, 1, 2, 3]
    with pytest.raises(DataFormatError):
        gen_bandlimited_dataset(10, 8, 8, source=src)


def test_empty_band_rejected():
    with pytest.raises(SpectralError):
        gen_bandlimited_dataset(2, 8, 8, band=(0.05, 0.06))


def test_digits_surrogate():
    ds = load_digits_surrogate()
    assert ds.images.shape == (1797, 28, 28)
    assert ds.in_range()
    assert ds.images[:, :4].max() == -1.0  # empty border like MNIST
    assert set(np.unique(ds.labels)) == set(range(10))


def test_contact_sheet(tmp_path):
    x = np.linspace(-1, 1, 5 * 4 * 4).reshape(5, 4, 4)
    sheet = contact_sheet(x, ncols=2)
    assert sheet.shape == (3 * 5 + 1, 2 * 5 + 1) and sheet.dtype == np.uint8
    save_contact_sheet(x, tmp_path / "s.png")
    assert (tmp_path / "s.png").read_bytes()[:4] == b"\x89PNG"
