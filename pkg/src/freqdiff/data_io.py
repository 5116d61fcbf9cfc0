"""Datasets: MNIST IDX ingestion, synthetic generators and the FDDS container."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import BandPass, RngLike, SpectralError, as_rng, band_mask, build_grid, shape_noise, to_uint8, write_pgm

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"FDDS"


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 3 or len(self.images) < 1:
            raise DataFormatError("images must be a non-empty (N, H, W) stack")

    def __len__(self):
        return len(self.images)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def in_range(self) -> bool:
        return bool(np.all(np.abs(self.images) <= 1.0))

    def subset(self, idx) -> "Dataset":
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.images[idx], self.name, dict(self.meta), labels)


# ---------------------------------------------------------------------------
# IDX


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataFormatError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_mnist_idx(images_path, labels_path=None) -> Dataset:
    raw = read_idx(images_path, IDX_IMAGES_MAGIC)
    images = raw.astype(np.float32) / 127.5 - 1.0
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
        if len(labels) != len(images):
            raise DataFormatError("label and image counts differ")
    return Dataset(images, "mnist", {"source": str(images_path)}, labels)


# ---------------------------------------------------------------------------
# FDDS container


def save_dataset(ds: Dataset, path) -> None:
    """``FDDS`` | u32 N, H, W | float32 LE pixels | u32 len | JSON metadata."""
    n, h, w = ds.images.shape
    meta = {"name": ds.name, "meta": ds.meta}
    if ds.labels is not None:
        meta["labels"] = [int(v) for v in ds.labels]
    text = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC + struct.pack("<III", n, h, w))
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(text)) + text)


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: not an FDDS container")
    n, h, w = struct.unpack("<III", raw[4:16])
    end = 16 + 4 * n * h * w
    if len(raw) < end + 4:
        raise DataFormatError(f"{path}: truncated payload")
    images = np.frombuffer(raw, dtype="<f4", count=n * h * w, offset=16).reshape(n, h, w).astype(np.float32)
    (ln,) = struct.unpack("<I", raw[end : end + 4])
    meta = json.loads(raw[end + 4 : end + 4 + ln].decode()) if ln else {}
    labels = meta.get("labels")
    return Dataset(
        images,
        meta.get("name", "dataset"),
        meta.get("meta", {}),
        None if labels is None else np.asarray(labels, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# generators


def gen_gaussian_dataset(n, H, W, mean_image=0.0, var=0.04, rng: RngLike = None, clip=False) -> Dataset:
    """i.i.d. ``mean + sqrt(var) * white``; not clipped unless asked."""
    if var < 0:
        raise ValueError("var must be >= 0")
    mean = np.broadcast_to(np.asarray(mean_image, dtype=float), (H, W))
    x = mean + np.sqrt(var) * as_rng(rng).standard_normal((n, H, W))
    if clip:
        x = np.clip(x, -1, 1)
    return Dataset(x, "gaussian", {"generator": "gaussian", "var": var, "clip": clip})


def smooth_mean_image(H: int, W: int, amplitude: float = 0.5) -> np.ndarray:
    """A fixed, smooth, non-trivial mean image for Gaussian toy data."""
    y, x = np.mgrid[0:H, 0:W]
    return amplitude * np.sin(2 * np.pi * x / W) * np.cos(2 * np.pi * y / H)


def gen_blob_images(n, H, W, rng: RngLike = None, max_blobs: int = 3) -> np.ndarray:
    """Random soft ellipses on a dark background, values in [-1, 1]."""
    rng = as_rng(rng)
    y, x = np.mgrid[0:H, 0:W].astype(float)
    out = np.zeros((n, H, W))
    for i in range(n):
        img = np.zeros((H, W))
        for _ in range(rng.integers(1, max_blobs + 1)):
            cy, cx = rng.uniform(0.25, 0.75) * H, rng.uniform(0.25, 0.75) * W
            sy, sx = rng.uniform(0.08, 0.2) * H, rng.uniform(0.08, 0.2) * W
            th = rng.uniform(0, np.pi)
            dy, dx = y - cy, x - cx
            u = (dx * np.cos(th) + dy * np.sin(th)) / sx
            v = (-dx * np.sin(th) + dy * np.cos(th)) / sy
            img = np.maximum(img, rng.uniform(0.6, 1.0) / (1 + np.exp(4 * (u**2 + v**2 - 1))))
        out[i] = 2 * img - 1
    return out


def bandpass_images(images: np.ndarray, a: float, b: float) -> np.ndarray:
    x = np.asarray(images, dtype=float)
    mask = band_mask(build_grid(*x.shape[-2:]).radial, a, b)
    return np.fft.ifft2(np.fft.fft2(x, norm="ortho") * mask, norm="ortho").real


def gen_bandlimited_dataset(
    n,
    H,
    W,
    source=None,
    band=(0.0, 0.3),
    rng: RngLike = None,
    noise_gamma: float = 0.0,
) -> Dataset:
    """Keep only the ``band`` of each source image's spectrum.

    ``source`` is a Dataset (first ``n`` images are used) or a callable
    ``(n, H, W, rng) -> images``; default is :func:`gen_blob_images`.
    With ``noise_gamma > 0`` raw band noise on the complement ``[b, 1]`` is
    added afterwards, as in the frequency-bounded-information recipe.
    """
    a, b = band
    BandPass(a, b)
    grid = build_grid(H, W)
    if not band_mask(grid.radial, a, b).any():
        raise SpectralError(f"band [{a}, {b}) contains no frequency bins on a {H}x{W} grid")
    rng = as_rng(rng)
    if source is None:
        source = gen_blob_images
    if isinstance(source, Dataset):
        if source.shape != (H, W) or len(source) < n:
            raise DataFormatError("source dataset is too small or has the wrong shape")
        src, name = source.images[:n], source.name
    else:
        src, name = source(n, H, W, rng), getattr(source, "__name__", "generator")
    x = bandpass_images(src, a, b)
    if noise_gamma > 0 and b < 1:
        x = x + noise_gamma * shape_noise(BandPass(b, 1.0), grid, rng, normalize=False, n=n).values
    meta = {"generator": "bandlimited", "source": name, "band": [a, b], "noise_gamma": noise_gamma}
    labels = source.labels[:n] if isinstance(source, Dataset) and source.labels is not None else None
    return Dataset(x, f"{name}_band", meta, labels)


def load_digits_surrogate(size: int = 28) -> Dataset:
    """scikit-learn's 8x8 handwritten digits, upsampled into an MNIST-like frame.

    1797 real digit images (bicubic 8 -> 20 pixels, padded to 28x28, [-1, 1]).
    Used where the MNIST IDX files are not available offline.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    inner = size * 5 // 7
    pad = (size - inner) // 2
    up = zoom(d.images, (1, inner / 8, inner / 8), order=3)
    up = np.clip(up / 16.0, 0, 1)
    out = np.zeros((len(up), size, size))
    out[:, pad : pad + inner, pad : pad + inner] = up
    return Dataset(2 * out - 1, "digits", {"source": "sklearn.load_digits", "size": size}, d.target.astype(np.int64))


# ---------------------------------------------------------------------------
# image export


def contact_sheet(images: np.ndarray, ncols: int = 8, pad: int = 1, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Tile a stack into one uint8 image (row-major order)."""
    x = np.asarray(images, dtype=float)
    n, h, w = x.shape
    nrows = -(-n // ncols)
    sheet = np.zeros((nrows * (h + pad) + pad, ncols * (w + pad) + pad), dtype=np.uint8)
    tiles = to_uint8(x, lo, hi)
    for i in range(n):
        r, c = divmod(i, ncols)
        y0, x0 = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y0 : y0 + h, x0 : x0 + w] = tiles[i]
    return sheet


def save_contact_sheet(images: np.ndarray, path, ncols: int = 8) -> None:
    sheet = contact_sheet(images, ncols)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(sheet).save(path)
    else:
        write_pgm(path, sheet, 0, 255)
