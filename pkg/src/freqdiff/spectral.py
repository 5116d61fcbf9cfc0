"""Frequency-shaped Gaussian noise.

A complex white field is drawn per frequency bin, scaled by a radial weight
``w(f)`` and brought back with an orthonormal inverse FFT; the real part is
the noise field.  With that convention the expected power of bin ``k`` of the
output is exactly ``w_k**2``, so the per-pixel variance is ``sum(w**2)/(H*W)``
and the unit-variance constant follows in closed form.

Band masks use the half-open interval ``a <= r < b`` (closed at the top when
``b >= 1``), so bands that touch partition the spectrum without overlap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

RngLike = Union[None, int, np.random.Generator]

NOISE_MAGIC = b"FDNF"


class SpectralError(ValueError):
    pass


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _seed_of(rng: RngLike) -> int | None:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


# ---------------------------------------------------------------------------
# frequency grid


@dataclass(frozen=True)
class FrequencyGrid:
    height: int
    width: int
    radial: np.ndarray = field(repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def build_grid(height: int, width: int) -> FrequencyGrid:
    """Radial frequency map in unshifted FFT layout, normalized to [0, 1].

    Frequencies are signed (``np.fft.fftfreq``), so DC is 0 and the Nyquist
    corner of an even-sized grid is exactly 1.
    """
    if int(height) < 2 or int(width) < 2:
        raise SpectralError(f"grid dimensions must be >= 2, got {height}x{width}")
    height, width = int(height), int(width)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    r2 = fx**2 + fy**2
    r2_max = np.abs(fx).max() ** 2 + np.abs(fy).max() ** 2
    radial = np.sqrt(r2 / r2_max)
    radial = np.minimum(radial, 1.0)
    radial.setflags(write=False)
    return FrequencyGrid(height, width, radial)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class Flat:
    kind = "flat"


@dataclass(frozen=True)
class PowerLaw:
    alpha: float
    kind = "power_law"


@dataclass(frozen=True)
class ExpDecay:
    beta: float
    kind = "exp_decay"

    def __post_init__(self):
        if not self.beta > 0:
            raise SpectralError(f"ExpDecay needs beta > 0, got {self.beta}")


def _check_band(a: float, b: float, what: str) -> None:
    if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
        raise SpectralError(f"{what} edges must lie in [0, 1], got [{a}, {b}]")
    if a > b:
        raise SpectralError(f"{what} must satisfy a <= b, got [{a}, {b}]")


@dataclass(frozen=True)
class BandPass:
    a: float
    b: float
    kind = "band_pass"

    def __post_init__(self):
        _check_band(self.a, self.b, "BandPass")


@dataclass(frozen=True)
class TwoBand:
    gamma_l: float
    gamma_h: float
    a_l: float = 0.0
    b_l: float = 0.5
    a_h: float = 0.5
    b_h: float = 1.0
    kind = "two_band"

    def __post_init__(self):
        if self.gamma_l < 0 or self.gamma_h < 0:
            raise SpectralError("TwoBand gammas must be non-negative")
        _check_band(self.a_l, self.b_l, "TwoBand low band")
        _check_band(self.a_h, self.b_h, "TwoBand high band")

    @property
    def low(self) -> BandPass:
        return BandPass(self.a_l, self.b_l)

    @property
    def high(self) -> BandPass:
        return BandPass(self.a_h, self.b_h)


SpectralWeight = Union[Flat, PowerLaw, ExpDecay, BandPass, TwoBand]

_KINDS = {cls.kind: cls for cls in (Flat, PowerLaw, ExpDecay, BandPass, TwoBand)}


def band_mask(radial: np.ndarray, a: float, b: float) -> np.ndarray:
    upper = radial <= b if b >= 1.0 else radial < b
    return ((radial >= a) & upper).astype(float)


def eval_weight(weight: SpectralWeight, grid: FrequencyGrid) -> np.ndarray:
    r = grid.radial
    if isinstance(weight, Flat):
        return np.ones(grid.shape)
    if isinstance(weight, PowerLaw):
        if weight.alpha == 0:
            return np.ones(grid.shape)
        out = np.zeros(grid.shape)
        nz = r > 0
        out[nz] = r[nz] ** weight.alpha
        return out
    if isinstance(weight, ExpDecay):
        return np.exp(-weight.beta * r**2)
    if isinstance(weight, BandPass):
        return band_mask(r, weight.a, weight.b)
    if isinstance(weight, TwoBand):
        raise SpectralError("TwoBand is a mixture of two draws; use two_band_noise")
    raise SpectralError(f"unknown weight {weight!r}")


def power_density(weight: SpectralWeight, grid: FrequencyGrid) -> np.ndarray:
    """Expected raw (unnormalized) power per bin, ``E|F(eps)|^2``."""
    if isinstance(weight, TwoBand):
        lo = band_mask(grid.radial, weight.a_l, weight.b_l)
        hi = band_mask(grid.radial, weight.a_h, weight.b_h)
        # independent draws: variances add, also where the bands overlap
        return weight.gamma_l**2 * lo + weight.gamma_h**2 * hi
    return eval_weight(weight, grid) ** 2


def norm_constant(weight: SpectralWeight, grid: FrequencyGrid) -> float:
    """Scale that makes the per-pixel variance 1; 0 for an all-zero weight."""
    total = power_density(weight, grid).sum()
    if total <= 0:
        return 0.0
    return float(np.sqrt(grid.height * grid.width / total))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class NoiseField:
    values: np.ndarray
    weight: SpectralWeight
    seed: int | None = None
    normalized: bool = False

    @property
    def shape(self):
        return self.values.shape

    def to_fdnf(self, path) -> None:
        write_fdnf(path, self.values)

    def to_pgm(self, path) -> None:
        write_pgm(path, self.values)


def sample_complex_field(grid: FrequencyGrid, rng: RngLike, n: int | None = None) -> np.ndarray:
    rng = as_rng(rng)
    shape = grid.shape if n is None else (n, *grid.shape)
    z = np.empty(shape, dtype=np.complex128)
    z.real = rng.standard_normal(shape)
    z.imag = rng.standard_normal(shape)
    return z


def _shape(w: np.ndarray, grid: FrequencyGrid, rng: np.random.Generator, n: int | None) -> np.ndarray:
    z = sample_complex_field(grid, rng, n)
    return np.fft.ifft2(z * w, norm="ortho").real


def shape_noise(
    weight: SpectralWeight,
    grid: FrequencyGrid,
    rng: RngLike = None,
    normalize: bool = True,
    n: int | None = None,
) -> NoiseField:
    """``Re(F^-1(N * w))``; pass ``n`` to draw a stack of ``n`` fields."""
    if isinstance(weight, TwoBand):
        raise SpectralError("TwoBand goes through two_band_noise")
    seed = _seed_of(rng)
    rng = as_rng(rng)
    w = eval_weight(weight, grid)
    shape = grid.shape if n is None else (n, *grid.shape)
    if not np.any(w):
        return NoiseField(np.zeros(shape), weight, seed, normalized=False)
    values = _shape(w, grid, rng, n)
    if normalize:
        values *= norm_constant(weight, grid)
    return NoiseField(values, weight, seed, normalized=normalize)


def two_band_noise(
    weight: TwoBand,
    grid: FrequencyGrid,
    rng: RngLike = None,
    normalize: bool = True,
    n: int | None = None,
) -> NoiseField:
    """``gamma_l * eps_low + gamma_h * eps_high`` from independent base draws."""
    if not isinstance(weight, TwoBand):
        raise SpectralError("two_band_noise needs a TwoBand weight")
    if normalize and weight.gamma_l == 0 and weight.gamma_h == 0:
        raise SpectralError("both gammas are zero; cannot normalize")
    seed = _seed_of(rng)
    rng = as_rng(rng)
    shape = grid.shape if n is None else (n, *grid.shape)
    scale = norm_constant(weight, grid) if normalize else 1.0
    if scale == 0.0 and normalize:
        return NoiseField(np.zeros(shape), weight, seed, normalized=False)
    lo = band_mask(grid.radial, weight.a_l, weight.b_l)
    hi = band_mask(grid.radial, weight.a_h, weight.b_h)
    values = weight.gamma_l * _shape(lo, grid, rng, n)
    values += weight.gamma_h * _shape(hi, grid, rng, n)
    if normalize:
        values *= scale
    return NoiseField(values, weight, seed, normalized=normalize)


def noise(
    weight: SpectralWeight,
    grid: FrequencyGrid,
    rng: RngLike = None,
    normalize: bool = True,
    n: int | None = None,
) -> NoiseField:
    """Dispatch to :func:`shape_noise` or :func:`two_band_noise`."""
    if isinstance(weight, TwoBand):
        return two_band_noise(weight, grid, rng, normalize, n)
    return shape_noise(weight, grid, rng, normalize, n)


def noise_batch(
    weight: SpectralWeight, grid: FrequencyGrid, seed: int, n: int, normalize: bool = True
) -> np.ndarray:
    """Stack of ``n`` fields, item ``i`` drawn from its own stream ``(seed, i)``.

    The result does not depend on how the items are later split across
    workers: ``noise_batch(..., n)[i]`` equals ``noise_item(..., i)``.
    """
    return np.stack([noise_item(weight, grid, seed, i, normalize) for i in range(n)])


def noise_item(weight: SpectralWeight, grid: FrequencyGrid, seed: int, index: int, normalize: bool = True) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(index)])
    return noise(weight, grid, rng, normalize).values


# ---------------------------------------------------------------------------
# spectra


@dataclass
class RadialSpectrum:
    centers: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def pairs(self) -> np.ndarray:
        return np.column_stack([self.centers, self.power])


def power_map(images: np.ndarray) -> np.ndarray:
    """Mean ``|F(x)|^2`` per frequency bin over any leading batch axes."""
    x = np.asarray(images, dtype=float)
    p = np.abs(np.fft.fft2(x, norm="ortho")) ** 2
    return p.reshape(-1, *x.shape[-2:]).mean(axis=0)


def annulus_index(grid: FrequencyGrid, n_bins: int) -> np.ndarray:
    return np.minimum((grid.radial * n_bins).astype(int), n_bins - 1)


def radial_power_spectrum(field_or_images, n_bins: int = 16) -> RadialSpectrum:
    """Azimuthal average of the power spectrum over equal-width radial annuli."""
    if n_bins < 2:
        raise SpectralError("n_bins must be >= 2")
    x = field_or_images.values if isinstance(field_or_images, NoiseField) else field_or_images
    x = np.asarray(x, dtype=float)
    grid = build_grid(*x.shape[-2:])
    p = power_map(x)
    idx = annulus_index(grid, n_bins).ravel()
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=p.ravel(), minlength=n_bins)
    power = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    centers = (np.arange(n_bins) + 0.5) / n_bins
    return RadialSpectrum(centers, power, counts)


def band_power_fraction(images: np.ndarray, a: float, b: float) -> float:
    """Fraction of total spectral power in bins with radial in the band."""
    x = np.asarray(images, dtype=float)
    grid = build_grid(*x.shape[-2:])
    p = power_map(x)
    total = p.sum()
    if total == 0:
        return 0.0
    return float((p * band_mask(grid.radial, a, b)).sum() / total)


# ---------------------------------------------------------------------------
# serialization


def weight_to_config(weight: SpectralWeight) -> str:
    items = [("kind", weight.kind)]
    for name in getattr(weight, "__dataclass_fields__", {}):
        items.append((name, repr(float(getattr(weight, name)))))
    return ", ".join(f"{k}={v}" for k, v in items)


def weight_from_config(text: str | dict) -> SpectralWeight:
    """Parse ``kind=two_band, gamma_l=0.7, ...`` (or an equivalent dict)."""
    if isinstance(text, str):
        pairs = {}
        for part in text.replace("\n", ",").split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise SpectralError(f"bad weight entry {part!r}")
            k, v = part.split("=", 1)
            pairs[k.strip()] = v.strip()
    else:
        pairs = dict(text)
    kind = str(pairs.pop("kind", "")).strip()
    if kind not in _KINDS:
        raise SpectralError(f"unknown weight kind {kind!r}")
    try:
        params = {k: float(v) for k, v in pairs.items()}
        return _KINDS[kind](**params)
    except TypeError as exc:
        raise SpectralError(f"bad parameters for {kind}: {exc}") from None


def write_fdnf(path, values: np.ndarray) -> None:
    """Little-endian float32, row-major, 16-byte header ``FDNF, H, W, 0``."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise SpectralError("FDNF holds a single H x W field")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(NOISE_MAGIC + struct.pack("<III", h, w, 0))
        f.write(v.astype("<f4").tobytes())


def read_fdnf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != NOISE_MAGIC:
        raise SpectralError("not an FDNF file")
    h, w, _ = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * h * w:
        raise SpectralError(f"FDNF payload has {len(body)} bytes, expected {4 * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()


def to_uint8(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.clip(np.round((v - lo) / (hi - lo) * 255), 0, 255).astype(np.uint8)


def write_pgm(path, values: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    img = to_uint8(values, lo, hi)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise SpectralError("not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise SpectralError("only 8-bit PGM is supported")
    return np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8).reshape(h, w)
