"""Band-limited corruption ``x + gamma_c * eps_[a_c, b_c)`` and the two-band
forward weight that leaves the corrupted band un-noised."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .spectral import BandPass, RngLike, SpectralError, TwoBand, build_grid, shape_noise


@dataclass(frozen=True)
class CorruptionSpec:
    a_c: float
    b_c: float
    gamma_c: float = 1.0

    def __post_init__(self):
        if self.gamma_c < 0:
            raise SpectralError("gamma_c must be >= 0")
        BandPass(self.a_c, self.b_c)  # validates the band

    @property
    def band(self) -> BandPass:
        return BandPass(self.a_c, self.b_c)

    def as_dict(self) -> dict:
        return asdict(self)


def corruption_noise(shape, spec: CorruptionSpec, rng: RngLike = None) -> np.ndarray:
    """Raw (unnormalized) band noise scaled by ``gamma_c``."""
    shape = tuple(shape)
    grid = build_grid(*shape[-2:])
    n = shape[0] if len(shape) == 3 else None
    return spec.gamma_c * shape_noise(spec.band, grid, rng, normalize=False, n=n).values


def corrupt(x, spec: CorruptionSpec, rng: RngLike = None) -> np.ndarray:
    """Add band noise to an image or a stack; values are not clipped."""
    x = np.asarray(x, dtype=float)
    if spec.gamma_c == 0:
        return x.copy()
    return x + corruption_noise(x.shape, spec, rng)


def recovery_weight(spec: CorruptionSpec, gamma_l: float = 0.5, gamma_h: float = 0.5) -> TwoBand:
    """Two-band weight on ``[0, a_c)`` and ``[b_c, 1]``; disjoint from the corruption band."""
    if spec.a_c == 0 and spec.b_c == 1:
        raise SpectralError("corruption covers the whole spectrum; nothing left to noise")
    if spec.b_c >= 1.0:
        gamma_h = 0.0  # [1, 1] would still hold the corner bin
    return TwoBand(gamma_l, gamma_h, a_l=0.0, b_l=spec.a_c, a_h=spec.b_c, b_h=1.0)
