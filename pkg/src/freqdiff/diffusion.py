"""Variance schedule, forward noising and ancestral sampling with shaped noise.

Step indices run over ``0 .. T-1``; ``alpha_bar[t]`` is the signal retention
after step ``t`` so ``forward_jump(x0, 0)`` already carries one step of noise.
Sampling starts from pure shaped noise at ``T-1`` and ends at level 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Flat, NoiseField, RngLike, SpectralWeight, as_rng, build_grid, noise, power_density


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def as_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 2:
        raise ScheduleError("T must be >= 2")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return DiffusionSchedule(beta, alpha, np.cumprod(alpha))


def scaled_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear schedule with endpoints scaled by ``1000 / T``.

    Keeps ``alpha_bar[T-1]`` near zero for short chains (T=200 gives ~4e-5,
    where the unscaled endpoints would leave ~0.13 of the signal).
    """
    k = 1000.0 / T
    return make_schedule(T, beta_start * k, min(beta_end * k, 0.999))


def _check_t(t: int, schedule: DiffusionSchedule, lo: int = 0) -> None:
    if not lo <= t < schedule.T:
        raise ScheduleError(f"step {t} outside [{lo}, {schedule.T})")


def forward_step(x_prev, t: int, schedule: DiffusionSchedule, noise_field) -> np.ndarray:
    """One Markov step ``sqrt(a_t) x + sqrt(1 - a_t) eps``."""
    _check_t(t, schedule)
    eps = noise_field.values if isinstance(noise_field, NoiseField) else np.asarray(noise_field)
    x_prev = np.asarray(x_prev, dtype=float)
    if eps.shape != x_prev.shape:
        raise ScheduleError(f"noise shape {eps.shape} != image shape {x_prev.shape}")
    a = schedule.alpha[t]
    return np.sqrt(a) * x_prev + np.sqrt(1 - a) * eps


def forward_jump(x0, t, schedule: DiffusionSchedule, weight: SpectralWeight, rng: RngLike = None):
    """Closed-form ``x_t`` for an image or a stack; ``t`` may be per item.

    Returns ``(x_t, eps)`` with the exact shaped noise that was added.
    """
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise ScheduleError(f"step outside [0, {schedule.T})")
    grid = build_grid(*x0.shape[-2:])
    n = None if x0.ndim == 2 else x0.shape[0]
    eps = noise(weight, grid, rng, normalize=True, n=n)
    ab = schedule.alpha_bar[t]
    if ab.ndim == 1:
        ab = ab[:, None, None]
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps.values, eps


def training_loss(model, batch, schedule: DiffusionSchedule, weight: SpectralWeight, rng: RngLike = None) -> float:
    """Monte-Carlo estimate of ``E ||eps_w - model(x_t, t)||^2`` per pixel.

    ``model`` is any callable ``(x_t, t) -> eps_hat`` over a stack, or a
    :class:`~freqdiff.denoiser.DenoiserModel`.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 3 or len(batch) == 0:
        raise ValueError("batch must be a non-empty (N, H, W) stack")
    rng = as_rng(rng)
    t = rng.integers(0, schedule.T, size=len(batch))
    grid = build_grid(*batch.shape[-2:])
    eps = noise(weight, grid, rng, normalize=True, n=len(batch)).values
    return float(per_item_loss(model, batch, t, eps, schedule).mean())


def per_item_loss(model, x0, t, eps, schedule: DiffusionSchedule) -> np.ndarray:
    """Squared error per item for given steps and noise (no randomness)."""
    ab = schedule.alpha_bar[np.asarray(t)][:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    pred = _predict(model, x_t, t, schedule)
    return np.mean((eps - pred) ** 2, axis=(-2, -1))


def _predict(model, x_t, t, schedule):
    from .denoiser import DenoiserModel, predict_eps

    if isinstance(model, DenoiserModel):
        return predict_eps(model, x_t, t, schedule.T)
    t = np.asarray(t)
    if t.ndim == 0:
        return np.asarray(model(x_t, int(t)))
    return np.stack([np.asarray(model(x, int(s))) for x, s in zip(x_t, t)])


def project_to_support(eps: np.ndarray, weight: SpectralWeight) -> np.ndarray:
    """Remove the Fourier content of ``eps`` where ``weight`` has no power.

    Forward noise never reaches those bins, so the true noise (and its
    conditional mean) is zero there.  Full-support weights pass through.
    """
    eps = np.asarray(eps, dtype=float)
    keep = power_density(weight, build_grid(*eps.shape[-2:])) > 0
    if keep.all():
        return eps
    return np.fft.ifft2(np.fft.fft2(eps) * keep).real


def posterior_coeffs(schedule: DiffusionSchedule, t: int, t_prev: int) -> tuple[float, float, float]:
    """``(alpha, beta, sigma)`` of the jump ``t -> t_prev`` from alpha_bar ratios.

    For consecutive steps this is the usual DDPM ``alpha_t``, ``beta_t`` and
    ``sigma_t = sqrt(beta_tilde_t)``.
    """
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t_prev] if t_prev >= 0 else 1.0
    alpha = ab_t / ab_p
    beta = 1.0 - alpha
    sigma = np.sqrt((1.0 - ab_p) / (1.0 - ab_t) * beta)
    return alpha, beta, sigma


def reverse_step(
    model,
    x_t,
    t: int,
    schedule: DiffusionSchedule,
    weight: SpectralWeight,
    rng: RngLike = None,
    t_prev: int | None = None,
    deterministic: bool = False,
    noise_weight: SpectralWeight | None = None,
    variance: str = "posterior",
    project: bool = True,
) -> np.ndarray:
    """``x_t -> x_{t_prev}`` (default ``t_prev = t - 1``).

    The injected noise uses ``noise_weight`` (defaults to the forward weight;
    pass :class:`Flat` for white reverse noise) scaled by the posterior
    standard deviation, or by ``sqrt(beta)`` with ``variance="beta"``.  The
    step into level 0 and ``deterministic=True`` inject nothing.  With
    ``project`` the noise estimate is restricted to the support of ``weight``.
    Bins outside it are never contracted by the reverse update, so any
    leakage there would otherwise grow by ``1/sqrt(alpha)`` every step.
    """
    if variance not in ("posterior", "beta"):
        raise ScheduleError(f"unknown variance choice {variance!r}")
    _check_t(t, schedule, lo=1)
    t_prev = t - 1 if t_prev is None else t_prev
    if not 0 <= t_prev < t:
        raise ScheduleError(f"t_prev={t_prev} must lie in [0, {t})")
    x_t = np.asarray(x_t, dtype=float)
    alpha, beta, sigma = posterior_coeffs(schedule, t, t_prev)
    if variance == "beta":
        sigma = np.sqrt(beta)
    eps_hat = _predict(model, x_t, t, schedule)
    if project:
        eps_hat = project_to_support(eps_hat, weight)
    mean = (x_t - beta / np.sqrt(1.0 - schedule.alpha_bar[t]) * eps_hat) / np.sqrt(alpha)
    if t_prev == 0 or deterministic:
        return mean
    grid = build_grid(*x_t.shape[-2:])
    n = None if x_t.ndim == 2 else x_t.shape[0]
    z = noise(noise_weight if noise_weight is not None else weight, grid, rng, normalize=True, n=n)
    return mean + sigma * z.values


def strided_steps(T: int, stride: int) -> list[int]:
    """Descending step subsequence ``T-1, T-1-stride, ..., 0``."""
    if stride < 1:
        raise ScheduleError("stride must be >= 1")
    steps = list(range(T - 1, -1, -stride))
    if steps[-1] != 0:
        steps.append(0)
    return steps


def sample(
    model,
    schedule: DiffusionSchedule,
    weight: SpectralWeight,
    count: int,
    shape: tuple[int, int],
    rng: RngLike = None,
    stride: int = 1,
    deterministic: bool = False,
    noise_weight: SpectralWeight | None = None,
    x_init: np.ndarray | None = None,
    variance: str = "posterior",
    project: bool = True,
) -> np.ndarray:
    """Draw ``count`` images by ancestral sampling over a strided step grid."""
    rng = as_rng(rng)
    grid = build_grid(*shape)
    if x_init is None:
        x = noise(weight, grid, rng, normalize=True, n=count).values
    else:
        x = np.array(x_init, dtype=float)
    steps = strided_steps(schedule.T, stride)
    for t, t_prev in zip(steps[:-1], steps[1:]):
        x = reverse_step(
            model, x, t, schedule, weight, rng,
            t_prev=t_prev, deterministic=deterministic, noise_weight=noise_weight, variance=variance,
            project=project,
        )
    return x


__all__ = [
    "DiffusionSchedule",
    "Flat",
    "ScheduleError",
    "forward_jump",
    "forward_step",
    "make_schedule",
    "posterior_coeffs",
    "project_to_support",
    "reverse_step",
    "sample",
    "scaled_schedule",
    "strided_steps",
    "training_loss",
]
