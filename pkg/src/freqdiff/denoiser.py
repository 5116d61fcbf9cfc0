"""Noise-prediction networks: a small time-conditioned U-Net and the exact
conditional-mean denoiser for Gaussian data."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .spectral import SpectralWeight, build_grid, norm_constant, power_density

log = logging.getLogger(__name__)

CKPT_MAGIC = b"FDCK"
CKPT_VERSION = 1


class ArchError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Arch:
    widths: tuple[int, ...] = (32, 64)
    time_dim: int = 64
    height: int = 28
    width: int = 28

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) <= 0 or self.time_dim <= 0:
            raise ArchError(f"layer widths must be positive: {self}")
        if self.time_dim % 2:
            raise ArchError("time_dim must be even")
        f = 2 ** len(self.widths)
        if self.height % f or self.width % f:
            raise ArchError(f"{self.height}x{self.width} is not divisible by {f}")

    def to_text(self) -> str:
        return (
            f"widths={','.join(map(str, self.widths))};time_dim={self.time_dim};"
            f"height={self.height};width={self.width}"
        )

    @classmethod
    def from_text(cls, text: str) -> "Arch":
        kv = dict(item.split("=", 1) for item in text.split(";") if item)
        return cls(
            widths=tuple(int(w) for w in kv["widths"].split(",")),
            time_dim=int(kv["time_dim"]),
            height=int(kv["height"]),
            width=int(kv["width"]),
        )


def _groups(c: int) -> int:
    return math.gcd(8, c)


def timestep_embedding(s: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of normalized time ``s = t / T`` in [0, 1)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=s.dtype, device=s.device) / half)
    args = 1000.0 * s[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNet(nn.Module):
    def __init__(self, arch: Arch):
        super().__init__()
        self.arch = arch
        td = arch.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        w0 = arch.widths[0]
        self.inc = nn.Conv2d(1, w0, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        c = w0
        for w in arch.widths:
            self.down_blocks.append(ResBlock(c, w, td))
            self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            c = w
        self.mid = ResBlock(c, c, td)
        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for w in reversed(arch.widths):
            self.upsamples.append(nn.Conv2d(c, c, 3, padding=1))
            self.up_blocks.append(ResBlock(c + w, w, td))
            c = w
        self.out_norm = nn.GroupNorm(_groups(c), c)
        self.out = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(s, self.arch.time_dim))
        h = self.inc(x[:, None])
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, emb)
        for up, block in zip(self.upsamples, self.up_blocks):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(F.silu(self.out_norm(h)))[:, 0]


def count_params(arch: Arch) -> int:
    """Parameter count from the descriptor alone (no module construction)."""
    td = arch.time_dim

    def conv(cin, cout, k):
        return cin * cout * k * k + cout

    def norm(c):
        return 2 * c

    def res(cin, cout):
        n = norm(cin) + conv(cin, cout, 3) + (td * cout + cout) + norm(cout) + conv(cout, cout, 3)
        return n + (conv(cin, cout, 1) if cin != cout else 0)

    total = 2 * (td * td + td)
    c = arch.widths[0]
    total += conv(1, c, 3)
    for w in arch.widths:
        total += res(c, w) + conv(w, w, 3)
        c = w
    total += res(c, c)
    for w in reversed(arch.widths):
        total += conv(c, c, 3) + res(c + w, w)
        c = w
    return total + norm(c) + conv(c, 1, 3)


@dataclass
class DenoiserModel:
    """Network plus its descriptor; ``params`` views the weights as one vector."""

    arch: Arch
    net: UNet

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def named_segments(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, tuple(p.shape)) for n, p in self.net.named_parameters()]

    @property
    def params(self) -> np.ndarray:
        return torch.nn.utils.parameters_to_vector(self.net.parameters()).detach().cpu().numpy()

    def set_params(self, vector) -> None:
        v = torch.as_tensor(np.asarray(vector), dtype=next(self.net.parameters()).dtype)
        torch.nn.utils.vector_to_parameters(v, self.net.parameters())

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def to(self, dtype: torch.dtype) -> "DenoiserModel":
        self.net.to(dtype)
        return self


def init_model(arch: Arch | None = None, seed: int = 0) -> DenoiserModel:
    """Fan-in scaled uniform init (torch's layer defaults) under a fixed seed."""
    arch = arch or Arch()
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = UNet(arch)
    finally:
        torch.random.set_rng_state(gen_state)
    return DenoiserModel(arch, net)


def predict_eps(model: DenoiserModel, x_t, t, T: int) -> np.ndarray:
    """Noise prediction for a stack of images ``x_t`` at integer step(s) ``t``."""
    x = np.asarray(x_t)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-2:] != (model.arch.height, model.arch.width):
        raise ArchError(f"input {x.shape[-2:]} does not match model {model.arch.height}x{model.arch.width}")
    tt = np.broadcast_to(np.asarray(t), (x.shape[0],))
    with torch.no_grad():
        xt = torch.as_tensor(x, dtype=model.dtype)
        s = torch.as_tensor(tt / T, dtype=model.dtype)
        out = model.net(xt, s).numpy().astype(float)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    ema: float = 0.0  # decay of the weight average returned at the end; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate must be >= 0 and clip_norm > 0")
        if not 0.0 <= self.ema < 1.0:
            raise ValueError("ema must be in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def eps_loss(model: DenoiserModel, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, alpha_bar: np.ndarray) -> torch.Tensor:
    """Differentiable mean squared error between ``eps`` and the prediction."""
    ab = alpha_bar[t][:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    dtype = model.dtype
    pred = model.net(torch.as_tensor(x_t, dtype=dtype), torch.as_tensor(t / len(alpha_bar), dtype=dtype))
    return F.mse_loss(pred, torch.as_tensor(eps, dtype=dtype))


def train(model: DenoiserModel, dataset, schedule, weight: SpectralWeight, config: TrainConfig, log_every: int = 0):
    """Adam + gradient clipping on the noise-regression loss.

    ``dataset`` is an (N, H, W) array or a :class:`~freqdiff.data_io.Dataset`.
    With ``ema > 0`` the model ends up holding the exponential moving
    average of its weights. Returns the model (trained in place) and the
    per-epoch mean loss.
    """
    from .spectral import noise

    images = np.asarray(getattr(dataset, "images", dataset), dtype=float)
    if images.ndim != 3 or len(images) == 0:
        raise ValueError("dataset must be a non-empty (N, H, W) stack")
    grid = build_grid(*images.shape[1:])
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    opt = torch.optim.Adam(
        model.net.parameters(),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    n = len(images)
    bs = min(config.batch_size, n)
    curve = []
    step = 0
    params = list(model.net.parameters())
    shadow = [p.detach().clone() for p in params] if config.ema > 0 else None
    model.net.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            x0 = images[idx]
            t = rng.integers(0, schedule.T, size=len(idx))
            eps = noise(weight, grid, rng, normalize=True, n=len(idx)).values
            loss = eps_loss(model, x0, t, eps, schedule.alpha_bar)
            if not torch.isfinite(loss):
                pnorm = float(torch.nn.utils.parameters_to_vector(model.net.parameters()).detach().norm())
                raise TrainingDiverged(f"non-finite loss at step {step} (epoch {epoch}); parameter norm {pnorm:.4g}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.net.parameters(), config.clip_norm)
            opt.step()
            if shadow is not None:
                with torch.no_grad():
                    for avg, p in zip(shadow, params):
                        avg.lerp_(p, 1.0 - config.ema)
            total += loss.item() * len(idx)
            count += len(idx)
            step += 1
        curve.append(total / count)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.5f", epoch + 1, curve[-1])
    if shadow is not None:
        with torch.no_grad():
            for avg, p in zip(shadow, params):
                p.copy_(avg)
    model.net.eval()
    return model, np.array(curve)


# ---------------------------------------------------------------------------
# analytic denoiser


def oracle_eps_gaussian(x_t, t: int, schedule, weight: SpectralWeight, data_mean, data_var: float, normalize: bool = True) -> np.ndarray:
    """Exact ``E[eps | x_t]`` when ``x0 ~ N(data_mean, data_var * I)``.

    Signal and shaped noise are independent and both diagonal in the
    orthonormal Fourier basis, so the conditional mean is a per-bin linear
    shrinkage of ``F(x_t - sqrt(abar) * mean)``.
    """
    x = np.asarray(x_t, dtype=float)
    grid = build_grid(*x.shape[-2:])
    s = power_density(weight, grid)
    if normalize:
        s = s * norm_constant(weight, grid) ** 2
    ab = schedule.alpha_bar[t]
    resid = x - np.sqrt(ab) * np.asarray(data_mean, dtype=float)
    denom = ab * data_var + (1 - ab) * s
    gain = np.divide(np.sqrt(1 - ab) * s, denom, out=np.zeros_like(s), where=denom > 0)
    return np.fft.ifft2(np.fft.fft2(resid, norm="ortho") * gain, norm="ortho").real


class GaussianOracle:
    """Callable stand-in for a trained model: ``oracle(x_t, t) -> eps_hat``."""

    def __init__(self, schedule, weight, data_mean, data_var, normalize=True):
        self.schedule = schedule
        self.weight = weight
        self.data_mean = np.asarray(data_mean, dtype=float)
        self.data_var = float(data_var)
        self.normalize = normalize

    def __call__(self, x_t, t):
        return oracle_eps_gaussian(x_t, int(t), self.schedule, self.weight, self.data_mean, self.data_var, self.normalize)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DenoiserModel, path) -> None:
    """``FDCK`` | u32 version | u32 len + arch text | u32 n_segments |
    per segment: u32 len + name, u32 ndim, u32 dims..., float32 LE data."""
    arch = model.arch.to_text().encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(arch)) + arch)
        params = list(model.net.named_parameters())
        f.write(struct.pack("<I", len(params)))
        for name, p in params:
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(struct.pack("<I", p.dim()) + struct.pack(f"<{p.dim()}I", *p.shape))
            f.write(p.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path, arch: Arch | None = None) -> DenoiserModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ArchError("not an FDCK checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CKPT_VERSION:
        raise ArchError(f"unsupported checkpoint version {version}")
    pos = 8
    (n,) = struct.unpack_from("<I", raw, pos)
    stored = Arch.from_text(raw[pos + 4 : pos + 4 + n].decode())
    pos += 4 + n
    if arch is not None and arch != stored:
        raise ArchError(f"checkpoint arch {stored} does not match {arch}")
    model = init_model(stored)
    params = dict(model.net.named_parameters())
    (nseg,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if nseg != len(params):
        raise ArchError("segment count does not match architecture")
    with torch.no_grad():
        for _ in range(nseg):
            (ln,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + ln].decode()
            pos += 4 + ln
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            if name not in params or tuple(params[name].shape) != tuple(shape):
                raise ArchError(f"unexpected segment {name} {shape}")
            params[name].copy_(torch.from_numpy(data.astype(np.float32)))
    return model
