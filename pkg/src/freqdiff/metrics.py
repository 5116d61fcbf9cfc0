"""FID, KID and a spectral Frechet distance over pluggable features."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .spectral import annulus_index, build_grid

RIDGE = 1e-6
LOG_FLOOR = 1e-8


class MetricError(ValueError):
    pass


def _as_2d(features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise MetricError("features must be an (N, D) array")
    return f


def _check_pair(a, b):
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise MetricError("need at least 2 samples per set")
    return a, b


def _sqrtm_psd(c: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((c + c.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1-mu2|^2 + tr(C1 + C2 - 2 (C1 C2)^1/2)``.

    The trace of ``(C1 C2)^1/2`` equals that of ``(s C2 s)^1/2`` with
    ``s = C1^1/2``, which is symmetric, so eigh with clamping suffices.
    """
    s1 = _sqrtm_psd(cov1)
    m = s1 @ cov2 @ s1
    vals = np.clip(np.linalg.eigvalsh((m + m.T) / 2), 0, None)
    d = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2 * np.sum(np.sqrt(vals)))
    return max(d, 0.0)


def gaussian_fit(features, ridge: float = RIDGE):
    f = _as_2d(features)
    cov = np.atleast_2d(np.cov(f, rowvar=False)) + ridge * np.eye(f.shape[1])
    return f.mean(axis=0), cov


def fid(features_real, features_gen, ridge: float = RIDGE) -> float:
    a, b = _check_pair(features_real, features_gen)
    return frechet_distance(*gaussian_fit(a, ridge), *gaussian_fit(b, ridge))


def _poly_kernel(x, y):
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x, y) -> float:
    m, n = len(x), len(y)
    kxx, kyy, kxy = _poly_kernel(x, x), _poly_kernel(y, y), _poly_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2 * kxy.mean())


def _subsets(n, size, count, rng):
    if size * count <= n:
        perm = rng.permutation(n)
        return [perm[i * size : (i + 1) * size] for i in range(count)]
    return [rng.choice(n, size, replace=False) for _ in range(count)]


def kid_with_stderr(features_real, features_gen, subset_size=100, n_subsets=50, seed=0) -> tuple[float, float]:
    """Mean and standard error of unbiased MMD^2 over random subsets."""
    a, b = _check_pair(features_real, features_gen)
    if subset_size < 2 or subset_size > min(len(a), len(b)):
        raise MetricError(f"subset_size {subset_size} must lie in [2, {min(len(a), len(b))}]")
    rng = np.random.default_rng(seed)
    sa = _subsets(len(a), subset_size, n_subsets, rng)
    sb = _subsets(len(b), subset_size, n_subsets, rng)
    vals = np.array([mmd2_unbiased(a[i], b[j]) for i, j in zip(sa, sb)])
    se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return float(vals.mean()), float(se)


def kid(features_real, features_gen, subset_size=100, n_subsets=50, seed=0) -> float:
    return kid_with_stderr(features_real, features_gen, subset_size, n_subsets, seed)[0]


# ---------------------------------------------------------------------------
# spectral distance


def radial_profiles(images, n_bins: int = 16) -> np.ndarray:
    """Per-image mean power on each radial annulus, shape (N, n_bins)."""
    x = np.asarray(images, dtype=float)
    if x.ndim == 2:
        x = x[None]
    grid = build_grid(*x.shape[-2:])
    idx = annulus_index(grid, n_bins).ravel()
    onehot = np.zeros((idx.size, n_bins))
    onehot[np.arange(idx.size), idx] = 1.0
    counts = onehot.sum(axis=0)
    p = (np.abs(np.fft.fft2(x, norm="ortho")) ** 2).reshape(len(x), -1)
    return (p @ onehot) / np.maximum(counts, 1)


def log_profiles(images, n_bins: int = 16, floor: float = LOG_FLOOR) -> np.ndarray:
    return np.log(radial_profiles(images, n_bins) + floor)


def spectral_fid(images_real, images_gen, n_bins: int = 16, floor: float = LOG_FLOOR) -> float:
    """Frechet distance between Gaussian fits of per-image log radial spectra."""
    if n_bins < 4:
        raise MetricError("n_bins must be >= 4")
    return fid(log_profiles(images_real, n_bins, floor), log_profiles(images_gen, n_bins, floor))


def band_power(images, a: float, b: float) -> float:
    """Mean per-image power (summed over bins) in ``a <= radial < b``."""
    from .spectral import band_mask, power_map

    x = np.asarray(images, dtype=float)
    mask = band_mask(build_grid(*x.shape[-2:]).radial, a, b)
    return float((power_map(x) * mask).sum())


# ---------------------------------------------------------------------------
# feature extractors


class SmallClassifier(nn.Module):
    def __init__(self, n_classes: int = 10, feat_dim: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.fc = nn.Linear(32 * 16, feat_dim)
        self.head = nn.Linear(feat_dim, n_classes)
        self.n_classes = n_classes
        self.feat_dim = feat_dim

    def features(self, x):
        h = F.max_pool2d(F.silu(self.conv1(x[:, None])), 2)
        h = F.silu(self.conv2(h))
        h = F.adaptive_avg_pool2d(h, 4).flatten(1)
        return F.silu(self.fc(h))

    def forward(self, x):
        return self.head(self.features(x))


def train_classifier(images, labels, n_classes=10, epochs=5, batch_size=64, lr=1e-3, seed=0) -> SmallClassifier:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = SmallClassifier(n_classes)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), batch_size):
            idx = torch.as_tensor(order[s : s + batch_size])
            loss = F.cross_entropy(net(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    return net


def save_classifier(net: SmallClassifier, path) -> None:
    torch.save({"n_classes": net.n_classes, "feat_dim": net.feat_dim, "state": net.state_dict()}, path)


def load_classifier(path) -> SmallClassifier:
    blob = torch.load(path, weights_only=True)
    net = SmallClassifier(blob["n_classes"], blob["feat_dim"])
    net.load_state_dict(blob["state"])
    net.eval()
    return net


@dataclass
class FeatureExtractor:
    """Deterministic image -> vector map.

    ``kind`` is ``raw_pixels``, ``random_projection`` (``dim``, ``seed``) or
    ``trained_classifier`` (penultimate activations of ``classifier``).
    """

    kind: str = "raw_pixels"
    dim: int = 64
    seed: int = 0
    classifier: SmallClassifier | None = field(default=None, repr=False)
    checkpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("raw_pixels", "random_projection", "trained_classifier"):
            raise MetricError(f"unknown extractor {self.kind!r}")
        if self.kind == "trained_classifier" and self.classifier is None:
            if self.checkpoint is None:
                raise MetricError("trained_classifier needs a classifier or checkpoint")
            self.classifier = load_classifier(self.checkpoint)

    @property
    def name(self) -> str:
        if self.kind == "random_projection":
            return f"random_projection(dim={self.dim},seed={self.seed})"
        if self.kind == "trained_classifier":
            return f"trained_classifier({self.checkpoint or 'in-memory'})"
        return "raw_pixels"

    def output_dim(self, image_shape) -> int:
        if self.kind == "raw_pixels":
            return int(np.prod(image_shape))
        if self.kind == "random_projection":
            return self.dim
        return self.classifier.feat_dim

    def __call__(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=float)
        flat = x.reshape(len(x), -1)
        if self.kind == "raw_pixels":
            return flat
        if self.kind == "random_projection":
            proj = np.random.default_rng(self.seed).standard_normal((flat.shape[1], self.dim)) / np.sqrt(flat.shape[1])
            return flat @ proj
        with torch.no_grad():
            return self.classifier.features(torch.as_tensor(x, dtype=torch.float32)).numpy().astype(float)


@dataclass
class MetricReport:
    fid: float
    kid: float
    spectral_fid: float
    n_real: int
    n_gen: int
    extractor: str
    kid_stderr: float = 0.0

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def append_to(self, path) -> None:
        with open(path, "a") as f:
            f.write(self.to_record() + "\n")


def evaluate(images_real, images_gen, extractor: FeatureExtractor | None = None, n_bins=16, kid_subset=100, kid_subsets=20, seed=0) -> MetricReport:
    extractor = extractor or FeatureExtractor()
    fr, fg = extractor(images_real), extractor(images_gen)
    size = min(kid_subset, len(fr), len(fg))
    k, kse = kid_with_stderr(fr, fg, size, kid_subsets, seed)
    return MetricReport(
        fid=fid(fr, fg),
        kid=k,
        spectral_fid=spectral_fid(images_real, images_gen, n_bins),
        n_real=len(fr),
        n_gen=len(fg),
        extractor=extractor.name,
        kid_stderr=kse,
    )


def write_csv(path, rows: list[dict], fieldnames: list[str]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
