"""Run configuration: ``key = value`` INI files with one section per concern.

A run is a pure function of its :class:`RunConfig` and seed.  Everything
round-trips through :meth:`RunConfig.to_ini`, which is what gets copied
into the output directory.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .corruption import CorruptionSpec
from .data_io import (
    Dataset,
    gen_bandlimited_dataset,
    gen_gaussian_dataset,
    load_dataset,
    load_digits_surrogate,
    load_mnist_idx,
    smooth_mean_image,
)
from .denoiser import Arch, ArchError, TrainConfig
from .diffusion import DiffusionSchedule, ScheduleError, make_schedule, scaled_schedule
from .spectral import Flat, SpectralError, SpectralWeight, weight_from_config, weight_to_config


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _bands(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        a, sep, b = part.partition(":")
        if not sep:
            raise ConfigError(f"band {part!r} must look like a:b")
        out.append((float(a), float(b)))
    return out


LADDER = [(round(0.1 * k, 1), round(0.1 * (k + 1), 1)) for k in range(1, 9)]


@dataclass
class DataConfig:
    """Where training and reference images come from.

    ``kind``: ``bandlimited`` (blobs or digits restricted to ``band``),
    ``gaussian`` (smooth mean plus white noise), ``digits`` (scikit-learn
    digits in a 28x28 frame), ``mnist`` (IDX files) or ``fdds``.
    """

    kind: str = "bandlimited"
    n_train: int = 1000
    n_ref: int = 500
    height: int = 28
    width: int = 28
    band: tuple = (0.0, 0.3)
    noise_gamma: float = 1.0
    source: str = "blobs"
    var: float = 0.25
    images: str = ""
    labels: str = ""
    path: str = ""
    seed: int = 0

    def load(self, run_seed: int) -> tuple[Dataset, Dataset]:
        """``(train, reference)``; synthetic draws use ``rng([seed, run_seed])``."""
        rng = np.random.default_rng([self.seed, run_seed])
        n = self.n_train + self.n_ref
        H, W = self.height, self.width
        if self.kind == "bandlimited":
            src = None
            if self.source == "digits":
                src = _resize(_permuted(load_digits_surrogate(), rng), H, W, n)
            elif self.source != "blobs":
                raise ConfigError(f"unknown bandlimited source {self.source!r}")
            ds = gen_bandlimited_dataset(n, H, W, src, tuple(self.band), rng, self.noise_gamma)
        elif self.kind == "gaussian":
            ds = gen_gaussian_dataset(n, H, W, smooth_mean_image(H, W), self.var, rng)
        elif self.kind == "digits":
            ds = _resize(_permuted(load_digits_surrogate(H), rng), H, W, n)
        elif self.kind == "mnist":
            images = self.images or _env_mnist("train-images-idx3-ubyte")
            labels = self.labels or _env_mnist("train-labels-idx1-ubyte")
            if not images:
                raise ConfigError("mnist data needs [data] images = PATH (or FD_MNIST_DIR)")
            ds = _resize(_permuted(load_mnist_idx(images, labels or None), rng), H, W, n)
        elif self.kind == "fdds":
            if not self.path:
                raise ConfigError("fdds data needs [data] path = FILE")
            ds = _resize(_permuted(load_dataset(self.path), rng), H, W, n)
        else:
            raise ConfigError(f"unknown data kind {self.kind!r}")
        idx = np.arange(n)
        return ds.subset(idx[: self.n_train]), ds.subset(idx[self.n_train :])


def _env_mnist(stem: str) -> str:
    root = os.environ.get("FD_MNIST_DIR", "")
    for name in (stem, stem + ".gz"):
        if root and (Path(root) / name).exists():
            return str(Path(root) / name)
    return ""


def _permuted(ds: Dataset, rng) -> Dataset:
    return ds.subset(rng.permutation(len(ds)))


def _resize(ds: Dataset, H: int, W: int, n: int) -> Dataset:
    if ds.shape != (H, W):
        raise ConfigError(f"dataset is {ds.shape[0]}x{ds.shape[1]}, config asks for {H}x{W}")
    if len(ds) < n:
        raise ConfigError(f"dataset has {len(ds)} images, n_train + n_ref = {n}")
    return ds.subset(slice(0, n))


@dataclass
class ScheduleConfig:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    scaled: bool = True

    def build(self) -> DiffusionSchedule:
        if self.scaled:
            return scaled_schedule(self.T, self.beta_start, self.beta_end)
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class SampleConfig:
    count: int = 300
    stride: int = 4
    white_reverse_noise: bool = False
    variance: str = "posterior"
    project: bool = True


@dataclass
class MetricConfig:
    """``extractor = auto`` trains the small classifier when labels exist,
    otherwise falls back to a random projection."""

    extractor: str = "auto"
    dim: int = 64
    n_bins: int = 16
    kid_subset: int = 100
    kid_subsets: int = 20
    classifier_epochs: int = 5


@dataclass
class SweepConfig:
    gammas: tuple = tuple(round(0.1 * k, 1) for k in range(1, 10))
    workers: int = 1


@dataclass
class CorruptionConfig:
    bands: tuple = tuple(LADDER)
    gamma_c: float = 1.0
    gamma_l: float = 0.5
    gamma_h: float = 0.5

    def specs(self) -> list[CorruptionSpec]:
        return [CorruptionSpec(a, b, self.gamma_c) for a, b in self.bands]


@dataclass
class SpectrumConfig:
    timesteps: tuple = (0, 50, 100, 150, 199)
    count: int = 256
    n_bins: int = 16
    source: str = "data"  # or a checkpoint path


_SECTIONS = {
    "data": DataConfig,
    "schedule": ScheduleConfig,
    "sample": SampleConfig,
    "metrics": MetricConfig,
    "sweep": SweepConfig,
    "corruption": CorruptionConfig,
    "spectrum": SpectrumConfig,
}


@dataclass
class RunConfig:
    name: str = "run"
    seeds: tuple = (1, 2, 3)
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    weight: SpectralWeight = field(default_factory=Flat)
    arch: Arch = field(default_factory=lambda: Arch(widths=(16, 32), time_dim=64))
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)

    # -- serialization -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keep ``T`` upper-case
        cp["run"] = {"name": self.name, "seeds": _fmt(self.seeds)}
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            cp[sec] = {f.name: _fmt(_ini_value(sec, f.name, getattr(obj, f.name))) for f in fields(obj)}
        cp["weight"] = dict(p.split("=", 1) for p in weight_to_config(self.weight).split(", "))
        cp["model"] = {"widths": _fmt(self.arch.widths), "time_dim": str(self.arch.time_dim)}
        t = self.train
        cp["train"] = {f.name: _fmt(getattr(t, f.name)) for f in fields(t) if f.name != "seed"}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keep ``T`` upper-case
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        known = set(_SECTIONS) | {"run", "weight", "model", "train"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        try:
            cfg = cls()
            if cp.has_section("run"):
                run = dict(cp["run"])
                cfg.name = run.pop("name", cfg.name)
                if "seeds" in run:
                    cfg.seeds = tuple(_ints(run.pop("seeds")))
                _no_extra("run", run)
            for sec, klass in _SECTIONS.items():
                if cp.has_section(sec):
                    setattr(cfg, sec, _parse_section(sec, klass, dict(cp[sec])))
            if cp.has_section("weight"):
                cfg.weight = weight_from_config(dict(cp["weight"]))
            h, w = cfg.data.height, cfg.data.width
            model = dict(cp["model"]) if cp.has_section("model") else {}
            widths = tuple(_ints(model.pop("widths"))) if "widths" in model else cfg.arch.widths
            tdim = int(model.pop("time_dim", cfg.arch.time_dim))
            _no_extra("model", model)
            cfg.arch = Arch(widths=widths, time_dim=tdim, height=h, width=w)
            if cp.has_section("train"):
                cfg.train = _parse_section("train", TrainConfig, dict(cp["train"]))
            cfg.validate()
        except ConfigError:
            raise
        except (ValueError, TypeError, SpectralError, ArchError, ScheduleError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_ini(text)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.data.n_train < 1 or self.data.n_ref < 2:
            raise ConfigError("need n_train >= 1 and n_ref >= 2")
        if self.sample.count < 2 or self.sample.stride < 1:
            raise ConfigError("sample count must be >= 2 and stride >= 1")
        if self.sample.variance not in ("posterior", "beta"):
            raise ConfigError("sample variance must be posterior or beta")
        if self.metrics.extractor not in ("auto", "raw_pixels", "random_projection", "trained_classifier"):
            raise ConfigError(f"unknown extractor {self.metrics.extractor!r}")
        if not all(0 < g < 1 for g in self.sweep.gammas):
            raise ConfigError("sweep gammas must lie in (0, 1)")
        if self.sweep.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.schedule.build()
        self.corruption.specs()
        Arch(self.arch.widths, self.arch.time_dim, self.data.height, self.data.width)

    def run_id(self, command: str) -> str:
        """Stable identifier of (command, config); seeds are not part of it."""
        return hashlib.sha1(f"{command}\n{self.to_ini()}".encode()).hexdigest()[:12]


def _ini_value(section, name, value):
    if section == "corruption" and name == "bands":
        return ", ".join(f"{a!r}:{b!r}" for a, b in value)
    return value


def _no_extra(section: str, leftover: dict) -> None:
    if leftover:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(leftover))}")


def _parse_section(section: str, klass, raw: dict):
    defaults = klass() if section != "train" else TrainConfig()
    kwargs = {}
    for f in fields(klass):
        if f.name not in raw:
            continue
        text = raw.pop(f.name).strip()
        current = getattr(defaults, f.name)
        if section == "corruption" and f.name == "bands":
            kwargs[f.name] = tuple(LADDER if text == "ladder" else _bands(text))
        elif isinstance(current, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"[{section}] {f.name} must be true or false")
            kwargs[f.name] = text.lower() in ("true", "1", "yes")
        elif isinstance(current, tuple):
            kwargs[f.name] = tuple(_ints(text) if all(isinstance(v, int) for v in current) else _floats(text))
        elif isinstance(current, int):
            kwargs[f.name] = int(text)
        elif isinstance(current, float):
            kwargs[f.name] = float(text)
        else:
            kwargs[f.name] = text
    _no_extra(section, raw)
    return klass(**kwargs)


__all__ = [
    "ConfigError",
    "CorruptionConfig",
    "DataConfig",
    "MetricConfig",
    "RunConfig",
    "SampleConfig",
    "ScheduleConfig",
    "SpectrumConfig",
    "SweepConfig",
]
