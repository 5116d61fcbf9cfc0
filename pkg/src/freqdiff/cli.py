"""Command-line experiment runner.

    freqdiff train           --config run.ini --out runs/x
    freqdiff sample          --config run.ini --out runs/x --stride 4
    freqdiff eval            --config run.ini --out runs/x
    freqdiff sweep-gamma     --config run.ini --out runs/sweep
    freqdiff corrupt-recover --config run.ini --out runs/cr --seed 1 --seed 2
    freqdiff spectrum        --config run.ini --out runs/spec

Every command writes CSV with a versioned ``schema`` column and a trailing
``meta`` column (wall-clock information).  All other columns depend only on
(config, seed) and are byte-identical across reruns.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .corruption import corrupt, recovery_weight
from .data_io import Dataset, load_dataset, save_contact_sheet, save_dataset
from .denoiser import init_model, load_checkpoint, save_checkpoint, train
from .diffusion import forward_jump, sample
from .metrics import FeatureExtractor, band_power, evaluate, save_classifier, train_classifier
from .spectral import Flat, TwoBand, radial_power_spectrum

log = logging.getLogger("freqdiff")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

LOSS_SCHEMA = "loss/1"
LOSS_FIELDS = ["schema", "run_id", "seed", "epoch", "loss", "meta"]

SAMPLE_SCHEMA = "samples/1"
SAMPLE_FIELDS = ["schema", "run_id", "seed", "count", "stride", "pixel_mean", "pixel_std", "file", "meta"]

RESULT_SCHEMA = "results/1"
RESULT_FIELDS = [
    "schema", "run_id", "row_type", "model", "gamma_l", "gamma_h", "band_a", "band_b", "seed", "n_ok",
    "fid", "kid", "spectral_fid", "band_power", "clean_band_power",
    "fid_stderr", "fid_stddev", "kid_stderr", "kid_stddev",
    "spectral_fid_stderr", "spectral_fid_stddev", "band_power_stderr", "band_power_stddev",
    "extractor", "status", "meta",
]  # fmt: skip
AGG_METRICS = ["fid", "kid", "spectral_fid", "band_power"]

SPECTRUM_SCHEMA = "spectrum/1"
SPECTRUM_FIELDS = ["schema", "run_id", "seed", "t", "bin", "radial", "power", "meta"]


class RuntimeFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _meta(started: float) -> str:
    now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return json.dumps({"utc": now, "elapsed_s": round(time.time() - started, 3)}, sort_keys=True)


def write_rows(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in fields])


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def payload(path) -> list[list[str]]:
    """CSV rows without the ``meta`` column (the deterministic part)."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [i for i, k in enumerate(rows[0]) if k != "meta"]
    return [[r[i] for i in keep] for r in rows]


def _prepare_out(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())


def _train_model(cfg: RunConfig, images: np.ndarray, weight, seed: int):
    model = init_model(cfg.arch, seed=seed)
    return train(model, images, cfg.schedule.build(), weight, replace(cfg.train, seed=seed))


def _draw(cfg: RunConfig, model, weight, seed: int, tag: int) -> np.ndarray:
    rng = np.random.default_rng([seed, tag])
    noise_weight = Flat() if cfg.sample.white_reverse_noise else None
    return sample(
        model, cfg.schedule.build(), weight, cfg.sample.count, (cfg.data.height, cfg.data.width),
        rng=rng, stride=cfg.sample.stride, noise_weight=noise_weight, variance=cfg.sample.variance, project=cfg.sample.project,
    )  # fmt: skip


def _extractor(cfg: RunConfig, clean_train: Dataset, seed: int, out: Path | None) -> FeatureExtractor:
    m = cfg.metrics
    kind = m.extractor
    if kind == "auto":
        kind = "trained_classifier" if clean_train.labels is not None else "random_projection"
    if kind != "trained_classifier":
        return FeatureExtractor(kind, dim=m.dim, seed=0)
    if clean_train.labels is None:
        raise ConfigError("trained_classifier extractor needs a labelled dataset")
    n_classes = int(clean_train.labels.max()) + 1
    net = train_classifier(clean_train.images, clean_train.labels, n_classes, epochs=m.classifier_epochs, seed=seed)
    ckpt = None
    if out is not None:
        ckpt = out / f"classifier_seed{seed}.pt"
        save_classifier(net, ckpt)
    return FeatureExtractor("trained_classifier", classifier=net, checkpoint=None if ckpt is None else ckpt.name)


def _metric_row(cfg, ref, gen, extractor, seed):
    m = cfg.metrics
    rep = evaluate(ref, gen, extractor, m.n_bins, m.kid_subset, m.kid_subsets, seed=seed)
    row = {"fid": rep.fid, "kid": rep.kid, "kid_stderr": rep.kid_stderr, "spectral_fid": rep.spectral_fid}
    row["extractor"] = rep.extractor
    return row, rep


def aggregate(rows: list[dict], key_fields: list[str]) -> list[dict]:
    """One ``aggregate`` row per key with mean, stderr and stddev over ok seeds."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in key_fields), []).append(r)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r.get("status") == "ok"]
        agg = {k: v for k, v in zip(key_fields, key)}
        agg.update(row_type="aggregate", seed="all", n_ok=len(ok), status="ok" if ok else "no successful seeds")
        for k in ("gamma_h", "band_a", "band_b", "extractor"):
            agg.setdefault(k, members[0].get(k))
        clean = [float(r["clean_band_power"]) for r in ok if r.get("clean_band_power") not in (None, "")]
        if clean:
            agg["clean_band_power"] = float(np.mean(clean))
        for metric in AGG_METRICS:
            vals = np.array([float(r[metric]) for r in ok if r.get(metric) not in (None, "")])
            if len(vals) == 0:
                continue
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            agg[metric] = float(vals.mean())
            agg[f"{metric}_stddev"] = sd
            agg[f"{metric}_stderr"] = sd / np.sqrt(len(vals))
        out.append(agg)
    return out


def _run_entries(entries: list, worker, workers: int, threads: int | None) -> None:
    if workers <= 1:
        for e in entries:
            worker(e)
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_set_threads, initargs=(threads or 1,)) as pool:
        list(pool.map(worker, entries))


def _set_threads(n: int | None) -> None:
    if n:
        torch.set_num_threads(n)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig, out: Path) -> Path:
    """Train one model per seed; writes ``model_seed{s}.fdck`` and ``loss.csv``."""
    _prepare_out(cfg, out)
    run_id = cfg.run_id("train")
    rows = []
    for seed in cfg.seeds:
        started = time.time()
        tr, _ = cfg.data.load(seed)
        model, curve = _train_model(cfg, tr.images, cfg.weight, seed)
        save_checkpoint(model, out / f"model_seed{seed}.fdck")
        meta = _meta(started)
        rows += [
            {"schema": LOSS_SCHEMA, "run_id": run_id, "seed": seed, "epoch": i + 1, "loss": float(v), "meta": meta}
            for i, v in enumerate(curve)
        ]
        log.info("seed %d: loss %.4f -> %.4f", seed, curve[0], curve[-1])
    path = out / "loss.csv"
    write_rows(path, LOSS_FIELDS, rows)
    return path


def _checkpoint(out: Path, seed: int):
    path = out / f"model_seed{seed}.fdck"
    if not path.exists():
        raise RuntimeFailure(f"{path} not found; run `train` first")
    return load_checkpoint(path)


def cmd_sample(cfg: RunConfig, out: Path) -> Path:
    """Draw ``count`` samples per seed; writes ``samples_seed{s}.fdds`` and a contact sheet."""
    _prepare_out(cfg, out)
    run_id = cfg.run_id("sample")
    rows = []
    for seed in cfg.seeds:
        started = time.time()
        model = _checkpoint(out, seed)
        x = _draw(cfg, model, cfg.weight, seed, 1)
        name = f"samples_seed{seed}.fdds"
        save_dataset(Dataset(x, "samples", {"seed": seed, "stride": cfg.sample.stride}), out / name)
        save_contact_sheet(x[:64], out / f"samples_seed{seed}.png")
        rows.append({
            "schema": SAMPLE_SCHEMA, "run_id": run_id, "seed": seed, "count": len(x), "stride": cfg.sample.stride,
            "pixel_mean": float(x.mean()), "pixel_std": float(x.std()), "file": name, "meta": _meta(started),
        })  # fmt: skip
    path = out / "samples.csv"
    write_rows(path, SAMPLE_FIELDS, rows)
    return path


def cmd_eval(cfg: RunConfig, out: Path) -> Path:
    """Score ``samples_seed{s}.fdds`` against held-out reference data."""
    _prepare_out(cfg, out)
    run_id = cfg.run_id("eval")
    rows = []
    for seed in cfg.seeds:
        started = time.time()
        path = out / f"samples_seed{seed}.fdds"
        if not path.exists():
            raise RuntimeFailure(f"{path} not found; run `sample` first")
        gen = load_dataset(path).images
        tr, ref = cfg.data.load(seed)
        row, rep = _metric_row(cfg, ref.images, gen, _extractor(cfg, tr, seed, out), seed)
        rep.append_to(out / "results.jsonl")
        gl = getattr(cfg.weight, "gamma_l", None)
        row.update(
            schema=RESULT_SCHEMA, run_id=run_id, row_type="run", model=cfg.weight.kind, gamma_l=gl,
            gamma_h=getattr(cfg.weight, "gamma_h", None), seed=seed, n_ok=1, status="ok", meta=_meta(started),
        )  # fmt: skip
        rows.append(row)
    rows += [dict(r, schema=RESULT_SCHEMA, run_id=run_id) for r in aggregate(rows, ["model", "gamma_l"])]
    path = out / "eval.csv"
    write_rows(path, RESULT_FIELDS, rows)
    return path


def _sweep_weight(cfg: RunConfig, gamma_l: float) -> TwoBand:
    w = cfg.weight
    if isinstance(w, TwoBand):
        return replace(w, gamma_l=gamma_l, gamma_h=round(1.0 - gamma_l, 12))
    return TwoBand(gamma_l, round(1.0 - gamma_l, 12))


def _sweep_entry(args) -> None:
    cfg, out, gamma_l, seed = args
    started = time.time()
    w = _sweep_weight(cfg, gamma_l)
    row = {"row_type": "run", "model": "two_band", "gamma_l": gamma_l, "gamma_h": w.gamma_h, "seed": seed, "n_ok": 1}
    try:
        tr, ref = cfg.data.load(seed)
        model, _ = _train_model(cfg, tr.images, w, seed)
        gen = _draw(cfg, model, w, seed, 1)
        metrics, _ = _metric_row(cfg, ref.images, gen, _extractor(cfg, tr, seed, None), seed)
        row.update(metrics, status="ok")
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("gamma_l=%s seed=%s failed: %s", gamma_l, seed, exc)
        row.update(n_ok=0, status=f"error: {type(exc).__name__}: {exc}")
    row["meta"] = _meta(started)
    write_rows(out / "entries" / f"sweep_g{gamma_l!r}_s{seed}.csv", RESULT_FIELDS, [row])


def cmd_sweep_gamma(cfg: RunConfig, out: Path, threads: int | None = None) -> Path:
    """One model per (gamma_l, seed); per-entry CSVs merged in sorted key order."""
    _prepare_out(cfg, out)
    (out / "entries").mkdir(exist_ok=True)
    entries = [(cfg, out, g, s) for g in sorted(cfg.sweep.gammas) for s in cfg.seeds]
    _run_entries(entries, _sweep_entry, cfg.sweep.workers, threads)
    run_id = cfg.run_id("sweep-gamma")
    rows = []
    for g in sorted(cfg.sweep.gammas):
        for s in cfg.seeds:
            rows += read_rows(out / "entries" / f"sweep_g{g!r}_s{s}.csv")
    rows = [dict(r, schema=RESULT_SCHEMA, run_id=run_id) for r in rows]
    rows += [dict(r, schema=RESULT_SCHEMA, run_id=run_id) for r in aggregate(rows, ["model", "gamma_l"])]
    path = out / "sweep.csv"
    write_rows(path, RESULT_FIELDS, rows)
    return path


def _corrupt_entry(args) -> None:
    cfg, out, k, seed = args
    spec = cfg.corruption.specs()[k]
    started = time.time()
    rows = []
    try:
        tr, ref = cfg.data.load(seed)
        dirty = corrupt(tr.images, spec, np.random.default_rng([seed, 2000 + k]))
        extractor = _extractor(cfg, tr, seed, None)
        clean_bp = band_power(ref.images, spec.a_c, spec.b_c)
        rw = recovery_weight(spec, cfg.corruption.gamma_l, cfg.corruption.gamma_h)
        for name, w in (("baseline", Flat()), ("frequency", rw)):
            model, _ = _train_model(cfg, dirty, w, seed)
            gen = _draw(cfg, model, w, seed, 1)
            metrics, _ = _metric_row(cfg, ref.images, gen, extractor, seed)
            metrics.update(band_power=band_power(gen, spec.a_c, spec.b_c), clean_band_power=clean_bp)
            rows.append(dict(metrics, model=name, gamma_l=getattr(w, "gamma_l", None), gamma_h=getattr(w, "gamma_h", None), status="ok"))
    except Exception as exc:
        log.warning("band %s seed=%s failed: %s", k, seed, exc)
        done = {r["model"] for r in rows}
        rows += [{"model": m, "n_ok": 0, "status": f"error: {type(exc).__name__}: {exc}"} for m in ("baseline", "frequency") if m not in done]
    meta = _meta(started)
    for r in rows:
        r.update(row_type="run", band_a=spec.a_c, band_b=spec.b_c, seed=seed, meta=meta)
        r.setdefault("n_ok", 1)
    write_rows(out / "entries" / f"corrupt_b{k}_s{seed}.csv", RESULT_FIELDS, rows)


def cmd_corrupt_recover(cfg: RunConfig, out: Path, threads: int | None = None) -> Path:
    """Paired baseline / frequency-model rows per (band, seed), scored on clean data."""
    _prepare_out(cfg, out)
    (out / "entries").mkdir(exist_ok=True)
    n = len(cfg.corruption.bands)
    entries = [(cfg, out, k, s) for k in range(n) for s in cfg.seeds]
    _run_entries(entries, _corrupt_entry, cfg.sweep.workers, threads)
    run_id = cfg.run_id("corrupt-recover")
    rows = []
    for k in range(n):
        for s in cfg.seeds:
            rows += read_rows(out / "entries" / f"corrupt_b{k}_s{s}.csv")
    rows = [dict(r, schema=RESULT_SCHEMA, run_id=run_id) for r in rows]
    rows += [dict(r, schema=RESULT_SCHEMA, run_id=run_id) for r in aggregate(rows, ["band_a", "band_b", "model"])]
    path = out / "corrupt_recover.csv"
    write_rows(path, RESULT_FIELDS, rows)
    return path


def cmd_spectrum(cfg: RunConfig, out: Path) -> Path:
    """Radial spectra of the forward process after ``t`` steps (``t = 0`` is the data)."""
    sc = cfg.spectrum
    schedule = cfg.schedule.build()
    bad = [t for t in sc.timesteps if not 0 <= t <= schedule.T]
    if bad:
        raise ConfigError(f"timesteps {bad} outside [0, {schedule.T}]")
    _prepare_out(cfg, out)
    run_id = cfg.run_id("spectrum")
    rows = []
    for seed in cfg.seeds:
        started = time.time()
        if sc.source == "data":
            tr, _ = cfg.data.load(seed)
            if len(tr) < sc.count:
                raise ConfigError(f"spectrum count {sc.count} exceeds n_train {len(tr)}")
            x0 = tr.images[: sc.count]
        else:
            try:
                model = load_checkpoint(sc.source)
            except FileNotFoundError:
                raise ConfigError(f"checkpoint {sc.source} not found") from None
            x0 = sample(model, schedule, cfg.weight, sc.count, (cfg.data.height, cfg.data.width),
                        rng=np.random.default_rng([seed, 1]), stride=cfg.sample.stride)  # fmt: skip
        meta = _meta(started)
        for t in sc.timesteps:
            if t == 0:
                x = np.asarray(x0, dtype=float)
            else:
                x, _ = forward_jump(x0, t - 1, schedule, cfg.weight, np.random.default_rng([seed, 3000 + t]))
            spec = radial_power_spectrum(x, sc.n_bins)
            for b, (c, p) in enumerate(spec.pairs()):
                rows.append({"schema": SPECTRUM_SCHEMA, "run_id": run_id, "seed": seed, "t": t, "bin": b, "radial": c, "power": p, "meta": meta})
    path = out / "spectrum.csv"
    write_rows(path, SPECTRUM_FIELDS, rows)
    return path


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "sweep-gamma": cmd_sweep_gamma,
    "corrupt-recover": cmd_corrupt_recover,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqdiff", description="Frequency-shaped diffusion experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="INI run config (defaults are used when omitted)")
    p.add_argument("--seed", type=int, action="append", dest="seeds", help="repeatable; default 1 2 3")
    p.add_argument("--out", type=Path, help="output directory (default runs/<name>)")
    p.add_argument("--stride", type=int, help="sampling stride override")
    p.add_argument("--device-threads", type=int, help="torch intra-op threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seeds:
            cfg.seeds = tuple(args.seeds)
        if args.stride is not None:
            if args.stride < 1:
                raise ConfigError("--stride must be >= 1")
            cfg.sample = replace(cfg.sample, stride=args.stride)
        if args.device_threads is not None:
            if args.device_threads < 1:
                raise ConfigError("--device-threads must be >= 1")
            torch.set_num_threads(args.device_threads)
        out = args.out or Path("runs") / cfg.name
        fn = COMMANDS[args.command]
        if args.command in ("sweep-gamma", "corrupt-recover"):
            path = fn(cfg, out, args.device_threads)
        else:
            path = fn(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
