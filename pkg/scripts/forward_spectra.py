"""Radial power spectra of the forward process for several weightings.

    python scripts/forward_spectra.py [--out runs/forward_spectra]

Writes one ``spectrum.csv`` per weighting (columns t, bin, radial, power) and
prints the low/high power ratio per step.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from _common import ROOT, load_rows

from freqdiff.cli import cmd_spectrum
from freqdiff.config import RunConfig
from freqdiff.spectral import BandPass, ExpDecay, Flat, PowerLaw, TwoBand

WEIGHTS = {
    "flat": Flat(),
    "two_band_low": TwoBand(0.8, 0.2),
    "two_band_high": TwoBand(0.2, 0.8),
    "power_law_up": PowerLaw(1.0),
    "power_law_down": PowerLaw(-1.0),
    "exp_decay": ExpDecay(10.0),
    "band_pass": BandPass(0.0, 0.5),
}


def low_high(rows, t):
    sel = [r for r in rows if r["t"] == str(t)]
    lo = sum(float(r["power"]) for r in sel if float(r["radial"]) < 0.5)
    hi = sum(float(r["power"]) for r in sel if float(r["radial"]) >= 0.5)
    return lo / hi if hi else float("inf")


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=str(ROOT / "configs" / "forward_spectra.ini"))
    p.add_argument("--out", default="runs/forward_spectra")
    a = p.parse_args()
    base = RunConfig.load(a.config)
    for name, w in WEIGHTS.items():
        cfg = replace(base, weight=w)
        path = cmd_spectrum(cfg, Path(a.out) / name)
        rows = load_rows(path)
        ratios = "  ".join(f"t={t}:{low_high(rows, t):.3g}" for t in cfg.spectrum.timesteps)
        print(f"{name:>14}  low/high power  {ratios}")
