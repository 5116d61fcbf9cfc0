"""Band-corruption recovery: Flat baseline against the band-skipping weight.

    python scripts/corrupt_recover.py [--config scripts/configs/corrupt_recover.ini] [--out runs/corrupt_recover]

Both models train on corrupted digits and are scored against clean data.
"""

import argparse

from _common import ROOT, fmt, load_rows

from freqdiff.cli import main


def report(path) -> None:
    rows = load_rows(path)
    print(f"{'band':>10} {'model':>10} {'seed':>5} {'spec_fid':>10} {'fid':>10} {'band_pow':>10} {'clean_bp':>10}")
    for r in rows:
        band = f"{r['band_a']}-{r['band_b']}"
        print(f"{band:>10} {r['model']:>10} {r['seed']:>5} {fmt(r['spectral_fid'])} {fmt(r['fid'])} "
              f"{fmt(r['band_power'])} {fmt(r['clean_band_power'])}")
    agg = [r for r in rows if r["row_type"] == "aggregate" and r["band_power"]]
    for base in (r for r in agg if r["model"] == "baseline"):
        freq = next(r for r in agg if r["model"] == "frequency" and r["band_a"] == base["band_a"])
        clean = float(base["clean_band_power"])
        gap_b = abs(float(base["band_power"]) - clean)
        gap_f = abs(float(freq["band_power"]) - clean)
        print(f"band {base['band_a']}-{base['band_b']}: spectral FID {float(base['spectral_fid']):.3f} -> "
              f"{float(freq['spectral_fid']):.3f}, band-power gap {gap_b:.4g} -> {gap_f:.4g}")


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=str(ROOT / "configs" / "corrupt_recover.ini"))
    p.add_argument("--out", default="runs/corrupt_recover")
    p.add_argument("--seed", type=int, action="append")
    a = p.parse_args()
    argv = ["corrupt-recover", "--config", a.config, "--out", a.out, "-v"] + sum((["--seed", str(s)] for s in a.seed or []), [])
    code = main(argv)
    if code == 0:
        report(f"{a.out}/corrupt_recover.csv")
    raise SystemExit(code)
