"""Two-band gamma sweep: spectral FID per gamma_l on band-limited images.

    python scripts/sweep_gamma.py [--config scripts/configs/gamma_sweep.ini] [--out runs/gamma_sweep]

Expect spectral FID to fall as gamma_l rises, since the image content sits in
the low band.
"""

import argparse

from _common import ROOT, fmt, load_rows

from freqdiff.cli import main


def report(path) -> None:
    rows = load_rows(path)
    print(f"{'gamma_l':>8} {'seed':>5} {'spec_fid':>10} {'fid':>10} {'kid':>10}  status")
    for r in rows:
        print(f"{r['gamma_l']:>8} {r['seed']:>5} {fmt(r['spectral_fid'])} {fmt(r['fid'])} {fmt(r['kid'])}  {r['status']}")
    agg = {float(r["gamma_l"]): float(r["spectral_fid"]) for r in rows if r["row_type"] == "aggregate" and r["spectral_fid"]}
    order = sorted(agg, key=agg.get)
    print("gamma_l ordered by mean spectral FID (best first):", order)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=str(ROOT / "configs" / "gamma_sweep.ini"))
    p.add_argument("--out", default="runs/gamma_sweep")
    p.add_argument("--seed", type=int, action="append")
    a = p.parse_args()
    argv = ["sweep-gamma", "--config", a.config, "--out", a.out, "-v"] + sum((["--seed", str(s)] for s in a.seed or []), [])
    code = main(argv)
    if code == 0:
        report(f"{a.out}/sweep.csv")
    raise SystemExit(code)
