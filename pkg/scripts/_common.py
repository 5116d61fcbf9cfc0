"""Shared helpers for the experiment scripts."""

import csv
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT.parent / "src"))


def load_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def fmt(v, width=10):
    try:
        return f"{float(v):{width}.4g}"
    except (TypeError, ValueError):
        return f"{v:>{width}}"
