"""Regenerate the bundled 120 x 5 monthly sample panel.

One market factor plus idiosyncratic noise, rounded to six decimals the
way a vendor file would be. The file under ``src/drmv/data`` was written by
this script; rerunning it reproduces the file byte for byte.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "drmv" / "data" / "sample_returns.csv"

rng = np.random.default_rng(20240501)
n, labels = 120, ["TECH", "HLTH", "ENGY", "UTIL", "FINL"]
beta = np.array([1.3, 0.8, 1.1, 0.5, 1.2])
alpha = np.array([0.004, 0.003, 0.001, 0.002, 0.0015])
idio = np.array([0.045, 0.030, 0.055, 0.025, 0.040])
market = rng.normal(0.006, 0.042, n)
returns = alpha + market[:, None] * beta + rng.normal(0.0, 1.0, (n, 5)) * idio

with OUT.open("w", encoding="utf-8", newline="") as fh:
    fh.write(",".join(labels) + "\n")
    for row in returns:
        fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
print(f"wrote {OUT}")
