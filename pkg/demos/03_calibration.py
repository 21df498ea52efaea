"""Choosing the radius and the floor from the data.

The radius is a Monte Carlo quantile of a chi-square-like limit law whose
covariance is a Newey-West estimate; the floor then sits just low enough
below the target that the true optimum survives with the chosen confidence.
"""

import warnings

import numpy as np

from drmv import calibrate, load_csv, sample_data_path
from drmv.calibration import calibrate_delta

series = load_csv(sample_data_path())
rho = 0.01

rep = calibrate(series, rho)
print(f"target rho={rho}, n={series.n}, d={series.d}")
print(f"plug-in multiplier lambda1={rep.lambda1_plugin:.4f}, c_star={rep.c_star:.4f}")
print(f"radius delta*={rep.delta_star:.3e}  (sqrt = {np.sqrt(rep.delta_star):.4f} in return units)")
print(f"v0={rep.v0:.4f}, floor alpha_bar={rep.alpha_bar:.5f}\n")

print("the radius shrinks with the miscoverage level and with the sample size")
for d0 in (0.01, 0.05, 0.1, 0.25):
    print(f"  delta0={d0:<5} delta*={calibrate_delta(series, rho, d0).delta_star:.3e}")
for n in (30, 60, 120):
    print(f"  first {n:3d} rows  delta*={calibrate_delta(series.window(0, n), rho, 0.05).delta_star:.3e}")

print("\nnorm order: the p=2 radius is inflated for p>2 so it stays a valid bound")
for p in (1.0, 2.0, 3.0, np.inf):
    dc = calibrate_delta(series, rho, 0.05, p=p)
    print(f"  p={p:<4} factor={dc.norm_factor:.3f} delta*={dc.delta_star:.3e}")

with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    from drmv.calibration import calibrate_alpha
    calibrate_alpha(series, rep.phi_plugin, rho, 0.0, 0.05)
print("\nzero radius:", caught[0].message)
