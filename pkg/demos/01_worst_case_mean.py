"""How the ball radius eats into the mean and inflates the risk of one portfolio.

For a fixed equal-weight portfolio on the bundled panel we sweep the radius
and print the worst-case mean, the robust objective and the window of
means the adversary can reach. The objective is also recovered as the
largest value of ``h(alpha) - alpha^2`` over that window, which is how the
closed form is derived.
"""

import numpy as np

from drmv import (
    RobustParams,
    empirical_moments,
    inner_max_second_moment,
    load_csv,
    lp_norm,
    robust_objective,
    sample_data_path,
    worst_case_mean,
)

series = load_csv(sample_data_path())
moments = empirical_moments(series)
phi = np.full(series.d, 1.0 / series.d)
print(f"equal weights on {', '.join(series.asset_labels)}")
print(f"sample mean {phi @ moments.mean:.5f}, sample variance {phi @ moments.covariance @ phi:.6f}\n")

print(f"{'delta':>9} {'p':>4} {'worst mean':>11} {'objective':>10} {'alpha-scan':>10}")
for delta in (0.0, 1e-5, 1e-4, 1e-3):
    for p in (1.0, 2.0, np.inf):
        prm = RobustParams(p=p, delta=delta)
        centre = phi @ moments.mean
        r = np.sqrt(delta) * lp_norm(phi, p)
        grid = np.linspace(centre - r, centre + r, 2001)
        scan = max(inner_max_second_moment(phi, a, moments, prm) - a * a for a in grid)
        print(f"{delta:9.0e} {p:>4} {worst_case_mean(phi, moments, prm):11.5f} "
              f"{robust_objective(phi, moments, prm):10.6f} {scan:10.6f}")
    print()

# the norm order matters through ||phi||_p: for equal weights, l_inf is the smallest
print("||phi||_p for p = 1, 2, inf:", [round(lp_norm(phi, p), 4) for p in (1, 2, np.inf)])
