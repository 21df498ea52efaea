"""Classical and robust portfolios side by side as the radius grows.

With a slack floor the robust problem only adds a norm penalty to the
standard deviation, so weights are pulled toward the minimum-norm
portfolio. With a binding floor the penalty also tightens the return
constraint.
"""

import numpy as np

from drmv import (
    RobustParams,
    empirical_moments,
    gmv_portfolio,
    load_csv,
    region_nonempty,
    sample_data_path,
    solve_markowitz,
    solve_robust,
    worst_case_mean,
)

series = load_csv(sample_data_path())
m = empirical_moments(series)
np.set_printoptions(precision=3, suppress=True)

print("global minimum variance:", gmv_portfolio(m))
print("classical at rho=0.01:  ", solve_markowitz(m, 0.01).phi, "\n")

print("slack floor (alpha_bar = -1), p = 2")
for delta in (0.0, 1e-4, 1e-3, 1e-2, 1e-1):
    sol = solve_robust(m, RobustParams(delta=delta, alpha_bar=-1.0))
    print(f"  delta={delta:<7g} phi={sol.phi}  ||phi||_2={np.linalg.norm(sol.phi):.3f}")

print("\nbinding floor, p = 1 (penalizes gross exposure)")
for delta in (1e-4, 3e-4, 5e-4):
    prm = RobustParams(p=1.0, delta=delta)
    top = region_nonempty(m, prm).max_robust_mean
    free = worst_case_mean(solve_robust(m, prm.replace(alpha_bar=-1.0)).phi, m, prm)
    floor = 0.5 * (free + top)  # halfway between the slack optimum and the best attainable
    sol = solve_robust(m, prm.replace(alpha_bar=floor))
    print(f"  delta={delta:<7g} best={top:.4f} floor={floor:.4f} binding={sol.binding} "
          f"multiplier={sol.multiplier:.3f} gross={np.abs(sol.phi).sum():.3f}")
    print(f"    phi={sol.phi}  worst mean={worst_case_mean(sol.phi, m, prm):.5f}")

print("\na floor above the best attainable worst-case mean is reported, not silently relaxed:")
prm = RobustParams(delta=1e-2, alpha_bar=0.05)
check = region_nonempty(m, prm)
print(f"  nonempty={check.nonempty}, best attainable worst-case mean {check.max_robust_mean:.5f}")
