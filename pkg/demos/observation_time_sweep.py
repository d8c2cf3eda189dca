"""How the contraction ratio of the error operator depends on observation time.

    python3 demos/observation_time_sweep.py

For each T, the largest ||K f|| / ||f|| over a fixed set of random phantoms.
Short windows leave the ratio near one; beyond the threshold it settles.
"""
import numpy as np

from tatmem import (CoefficientSpec, contraction_estimate, grid_for_disk, make_disk, make_medium,
                    uniqueness_times)

radius, h = 0.7, 0.032
speed = lambda X, Y: 1.0 + 0.2 * np.exp(-(X ** 2 + Y ** 2) / 0.1)
g = grid_for_disk(radius, 1.0, 1.2, h)
d = make_disk(g, radius)
threshold = uniqueness_times(make_medium(CoefficientSpec(c=speed), g, d).c,
                             (0.0, 0.0), d, g).damped_threshold
for frac in (0.2, 0.5, 1.0, 1.5, 2.0):
    T = frac * threshold
    grid = grid_for_disk(radius, T, 1.2, h)
    domain = make_disk(grid, radius)
    medium = make_medium(CoefficientSpec(c=speed, a=1.0, q=1.0, alpha_decay=2.0), grid, domain)
    rho = contraction_estimate(medium, grid, domain, n_samples=6, seed=1, workers=4)
    print(f"T = {frac:.1f} x threshold ({T:.3f}):  rho = {rho:.3f}")
