import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tatmem import CoefficientSpec, grid_for_disk, make_disk, make_medium, make_phantom  # noqa: E402

RADIUS = 0.7


def speed_profile(X, Y):
    """Slow-core speed: radially decreasing, so the speed condition holds about 0."""
    return 1.0 + 0.2 * np.exp(-(X ** 2 + Y ** 2) / 0.1)


def small_problem(T=1.0, h=0.04, c_max=1.2, a=1.0, q=1.0, alpha_decay=2.0, b=0.0,
                  c=speed_profile, margin_factor=1.1):
    grid = grid_for_disk(RADIUS, T, c_max, h, margin_factor=margin_factor)
    domain = make_disk(grid, RADIUS)
    medium = make_medium(CoefficientSpec(c=c, a=a, b=b, q=q, alpha_decay=alpha_decay), grid, domain)
    return grid, domain, medium


def two_bumps(grid, domain):
    return make_phantom("gaussian_bumps", [
        {"center": (0.1, 0.0), "width": 0.3, "amplitude": 1.0},
        {"center": (-0.25, 0.2), "width": 0.2, "amplitude": 0.5}], grid, domain)


@pytest.fixture(scope="session")
def coarse():
    grid, domain, medium = small_problem()
    return grid, domain, medium, two_bumps(grid, domain)
