"""Computational box, circular observation domain and time bounds.

Everything here is two-dimensional.  Arrays on the grid are indexed
``[iy, ix]`` so that ``field[iy, ix]`` lives at ``(x[ix], y[iy])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_MAX_STEPS = 200_000
DEFAULT_MARGIN_FACTOR = 1.1


class GeometryError(ValueError):
    """Invalid grid or domain configuration."""


class SpeedConditionError(GeometryError):
    """The sound speed violates ``(x - x0) . grad c < c`` somewhere."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float]
    dt: float
    nt: int
    c_max: float
    cfl_safety: float

    @property
    def T(self) -> float:
        return self.nt * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="xy")

    @property
    def courant(self) -> float:
        return self.c_max * self.dt * math.sqrt(2.0) / self.h


def build_grid(box_halfwidth: float, nx: int, T: float, c_max: float,
               cfl_safety: float = 0.5, center=(0.0, 0.0),
               max_steps: int = DEFAULT_MAX_STEPS) -> Grid:
    """Square node grid on ``[-L, L]^2`` (shifted by `center`).

    The step is ``cfl_safety * h / (c_max * sqrt(2))`` rounded down so that
    ``T`` is an integer number of steps.
    """
    if nx < 16:
        raise GeometryError(f"nx must be >= 16, got {nx}")
    for name, val in (("box_halfwidth", box_halfwidth), ("T", T), ("c_max", c_max)):
        if not (val > 0 and math.isfinite(val)):
            raise GeometryError(f"{name} must be positive, got {val}")
    if not (0 < cfl_safety <= 1):
        raise GeometryError(f"cfl_safety must lie in (0, 1], got {cfl_safety}")
    h = 2.0 * box_halfwidth / (nx - 1)
    dt_max = cfl_safety * h / (c_max * math.sqrt(2.0))
    nt = math.ceil(T / dt_max - 1e-12)
    if nt > max_steps:
        raise GeometryError(f"{nt} time steps exceed the cap of {max_steps}")
    dt = T / nt
    origin = (center[0] - box_halfwidth, center[1] - box_halfwidth)
    return Grid(nx=nx, ny=nx, h=h, origin=origin, dt=dt, nt=nt,
                c_max=float(c_max), cfl_safety=float(cfl_safety))


def grid_for_disk(radius: float, T: float, c_max: float, h: float,
                  cfl_safety: float = 0.5, margin_factor: float = DEFAULT_MARGIN_FACTOR,
                  center=(0.0, 0.0), max_steps: int = DEFAULT_MAX_STEPS) -> Grid:
    """Smallest grid of spacing `h` whose margin around the disk is wall-safe.

    The half-width is a whole number of cells so that the disk center is a
    node; two calls differing only in `margin_factor` produce nested grids.
    """
    need = radius + margin_factor * c_max * T / 2.0
    cells = math.ceil(need / h - 1e-9)
    return build_grid(cells * h, 2 * cells + 1, T, c_max, cfl_safety,
                      center=center, max_steps=max_steps)


@dataclass(frozen=True)
class DomainDisk:
    center: tuple[float, float]
    radius: float
    n_boundary: int
    boundary_points: np.ndarray = field(repr=False)
    interior_mask: np.ndarray = field(repr=False)
    radial: np.ndarray = field(repr=False)

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_boundary) / self.n_boundary

    @property
    def arc_weight(self) -> float:
        return 2.0 * np.pi * self.radius / self.n_boundary

    def band_mask(self, h: float) -> np.ndarray:
        """Interior nodes within one cell of the circle (Dirichlet nodes)."""
        return self.interior_mask & (self.radial >= self.radius - h)

    def inner_mask(self, h: float) -> np.ndarray:
        return self.interior_mask & (self.radial < self.radius - h)


def make_disk(grid: Grid, radius: float, center=(0.0, 0.0), n_boundary: int = 256) -> DomainDisk:
    if radius <= 0:
        raise GeometryError(f"disk radius must be positive, got {radius}")
    if n_boundary < 8:
        raise GeometryError("n_boundary must be at least 8")
    cx, cy = float(center[0]), float(center[1])
    theta = 2.0 * np.pi * np.arange(n_boundary) / n_boundary
    pts = np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])
    X, Y = grid.mesh()
    rad = np.hypot(X - cx, Y - cy)
    mask = rad < radius
    for arr in (pts, mask, rad):
        arr.setflags(write=False)
    return DomainDisk(center=(cx, cy), radius=float(radius), n_boundary=int(n_boundary),
                      boundary_points=pts, interior_mask=mask, radial=rad)


def wall_margin(grid: Grid, domain: DomainDisk) -> float:
    """Distance from the circle to the nearest box wall."""
    x0, y0 = grid.origin
    L = grid.h * (grid.nx - 1)
    cx, cy = domain.center
    return min(cx - x0, x0 + L - cx, cy - y0, y0 + grid.h * (grid.ny - 1) - cy) - domain.radius


def check_margin(grid: Grid, domain: DomainDisk, c_max: float | None = None,
                 margin_factor: float = DEFAULT_MARGIN_FACTOR) -> None:
    """Raise unless wall reflections cannot come back to the circle before T."""
    c_max = grid.c_max if c_max is None else c_max
    need = margin_factor * c_max * grid.T / 2.0
    have = wall_margin(grid, domain)
    if have < need - 1e-9 * grid.h:
        raise GeometryError(f"box margin {have:.4g} is below the required {need:.4g} "
                            f"(margin_factor={margin_factor}, c_max={c_max}, T={grid.T:.4g})")


@dataclass(frozen=True)
class BoundarySampling:
    """Bilinear sampling of node fields at the circle points."""
    matrix: sp.csr_matrix
    quad_weight: float

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u.ravel()


def boundary_sampling(domain: DomainDisk, grid: Grid) -> BoundarySampling:
    pts = domain.boundary_points
    fx = (pts[:, 0] - grid.origin[0]) / grid.h
    fy = (pts[:, 1] - grid.origin[1]) / grid.h
    if fx.min() < 0 or fy.min() < 0 or fx.max() > grid.nx - 1 or fy.max() > grid.ny - 1:
        raise GeometryError("boundary point outside the grid")
    ix = np.minimum(np.floor(fx).astype(int), grid.nx - 2)
    iy = np.minimum(np.floor(fy).astype(int), grid.ny - 2)
    tx = fx - ix
    ty = fy - iy
    # snap round-off so that on-node points get a single unit weight
    tx[np.abs(tx) < 1e-12] = 0.0
    ty[np.abs(ty) < 1e-12] = 0.0
    tx[np.abs(tx - 1) < 1e-12] = 1.0
    ty[np.abs(ty - 1) < 1e-12] = 1.0
    rows = np.repeat(np.arange(len(pts)), 4)
    cols = np.column_stack([iy * grid.nx + ix, iy * grid.nx + ix + 1,
                            (iy + 1) * grid.nx + ix, (iy + 1) * grid.nx + ix + 1]).ravel()
    w = np.column_stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]).ravel()
    keep = w != 0.0
    mat = sp.csr_matrix((w[keep], (rows[keep], cols[keep])),
                        shape=(len(pts), grid.nx * grid.ny))
    return BoundarySampling(matrix=mat, quad_weight=domain.arc_weight)


def centered_gradient(field: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered differences on interior nodes, one-sided on the box edges."""
    gy, gx = np.gradient(field, h, edge_order=2)
    return gx, gy


@dataclass(frozen=True)
class TimeBounds:
    R_Omega: float
    r_Omega: float
    D_Omega: float
    alpha_conv: float
    c0: float
    T1_halfbound: float
    T_uniqueness: float

    @property
    def damped_threshold(self) -> float:
        """Observation time above which the series converges with damping."""
        return 2.0 * self.T1_halfbound


def convexity_margin(c: np.ndarray, grid: Grid, x0, mask: np.ndarray | None = None) -> float:
    """min over the mask of ``1 - (x - x0) . grad c / c``."""
    X, Y = grid.mesh()
    gx, gy = centered_gradient(c, grid.h)
    val = 1.0 - ((X - x0[0]) * gx + (Y - x0[1]) * gy) / c
    if mask is not None:
        val = val[mask]
    return float(val.min())


def uniqueness_times(c: np.ndarray, x0, domain: DomainDisk, grid: Grid,
                     c0: float | None = None) -> TimeBounds:
    """Distances from `x0` to the circle and the derived observation times.

    Raises `SpeedConditionError` when the convexity margin is not positive.
    """
    if np.any(c <= 0):
        raise GeometryError("sound speed must be positive")
    if c0 is None:
        c0 = min(float(c.min()), 1.0 / float(c.max()))
    dist_center = math.hypot(x0[0] - domain.center[0], x0[1] - domain.center[1])
    R = dist_center + domain.radius
    r = dist_center - domain.radius if dist_center > domain.radius else 0.0
    D = R - r
    closed = domain.radial <= domain.radius
    alpha = convexity_margin(c, grid, x0, closed)
    if alpha <= 0:
        raise SpeedConditionError(f"speed condition violated: convexity margin {alpha:.4g} <= 0")
    return TimeBounds(R_Omega=R, r_Omega=r, D_Omega=D, alpha_conv=alpha, c0=c0,
                      T1_halfbound=D / (alpha * c0), T_uniqueness=D / c0)
