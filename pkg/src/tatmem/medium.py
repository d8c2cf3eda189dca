"""Coefficient fields, memory kernels and initial-pressure phantoms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .geometry import DomainDisk, Grid, centered_gradient
from . import memory_ops

FieldLike = Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


class MediumError(ValueError):
    pass


class PhantomError(ValueError):
    pass


def smoothstep(s):
    """Quintic C^2 ramp from 0 (s <= 0) to 1 (s >= 1)."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def support_cutoff(grid: Grid, domain: DomainDisk) -> np.ndarray:
    """1 deeper than 2h inside the circle, exactly 0 on and outside it."""
    s = (domain.radius - domain.radial) / (2.0 * grid.h)
    cut = smoothstep(s)
    cut[~domain.interior_mask] = 0.0
    return cut


@dataclass(frozen=True)
class MemoryKernel:
    """``Phi(t, x) = q(x) * profile(t)``.

    The exponential family uses ``profile = exp(-alpha_decay t)``; the
    tabulated family carries ``table`` sampled every ``table_dt``.
    """
    family: str
    q: np.ndarray = field(repr=False)
    alpha_decay: float = 1.0
    table: np.ndarray | None = field(default=None, repr=False)
    table_dt: float | None = None

    def __post_init__(self):
        if self.family not in ("exponential", "tabulated"):
            raise MediumError(f"unknown kernel family {self.family!r}")
        if self.family == "exponential" and not self.alpha_decay > 0:
            raise MediumError("alpha_decay must be positive")
        if self.family == "tabulated" and (self.table is None or not self.table_dt):
            raise MediumError("tabulated kernel needs table and table_dt")

    @property
    def active(self) -> bool:
        return bool(np.any(self.q))

    def profile(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.family == "exponential":
            return np.exp(-self.alpha_decay * times)
        grid_t = self.table_dt * np.arange(len(self.table))
        if times.max(initial=0.0) > grid_t[-1] + 1e-12:
            raise MediumError("tabulated kernel is shorter than the requested time span")
        return np.interp(times, grid_t, self.table)

    def psi_profile(self, times) -> np.ndarray:
        """Temporal factor of ``Psi(t, x) = -int_t^inf Phi(s, x) ds``."""
        times = np.asarray(times, dtype=float)
        if self.family == "exponential":
            return -np.exp(-self.alpha_decay * times) / self.alpha_decay
        psi = memory_ops.psi_tabulated(self.table, self.table_dt)
        grid_t = self.table_dt * np.arange(len(self.table))
        return np.interp(times, grid_t, psi.values)

    @property
    def psi0(self) -> np.ndarray:
        """``Psi(0, x)``, a non-positive field."""
        return self.q * float(self.psi_profile(np.array([0.0]))[0])

    def psi_kernel(self) -> "MemoryKernel":
        """The kernel ``Psi`` in the same representation."""
        if self.family == "exponential":
            # -q/alpha * exp(-alpha t): same family with a signed amplitude
            return MemoryKernel("exponential", -self.q / self.alpha_decay, self.alpha_decay)
        psi = memory_ops.psi_tabulated(self.table, self.table_dt)
        return MemoryKernel("tabulated", self.q, table=psi.values, table_dt=self.table_dt)


def exponential_kernel(q, alpha_decay: float) -> MemoryKernel:
    return MemoryKernel("exponential", np.asarray(q, dtype=float), float(alpha_decay))


@dataclass(frozen=True)
class Medium:
    c: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    kernel: MemoryKernel
    c0: float

    @property
    def q(self) -> np.ndarray:
        return self.kernel.q

    @property
    def c_max(self) -> float:
        return float(self.c.max())

    @property
    def p(self) -> np.ndarray:
        """Potential of the integrated system, ``b - Psi(0, .)``."""
        return self.b - self.kernel.psi0

    def without_attenuation(self) -> "Medium":
        """Same speed with ``a = b = q = 0``."""
        z = np.zeros_like(self.c)
        return Medium(self.c, z, z.copy(), MemoryKernel("exponential", z.copy(), 1.0), self.c0)


@dataclass
class CoefficientSpec:
    """Closed-form or sampled coefficients; callables receive ``(X, Y)``."""
    c: FieldLike = 1.0
    a: FieldLike = 0.0
    b: FieldLike = 0.0
    q: FieldLike = 0.0
    alpha_decay: float = 1.0
    kernel_family: str = "exponential"
    kernel_table: np.ndarray | None = None
    kernel_table_dt: float | None = None
    c0: float | None = None


def _sample(value: FieldLike, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if callable(value):
        out = np.asarray(value(X, Y), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    return np.broadcast_to(out, X.shape).astype(float, copy=True)


def _first_bad(mask: np.ndarray, values: np.ndarray, grid: Grid) -> str:
    iy, ix = np.argwhere(mask)[0]
    return (f"node (ix={ix}, iy={iy}) at ({grid.x[ix]:.4g}, {grid.y[iy]:.4g}) "
            f"has value {values[iy, ix]:.6g}")


def validate_medium(m: Medium, grid: Grid, domain: DomainDisk) -> None:
    outside = ~domain.interior_mask
    for name, arr in (("c", m.c), ("a", m.a), ("b", m.b), ("q", m.q)):
        if not np.all(np.isfinite(arr)):
            raise MediumError(f"{name} has non-finite values: " + _first_bad(~np.isfinite(arr), arr, grid))
    if not m.c0 > 0:
        raise MediumError(f"c0 must be positive, got {m.c0}")
    low = m.c < m.c0 * (1 - 1e-12)
    if low.any():
        raise MediumError(f"c below c0={m.c0:.6g}: " + _first_bad(low, m.c, grid))
    high = m.c > (1 + 1e-12) / m.c0
    if high.any():
        raise MediumError(f"c above 1/c0={1 / m.c0:.6g}: " + _first_bad(high, m.c, grid))
    for name, arr in (("a", m.a), ("b", m.b), ("q", m.q)):
        neg = arr < 0
        if neg.any():
            raise MediumError(f"{name} must be non-negative: " + _first_bad(neg, arr, grid))
    for name, arr in (("a", m.a), ("b", m.b), ("q", m.q), ("c - 1", m.c - 1.0)):
        bad = outside & (arr != 0)
        if bad.any():
            raise MediumError(f"{name} must vanish outside the disk: " + _first_bad(bad, arr, grid))


def make_medium(spec: CoefficientSpec, grid: Grid, domain: DomainDisk) -> Medium:
    """Sample the coefficients, cut them off to the disk and validate.

    Sign violations are reported before the cutoff so that a negative value
    anywhere in the specification is an error.
    """
    X, Y = grid.mesh()
    raw = {k: _sample(getattr(spec, k), X, Y) for k in ("c", "a", "b", "q")}
    for name in ("a", "b", "q"):
        neg = raw[name] < 0
        if neg.any():
            raise MediumError(f"{name} must be non-negative: " + _first_bad(neg, raw[name], grid))
    if np.any(raw["c"] <= 0):
        raise MediumError("c must be positive: " + _first_bad(raw["c"] <= 0, raw["c"], grid))
    cut = support_cutoff(grid, domain)
    c = 1.0 + cut * (raw["c"] - 1.0)
    a, b, q = (cut * raw[k] for k in ("a", "b", "q"))
    kernel = MemoryKernel(spec.kernel_family, q, spec.alpha_decay,
                          None if spec.kernel_table is None else np.asarray(spec.kernel_table, float),
                          spec.kernel_table_dt)
    c0 = spec.c0 if spec.c0 is not None else min(float(c.min()), 1.0 / float(c.max()))
    medium = Medium(c=c, a=a, b=b, kernel=kernel, c0=c0)
    validate_medium(medium, grid, domain)
    return medium


@dataclass(frozen=True)
class SpeedReport:
    ok: bool
    margin: float
    argmin: tuple[float, float]


def check_speed_condition(c: np.ndarray, grid: Grid, x0) -> SpeedReport:
    """min over box-interior nodes of ``c - (x - x0) . grad c``."""
    X, Y = grid.mesh()
    gx, gy = centered_gradient(c, grid.h)
    val = c - ((X - x0[0]) * gx + (Y - x0[1]) * gy)
    inner = val[1:-1, 1:-1]
    iy, ix = np.unravel_index(np.argmin(inner), inner.shape)
    margin = float(inner[iy, ix])
    return SpeedReport(ok=margin > 0, margin=margin,
                       argmin=(float(grid.x[ix + 1]), float(grid.y[iy + 1])))


@dataclass
class AttenuationReport:
    value_ok: bool
    first_diff_ok: bool
    second_diff_ok: bool
    pd_ok: bool
    worst: dict
    pd_min_ratio: float
    q_nonnegative: bool = True
    damping_nonnegative: bool = True

    @property
    def ok(self) -> bool:
        return (self.value_ok and self.first_diff_ok and self.second_diff_ok and self.pd_ok
                and self.q_nonnegative and self.damping_nonnegative)


def check_profile(profile: np.ndarray, dt: float, n_probe: int = 100, seed: int = 0,
                  cond_rel_tol: float = 1e-10, pd_rel_tol: float = 1e-8) -> AttenuationReport:
    """Sign pattern of a sampled kernel and a random quadratic-form probe.

    The j-th check is ``(-1)^j Delta^j Phi >= -tol`` with plain forward
    differences; the probe evaluates the trapezoid quadratic form on
    `n_probe` white-noise series.
    """
    profile = np.asarray(profile, dtype=float)
    scale = float(np.abs(profile).max()) if profile.size else 0.0
    tol = cond_rel_tol * scale
    worst = {}
    oks = []
    for j in range(3):
        d = np.diff(profile, n=j) * (-1) ** j
        if d.size == 0:
            oks.append(True)
            continue
        k = int(np.argmin(d))
        worst[j] = {"min": float(d[k]), "index": k, "t": k * dt}
        oks.append(bool(d[k] >= -tol))
    rng = np.random.default_rng(seed)
    ratio = np.inf
    pd_ok = True
    n = len(profile)
    for _ in range(n_probe):
        y = rng.standard_normal(n)
        energy = memory_ops.inner(y, y, dt)
        qf = memory_ops.quadratic_form(profile, y, dt)
        if energy > 0:
            ratio = min(ratio, qf / energy)
        if qf < -pd_rel_tol * max(scale, 1e-300) * energy:
            pd_ok = False
    return AttenuationReport(oks[0], oks[1], oks[2], pd_ok, worst, float(ratio))


def check_attenuation_condition(kernel: MemoryKernel, T: float, dt: float, n_probe: int = 100,
                                seed: int = 0, a: np.ndarray | None = None) -> AttenuationReport:
    """Discrete version of the attenuation hypotheses on ``[0, T]``.

    The kernel is separable, so the time checks run on its profile and the
    amplitude is only required to be non-negative.
    """
    nt = int(round(T / dt))
    rep = check_profile(kernel.profile(dt * np.arange(nt + 1)), dt, n_probe, seed)
    rep.q_nonnegative = bool(np.all(kernel.q >= 0))
    if a is not None:
        rep.damping_nonnegative = bool(np.all(np.asarray(a) >= 0))
    return rep


@dataclass(frozen=True)
class Phantom:
    f: np.ndarray = field(repr=False)
    kind: str = "custom"
    params: tuple = ()


def gaussian_bump(X, Y, center, width, amplitude=1.0):
    """Gaussian of standard deviation width/3 tapered to zero at radius `width`."""
    r = np.hypot(X - center[0], Y - center[1])
    return amplitude * np.exp(-0.5 * (3.0 * r / width) ** 2) * smoothstep((width - r) / (0.3 * width))


def smoothed_disk(X, Y, center, radius, amplitude=1.0, edge=0.05):
    r = np.hypot(X - center[0], Y - center[1])
    return amplitude * smoothstep((radius + 0.5 * edge - r) / edge)


def annulus(X, Y, center, r_in, r_out, amplitude=1.0, edge=0.05):
    r = np.hypot(X - center[0], Y - center[1])
    return (amplitude * smoothstep((r - r_in + 0.5 * edge) / edge)
            * smoothstep((r_out + 0.5 * edge - r) / edge))


_PHANTOMS = {
    "gaussian_bumps": (gaussian_bump, lambda p: p["width"]),
    "smoothed_disks": (smoothed_disk, lambda p: p["radius"] + 0.5 * p.get("edge", 0.05)),
    "annulus": (annulus, lambda p: p["r_out"] + 0.5 * p.get("edge", 0.05)),
}


def make_phantom(kind: str, params, grid: Grid, domain: DomainDisk) -> Phantom:
    """Sum of features of one `kind`; `params` is a list of keyword dicts.

    Every feature must be supported at least two cells inside the circle so
    that the Dirichlet band of the reconstruction sees zero initial data.
    """
    if kind not in _PHANTOMS:
        raise PhantomError(f"unknown phantom kind {kind!r}; choose from {sorted(_PHANTOMS)}")
    fn, support = _PHANTOMS[kind]
    X, Y = grid.mesh()
    f = np.zeros(grid.shape)
    for p in params or ():
        p = dict(p)
        center = tuple(p.pop("center", (0.0, 0.0)))
        p_full = dict(p, center=center)
        reach = np.hypot(center[0] - domain.center[0], center[1] - domain.center[1]) + support(p_full)
        if reach >= domain.radius - 2 * grid.h:
            raise PhantomError(f"{kind} feature at {center} reaches radius {reach:.4g}, "
                               f"overlapping the boundary band of the disk (radius {domain.radius})")
        f += fn(X, Y, center=center, **p)
    f[~domain.interior_mask] = 0.0
    if not np.all(np.isfinite(f)):
        raise PhantomError("phantom has non-finite values")
    return Phantom(f=f, kind=kind, params=tuple(dict(p) for p in (params or ())))


def random_phantom(grid: Grid, domain: DomainDisk, rng: np.random.Generator,
                   n_bumps: int = 3, width_range=(0.12, 0.3), fill: float = 0.85) -> Phantom:
    """Random signed gaussian bumps kept inside `fill` times the radius."""
    params = []
    for _ in range(n_bumps):
        w = float(rng.uniform(*width_range))
        rmax = max(fill * domain.radius - w - 2 * grid.h, 0.0)
        rho = rmax * np.sqrt(rng.uniform())
        th = rng.uniform(0, 2 * np.pi)
        params.append({"center": (domain.center[0] + rho * np.cos(th), domain.center[1] + rho * np.sin(th)),
                       "width": w, "amplitude": float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0))})
    return make_phantom("gaussian_bumps", params, grid, domain)


def l2_norm(f: np.ndarray, grid: Grid, mask: np.ndarray | None = None,
            weight: np.ndarray | None = None) -> float:
    """``sqrt(sum w f^2 h^2)`` over `mask`; ``weight=c**-2`` gives L2(c^-2 dx)."""
    g = f * f if weight is None else weight * f * f
    if mask is not None:
        g = g[mask]
    return float(np.sqrt(g.sum() * grid.h ** 2))
