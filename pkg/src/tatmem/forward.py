"""Explicit leapfrog solvers for the attenuated wave problems.

One engine integrates

    c^-2 (X_tt + a X_t + beta X + M) = Laplace X,

where the memory force ``M`` is either ``Phi * X`` (``"value"`` mode, the
original problem for ``u``) or ``Psi * X_t`` (``"rate"`` mode, the problem for
the time integral ``ubar`` and the time-reversed system).  Damping is
centered, the memory force is evaluated at the current level, and the first
step comes from a second-order Taylor expansion.

Two energies are tracked.  The node-wise energy at integer levels uses a
centered ``X_t`` and the edge-based gradient that matches the 5-point
Laplacian; together with the trapezoid-in-time dissipation it is conserved to
``O(dt^2)``.  The staggered energy at half levels obeys the scheme's exact
discrete balance

    E^{n+1/2} - E^{n-1/2} = -2 dt h^2 sum c^-2 (a (dX^n)^2 + M^n dX^n),

with ``dX^n`` the centered difference, so it is conserved to rounding error
when the box walls are reflecting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import BoundarySampling, DomainDisk, Grid, boundary_sampling
from .medium import Medium, MemoryKernel


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, step: int, value: float):
        super().__init__(f"solution blew up at step {step} (max |u| = {value:.3g})")
        self.step = step


def laplacian(u: np.ndarray, h: float, out: np.ndarray | None = None) -> np.ndarray:
    """5-point Laplacian on interior nodes; zero on the box edges."""
    if out is None:
        out = np.zeros_like(u)
    out[1:-1, 1:-1] = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
                       - 4.0 * u[1:-1, 1:-1]) / (h * h)
    return out


def gradient_density(u: np.ndarray, h: float) -> np.ndarray:
    """Per-node share of ``sum over edges (du/h)^2`` (half of each edge)."""
    dx = np.diff(u, axis=1) / h
    dy = np.diff(u, axis=0) / h
    dx2 = 0.5 * dx * dx
    dy2 = 0.5 * dy * dy
    e = np.zeros_like(u)
    e[:, :-1] += dx2
    e[:, 1:] += dx2
    e[:-1, :] += dy2
    e[1:, :] += dy2
    return e


def gradient_pairing(u: np.ndarray, v: np.ndarray, h: float) -> float:
    """Edge sum ``sum (du/h)(dv/h)``, the discrete H_D inner product / h^2."""
    return float((np.diff(u, axis=1) * np.diff(v, axis=1)).sum()
                 + (np.diff(u, axis=0) * np.diff(v, axis=0)).sum()) / (h * h)


def energy_density(u: np.ndarray, ut: np.ndarray, h: float, inv_c2: np.ndarray,
                   potential: np.ndarray | None = None) -> np.ndarray:
    """``|grad u|^2 + c^-2 beta u^2 + c^-2 u_t^2`` per node."""
    e = gradient_density(u, h) + inv_c2 * ut * ut
    if potential is not None:
        e += inv_c2 * potential * u * u
    return e


def energy(u: np.ndarray, ut: np.ndarray, grid: Grid, medium: Medium | None = None,
           mask: np.ndarray | None = None, potential: np.ndarray | None = None) -> float:
    """Quadrature ``h^2 sum`` of the energy density over `mask`.

    With a medium the speed weight is ``c^-2`` and the potential defaults to
    ``b``; without one both are taken as ``c = 1`` and zero.
    """
    if medium is None:
        inv_c2 = np.ones_like(u)
    else:
        inv_c2 = medium.c ** -2
        if potential is None:
            potential = medium.b
    e = energy_density(u, ut, grid.h, inv_c2, potential)
    if mask is not None:
        e = e[mask]
    return float(e.sum() * grid.h ** 2)


class _Memory:
    """Memory force ``M^n`` on the kernel support, advanced one level at a time."""

    def __init__(self, kernel: MemoryKernel, mode: str, dt: float, nt: int, shape):
        if mode not in ("value", "rate"):
            raise ValueError(mode)
        self.mode = mode
        self.dt = dt
        self.idx = np.flatnonzero(kernel.q)
        self.amp = kernel.q.ravel()[self.idx]
        self.force = np.zeros(shape)
        self._flat = self.force.reshape(-1)
        self.exp = kernel.family == "exponential"
        if self.exp:
            self.e = math.exp(-kernel.alpha_decay * dt)
            self.m = np.zeros(len(self.idx))
        else:
            self.profile = kernel.profile(dt * np.arange(nt + 2))
            self.hist = np.zeros((nt + 1, len(self.idx)))
            if mode == "rate":
                self.pair = 0.5 * (self.profile[:-1] + self.profile[1:])
        self.prev = None

    def advance(self, n: int, x: np.ndarray) -> np.ndarray:
        xs = x.reshape(-1)[self.idx]
        if self.exp:
            if n > 0:
                if self.mode == "value":
                    self.m = self.e * self.m + 0.5 * self.dt * (self.e * self.prev + xs)
                else:
                    self.m = self.e * self.m + 0.5 * (1.0 + self.e) * (xs - self.prev)
            val = self.amp * self.m
        else:
            self.hist[n] = xs
            if n == 0:
                val = np.zeros_like(xs)
            elif self.mode == "value":
                w = self.profile[n::-1].copy()
                w[0] *= 0.5
                w[-1] *= 0.5
                val = self.amp * (self.dt * (w @ self.hist[:n + 1]))
            else:
                inc = np.diff(self.hist[:n + 1], axis=0)
                # increment k (1..n) pairs with kernel samples n-k and n-k+1
                val = self.amp * (self.pair[n - 1::-1] @ inc)
        self.prev = xs
        self._flat[self.idx] = val
        return self.force


@dataclass
class BoundaryTrace:
    """Samples ``values[n, k]`` at ``t_n = n dt`` and angle ``2 pi k / n_b``."""
    values: np.ndarray
    dt: float
    radius: float
    kind: str = "raw"

    def __post_init__(self):
        if self.kind not in ("raw", "integrated"):
            raise ValueError(f"unknown trace kind {self.kind!r}")

    @property
    def nt(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_boundary(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return self.nt * self.dt

    @property
    def arc_step(self) -> float:
        return 2.0 * np.pi * self.radius / self.n_boundary

    def time_derivative(self) -> np.ndarray:
        return np.gradient(self.values, self.dt, axis=0, edge_order=2)

    def tangential_derivative(self) -> np.ndarray:
        v = self.values
        return (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2.0 * self.arc_step)


def integrate_trace(raw: BoundaryTrace) -> BoundaryTrace:
    """Cumulative trapezoid integral in time; zero at ``t = 0``."""
    if raw.kind != "raw":
        raise ValueError(f"expected a raw trace, got kind {raw.kind!r}")
    v = raw.values
    out = np.zeros_like(v)
    out[1:] = np.cumsum(0.5 * raw.dt * (v[1:] + v[:-1]), axis=0)
    return BoundaryTrace(out, raw.dt, raw.radius, "integrated")


def trace_h1_norm(trace: BoundaryTrace) -> float:
    """H^1 norm on ``[0, T] x circle`` with trapezoid weights in time."""
    if trace.nt < 2:
        raise ValueError("need at least 3 time samples")
    dens = trace.values ** 2 + trace.time_derivative() ** 2 + trace.tangential_derivative() ** 2
    w = np.full(trace.nt + 1, trace.dt)
    w[0] = w[-1] = 0.5 * trace.dt
    return float(np.sqrt((w @ dens).sum() * trace.arc_step))


@dataclass
class EnergyTrace:
    t: np.ndarray
    E_box: np.ndarray
    E_Omega: np.ndarray
    E_Omega_c: np.ndarray
    diss_damping: np.ndarray
    diss_memory: np.ndarray
    E_half: np.ndarray = field(default=None, repr=False)
    diss_half: np.ndarray = field(default=None, repr=False)

    @property
    def extended_energy(self) -> np.ndarray:
        return self.E_box + self.diss_damping + self.diss_memory

    @property
    def extended_half(self) -> np.ndarray:
        """Staggered energy plus its exact dissipation; constant up to rounding."""
        return self.E_half + self.diss_half

    def drift(self, upto: int | None = None) -> float:
        ext = self.extended_energy[: None if upto is None else upto + 1]
        return float(np.abs(ext - ext[0]).max() / ext[0]) if ext[0] > 0 else 0.0

    def extended_Omega(self, n: int = -1) -> float:
        """Extended energy of the disk: all attenuation lives inside it."""
        return float(self.E_Omega[n] + self.diss_damping[n] + self.diss_memory[n])

    def rows(self):
        for n in range(len(self.t)):
            yield (n, self.t[n], self.E_box[n], self.E_Omega[n], self.E_Omega_c[n],
                   self.diss_damping[n], self.diss_memory[n], self.extended_energy[n])


@dataclass
class ForwardResult:
    trace: BoundaryTrace
    energy: EnergyTrace | None
    final: np.ndarray
    final_rate: np.ndarray
    snapshots: dict = field(default_factory=dict, repr=False)
    history: np.ndarray | None = field(default=None, repr=False)


def _cumtrapz(rate: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(rate)
    out[1:] = np.cumsum(0.5 * dt * (rate[1:] + rate[:-1]))
    return out


@dataclass
class LeapfrogOutput:
    trace: np.ndarray
    final: np.ndarray
    final_rate: np.ndarray
    energy: EnergyTrace | None
    snapshots: dict
    history: np.ndarray | None


def leapfrog(grid: Grid, c: np.ndarray, a: np.ndarray, beta: np.ndarray,
             memory: tuple[MemoryKernel, str] | None, x0: np.ndarray, v0: np.ndarray, *,
             sampling: BoundarySampling | None = None,
             region_mask: np.ndarray | None = None,
             update_mask: np.ndarray | None = None,
             dirichlet: tuple[np.ndarray, Callable[[int, np.ndarray], np.ndarray]] | None = None,
             track_energy: bool = True, snapshot_stride: int = 0,
             keep_mask: np.ndarray | None = None, absorbing: bool = False) -> LeapfrogOutput:
    """Generic driver; see the module docstring for the discretization.

    `update_mask` restricts the update to a node set; every other node is held
    at zero except the band of `dirichlet`, which is reset each level to
    ``fn(n, x)``; `x` is the level already updated elsewhere, so a closure
    may read interior values.  Energies are summed over the whole array, which is
    the conserved quantity only for the reflecting box.
    """
    h, dt, nt = grid.h, grid.dt, grid.nt
    if grid.courant > grid.cfl_safety * (1 + 1e-12) or c.max() > grid.c_max * (1 + 1e-12):
        raise SolverError(f"CFL violated: c_max={c.max():.4g} exceeds the grid design speed "
                          f"{grid.c_max:.4g}")
    if nt < 2:
        raise SolverError("need at least two time steps")
    c2 = c * c
    inv_c2 = 1.0 / c2
    lam = 0.5 * dt * a
    denom = 1.0 / (1.0 + lam)
    v0 = np.asarray(v0, dtype=float)
    mem = _Memory(memory[0], memory[1], dt, nt, grid.shape) if memory and memory[0].active else None
    zero = np.zeros(grid.shape)
    frozen = None
    if update_mask is not None:
        frozen = ~update_mask
        if dirichlet is not None:
            frozen &= ~dirichlet[0]

    def force(n, x):
        return mem.advance(n, x) if mem is not None else zero

    def constrain(n, x, x_old):
        if frozen is not None:
            x[frozen] = 0.0
        else:
            _walls(x, x_old, c, dt, h, absorbing)
        if dirichlet is not None:
            x[dirichlet[0]] = dirichlet[1](n, x)

    u_prev = np.array(x0, dtype=float)
    constrain(0, u_prev, u_prev)
    scale = max(float(np.abs(u_prev).max()), float(np.abs(v0).max()) * grid.T, 1e-300)
    lap = np.zeros(grid.shape)

    n_b = 0 if sampling is None else sampling.matrix.shape[0]
    trace = np.zeros((nt + 1, n_b))
    snaps = {}
    hist = None if keep_mask is None else np.zeros((nt + 1, int(keep_mask.sum())))

    def observe(n, x):
        if sampling is not None:
            trace[n] = sampling(x)
        if hist is not None:
            hist[n] = x[keep_mask]
        if snapshot_stride and n % snapshot_stride == 0:
            snaps[n] = x.copy()

    if track_energy:
        masks = {"box": None}
        if region_mask is not None:
            masks["Omega"] = region_mask
            masks["Omega_c"] = ~region_mask
        E = {k: np.zeros(nt + 1) for k in masks}
        rate_d = np.zeros(nt + 1)
        rate_m = np.zeros(nt + 1)
        E_half = np.zeros(nt)
        diss_half = np.zeros(nt)

        def record(n, x, xt, Mn):
            dens = energy_density(x, xt, h, inv_c2, beta)
            for k, msk in masks.items():
                E[k][n] = dens.sum() if msk is None else dens[msk].sum()
            rate_d[n] = 2.0 * float((inv_c2 * a * xt * xt).sum())
            rate_m[n] = 2.0 * float((inv_c2 * Mn * xt).sum())

        def half(x_new, x_old):
            d = (x_new - x_old) / dt
            return float((inv_c2 * d * d).sum() + gradient_pairing(x_new, x_old, h)
                         + (inv_c2 * beta * x_new * x_old).sum())

    observe(0, u_prev)
    M = force(0, u_prev)
    laplacian(u_prev, h, lap)
    u_curr = u_prev + dt * v0 + 0.5 * dt * dt * (c2 * lap - a * v0 - beta * u_prev - M)
    constrain(1, u_curr, u_prev)
    if track_energy:
        record(0, u_prev, v0, M)
        E_half[0] = half(u_curr, u_prev)

    u_old = None
    for n in range(1, nt):
        observe(n, u_curr)
        M = force(n, u_curr)
        laplacian(u_curr, h, lap)
        # (1 + a dt/2) u^{n+1} = 2u^n - (1 - a dt/2) u^{n-1} + dt^2 (c^2 Lap u - beta u - M)
        u_next = (2.0 * u_curr - (1.0 - lam) * u_prev
                  + dt * dt * (c2 * lap - beta * u_curr - M)) * denom
        constrain(n + 1, u_next, u_curr)
        if track_energy:
            record(n, u_curr, (u_next - u_prev) / (2.0 * dt), M)
            E_half[n] = half(u_next, u_curr)
            diss_half[n] = diss_half[n - 1] + dt * (rate_d[n] + rate_m[n])
        if n % 16 == 0:
            peak = float(np.abs(u_next).max())
            if not math.isfinite(peak) or peak > 1e6 * scale:
                raise BlowUpError(n + 1, peak)
        u_old, u_prev, u_curr = u_prev, u_curr, u_next

    observe(nt, u_curr)
    M = force(nt, u_curr)
    ut_end = (3.0 * u_curr - 4.0 * u_prev + u_old) / (2.0 * dt)
    peak = float(np.abs(u_curr).max())
    if not math.isfinite(peak) or peak > 1e6 * scale:
        raise BlowUpError(nt, peak)
    etrace = None
    if track_energy:
        record(nt, u_curr, ut_end, M)
        hp = h * h
        etrace = EnergyTrace(
            t=grid.times, E_box=E["box"] * hp,
            E_Omega=E.get("Omega", np.full(nt + 1, np.nan)) * hp,
            E_Omega_c=E.get("Omega_c", np.full(nt + 1, np.nan)) * hp,
            diss_damping=_cumtrapz(rate_d, dt) * hp, diss_memory=_cumtrapz(rate_m, dt) * hp,
            E_half=E_half * hp, diss_half=diss_half * hp)
    return LeapfrogOutput(trace=trace, final=u_curr, final_rate=ut_end, energy=etrace,
                          snapshots=snaps, history=hist)


def _walls(u_new, u_old, c, dt, h, absorbing):
    if not absorbing:
        u_new[0, :] = u_new[-1, :] = 0.0
        u_new[:, 0] = u_new[:, -1] = 0.0
        return
    # first-order outflow u_t + c u_n = 0 on each wall, upwinded
    for sl_edge, sl_in in (((0, slice(None)), (1, slice(None))),
                           ((-1, slice(None)), (-2, slice(None))),
                           ((slice(None), 0), (slice(None), 1)),
                           ((slice(None), -1), (slice(None), -2))):
        k = c[sl_edge] * dt / h
        u_new[sl_edge] = u_old[sl_edge] - k * (u_old[sl_edge] - u_old[sl_in])


def _phantom_field(f) -> np.ndarray:
    return np.asarray(getattr(f, "f", f), dtype=float)


def _check_T(grid: Grid, T: float | None):
    if T is not None and abs(T - grid.T) > 1e-9 * max(T, 1.0):
        raise SolverError(f"T={T} does not match the grid's nt*dt={grid.T}")


def _check_support(f: np.ndarray, domain: DomainDisk):
    if np.any(f[~domain.interior_mask] != 0):
        raise SolverError("initial pressure must vanish outside the disk")


def solve_forward(medium: Medium, f, grid: Grid, domain: DomainDisk, T: float | None = None, *,
                  snapshot_stride: int = 0, keep_mask: np.ndarray | None = None,
                  absorbing: bool = False, track_energy: bool = True) -> ForwardResult:
    """Attenuated wave with ``u(0) = f``, ``u_t(0) = -a f``; records ``u`` on the circle."""
    _check_T(grid, T)
    f = _phantom_field(f)
    _check_support(f, domain)
    out = leapfrog(grid, medium.c, medium.a, medium.b, (medium.kernel, "value"), f, -medium.a * f,
                   sampling=boundary_sampling(domain, grid), region_mask=domain.interior_mask,
                   snapshot_stride=snapshot_stride, keep_mask=keep_mask, absorbing=absorbing,
                   track_energy=track_energy)
    return ForwardResult(BoundaryTrace(out.trace, grid.dt, domain.radius, "raw"), out.energy,
                         out.final, out.final_rate, out.snapshots, out.history)


def check_potential(medium: Medium) -> np.ndarray:
    p = medium.p
    if np.any(p < 0):
        iy, ix = np.argwhere(p < 0)[0]
        raise SolverError(f"p = b - Psi(0) is negative ({p[iy, ix]:.3g}) at node ({ix}, {iy})")
    return p


def solve_integrated_forward(medium: Medium, f, grid: Grid, domain: DomainDisk,
                             T: float | None = None, *, snapshot_stride: int = 0,
                             keep_mask: np.ndarray | None = None,
                             track_energy: bool = True) -> ForwardResult:
    """Time integral ``ubar`` with ``ubar(0) = 0``, ``ubar_t(0) = f``.

    The memory force ``Psi * ubar_t`` is accumulated on backward differences
    of ``ubar``.
    """
    _check_T(grid, T)
    f = _phantom_field(f)
    _check_support(f, domain)
    p = check_potential(medium)
    out = leapfrog(grid, medium.c, medium.a, p, (medium.kernel.psi_kernel(), "rate"),
                   np.zeros_like(f), f, sampling=boundary_sampling(domain, grid),
                   region_mask=domain.interior_mask, snapshot_stride=snapshot_stride,
                   keep_mask=keep_mask, track_energy=track_energy)
    return ForwardResult(BoundaryTrace(out.trace, grid.dt, domain.radius, "integrated"),
                         out.energy, out.final, out.final_rate, out.snapshots, out.history)
