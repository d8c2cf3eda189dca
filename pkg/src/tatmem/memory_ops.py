"""Discrete time convolutions with memory kernels.

All quadratures are trapezoidal.  The causal convolution

    (Phi * u)(t_n) = int_0^{t_n} Phi(t_n - s) u(s) ds

is a lower-triangular matrix ``F``; the anti-causal one

    (Phi ~* v)(t_n) = int_{t_n}^T Phi(t - t_n) v(t) dt

is built as the exact transpose of ``F`` in the trapezoid inner product
``<x, y> = sum_n W_n x_n y_n``.  Because of that choice the adjoint differs
from a stand-alone trapezoid rule at the two end samples by ``O(dt)``, but the
identity ``<Phi * u, v> = <u, Phi ~* v>`` holds to rounding error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def trapezoid_weights(n_samples: int, dt: float) -> np.ndarray:
    w = np.full(n_samples, dt)
    if n_samples > 1:
        w[0] = w[-1] = 0.5 * dt
    else:
        w[:] = 0.0
    return w


def inner(x: np.ndarray, y: np.ndarray, dt: float) -> float:
    """Trapezoid inner product on ``[0, T]`` along the first axis."""
    w = trapezoid_weights(len(x), dt)
    return float(np.tensordot(w, np.asarray(x) * np.asarray(y), axes=(0, 0)).sum())


def _check(phi, u):
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    if phi.shape[0] != u.shape[0]:
        raise ValueError(f"kernel has {phi.shape[0]} samples but series has {u.shape[0]}")
    return phi, u


def convolve_forward(phi, u, dt: float) -> np.ndarray:
    """Causal trapezoid convolution; trailing axes of `u` are carried along."""
    phi, u = _check(phi, u)
    n = u.shape[0]
    out = np.zeros_like(u)
    for k in range(1, n):
        # sum_j w_{k,j} phi_{k-j} u_j
        seg = phi[k::-1]
        if u.ndim > 1 and seg.ndim == 1:
            seg = seg.reshape((-1,) + (1,) * (u.ndim - 1))
        terms = seg * u[:k + 1]
        out[k] = dt * (terms.sum(axis=0) - 0.5 * terms[0] - 0.5 * terms[-1])
    return out


def forward_matrix(phi, dt: float) -> np.ndarray:
    """Dense matrix of `convolve_forward` for a scalar kernel."""
    phi = np.asarray(phi, dtype=float)
    n = len(phi)
    F = np.zeros((n, n))
    for k in range(1, n):
        F[k, :k + 1] = dt * phi[k::-1]
        F[k, 0] *= 0.5
        F[k, k] *= 0.5
    return F


def adjoint_matrix(phi, dt: float) -> np.ndarray:
    n = len(phi)
    W = trapezoid_weights(n, dt)
    return forward_matrix(phi, dt).T * W[None, :] / W[:, None]


def convolve_adjoint(phi, v, dt: float) -> np.ndarray:
    """Anti-causal convolution, transpose of `convolve_forward` under `inner`."""
    phi, v = _check(phi, v)
    n = v.shape[0]
    W = trapezoid_weights(n, dt)
    shape = (-1,) + (1,) * (v.ndim - 1)
    g = W.reshape(shape) * v
    out = np.zeros_like(v)
    if n < 2:
        return out
    for j in range(n):
        seg = phi[:n - j]
        if v.ndim > 1:
            seg = seg.reshape(shape)
        # column j of the forward matrix halves rows k == j and, for j == 0, every row
        total = (seg * g[j:]).sum(axis=0) - 0.5 * seg[0] * g[j]
        if j == 0:
            total = 0.5 * (total - 0.5 * seg[0] * g[0])
        out[j] = dt * total / W[j]
    return out


def quadratic_form(phi, y, dt: float) -> float:
    """Trapezoid estimate of ``int_0^T (Phi * y) y dt``."""
    return inner(convolve_forward(phi, y, dt), y, dt)


@dataclass(frozen=True)
class Psi:
    """Tail transform ``Psi(t) = -int_t^inf Phi(s) ds`` sampled on a grid."""
    values: np.ndarray
    dt: float
    tail_rate: float | None = None


def psi_exponential(q, alpha_decay: float, times: np.ndarray) -> np.ndarray:
    """``Psi`` for ``Phi = q exp(-alpha t)``; broadcasts `q` against `times`."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(times, dtype=float).reshape((-1,) + (1,) * q.ndim)
    return -(q / alpha_decay) * np.exp(-alpha_decay * t)


def fit_tail_rate(profile: np.ndarray, dt: float) -> float:
    """Decay rate of the last decade (tenth) of samples from a log-linear fit."""
    n = len(profile)
    k = max(3, n // 10)
    tail = profile[-k:] * np.sign(profile[-1])
    if np.any(tail <= 0):
        raise ValueError("tabulated kernel tail has zeros or sign changes; cannot fit decay")
    t = dt * np.arange(n - k, n)
    slope = np.polyfit(t, np.log(tail), 1)[0]
    if slope >= 0:
        raise ValueError(f"tabulated kernel tail does not decay (log-slope {slope:.3g})")
    return -slope


def psi_tabulated(profile, dt: float) -> Psi:
    """Tail integral by trapezoid plus an exponential tail beyond the table."""
    profile = np.asarray(profile, dtype=float)
    if not np.any(profile):
        return Psi(values=np.zeros_like(profile), dt=dt, tail_rate=None)
    rate = fit_tail_rate(profile, dt)
    seg = 0.5 * dt * (profile[1:] + profile[:-1])
    # int_{t_j}^{t_end}, accumulated from the end
    partial = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    tail = profile[-1] / rate
    return Psi(values=-(partial + tail), dt=dt, tail_rate=rate)


@dataclass
class MemoryAccumulator:
    """Running ``m(t) = int_0^t exp(-alpha (t - s)) u(s) ds`` per node."""
    m: np.ndarray
    alpha_decay: float

    @classmethod
    def zeros(cls, shape, alpha_decay: float) -> "MemoryAccumulator":
        return cls(np.zeros(shape), float(alpha_decay))


def exp_memory_step(acc: MemoryAccumulator, u_old, u_new, dt: float) -> MemoryAccumulator:
    """Advance the accumulator by one step (trapezoid on the step interval).

    Summed over steps this reproduces `convolve_forward` with
    ``Phi_j = exp(-alpha j dt)`` exactly.
    """
    e = math.exp(-acc.alpha_decay * dt)
    m = e * acc.m + 0.5 * dt * (e * np.asarray(u_old) + np.asarray(u_new))
    return MemoryAccumulator(m, acc.alpha_decay)
