import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import RADIUS, small_problem, two_bumps
from oracles import dense_energy_sine_window, free_space_gaussian
from tatmem import CoefficientSpec, build_grid, grid_for_disk, make_disk, make_medium, make_phantom
from tatmem.memory_ops import quadratic_form
from tatmem.forward import (BoundaryTrace, SolverError, energy, integrate_trace, solve_forward,
                            solve_integrated_forward, trace_h1_norm)


def _wall_step(grid, domain, c_max):
    """Last step before anything leaving the disk can reach the walls."""
    margin = grid.x[-1] - domain.center[0] - domain.radius
    return int(margin / c_max / grid.dt)


def test_zero_initial_data(coarse):
    grid, domain, medium, _ = coarse
    zero = np.zeros(grid.shape)
    res = solve_forward(medium, zero, grid, domain)
    assert not res.trace.values.any() and not res.final.any()
    assert not res.energy.E_box.any() and not res.energy.extended_energy.any()
    assert not solve_integrated_forward(medium, zero, grid, domain).trace.values.any()


def test_support_and_time_preconditions(coarse):
    grid, domain, medium, _ = coarse
    f = np.zeros(grid.shape)
    f[0, 0] = 1.0
    with pytest.raises(SolverError, match="vanish outside"):
        solve_forward(medium, f, grid, domain)
    with pytest.raises(SolverError, match="does not match"):
        solve_forward(medium, np.zeros(grid.shape), grid, domain, T=2 * grid.T)


def test_negative_potential_rejected(coarse):
    grid, domain, medium, ph = coarse
    from dataclasses import replace
    bad = replace(medium, b=medium.b - 10.0 * domain.interior_mask)
    with pytest.raises(SolverError, match="negative"):
        solve_integrated_forward(bad, ph, grid, domain)


def test_hankel_oracle_self_checks():
    rho = np.linspace(0, 0.4, 9)
    assert np.allclose(free_space_gaussian(rho, 0.0, 0.08)[0], np.exp(-rho ** 2 / (2 * 0.08 ** 2)),
                       atol=1e-10)
    frozen = free_space_gaussian(0.5, [0.5, 0.6], 0.08)[:, 0]
    assert frozen == pytest.approx([0.11178438, -0.05788789], abs=1e-8)


def test_free_space_trace_against_hankel_oracle():
    sigma, x0, T, h = 0.08, (0.15, 0.0), 1.4, 0.008
    grid = grid_for_disk(RADIUS, T, 1.0, h)
    domain = make_disk(grid, RADIUS)
    medium = make_medium(CoefficientSpec(), grid, domain)
    X, Y = grid.mesh()
    f = np.exp(-((X - x0[0]) ** 2 + (Y - x0[1]) ** 2) / (2 * sigma ** 2))
    f[~domain.interior_mask] = 0.0
    res = solve_forward(medium, f, grid, domain)
    theta = 2 * np.pi * np.arange(res.trace.n_boundary) / res.trace.n_boundary
    rho = np.hypot(RADIUS * np.cos(theta) - x0[0], RADIUS * np.sin(theta) - x0[1])
    oracle = free_space_gaussian(rho, grid.times, sigma)
    err = np.linalg.norm(res.trace.values - oracle) / np.linalg.norm(oracle)
    assert err < 0.02


def test_undamped_energy_conserved_before_wall():
    grid, domain, medium = small_problem(T=1.5, h=0.02, a=0.0, q=0.0, c=1.0, c_max=1.0)
    res = solve_forward(medium, two_bumps(grid, domain), grid, domain)
    n = _wall_step(grid, domain, 1.0)
    E = res.energy.E_box[: n + 1]
    assert np.abs(E - E[0]).max() / E[0] < 0.005
    # the staggered energy is an exact invariant of the scheme
    Eh = res.energy.extended_half
    assert np.abs(Eh - Eh[0]).max() / Eh[0] < 1e-10


def test_attenuated_energy_decreases_and_extended_energy_is_kept():
    grid, domain, medium = small_problem(T=1.5, h=0.02)
    res = solve_forward(medium, two_bumps(grid, domain), grid, domain)
    n = _wall_step(grid, domain, grid.c_max)
    E = res.energy.E_box[: n + 1]
    assert np.all(np.diff(E) <= 1e-10 * E[0])
    assert E[-1] < 0.95 * E[0]
    assert res.energy.drift(n) < 0.01
    Eh = res.energy.extended_half
    assert np.abs(Eh - Eh[0]).max() / Eh[0] < 1e-10


def test_memory_quadratic_form_nonnegative_on_node_histories():
    grid, domain, medium = small_problem(T=1.5, h=0.04)
    ph = two_bumps(grid, domain)
    keep = domain.interior_mask & (np.random.default_rng(0).uniform(size=grid.shape) < 0.2)
    u = solve_forward(medium, ph, grid, domain, keep_mask=keep, track_energy=False).history
    ut = np.gradient(u, grid.dt, axis=0, edge_order=2)
    profile = medium.kernel.profile(grid.times)
    for n in (20, grid.nt // 2, grid.nt + 1):
        y = ut[:n]
        scale = float((y * y).sum() * grid.dt)
        for j in range(y.shape[1]):
            assert quadratic_form(profile[:n], y[:, j], grid.dt) >= -1e-8 * scale


def test_integrated_solver_is_time_integral_of_raw_solver():
    errs = []
    for h in (0.04, 0.02):
        grid, domain, medium = small_problem(T=1.0, h=h)
        ph = two_bumps(grid, domain)
        raw = solve_forward(medium, ph, grid, domain, track_energy=False).trace
        bar = solve_integrated_forward(medium, ph, grid, domain, track_energy=False).trace
        assert bar.kind == "integrated"
        # differentiating the integrated trace recovers the raw one
        d = bar.time_derivative()
        assert np.linalg.norm(d - raw.values) / np.linalg.norm(raw.values) < 0.05
        ib = integrate_trace(raw)
        errs.append(np.linalg.norm(ib.values - bar.values) / np.linalg.norm(bar.values))
    assert errs[1] < errs[0] / 3


def test_integrated_center_value_without_attenuation():
    grid, domain, medium = small_problem(T=1.0, h=0.02, a=0.0, q=0.0)
    ph = two_bumps(grid, domain)
    keep = np.zeros(grid.shape, bool)
    keep[grid.shape[0] // 2, grid.shape[1] // 2] = True
    u = solve_forward(medium, ph, grid, domain, keep_mask=keep, track_energy=False).history[:, 0]
    ubar = solve_integrated_forward(medium, ph, grid, domain, keep_mask=keep,
                                    track_energy=False).history[:, 0]
    quad = np.concatenate([[0.0], np.cumsum(0.5 * grid.dt * (u[1:] + u[:-1]))])
    assert np.abs(quad - ubar).max() < 5 * grid.dt ** 2 * np.abs(u).max()


def test_integrate_trace_examples():
    dt = 0.1
    zero = BoundaryTrace(np.zeros((11, 4)), dt, 0.7)
    assert not integrate_trace(zero).values.any()
    ramp = integrate_trace(BoundaryTrace(np.full((11, 4), 3.0), dt, 0.7))
    assert np.allclose(ramp.values, 3.0 * dt * np.arange(11)[:, None], atol=1e-14)
    assert ramp.values[0].tolist() == [0.0] * 4
    with pytest.raises(ValueError, match="raw"):
        integrate_trace(ramp)


def test_energy_examples():
    grid = build_grid(1.0, 201, 1.0, 1.0)
    z = np.zeros(grid.shape)
    assert energy(z, z, grid) == 0.0
    assert energy(np.full(grid.shape, 2.5), z, grid) == 0.0
    oracle = dense_energy_sine_window()
    errs = []
    for nx in (101, 201):
        grid = build_grid(1.0, nx, 1.0, 1.0)
        X, Y = grid.mesh()
        u = np.sin(np.pi * X) * np.cos(np.pi * X / 2) ** 2 * np.cos(np.pi * Y / 2) ** 2
        errs.append(abs(energy(u, np.zeros_like(u), grid) - oracle) / oracle)
    assert errs[1] < 1e-3
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_trace_h1_norm_closed_forms():
    dt, nt, nb, R = 0.01, 300, 64, 0.7
    T = nt * dt
    t = dt * np.arange(nt + 1)
    assert trace_h1_norm(BoundaryTrace(np.zeros((nt + 1, nb)), dt, R)) == 0.0
    lin = trace_h1_norm(BoundaryTrace(np.repeat(t[:, None], nb, axis=1), dt, R))
    assert lin ** 2 == pytest.approx((T ** 3 / 3 + T) * 2 * np.pi * R, rel=1e-4)
    const = trace_h1_norm(BoundaryTrace(np.full((nt + 1, nb), 2.0), dt, R))
    assert const ** 2 == pytest.approx(4.0 * T * 2 * np.pi * R, rel=1e-12)


@settings(max_examples=5, deadline=None)
@given(lam=st.floats(-3.0, 3.0), seed=st.integers(0, 1000))
def test_forward_is_linear(coarse, lam, seed):
    grid, domain, medium, ph = coarse
    from tatmem.medium import random_phantom
    g = random_phantom(grid, domain, np.random.default_rng(seed)).f
    t1 = solve_forward(medium, ph.f, grid, domain, track_energy=False).trace.values
    t2 = solve_forward(medium, g, grid, domain, track_energy=False).trace.values
    t3 = solve_forward(medium, ph.f + lam * g, grid, domain, track_energy=False).trace.values
    scale = np.abs(t1).max() + abs(lam) * np.abs(t2).max()
    assert np.abs(t3 - t1 - lam * t2).max() <= 1e-10 * scale


def test_finite_speed_of_propagation():
    # the discrete front leaks a dispersive precursor that shrinks ~70x per halving of h
    grid, domain, medium = small_problem(T=0.6, h=0.005)
    rho = 0.3
    ph = make_phantom("gaussian_bumps", [{"center": (0.0, 0.0), "width": rho}], grid, domain)
    res = solve_forward(medium, ph, grid, domain, track_energy=False)
    cmax = float(medium.c.max())
    t_quiet = (RADIUS - rho) / cmax - 2 * grid.h / cmax
    n = int(t_quiet / grid.dt)
    norm = np.sqrt((ph.f ** 2).sum() * grid.h ** 2)
    assert n > 5
    assert np.abs(res.trace.values[:n]).max() <= 1e-8 * norm
    assert np.abs(res.trace.values).max() > 1e-3
