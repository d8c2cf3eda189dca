import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import RADIUS, small_problem, two_bumps
from tatmem.forward import BoundaryTrace, solve_integrated_forward
from tatmem.medium import random_phantom
from tatmem.memory_ops import convolve_adjoint, convolve_forward, trapezoid_weights
from tatmem.reconstruct import (DivergenceError, ReconstructionError, apply_A, apply_K,
                                contraction_estimate, energy_partition, grid_filter,
                                harmonic_extension, hd_inner, measure, neumann_reconstruct,
                                solve_time_reversal, weighted_norm)


@pytest.fixture(scope="module")
def standard():
    """Attenuated medium observed for 1.5 times the damped-series threshold."""
    grid, domain, medium = small_problem(T=2.52, h=0.04)
    return grid, domain, medium, two_bumps(grid, domain)


def _angles(domain):
    return 2 * np.pi * np.arange(domain.n_boundary) / domain.n_boundary


def test_harmonic_extension_of_constant(coarse):
    grid, domain, _, _ = coarse
    he = harmonic_extension(np.full(domain.n_boundary, 2.5), grid, domain)
    assert np.abs(he.phi - 2.5)[domain.interior_mask].max() < 1e-8
    assert not he.phi[~domain.interior_mask].any()


def test_harmonic_extension_of_linear_data_converges():
    errs = []
    for h in (0.04, 0.02, 0.01):
        grid, domain, _ = small_problem(T=0.5, h=h)
        he = harmonic_extension(RADIUS * np.cos(_angles(domain)), grid, domain)
        X, _ = grid.mesh()
        errs.append(np.abs(he.phi - X)[domain.interior_mask].max())
    assert errs[-1] < 0.015
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.6


def test_harmonic_extension_rejects_bad_data(coarse):
    grid, domain, _, _ = coarse
    with pytest.raises(ReconstructionError):
        harmonic_extension(np.full(domain.n_boundary, np.nan), grid, domain)
    with pytest.raises(ReconstructionError):
        harmonic_extension(np.zeros(domain.n_boundary + 1), grid, domain)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_harmonic_extension_is_orthogonal(coarse, seed):
    grid, domain, _, _ = coarse
    rng = np.random.default_rng(seed)
    th = _angles(domain)
    data = sum(rng.standard_normal() * np.cos(k * th + rng.uniform(0, 6.3)) for k in range(5))
    he = harmonic_extension(data, grid, domain)
    inner = domain.inner_mask(grid.h)
    g = he.phi.copy()
    g[inner] += rng.standard_normal(inner.sum())
    mask = domain.interior_mask
    lhs = hd_inner(g - he.phi, he.phi, mask)
    assert abs(lhs) <= 1e-8 * np.sqrt(hd_inner(g, g, mask) * hd_inner(he.phi, he.phi, mask))


def test_zero_data_gives_zero(coarse):
    grid, domain, medium, _ = coarse
    zero = BoundaryTrace(np.zeros((grid.nt + 1, domain.n_boundary)), grid.dt, RADIUS, "integrated")
    tr = solve_time_reversal(medium, zero, grid, domain, keep_history=True)
    assert not tr.harmonic.phi.any() and not tr.A_out.any() and not tr.history.any()
    assert not apply_K(medium, np.zeros(grid.shape), grid, domain).any()
    est, rep = neumann_reconstruct(medium, zero, grid, domain)
    assert not est.any() and rep.iterates == 1 and rep.converged


def test_time_reversal_preconditions(coarse):
    grid, domain, medium, ph = coarse
    hbar = measure(medium, ph, grid, domain)
    raw = BoundaryTrace(hbar.values, hbar.dt, hbar.radius, "raw")
    with pytest.raises(ReconstructionError, match="integrated"):
        solve_time_reversal(medium, raw, grid, domain)
    short = BoundaryTrace(hbar.values[:-1], hbar.dt, hbar.radius, "integrated")
    with pytest.raises(ReconstructionError, match="does not match"):
        solve_time_reversal(medium, short, grid, domain)
    with pytest.raises(ReconstructionError, match="T="):
        apply_K(medium, ph, grid, domain, T=grid.T + 1.0)
    with pytest.raises(ReconstructionError):
        neumann_reconstruct(medium, hbar, grid, domain, m_max=0)


def test_A_is_linear(coarse):
    grid, domain, medium, ph = coarse
    h1 = measure(medium, ph, grid, domain)
    g = random_phantom(grid, domain, np.random.default_rng(2))
    h2 = measure(medium, g, grid, domain)
    lam = -1.7
    mix = BoundaryTrace(h1.values + lam * h2.values, h1.dt, h1.radius, "integrated")
    a1, a2, a3 = (apply_A(medium, h, grid, domain) for h in (h1, h2, mix))
    assert np.abs(a3 - a1 - lam * a2).max() <= 1e-10 * (np.abs(a1).max() + abs(lam) * np.abs(a2).max())


def test_K_is_linear(coarse):
    grid, domain, medium, ph = coarse
    g = random_phantom(grid, domain, np.random.default_rng(4)).f
    lam = 0.6
    k1, k2 = apply_K(medium, ph, grid, domain), apply_K(medium, g, grid, domain)
    k3 = apply_K(medium, ph.f + lam * g, grid, domain)
    assert np.abs(k3 - k1 - lam * k2).max() <= 1e-10 * (np.abs(k1).max() + lam * np.abs(k2).max())


def test_energy_partition_chain_and_pythagoras(standard):
    grid, domain, medium, ph = standard
    part = energy_partition(medium, ph, grid, domain)
    slack = part.slack()
    assert slack["Kf_le_Ew0"] <= 0.01
    assert slack["Ew0_le_ext"] <= 0.01
    assert slack["ext_eq"] <= 0.01
    assert slack["pythagoras"] <= 0.01
    assert part.Kf_sq < part.f_sq


def test_memory_cross_terms_cancel(standard):
    grid, domain, medium, ph = standard
    mask = domain.interior_mask
    keep = mask & (np.random.default_rng(1).uniform(size=grid.shape) < 0.1)
    ubar = solve_integrated_forward(medium, ph, grid, domain, keep_mask=keep,
                                    track_energy=False).history
    # the backward field on the same nodes, returned to forward time
    tr = solve_time_reversal(medium, measure(medium, ph, grid, domain), grid, domain,
                             keep_history=True)
    v = tr.history[::-1][:, keep[mask]]
    ub_t = np.gradient(ubar, grid.dt, axis=0, edge_order=2)
    v_t = np.gradient(v, grid.dt, axis=0, edge_order=2)
    psi = medium.kernel.psi_profile(grid.times)
    psi = psi.reshape(grid.nt + 1, -1)[:, keep.ravel()] if psi.ndim > 1 else psi
    W = trapezoid_weights(grid.nt + 1, grid.dt)[:, None]
    inv_c2 = medium.c[keep] ** -2
    lhs = 2 * float((W * inv_c2 * convolve_forward(psi, ub_t, grid.dt) * v_t).sum())
    rhs = 2 * float((W * inv_c2 * convolve_adjoint(psi, v_t, grid.dt) * ub_t).sum())
    scale = 2 * float(np.sqrt((W * inv_c2 * ub_t ** 2).sum() * (W * inv_c2 * v_t ** 2).sum()))
    scale *= np.abs(psi).max() * grid.T
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_neumann_errors_non_increasing_and_geometric(standard):
    grid, domain, medium, ph = standard
    hbar = measure(medium, ph, grid, domain)
    est, rep = neumann_reconstruct(medium, hbar, grid, domain, m_max=12, tol_rel=1e-5, f_true=ph.f)
    r = np.array(rep.ratios)
    assert np.all(np.isfinite(rep.residual_norms))
    assert r[-1] < 1 and np.all(r[2:] < 1)
    # roughly constant rate once the transient is over
    assert r[3:].max() - r[3:].min() < 0.3
    first = int(np.argmax(r < 1))
    errs = np.array(rep.errors[first:])
    assert np.all(np.diff(errs) <= 1e-12)
    assert rep.errors[-1] < rep.errors[0]
    assert est is rep.estimate


def test_unfiltered_series_trips_divergence_guard():
    grid, domain, medium = small_problem(T=2.52, h=0.04, a=0.0, q=0.0)
    ph = two_bumps(grid, domain)
    hbar = measure(medium, ph, grid, domain)
    with pytest.raises(DivergenceError) as info:
        neumann_reconstruct(medium, hbar, grid, domain, m_max=60, tol_rel=1e-12, filter_order=0)
    rep = info.value.report
    assert all(x > 1.05 for x in rep.ratios[-3:])
    assert "T=" in str(info.value)


def test_grid_filter_identity_and_smoothing():
    x = np.random.default_rng(0).standard_normal((21, 21))
    assert np.array_equal(grid_filter(x, 0), x)
    checker = np.indices((21, 21)).sum(axis=0) % 2 * 2.0 - 1.0
    interior = grid_filter(checker, 2)[2:-2, 2:-2]
    assert np.abs(interior).max() < 1e-12
    # a Fourier mode away from the padded edges is scaled by the stated response
    j = np.arange(40)
    k0, k1 = 0.5, 2.2
    mode = np.outer(np.cos(k0 * j + 0.3), np.sin(k1 * j))
    resp = (1 - np.sin(k0 / 2) ** 4) * (1 - np.sin(k1 / 2) ** 4)
    out = grid_filter(mode, 2)
    assert np.allclose(out[4:-4, 4:-4], resp * mode[4:-4, 4:-4], atol=1e-13)


def test_contraction_estimate_is_deterministic_and_honest(coarse):
    grid, domain, medium, _ = coarse
    r1, all1 = contraction_estimate(medium, grid, domain, n_samples=3, seed=7, return_all=True)
    r2 = contraction_estimate(medium, grid, domain, n_samples=3, seed=7, workers=2)
    assert r1 == r2 == max(all1)
    with pytest.raises(ReconstructionError):
        contraction_estimate(medium, grid, domain, n_samples=0)


def test_longer_observation_does_not_worsen_contraction():
    rhos = []
    for T in (1.0, 2.0, 3.0):
        grid, domain, medium = small_problem(T=T, h=0.04)
        rhos.append(contraction_estimate(medium, grid, domain, n_samples=4, seed=3))
    assert rhos[1] <= rhos[0] + 0.02 and rhos[2] <= rhos[1] + 0.02
    assert rhos[2] < 1


def test_weighted_norm_uses_inverse_square_speed(coarse):
    grid, domain, medium, ph = coarse
    direct = np.sqrt((ph.f ** 2 / medium.c ** 2)[domain.interior_mask].sum() * grid.h ** 2)
    assert weighted_norm(ph.f, medium, grid, domain) == pytest.approx(direct, rel=1e-14)
