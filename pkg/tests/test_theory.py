"""Support-recovery diagnostics and finite-sample error bounds."""

import numpy as np
import pytest

from gridmix.errors import NumericalError, ValidationError
from gridmix.model import build_grid, choice_vector, kernel_matrix, transform_design
from gridmix.simulate import DiscreteDGP, sample_dgp
from gridmix.solver import SolverConfig, solve_simplex_ridge
from gridmix.theory import (
    EIG_NOTE,
    concentration_radius,
    diagnostics,
    gram_min_eigenvalues,
    irrepresentable_margin,
    recovery_error_bounds,
    signal_margin,
)


def _random_transformed(rng, rows=60, cols=6):
    return rng.normal(size=(rows, cols)) / np.sqrt(cols)


def test_concentration_radius_worked_value():
    """sqrt(2 log(2 * 24 * 4 / 0.05) / 1000) for R=25, J=4, N=1000."""
    got = concentration_radius(25, 4, 1000, 0.05)
    assert abs(got - 0.12847745051628143) < 1e-12
    direct = np.sqrt(2.0 * np.log(2.0 * 24 * 4 / 0.05) / 1000.0)
    assert abs(got - direct) < 1e-15


def test_concentration_radius_monotonicity():
    base = concentration_radius(25, 4, 1000, 0.05)
    assert concentration_radius(25, 4, 4000, 0.05) == base / 2.0
    assert concentration_radius(25, 4, 1000, 0.01) > base
    assert concentration_radius(289, 4, 1000, 0.05) > base


def test_concentration_radius_validation():
    with pytest.raises(ValidationError):
        concentration_radius(1, 4, 1000, 0.05)
    with pytest.raises(ValidationError):
        concentration_radius(25, 4, 1000, 0.0)
    with pytest.raises(ValidationError):
        concentration_radius(25, 0, 1000, 0.05)


def test_eigenvalue_shift_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = _random_transformed(rng)
        active = np.array([0, 2, 4])
        mu = float(rng.uniform(0, 5))
        a_mu, f_mu = gram_min_eigenvalues(z, active, mu)
        a_0, f_0 = gram_min_eigenvalues(z, active, 0.0)
        assert abs(a_mu - (a_0 + mu)) < 1e-9
        assert abs(f_mu - (f_0 + mu)) < 1e-9


def test_min_eigenvalue_against_characteristic_polynomial():
    """For a 2x2 active block the eigenvalues come from the quadratic formula."""
    rng = np.random.default_rng(1)
    z = _random_transformed(rng, cols=4)
    active = np.array([1, 3])
    a_min, _ = gram_min_eigenvalues(z, active, 0.0)
    gram = z.T @ z / z.shape[0]
    block = gram[np.ix_(active, active)]
    tr, det = block[0, 0] + block[1, 1], np.linalg.det(block)
    smallest = (tr - np.sqrt(tr * tr - 4 * det)) / 2.0
    assert abs(a_min - smallest) < 1e-12


def test_irrepresentable_margin_explicit_inverse():
    rng = np.random.default_rng(2)
    for _ in range(10):
        z = _random_transformed(rng, rows=80, cols=7)
        active = np.array([0, 1, 5])
        inactive = np.array([2, 3, 4, 6])
        gram = z.T @ z / z.shape[0]
        block_inv = np.linalg.inv(gram[np.ix_(active, active)])

        plain = irrepresentable_margin(z, active, 0.0)
        terms = gram[np.ix_(inactive, active)] @ block_inv @ np.ones(3)
        assert abs(plain - (1.0 - terms.max())) < 1e-10

        mu, lam = 0.3, 0.05
        weights = np.array([0.5, 0.3, 0.2])
        ridged = irrepresentable_margin(z, active, mu, lam=lam, active_weights=weights)
        shifted_inv = np.linalg.inv(gram[np.ix_(active, active)] + mu * np.eye(3))
        rhs = np.ones(3) + (mu / lam) * weights
        terms = gram[np.ix_(inactive, active)] @ shifted_inv @ rhs
        assert abs(ridged - (1.0 - terms.max())) < 1e-10


def test_ridge_margin_collapses_to_plain_as_mu_vanishes():
    rng = np.random.default_rng(3)
    z = _random_transformed(rng, rows=100, cols=6)
    active = np.array([0, 3])
    weights = np.array([0.6, 0.4])
    plain = irrepresentable_margin(z, active, 0.0)
    tiny = irrepresentable_margin(z, active, 1e-12, lam=1.0, active_weights=weights)
    assert abs(plain - tiny) < 1e-8


def test_irrepresentable_margin_validation():
    rng = np.random.default_rng(4)
    z = _random_transformed(rng)
    with pytest.raises(ValidationError):
        irrepresentable_margin(z, np.arange(6), 0.0)  # no inactive columns
    with pytest.raises(ValidationError):
        irrepresentable_margin(z, np.array([0, 0]), 0.0)
    with pytest.raises(ValidationError):
        irrepresentable_margin(z, np.array([0]), 0.5)  # mu > 0 needs lam
    with pytest.raises(ValidationError):
        irrepresentable_margin(
            z, np.array([0]), 0.5, lam=0.1, active_weights=np.array([1.5])
        )


def test_singular_active_block_raises_at_mu_zero():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(40, 1))
    z = np.hstack([base, base, rng.normal(size=(40, 2))])  # duplicated column
    with pytest.raises(NumericalError):
        irrepresentable_margin(z, np.array([0, 1]), 0.0)
    # a ridge shift restores solvability
    margin = irrepresentable_margin(
        z, np.array([0, 1]), 0.1, lam=0.05, active_weights=np.array([0.5, 0.5])
    )
    assert np.isfinite(margin)


def test_signal_margin_explicit_inverse():
    rng = np.random.default_rng(6)
    z = _random_transformed(rng, rows=90, cols=5)
    active = np.array([1, 2, 4])
    weights = np.array([0.5, 0.25, 0.25])
    mu, lam = 0.2, 0.04
    got = signal_margin(z, active, mu, lam, weights)
    gram = z.T @ z / z.shape[0]
    block = gram[np.ix_(active, active)]
    solved = np.linalg.inv(block + mu * np.eye(3)) @ (block @ weights - lam)
    assert abs(got - np.abs(solved).min()) < 1e-12


def test_error_bound_formulas():
    """Bounds evaluate to their closed forms at chosen inputs."""
    n_grid, n_alts, n_units, delta = 25, 4, 1000, 0.05
    gamma = concentration_radius(n_grid, n_alts, n_units, delta)
    s, w_inf, mu, lam, xi_mu, xi_zero = 17, 0.2, 0.01, 0.05, 0.3, 0.29
    bounds = recovery_error_bounds(
        n_grid, n_alts, n_units, delta, s, w_inf, mu, lam, xi_mu, xi_zero, k=3.0
    )
    r_eff = n_grid - 1
    expected_weight = (2 * np.sqrt(r_eff) * 3.0 * lam + 2 * mu * np.sqrt(s) * w_inf) / xi_mu
    expected_cdf = (4 * r_eff * 3.0 * lam + 4 * mu * np.sqrt(s * r_eff) * w_inf) / xi_mu
    assert abs(bounds.weight_bound - expected_weight) < 1e-12
    assert abs(bounds.cdf_bound - expected_cdf) < 1e-12
    assert bounds.gamma == gamma
    assert bounds.ridge_is_tighter == (np.sqrt(s) * w_inf * xi_zero < np.sqrt(r_eff) * 3.0 * lam)


def test_error_bound_default_k_is_smallest_valid():
    bounds = recovery_error_bounds(25, 4, 1000, 0.05, 17, 0.2, 0.01, 0.05, 0.3, 0.29)
    assert bounds.gamma <= bounds.k * 0.05
    assert abs(bounds.k - bounds.gamma / 0.05) < 1e-6 * bounds.k


def test_error_bound_validity_condition():
    gamma = concentration_radius(25, 4, 1000, 0.05)
    with pytest.raises(ValidationError, match="gamma"):
        recovery_error_bounds(
            25, 4, 1000, 0.05, 17, 0.2, 0.01, 0.05, 0.3, 0.29, k=0.5 * gamma / 0.05
        )
    with pytest.raises(ValidationError):
        recovery_error_bounds(25, 4, 1000, 0.05, 17, 0.2, 0.01, 0.05, 0.0, 0.0)


def test_diagnostics_report_assembles_consistently():
    grid = build_grid([[-4.5, 3.5], [-4.5, 3.5]], 9)
    process = DiscreteDGP(n_units=400, grid=grid)
    dataset, truth = sample_dgp(process, seed=0)
    kernel = kernel_matrix(dataset, grid)
    y = choice_vector(dataset)
    theta = solve_simplex_ridge(kernel.z, y, SolverConfig(mu=0.01)).theta
    t = transform_design(kernel.z, y)

    active = np.flatnonzero(truth.support_mask[:-1])
    weights = truth.theta[active]
    report = diagnostics(t.z, active, weights, 400, 4, 0.01, lam=0.02)
    assert report.n_grid == 9 and report.active_size == active.size
    assert report.concentration == concentration_radius(9, 4, 400, 0.05)
    a_min, f_min = gram_min_eigenvalues(t.z, active, 0.01)
    assert abs(report.active_min_eig - a_min) < 1e-12
    assert abs(report.full_min_eig - f_min) < 1e-12
    assert report.eig_note == EIG_NOTE
    assert report.weight_bound > 0 and report.cdf_bound > 0
    assert theta.shape == (9,)


def test_diagnostics_needs_positive_multiplier():
    rng = np.random.default_rng(7)
    z = _random_transformed(rng)
    with pytest.raises(ValidationError, match="lam"):
        diagnostics(z, np.array([0, 1]), np.array([0.5, 0.5]), 100, 4, 0.0, lam=0.0)
