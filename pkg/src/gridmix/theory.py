"""Support-recovery diagnostics and finite-sample error bounds.

All quantities are evaluated on the transformed design (one grid column used
as reference and removed), with an index set of active columns S, a ridge
level mu, and a multiplier lam on the unit-sum budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

#: how the minimum eigenvalue stands in for the restricted one in the bounds
EIG_NOTE = "unrestricted proxy (conservative)"

_SINGULAR_RTOL = 1e-12


def concentration_radius(n_grid, n_alts, n_units, delta):
    """Concentration radius of the scaled score: sqrt(2 log(2(R-1)J/delta)/N).

    With probability 1 - delta the max absolute entry of the scaled score of
    the transformed design stays below this radius.
    """
    if n_grid < 2:
        raise ValidationError("need at least two grid points")
    if n_alts < 1 or n_units < 1:
        raise ValidationError("n_alts and n_units must be positive")
    if not 0 < delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    return float(np.sqrt(2.0 * np.log(2.0 * (n_grid - 1) * n_alts / delta) / n_units))


def _gram(z_t):
    z = np.asarray(z_t, dtype=float)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ValidationError("transformed design must be a nonempty 2-D array")
    if not np.all(np.isfinite(z)):
        raise ValidationError("transformed design contains non-finite values")
    return z.T @ z / z.shape[0]

def _active_complement(active, n_cols):
    active = np.asarray(active, dtype=int).reshape(-1)
    if active.size == 0:
        raise ValidationError("active set is empty")
    if len(set(active.tolist())) != active.size:
        raise ValidationError("active set has duplicate indices")
    if active.min() < 0 or active.max() >= n_cols:
        raise ValidationError("active indices out of range")
    inactive = np.setdiff1d(np.arange(n_cols), active)
    return active, inactive


def _solve_active(gram_aa, mu, rhs):
    """Solve (gram_aa + mu I) x = rhs, refusing near-singular systems at mu=0."""
    shifted = gram_aa + mu * np.eye(gram_aa.shape[0])
    eigvals = np.linalg.eigvalsh(shifted)
    if eigvals[0] <= _SINGULAR_RTOL * max(1.0, eigvals[-1]):
        raise NumericalError(
            "active-block Gram matrix is singular at mu=0; "
            "the selection condition fails by singularity"
        )
    return np.linalg.solve(shifted, rhs)


def irrepresentable_margin(z_t, active, mu, lam=None, active_weights=None):
    """Margin of the nonnegative irrepresentable condition on inactive columns.

    Returns 1 - max over inactive r of
        [G_{inactive,active} (G_active + mu I)^{-1} (1 + (mu/lam) theta*)]_r
    where G is the transformed-design Gram.  A positive margin is the eta of
    the selection condition; mu=0 gives the plain (ridgeless) condition.
    """
    gram = _gram(z_t)
    active, inactive = _active_complement(active, gram.shape[0])
    if inactive.size == 0:
        raise ValidationError("inactive set is empty; margin is undefined")
    rhs = np.ones(active.size)
    if mu < 0:
        raise ValidationError("mu must be nonnegative")
    if mu > 0:
        if lam is None or lam <= 0:
            raise ValidationError("lam > 0 required when mu > 0")
        if active_weights is None:
            raise ValidationError("active_weights required when mu > 0")
        weights = np.asarray(active_weights, dtype=float).reshape(-1)
        if weights.shape[0] != active.size or np.any(weights <= 0):
            raise ValidationError("active_weights must be positive, one per active index")
        if weights.sum() > 1 + 1e-10:
            raise ValidationError("active_weights must sum to at most 1")
        rhs = rhs + (mu / lam) * weights
    solved = _solve_active(gram[np.ix_(active, active)], mu, rhs)
    terms = gram[np.ix_(inactive, active)] @ solved
    return float(1.0 - terms.max())


def gram_min_eigenvalues(z_t, active, mu):
    """Smallest eigenvalues of the ridge-shifted Gram, active block and full.

    Returns (active_min, full_min), the minimum eigenvalues of
    (1/rows) Z_S' Z_S + mu I and (1/rows) Z' Z + mu I.  Both are unrestricted
    minima, conservative stand-ins for their restricted counterparts.
    """
    if mu < 0:
        raise ValidationError("mu must be nonnegative")
    gram = _gram(z_t)
    active, _ = _active_complement(active, gram.shape[0])
    active_min = float(np.linalg.eigvalsh(gram[np.ix_(active, active)])[0] + mu)
    full_min = float(np.linalg.eigvalsh(gram)[0] + mu)
    return active_min, full_min


def signal_margin(z_t, active, mu, lam, active_weights):
    """Smallest magnitude of the noiseless active-block solution.

    rho = min over the active set of
        | (G_active + mu I)^{-1} (G_active theta* - lam 1) |.
    Weights staying above this floor is what keeps the active set detected.
    """
    if mu < 0:
        raise ValidationError("mu must be nonnegative")
    if lam is None or lam <= 0:
        raise ValidationError("lam must be positive")
    gram = _gram(z_t)
    active, _ = _active_complement(active, gram.shape[0])
    weights = np.asarray(active_weights, dtype=float).reshape(-1)
    if weights.shape[0] != active.size:
        raise ValidationError("active_weights must have one entry per active index")
    block = gram[np.ix_(active, active)]
    solved = _solve_active(block, mu, block @ weights - lam * np.ones(active.size))
    return float(np.abs(solved).min())


@dataclass(frozen=True)
class ErrorBounds:
    """Finite-sample bounds on the weight and CDF errors.

    weight_bound bounds ||theta_hat - theta*||_2 over the transformed
    coordinates with probability 1 - delta; cdf_bound bounds the pointwise
    CDF error; ridge_is_tighter reports whether the ridge bound at this mu
    beats the mu=0 bound on the same instance.
    """

    weight_bound: float
    cdf_bound: float
    ridge_is_tighter: bool
    gamma: float
    k: float


def recovery_error_bounds(n_grid, n_alts, n_units, delta, active_size, weight_inf,
                          mu, lam, xi_mu, xi_zero, k=None):
    """Evaluate the weight-error and CDF-error bounds at a given instance.

    weight_inf is the largest true active weight; xi_mu and xi_zero are the
    minimum eigenvalues of the full ridge-shifted transformed Gram at ridge
    levels mu and 0 (unrestricted minima, conservative stand-ins for the
    restricted ones).  k defaults to the smallest value satisfying the
    validity condition gamma <= k * lam.
    """
    gamma = concentration_radius(n_grid, n_alts, n_units, delta)
    if active_size < 1:
        raise ValidationError("active_size must be positive")
    if weight_inf <= 0:
        raise ValidationError("weight_inf must be positive")
    if mu < 0:
        raise ValidationError("mu must be nonnegative")
    if xi_mu <= 0:
        raise ValidationError("bounds need a positive ridge-shifted Gram eigenvalue")
    if k is None:
        if lam is None or lam <= 0:
            raise ValidationError("k defaulting requires lam > 0")
        k = gamma / lam * (1.0 + 1e-9)
    if k <= 0:
        raise ValidationError("k must be positive")
    if gamma > k * lam:
        raise ValidationError(
            f"validity condition gamma <= k*lam violated: {gamma:.6g} > {k * lam:.6g}"
        )
    r_eff = n_grid - 1
    weight_bound = (
        2.0 * np.sqrt(r_eff) * k * lam + 2.0 * mu * np.sqrt(active_size) * weight_inf
    ) / xi_mu
    cdf_bound = (
        4.0 * r_eff * k * lam + 4.0 * mu * np.sqrt(active_size * r_eff) * weight_inf
    ) / xi_mu
    ridge_is_tighter = bool(
        np.sqrt(active_size) * weight_inf * xi_zero < np.sqrt(r_eff) * k * lam
    )
    return ErrorBounds(
        weight_bound=float(weight_bound),
        cdf_bound=float(cdf_bound),
        ridge_is_tighter=ridge_is_tighter,
        gamma=float(gamma),
        k=float(k),
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """All support-recovery diagnostics for one instance."""

    n_units: int
    n_alts: int
    n_grid: int
    active_size: int
    mu: float
    lam: float
    k: float
    delta: float
    concentration: float
    irrepresentable: float
    signal_floor: float
    active_min_eig: float
    full_min_eig: float
    eig_note: str
    weight_bound: float
    cdf_bound: float
    ridge_is_tighter: bool


def diagnostics(z_t, active, active_weights, n_units, n_alts, mu, lam,
                delta=0.05, k=None):
    """Assemble the full diagnostics report for a transformed design.

    active indexes the transformed columns; active_weights are the true (or
    fitted) weights on those columns.  lam must be positive; pass the
    solver's recovered multiplier or an explicit override.
    """
    gram_cols = np.asarray(z_t).shape[1]
    n_grid = gram_cols + 1
    active = np.asarray(active, dtype=int).reshape(-1)
    weights = np.asarray(active_weights, dtype=float).reshape(-1)
    if lam is None or lam <= 0:
        raise ValidationError("diagnostics need lam > 0; supply an override if the "
                              "recovered multiplier is not positive")
    margin = irrepresentable_margin(z_t, active, mu, lam, weights)
    floor = signal_margin(z_t, active, mu, lam, weights)
    xi_active, xi_full = gram_min_eigenvalues(z_t, active, mu)
    _, xi_full_zero = gram_min_eigenvalues(z_t, active, 0.0)
    if xi_full <= 0:
        raise NumericalError("error bounds need a positive full-Gram eigenvalue")
    bounds = recovery_error_bounds(
        n_grid, n_alts, n_units, delta, active.size, float(weights.max()),
        mu, lam, xi_full, xi_full_zero, k=k,
    )
    return DiagnosticsReport(
        n_units=int(n_units),
        n_alts=int(n_alts),
        n_grid=int(n_grid),
        active_size=int(active.size),
        mu=float(mu),
        lam=float(lam),
        k=bounds.k,
        delta=float(delta),
        concentration=bounds.gamma,
        irrepresentable=margin,
        signal_floor=floor,
        active_min_eig=xi_active,
        full_min_eig=xi_full,
        eig_note=EIG_NOTE,
        weight_bound=bounds.weight_bound,
        cdf_bound=bounds.cdf_bound,
        ridge_is_tighter=bounds.ridge_is_tighter,
    )
