"""Regularization-path construction, cross-validation, and mu selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import choice_vector, kernel_matrix, observed_choice_probs
from .solver import QuadraticForm, SolverConfig, solve_prepared

#: smallest probability admitted inside a log-likelihood
LOG_FLOOR = 1e-300

RULES = ("min_mse", "one_se", "max_ll", "max_hit_rate")


def make_mu_path(mu_max=100.0, length=101, floor_ratio=1e-4):
    """Geometric grid from mu_max down to mu_max * floor_ratio, then 0.

    The terminal exact zero makes the plain least-squares estimator part of
    every path.  Values are strictly decreasing.
    """
    if not np.isfinite(mu_max) or mu_max <= 0:
        raise ValidationError("mu_max must be positive")
    if length < 2:
        raise ValidationError("path length must be at least 2")
    if not 0 < floor_ratio < 1:
        raise ValidationError("floor_ratio must lie in (0, 1)")
    exponents = np.arange(length - 1) / (length - 2) if length > 2 else np.zeros(1)
    path = mu_max * floor_ratio**exponents
    return np.append(path, 0.0)


@dataclass(frozen=True)
class CVResult:
    """Out-of-fold curves over a mu path.

    fold_* arrays are (n_folds, len(mu_path)).  hit_rate is the share of
    validation units whose observed choice equals the modal predicted choice.
    """

    mu_path: np.ndarray
    fold_mse: np.ndarray
    fold_ll: np.ndarray
    fold_hit_rate: np.ndarray
    fold_units: np.ndarray
    seed: int
    ll_clamped: bool

    @property
    def mean_mse(self):
        return self.fold_mse.mean(axis=0)

    @property
    def se_mse(self):
        k = self.fold_mse.shape[0]
        return self.fold_mse.std(axis=0, ddof=1) / np.sqrt(k)

    @property
    def mean_ll(self):
        return self.fold_ll.mean(axis=0)

    @property
    def mean_hit_rate(self):
        return self.fold_hit_rate.mean(axis=0)


def fold_assignments(n_units, n_folds, seed):
    """Deterministic unit-level fold labels; sizes differ by at most one."""
    if not 2 <= n_folds <= n_units:
        raise ValidationError("need 2 <= n_folds <= n_units")
    perm = np.random.default_rng(seed).permutation(n_units)
    labels = np.empty(n_units, dtype=int)
    labels[perm] = np.arange(n_units) % n_folds
    return labels

def cross_validate(dataset, grid, mu_path=None, n_folds=10, seed=0, solver_config=None,
                   kernel=None):
    """K-fold cross-validation over a mu path, splitting by unit.

    All rows of a unit share its fold, so validation scores are out-of-sample
    at the unit level.  Solves descend the path with warm starts; per-fold
    design products are precomputed once, which keeps each solve in
    R-dimensional space.
    """
    mu_path = make_mu_path() if mu_path is None else np.asarray(mu_path, dtype=float)
    if mu_path.ndim != 1 or mu_path.size == 0:
        raise ValidationError("mu_path must be a nonempty vector")
    if np.any(mu_path < 0) or np.any(np.diff(mu_path) >= 0):
        raise ValidationError("mu_path must be strictly decreasing and nonnegative")
    base_config = solver_config or SolverConfig()

    kern = kernel or kernel_matrix(dataset, grid)
    n, j = kern.n_units, kern.n_alts
    z = kern.z
    y = choice_vector(dataset)
    labels = fold_assignments(n, n_folds, seed)

    total_zz = z.T @ z
    total_zy = z.T @ y
    total_yy = y @ y
    chosen_probs = observed_choice_probs(kern, dataset)
    observed = dataset.chosen
    probs3 = kern.per_alt

    n_mu = mu_path.size
    fold_mse = np.empty((n_folds, n_mu))
    fold_ll = np.empty((n_folds, n_mu))
    fold_hit = np.empty((n_folds, n_mu))
    fold_units = np.empty(n_folds, dtype=int)
    clamped = False

    for fold in range(n_folds):
        val_units = labels == fold
        fold_units[fold] = int(val_units.sum())
        row_mask = np.repeat(val_units, j)
        z_val = z[row_mask]
        y_val = y[row_mask]
        val_zz = z_val.T @ z_val
        val_zy = z_val.T @ y_val
        val_yy = y_val @ y_val
        train_rows = z.shape[0] - z_val.shape[0]
        quad = QuadraticForm(
            (total_zz - val_zz) / train_rows,
            (total_zy - val_zy) / train_rows,
            (total_yy - val_yy) / train_rows,
        )
        val_chosen_probs = chosen_probs[val_units]
        val_observed = observed[val_units]
        val_probs3 = probs3[val_units]

        warm = None
        for m, mu in enumerate(mu_path):
            config = SolverConfig(
                mu=mu,
                tol_kkt=base_config.tol_kkt,
                tol_obj=base_config.tol_obj,
                max_iters=base_config.max_iters,
                active_tol=base_config.active_tol,
            )
            theta = solve_prepared(quad.with_mu(mu), config, warm_start=warm).theta
            warm = theta

            fold_mse[fold, m] = (
                val_yy - 2.0 * theta @ val_zy + theta @ val_zz @ theta
            ) / z_val.shape[0]

            mix = val_chosen_probs @ theta
            if np.any(mix < LOG_FLOOR):
                clamped = True
                mix = np.maximum(mix, LOG_FLOOR)
            fold_ll[fold, m] = float(np.mean(np.log(mix)))

            alt_probs = val_probs3 @ theta
            best = np.argmax(alt_probs, axis=1)
            if kern.has_outside:
                p_best = alt_probs[np.arange(alt_probs.shape[0]), best]
                p_out = 1.0 - alt_probs.sum(axis=1)
                predicted = np.where(p_out > p_best, -1, best)
            else:
                predicted = best
            fold_hit[fold, m] = float(np.mean(predicted == val_observed))

    return CVResult(
        mu_path=mu_path,
        fold_mse=fold_mse,
        fold_ll=fold_ll,
        fold_hit_rate=fold_hit,
        fold_units=fold_units,
        seed=seed,
        ll_clamped=clamped,
    )


def select_mu(cv, rule):
    """Pick mu from a CVResult; ties always resolve toward larger mu.

    min_mse: smallest mean out-of-fold MSE.
    one_se: largest mu whose mean MSE is within one standard error of the
        minimum (the standard error at the minimizer).
    max_ll: largest mean out-of-fold log-likelihood.
    max_hit_rate: largest share of correctly predicted choices.
    """
    if rule not in RULES:
        raise ValidationError(f"unknown selection rule {rule!r}; choose from {RULES}")
    # the path is descending, so the first index of an extremum is the largest mu
    if rule == "min_mse":
        index = int(np.argmin(cv.mean_mse))
    elif rule == "one_se":
        mean, se = cv.mean_mse, cv.se_mse
        best = int(np.argmin(mean))
        threshold = mean[best] + se[best]
        index = int(np.argmax(mean <= threshold))
    elif rule == "max_ll":
        index = int(np.argmax(cv.mean_ll))
    else:
        index = int(np.argmax(cv.mean_hit_rate))
    return float(cv.mu_path[index]), index


def cv_fit(dataset, grid, rules=("one_se",), mu_path=None, n_folds=10, seed=0,
           solver_config=None, kernel=None):
    """Cross-validate once, then refit on all data at each selected mu.

    Returns (cv_result, {rule: (mu, solution)}).
    """
    kern = kernel or kernel_matrix(dataset, grid)
    cv = cross_validate(
        dataset, grid, mu_path=mu_path, n_folds=n_folds, seed=seed,
        solver_config=solver_config, kernel=kern,
    )
    base_config = solver_config or SolverConfig()
    quad = QuadraticForm.from_design(kern.z, choice_vector(dataset))
    fits = {}
    solved = {}
    for rule in rules:
        mu, _ = select_mu(cv, rule)
        if mu not in solved:
            config = SolverConfig(
                mu=mu,
                tol_kkt=base_config.tol_kkt,
                tol_obj=base_config.tol_obj,
                max_iters=base_config.max_iters,
                active_tol=base_config.active_tol,
            )
            solved[mu] = solve_prepared(quad.with_mu(mu), config)
        fits[rule] = (mu, solved[mu])
    return cv, fits
