"""Joint estimation of fixed coefficients and grid weights, and elasticities.

The EM loop alternates a weight fit at the current fixed coefficients with a
weighted multinomial-logit update of the fixed coefficients, where each
unit's posterior over grid points supplies the weights.  Elasticities are
point elasticities of the discrete-mixture choice probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceError, NumericalError, ValidationError
from .model import (
    Grid,
    check_weights,
    choice_vector,
    kernel_matrix,
    observed_choice_probs,
)
from .solver import SolverConfig, solve_simplex_ridge
from .tuning import cross_validate, select_mu

PROB_FLOOR = 1e-300
GRAD_TOL = 1e-8
HESSIAN_RIDGE = 1e-8
# ascent slack, relative to |ll|: near the optimum the attainable gain is
# below the log-likelihood's float resolution, so exact monotonicity would
# reject the final Newton step and stall above GRAD_TOL
LL_ROUND_SLACK = 64 * np.finfo(float).eps
MAX_HALVINGS = 50
MAX_NEWTON_ITERS = 200
EM_MAX_ITERS = 500
EM_BETA_TOL = 1e-6
EM_LL_TOL = 1e-8
PROB_EXCLUDE = 1e-12

_CHUNK = 1024


@dataclass(frozen=True)
class MixedSpec:
    """Partition of covariate columns into fixed and random sets.

    fixed_cols index the covariates with a single shared coefficient; all
    remaining columns get random coefficients living on the grid.
    """

    fixed_cols: tuple
    grid: Grid
    beta_init: Optional[np.ndarray] = None

    def __post_init__(self):
        cols = tuple(int(c) for c in self.fixed_cols)
        if len(set(cols)) != len(cols):
            raise ValidationError("fixed_cols must be distinct")
        object.__setattr__(self, "fixed_cols", cols)
        if self.beta_init is not None:
            beta = np.asarray(self.beta_init, dtype=float)
            if beta.shape != (len(cols),) or not np.all(np.isfinite(beta)):
                raise ValidationError("beta_init must be finite, one per fixed column")
            object.__setattr__(self, "beta_init", beta)


@dataclass(frozen=True)
class EMState:
    """Snapshot of the EM loop, attached to the error on non-convergence."""

    beta_fixed: np.ndarray
    theta: np.ndarray
    posteriors: np.ndarray
    log_likelihood: float
    iteration: int


@dataclass(frozen=True)
class EMResult:
    beta_fixed: np.ndarray
    theta: np.ndarray
    mu: float
    iterations: int
    converged: bool
    ll_before_beta: tuple
    ll_after_beta: tuple
    log_likelihood: float


def mixture_log_likelihood(observed_probs, theta):
    """Mean log of the theta-mixture of observed-choice kernel probabilities."""
    mix = np.asarray(observed_probs, dtype=float) @ np.asarray(theta, dtype=float)
    return float(np.mean(np.log(np.maximum(mix, PROB_FLOOR))))


def _unit_name(dataset, index):
    if dataset.unit_ids is not None:
        return str(dataset.unit_ids[index])
    return str(index)


def posterior_weights(dataset, grid, beta_fixed, theta, fixed_cols=()):
    """Posterior probability of each grid point given each unit's choice."""
    theta = np.asarray(theta, dtype=float)
    check_weights(theta)
    kernel = kernel_matrix(dataset, grid, fixed_cols, beta_fixed)
    observed = observed_choice_probs(kernel, dataset)
    return _posterior_from_observed(dataset, observed, theta)


def _posterior_from_observed(dataset, observed, theta):
    numerator = observed * theta
    denominator = numerator.sum(axis=1)
    bad = np.flatnonzero(denominator <= PROB_FLOOR)
    if bad.size:
        raise NumericalError(
            f"unit {_unit_name(dataset, bad[0])}: observed choice has "
            "probability zero under the model"
        )
    return numerator / denominator[:, np.newaxis]


def _check_posteriors(h, n_units, n_grid):
    h = np.asarray(h, dtype=float)
    if h.shape != (n_units, n_grid):
        raise ValidationError("posterior matrix shape does not match data and grid")
    if np.any(h < 0) or np.any(np.abs(h.sum(axis=1) - 1.0) > 1e-10):
        raise ValidationError("posterior rows must be nonnegative and sum to 1")
    return h


def _weighted_ll(dataset, grid, fixed_cols, beta, h):
    kernel = kernel_matrix(dataset, grid, fixed_cols, beta)
    observed = observed_choice_probs(kernel, dataset)
    ll = float(np.sum(h * np.log(np.maximum(observed, PROB_FLOOR))))
    return ll, kernel


def fit_weighted_logit(dataset, h, grid, beta_init, fixed_cols):
    """Maximize the posterior-weighted logit likelihood over fixed coefficients.

    Newton iterations with step-halving; returns once the gradient infinity
    norm is at most 1e-8.  Random-coefficient utilities enter as per-grid-
    point offsets held fixed throughout.
    """
    fixed_cols = tuple(int(c) for c in fixed_cols)
    if not fixed_cols:
        return np.zeros(0)
    h = _check_posteriors(h, dataset.n_units, grid.n_points)
    beta = np.array(beta_init, dtype=float).reshape(-1)
    if beta.shape != (len(fixed_cols),):
        raise ValidationError("beta_init must have one entry per fixed column")

    x_f = dataset.x[:, :, fixed_cols]
    chosen = dataset.chosen
    inside = chosen >= 0
    grad_const = x_f[np.flatnonzero(inside), chosen[inside]].sum(axis=0)
    n_units = dataset.n_units
    k_f = len(fixed_cols)
    eye = np.eye(k_f)

    ll, kernel = _weighted_ll(dataset, grid, fixed_cols, beta, h)
    for _ in range(MAX_NEWTON_ITERS):
        per_alt = kernel.per_alt
        grad_acc = np.zeros(k_f)
        curvature = np.zeros((k_f, k_f))
        for start in range(0, n_units, _CHUNK):
            stop = min(start + _CHUNK, n_units)
            p_c = per_alt[start:stop]
            h_c = h[start:stop]
            x_c = x_f[start:stop]
            w_c = np.einsum("ir,ijr->ij", h_c, p_c)
            grad_acc += np.einsum("ij,ijk->k", w_c, x_c)
            curvature += np.einsum("ij,ijk,ijl->kl", w_c, x_c, x_c)
            b_c = np.einsum("ijr,ijk->irk", p_c, x_c)
            curvature -= np.einsum("ir,irk,irl->kl", h_c, b_c, b_c)
        grad = grad_const - grad_acc
        if np.max(np.abs(grad)) <= GRAD_TOL:
            return beta

        try:
            direction = np.linalg.solve(curvature + HESSIAN_RIDGE * eye, grad)
        except np.linalg.LinAlgError:
            direction = None
        if direction is None or not np.all(np.isfinite(direction)):
            raise NumericalError("weighted logit curvature matrix is singular")

        step = 1.0
        slack = LL_ROUND_SLACK * max(1.0, abs(ll))
        for halving in range(MAX_HALVINGS + 1):
            trial = beta + step * direction
            trial_ll, trial_kernel = _weighted_ll(dataset, grid, fixed_cols, trial, h)
            if trial_ll >= ll - slack:
                beta, ll, kernel = trial, max(trial_ll, ll), trial_kernel
                break
            step *= 0.5
        else:
            raise NumericalError(
                "weighted logit diverged: no ascent after "
                f"{MAX_HALVINGS} step halvings"
            )
    raise NumericalError("weighted logit did not reach gradient tolerance")


def _plain_logit_init(dataset, grid, fixed_cols):
    """Fit a one-point-grid logit, pinning random coefficients at the grid mean."""
    center = grid.points.mean(axis=0)[np.newaxis, :]
    pinned = Grid(points=center, bounds=grid.bounds, scheme="pinned")
    uniform_h = np.ones((dataset.n_units, 1))
    return fit_weighted_logit(
        dataset, uniform_h, pinned, np.zeros(len(fixed_cols)), fixed_cols
    )


def run_em(dataset, spec, solver_config=None, mu=None, rule="one_se",
           mu_path=None, n_folds=10, cv_seed=0):
    """Alternate weight fits and fixed-coefficient updates to convergence.

    The ridge level for the weight fits is chosen once, by cross-validation
    at the initial fixed coefficients, unless mu is given.  Convergence
    requires both the coefficient change and the likelihood change to fall
    under their tolerances; hitting the iteration cap raises an error
    carrying the last state.
    """
    if not isinstance(spec, MixedSpec):
        raise ValidationError("spec must be a MixedSpec")
    grid = spec.grid
    y = choice_vector(dataset)
    base_config = solver_config or SolverConfig()

    if not spec.fixed_cols:
        fixed_mu = 0.0 if mu is None else float(mu)
        kernel = kernel_matrix(dataset, grid)
        solution = solve_simplex_ridge(kernel.z, y, SolverConfig(mu=fixed_mu))
        observed = observed_choice_probs(kernel, dataset)
        ll = mixture_log_likelihood(observed, solution.theta)
        return EMResult(
            beta_fixed=np.zeros(0), theta=solution.theta, mu=fixed_mu,
            iterations=0, converged=True, ll_before_beta=(), ll_after_beta=(),
            log_likelihood=ll,
        )

    beta = (
        np.asarray(spec.beta_init, dtype=float)
        if spec.beta_init is not None
        else _plain_logit_init(dataset, grid, spec.fixed_cols)
    )

    if mu is None:
        kernel = kernel_matrix(dataset, grid, spec.fixed_cols, beta)
        cv = cross_validate(
            dataset, grid, mu_path=mu_path, n_folds=n_folds, seed=cv_seed,
            solver_config=base_config, kernel=kernel,
        )
        fixed_mu, _ = select_mu(cv, rule)
    else:
        fixed_mu = float(mu)
        if fixed_mu < 0:
            raise ValidationError("mu must be nonnegative")
    config = SolverConfig(
        mu=fixed_mu, tol_kkt=base_config.tol_kkt, tol_obj=base_config.tol_obj,
        max_iters=base_config.max_iters, active_tol=base_config.active_tol,
    )

    theta = None
    last_ll = None
    ll_before = []
    ll_after = []
    h = None
    for iteration in range(1, EM_MAX_ITERS + 1):
        kernel = kernel_matrix(dataset, grid, spec.fixed_cols, beta)
        theta = solve_simplex_ridge(kernel.z, y, config, warm_start=theta).theta
        observed = observed_choice_probs(kernel, dataset)
        ll_before.append(mixture_log_likelihood(observed, theta))
        h = _posterior_from_observed(dataset, observed, theta)
        beta_new = fit_weighted_logit(dataset, h, grid, beta, spec.fixed_cols)

        kernel = kernel_matrix(dataset, grid, spec.fixed_cols, beta_new)
        observed = observed_choice_probs(kernel, dataset)
        current_ll = mixture_log_likelihood(observed, theta)
        ll_after.append(current_ll)

        beta_shift = (
            float(np.max(np.abs(beta_new - beta))) if beta.size else 0.0
        )
        ll_shift = (
            abs(current_ll - last_ll) if last_ll is not None else float("inf")
        )
        beta = beta_new
        last_ll = current_ll
        if beta_shift < EM_BETA_TOL and ll_shift < EM_LL_TOL:
            theta = solve_simplex_ridge(kernel.z, y, config, warm_start=theta).theta
            return EMResult(
                beta_fixed=beta, theta=theta, mu=fixed_mu, iterations=iteration,
                converged=True, ll_before_beta=tuple(ll_before),
                ll_after_beta=tuple(ll_after),
                log_likelihood=mixture_log_likelihood(observed, theta),
            )

    state = EMState(
        beta_fixed=beta, theta=theta, posteriors=h,
        log_likelihood=last_ll, iteration=EM_MAX_ITERS,
    )
    raise ConvergenceError(
        f"EM did not converge in {EM_MAX_ITERS} iterations", best=state
    )


@dataclass(frozen=True)
class ElasticityResult:
    """Mean and median elasticity matrices over included units.

    Entry [k, j] is the elasticity of alternative j's choice probability
    with respect to the variable of alternative k.
    """

    mean: np.ndarray
    median: np.ndarray
    excluded: int
    var_index: int


def elasticities(dataset, grid, theta, var_index, beta_fixed=None, fixed_cols=()):
    """Point elasticities of mixture choice probabilities for one variable.

    Units where any alternative's mixture probability is at or below 1e-12
    are excluded from both aggregates and counted in the result.
    """
    theta = np.asarray(theta, dtype=float)
    check_weights(theta)
    fixed_cols = tuple(int(c) for c in fixed_cols)
    var_index = int(var_index)
    if not 0 <= var_index < dataset.n_vars:
        raise ValidationError("var_index out of range")

    kernel = kernel_matrix(dataset, grid, fixed_cols, beta_fixed)
    z = kernel.per_alt
    if var_index in fixed_cols:
        beta_fixed = np.asarray(beta_fixed, dtype=float)
        coef = np.full(grid.n_points, beta_fixed[fixed_cols.index(var_index)])
    else:
        random_cols = [c for c in range(dataset.n_vars) if c not in fixed_cols]
        coef = grid.points[:, random_cols.index(var_index)]

    weighted_coef = theta * coef
    probs = z @ theta
    own = z @ weighted_coef
    cross = np.einsum("ijr,ikr,r->ijk", z, z, weighted_coef)
    # term[i, j, k] = 1[j = k] * own[i, j] - cross[i, j, k]
    term = -cross
    diag = np.arange(dataset.n_alts)
    term[:, diag, diag] += own

    include = np.all(probs > PROB_EXCLUDE, axis=1)
    excluded = int(dataset.n_units - include.sum())
    if not include.any():
        raise NumericalError("every unit has a vanishing choice probability")

    x_t = dataset.x[include][:, :, var_index]
    elastic = x_t[:, np.newaxis, :] * term[include] / probs[include][:, :, np.newaxis]
    # reorder to [changed alternative k, affected alternative j]
    mean = elastic.mean(axis=0).T
    median = np.median(elastic, axis=0).T
    return ElasticityResult(
        mean=mean, median=median, excluded=excluded, var_index=var_index
    )
