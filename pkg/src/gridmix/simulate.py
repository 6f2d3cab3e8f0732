"""Synthetic data generation and the Monte Carlo experiment runner.

Two data-generating processes: a discrete distribution placing uniform mass
on the grid points inside two corner regions, and an equal mixture of two
bivariate normals.  Choices follow a random-coefficients logit with four
inside alternatives and an outside option.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import multivariate_normal, rankdata

from .errors import NumericalError, ValidationError
from .metrics import l1_bias, support_metrics
from .model import (
    ChoiceDataset,
    Grid,
    StepCDF,
    build_grid,
    cdf_indicator,
    choice_vector,
    kernel_matrix,
)
from .solver import SolverConfig, solve_simplex_ridge
from .tuning import RULES, cv_fit, make_mu_path

#: coefficient box shared by both synthetic designs
DEFAULT_BOUNDS = ((-4.5, 3.5), (-4.5, 3.5))

#: the two squares carrying the discrete distribution's mass
DISCRETE_REGIONS = (
    ((-4.5, -0.5), (-4.5, -0.5)),
    ((-0.5, 3.5), (-0.5, 3.5)),
)

MIXTURE_MEANS = ((-2.2, -2.2), (1.3, 1.3))
MIXTURE_COV = ((0.8, 0.15), (0.15, 0.8))

#: per-covariate uniform ranges for the simulated designs
COVARIATE_RANGES = ((0.0, 5.0), (-3.0, 1.0))

#: grid-point density above this counts as true support under the mixture
DENSITY_FLOOR = 1e-3

BASELINE_LABEL = "ls"


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def draw_covariates(n_units, n_alts, seed):
    """Draw the (n_units, n_alts, 2) covariate array, one uniform per column."""
    if n_units < 1 or n_alts < 1:
        raise ValidationError("n_units and n_alts must be positive")
    rng = np.random.default_rng(_seed_sequence(seed))
    x = np.empty((n_units, n_alts, len(COVARIATE_RANGES)))
    for k, (lo, hi) in enumerate(COVARIATE_RANGES):
        x[:, :, k] = rng.uniform(lo, hi, size=(n_units, n_alts))
    return x


def _standard_gumbel(rng, size):
    u = rng.random(size)
    # rng.random can return exactly 0; nudge inside the open interval
    u = np.maximum(u, np.finfo(float).tiny)
    return -np.log(-np.log(u))


def simulate_choices(x, betas, seed):
    """Simulate one-hot choices; an all-zero row means the outside option won.

    Utilities are x_ij'beta_i plus i.i.d. standard Gumbel noise, with the
    outside option carrying noise only.
    """
    x = np.asarray(x, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if x.ndim != 3 or betas.shape != (x.shape[0], x.shape[2]):
        raise ValidationError("need one coefficient vector per unit")
    n_units, n_alts, _ = x.shape
    rng = np.random.default_rng(_seed_sequence(seed))
    noise = _standard_gumbel(rng, (n_units, n_alts + 1))
    utilities = np.einsum("ijk,ik->ij", x, betas) + noise[:, 1:]
    outside = noise[:, 0]
    best = np.argmax(utilities, axis=1)
    best_value = utilities[np.arange(n_units), best]
    choices = np.zeros((n_units, n_alts))
    inside_wins = best_value > outside
    choices[np.flatnonzero(inside_wins), best[inside_wins]] = 1.0
    return choices


def region_mask(points, regions):
    """Boolean mask of points lying in any of the closed axis-aligned boxes."""
    points = np.asarray(points, dtype=float)
    mask = np.zeros(points.shape[0], dtype=bool)
    for box in regions:
        box = np.asarray(box, dtype=float)
        if box.shape != (points.shape[1], 2) or np.any(box[:, 0] > box[:, 1]):
            raise ValidationError("each region must be a (dims, 2) box with lo <= hi")
        mask |= np.all((points >= box[:, 0]) & (points <= box[:, 1]), axis=1)
    return mask


@dataclass(frozen=True)
class DiscreteDGP:
    """Uniform mass over the grid points inside the given regions."""

    n_units: int
    grid: Grid
    regions: tuple = DISCRETE_REGIONS

    def __post_init__(self):
        if self.n_units < 1:
            raise ValidationError("n_units must be positive")

    def support_mask(self):
        mask = region_mask(self.grid.points, self.regions)
        if not mask.any():
            raise ValidationError("support regions contain no grid points")
        return mask

    def true_weights(self):
        mask = self.support_mask()
        return mask.astype(float) / mask.sum()


@dataclass(frozen=True)
class MixtureDGP:
    """Equal mixture of two bivariate normals with a shared covariance."""

    n_units: int
    means: tuple = MIXTURE_MEANS
    cov: tuple = MIXTURE_COV
    mix: tuple = (0.5, 0.5)

    def __post_init__(self):
        if self.n_units < 1:
            raise ValidationError("n_units must be positive")
        cov = np.asarray(self.cov, dtype=float)
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValidationError("covariance must be symmetric positive definite")
        mix = np.asarray(self.mix, dtype=float)
        if mix.shape != (len(self.means),) or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-12:
            raise ValidationError("mixing weights must be a probability vector")

    def density(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        total = np.zeros(points.shape[0])
        for w, mean in zip(self.mix, self.means):
            total += w * multivariate_normal(mean=mean, cov=cov).pdf(points)
        return total

    def support_mask(self, grid):
        return self.density(grid.points) > DENSITY_FLOOR


class MixtureCDF:
    """Mixture-of-normals CDF, usable on single points or batches."""

    def __init__(self, means, cov, mix):
        cov = np.asarray(cov, dtype=float)
        self._parts = [(w, multivariate_normal(mean=m, cov=cov))
                       for w, m in zip(mix, means)]

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        total = np.zeros(pts.shape[0])
        for w, part in self._parts:
            total += w * np.atleast_1d(part.cdf(pts))
        return float(total[0]) if scalar else total


@dataclass(frozen=True)
class GroundTruth:
    """What the estimator is trying to recover, in evaluable form."""

    cdf: Callable
    support_mask: np.ndarray
    theta: Optional[np.ndarray]


def _draw_betas(spec, n_units, rng):
    if isinstance(spec, DiscreteDGP):
        support = spec.grid.points[spec.support_mask()]
        return support[rng.integers(0, support.shape[0], size=n_units)]
    chol = np.linalg.cholesky(np.asarray(spec.cov, dtype=float))
    means = np.asarray(spec.means, dtype=float)
    component = (rng.random(n_units) >= spec.mix[0]).astype(int)
    draws = rng.standard_normal((n_units, means.shape[1]))
    return means[component] + draws @ chol.T


def sample_dgp(spec, seed, grid=None, n_alts=4):
    """Draw coefficients, covariates, and choices; return data plus truth.

    For the discrete process the grid comes from the process object itself.
    For the mixture, pass the estimation grid so the true-support mask
    (density above the floor) can be attached.
    """
    if isinstance(spec, DiscreteDGP):
        if grid is not None and grid is not spec.grid:
            raise ValidationError("discrete process carries its own grid")
        grid = spec.grid
        truth = GroundTruth(
            cdf=StepCDF(grid, spec.true_weights()),
            support_mask=spec.support_mask(),
            theta=spec.true_weights(),
        )
    elif isinstance(spec, MixtureDGP):
        if grid is None:
            raise ValidationError("mixture sampling needs the estimation grid")
        truth = GroundTruth(
            cdf=MixtureCDF(spec.means, spec.cov, spec.mix),
            support_mask=spec.support_mask(grid),
            theta=None,
        )
    else:
        raise ValidationError(f"unknown process spec: {type(spec).__name__}")

    root = _seed_sequence(seed)
    beta_seed, cov_seed, noise_seed = root.spawn(3)
    betas = _draw_betas(spec, spec.n_units, np.random.default_rng(beta_seed))
    x = draw_covariates(spec.n_units, n_alts, cov_seed)
    choices = simulate_choices(x, betas, noise_seed)
    dataset = ChoiceDataset(x=x, choices=choices, has_outside=True)
    return dataset, truth


def correlation_quartile(z, percentile=75.0):
    """Given percentile of |pairwise rank correlations| of a design matrix.

    Rank (Spearman) correlation between columns; constant columns yield
    undefined pairs and are dropped before taking the percentile.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValidationError("need at least two columns")
    ranks = rankdata(z, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(ranks, rowvar=False)
    upper = np.abs(corr[np.triu_indices(corr.shape[0], k=1)])
    upper = upper[np.isfinite(upper)]
    if upper.size == 0:
        raise ValidationError("all pairwise correlations are undefined")
    return float(np.percentile(upper, percentile))


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment: a process, grid sizes, and estimators."""

    dgp: str
    n_units: int
    grid_sizes: tuple
    n_reps: int
    rules: tuple = ("min_mse", "one_se")
    seed: int = 0
    n_alts: int = 4
    bounds: tuple = DEFAULT_BOUNDS
    n_folds: int = 10
    n_eval: int = 10000
    mu_max: float = 100.0
    path_length: int = 101
    mu_path: Optional[tuple] = None

    def __post_init__(self):
        if self.dgp not in ("discrete", "mixture"):
            raise ValidationError("dgp must be 'discrete' or 'mixture'")
        if self.n_reps < 1:
            raise ValidationError("n_reps must be at least 1")
        if not self.grid_sizes:
            raise ValidationError("need at least one grid size")
        for rule in self.rules:
            if rule not in RULES:
                raise ValidationError(f"unknown selection rule: {rule}")


@dataclass(frozen=True)
class SummaryRow:
    """Aggregated results for one (sample size, grid, estimator) cell."""

    n_units: int
    n_grid: int
    n_support: int
    estimator: str
    rmise: float
    l1: float
    pos: float
    true_pos: float
    sign: float
    mu: float
    rho: float
    failures: int


def _experiment_grid(spec, r):
    scheme = "lattice" if spec.dgp == "discrete" else "halton"
    return build_grid(spec.bounds, r, scheme=scheme)


def _rep_fits(dataset, grid, kernel, spec, mu_path, cv_seed):
    """Fit every estimator once; a failed fit records None for its label."""
    fits = {}
    y = choice_vector(dataset)
    try:
        base = solve_simplex_ridge(kernel.z, y, SolverConfig(mu=0.0))
        fits[BASELINE_LABEL] = (base.theta, 0.0)
    except NumericalError:
        fits[BASELINE_LABEL] = None
    if spec.rules:
        try:
            _, selected = cv_fit(
                dataset, grid, rules=spec.rules, mu_path=mu_path,
                n_folds=spec.n_folds, seed=cv_seed, kernel=kernel,
            )
            for rule in spec.rules:
                mu, solution = selected[rule]
                fits[rule] = (solution.theta, mu)
        except NumericalError:
            for rule in spec.rules:
                fits[rule] = None
    return fits


def run_monte_carlo(spec):
    """Run the experiment and return one SummaryRow per (grid, estimator).

    Replication seeds derive from the master seed by counters, so reruns are
    bit-identical.  A replication whose fit fails is dropped from that
    estimator's averages and counted under failures.
    """
    spec = spec if isinstance(spec, ExperimentSpec) else ExperimentSpec(**spec)
    eval_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(0,))
    )
    bounds = np.asarray(spec.bounds, dtype=float)
    eval_points = eval_rng.uniform(
        bounds[:, 0], bounds[:, 1], size=(spec.n_eval, bounds.shape[0])
    )
    # mu_max is specified on the aggregate sum-of-squares penalty scale;
    # the estimator objective averages over rows, so the path top is
    # mu_max / (N * J).  CV-selected values are then comparable across N.
    mu_path = (
        np.asarray(spec.mu_path, dtype=float)
        if spec.mu_path is not None
        else make_mu_path(
            spec.mu_max / (spec.n_units * spec.n_alts), spec.path_length
        )
    )
    labels = (BASELINE_LABEL,) + tuple(spec.rules)

    mixture = MixtureDGP(n_units=spec.n_units) if spec.dgp == "mixture" else None
    rows = []
    for r_index, r in enumerate(spec.grid_sizes):
        grid = _experiment_grid(spec, r)
        if spec.dgp == "discrete":
            process = DiscreteDGP(n_units=spec.n_units, grid=grid)
        else:
            process = mixture
        indicator = cdf_indicator(grid, eval_points)
        truth_cdf_cache = None
        mask = None

        sq_err = {label: [] for label in labels}
        l1 = {label: [] for label in labels}
        pos = {label: [] for label in labels}
        true_pos = {label: [] for label in labels}
        sign = {label: [] for label in labels}
        mu_sel = {label: [] for label in labels}
        failures = {label: 0 for label in labels}
        rho_vals = []

        for rep in range(spec.n_reps):
            data_seed = np.random.SeedSequence(
                entropy=spec.seed, spawn_key=(1, r_index, rep)
            )
            cv_seed = int(
                np.random.SeedSequence(
                    entropy=spec.seed, spawn_key=(2, r_index, rep)
                ).generate_state(1)[0]
            )
            dataset, truth = sample_dgp(
                process, data_seed, grid=None if spec.dgp == "discrete" else grid,
                n_alts=spec.n_alts,
            )
            if truth_cdf_cache is None:
                truth_cdf_cache = np.asarray(truth.cdf(eval_points), dtype=float)
                mask = truth.support_mask
            kernel = kernel_matrix(dataset, grid)
            rho_vals.append(correlation_quartile(kernel.z))
            fits = _rep_fits(dataset, grid, kernel, spec, mu_path, cv_seed)
            for label in labels:
                fit = fits.get(label)
                if fit is None:
                    failures[label] += 1
                    continue
                theta, mu = fit
                fhat = indicator @ theta
                sq_err[label].append(float(np.mean((fhat - truth_cdf_cache) ** 2)))
                if truth.theta is not None:
                    l1[label].append(l1_bias(theta[np.newaxis, :], truth.theta))
                support = support_metrics(theta, mask)
                pos[label].append(support.pos)
                true_pos[label].append(support.true_pos_share)
                sign[label].append(support.sign_share)
                mu_sel[label].append(mu)

        rho_mean = float(np.mean(rho_vals))
        for label in labels:
            ok = len(sq_err[label])
            rows.append(SummaryRow(
                n_units=spec.n_units,
                n_grid=grid.n_points,
                n_support=int(np.sum(mask)),
                estimator=label,
                rmise=float(np.sqrt(np.mean(sq_err[label]))) if ok else float("nan"),
                l1=float(np.mean(l1[label])) if l1[label] else float("nan"),
                pos=float(np.mean(pos[label])) if ok else float("nan"),
                true_pos=float(np.mean(true_pos[label])) if ok else float("nan"),
                sign=float(np.mean(sign[label])) if ok else float("nan"),
                mu=float(np.mean(mu_sel[label])) if ok else float("nan"),
                rho=rho_mean,
                failures=failures[label],
            ))
    return rows
