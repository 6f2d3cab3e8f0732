"""Release acceptance suite.

One test per gate, so `pytest -v` prints a single pass/fail line for each.
Assertion messages carry the measured quantities.  The two Monte Carlo
studies are shared across gates through memoized module-level loops; the
whole module is self-contained and seeded.
"""

import dataclasses
import functools

import numpy as np
import pytest

from gridmix.metrics import SUPPORT_THRESHOLD, rmise, support_metrics
from gridmix.model import (
    ChoiceDataset,
    StepCDF,
    build_grid,
    cdf_indicator,
    choice_vector,
    kernel_matrix,
    observed_choice_probs,
    transform_design,
)
from gridmix.simulate import (
    DEFAULT_BOUNDS,
    DiscreteDGP,
    MixtureDGP,
    correlation_quartile,
    draw_covariates,
    sample_dgp,
    simulate_choices,
)
from gridmix.solver import (
    QuadraticForm,
    SolverConfig,
    lattice_search,
    solve_simplex_ridge,
)
from gridmix.theory import (
    gram_min_eigenvalues,
    irrepresentable_margin,
    recovery_error_bounds,
)
from gridmix.tuning import RULES, cv_fit, make_mu_path
from gridmix.twostep import (
    elasticities,
    fit_weighted_logit,
    mixture_log_likelihood,
    posterior_weights,
)

LATTICE_STEP = 2e-3


def _random_design(rng, r, rows):
    z = rng.random((rows, r))
    y = rng.integers(0, 2, size=rows).astype(float)
    return z, y


def _round_to_lattice(theta, n):
    """Nearest simplex lattice point by largest remainders."""
    scaled = theta * n
    base = np.floor(scaled).astype(int)
    remainder = scaled - base
    deficit = int(n - base.sum())
    order = np.argsort(-remainder)
    base[order[:deficit]] += 1
    return base / n


def test_a01_solver_matches_exhaustive_lattice_search():
    """100 random instances, R <= 4, rows <= 50, mu in {0, 0.1, 1}."""
    rng = np.random.default_rng(101)
    sizes = [2] * 45 + [3] * 45 + [4] * 10
    mus = [0.0, 0.1, 1.0]
    worst = 0.0
    for i, r in enumerate(sizes):
        mu = mus[i % 3]
        z, y = _random_design(rng, r, int(rng.integers(6, 51)))
        solution = solve_simplex_ridge(z, y, SolverConfig(mu=mu))
        lat_theta, lat_obj = lattice_search(z, y, mu, LATTICE_STEP)

        quad = QuadraticForm.from_design(z, y, mu)
        # the lattice only resolves the optimum to within its own spacing
        slack = 0.5 * quad.lipschitz() * r * LATTICE_STEP**2
        tol = 1e-6 * max(1.0, abs(lat_obj)) + slack
        gap = abs(solution.objective - lat_obj)
        worst = max(worst, gap - slack)
        assert gap <= tol, f"instance {i}: gap {gap:.3e} tolerance {tol:.3e}"

        rounded = _round_to_lattice(solution.theta, round(1.0 / LATTICE_STEP))
        assert lat_obj <= quad.value(rounded) + 1e-9, (
            f"instance {i}: exhaustive search missed a better lattice point"
        )


def test_a02_kkt_residuals_and_finite_difference_gradient():
    """Converged solves satisfy stationarity to 1e-9; gradients match FD."""
    rng = np.random.default_rng(202)
    worst_kkt = 0.0
    for i in range(100):
        r = int(rng.integers(2, 9))
        mu = [0.0, 0.1, 1.0][i % 3]
        z, y = _random_design(rng, r, int(rng.integers(10, 80)))
        solution = solve_simplex_ridge(z, y, SolverConfig(mu=mu))
        assert solution.converged, f"instance {i} did not converge"
        worst_kkt = max(worst_kkt, solution.kkt.total)
    assert worst_kkt <= 1e-9, f"largest KKT residual {worst_kkt:.3e}"

    worst_fd = 0.0
    for i in range(50):
        r = int(rng.integers(2, 9))
        z, y = _random_design(rng, r, int(rng.integers(10, 80)))
        quad = QuadraticForm.from_design(z, y, mu=float(rng.uniform(0.0, 1.0)))
        theta = rng.dirichlet(np.ones(r))
        grad = quad.grad(theta)
        h = 1e-6
        fd = np.empty(r)
        for k in range(r):
            e = np.zeros(r)
            e[k] = h
            fd[k] = (quad.value(theta + e) - quad.value(theta - e)) / (2.0 * h)
        err = np.max(np.abs(fd - grad)) / max(1.0, np.max(np.abs(grad)))
        worst_fd = max(worst_fd, err)
    assert worst_fd <= 1e-5, f"largest FD gradient error {worst_fd:.3e}"


def test_a03_equality_and_inequality_forms_agree():
    """Dropping one weight and solving over the subsimplex yields the same
    objective whenever the reduced problem has a unique optimum."""
    rng = np.random.default_rng(303)
    accepted = 0
    attempts = 0
    worst = 0.0
    while accepted < 50 and attempts < 500:
        attempts += 1
        r = int(rng.integers(2, 5))
        z, y = _random_design(rng, r, int(rng.integers(10, 51)))
        design = transform_design(z, y)
        gram_t = design.z.T @ design.z / design.z.shape[0]
        if np.linalg.eigvalsh(gram_t)[0] <= 1e-4:
            continue
        accepted += 1

        quad = QuadraticForm.from_design(z, y, mu=0.0)
        full = solve_simplex_ridge(z, y, SolverConfig(mu=0.0))
        reduced = solve_simplex_ridge(
            design.z, design.y, SolverConfig(mu=0.0), equality=False
        )
        rest = [i for i in range(r) if i != design.ref_index]
        mapped = np.zeros(r)
        mapped[rest] = reduced.theta
        mapped[design.ref_index] = 1.0 - reduced.theta.sum()

        diff = abs(quad.value(mapped) - full.objective)
        worst = max(worst, diff)
        assert diff <= 1e-8 * max(1.0, abs(full.objective)), (
            f"objective mismatch {diff:.3e} on attempt {attempts}"
        )
    assert accepted == 50, f"only {accepted} well-posed instances in {attempts} draws"


def test_a04_zero_ridge_path_collapses_to_baseline():
    """Cross-validation restricted to the path (0,) returns the plain fit."""
    grid = build_grid(DEFAULT_BOUNDS, 9)
    data, _ = sample_dgp(
        DiscreteDGP(n_units=300, grid=grid), np.random.SeedSequence(404), n_alts=4
    )
    kernel = kernel_matrix(data, grid)
    base = solve_simplex_ridge(kernel.z, choice_vector(data), SolverConfig(mu=0.0))
    _, fits = cv_fit(
        data, grid, rules=RULES, mu_path=(0.0,), n_folds=5, seed=4, kernel=kernel
    )
    for rule in RULES:
        mu, solution = fits[rule]
        assert mu == 0.0, f"rule {rule} selected mu={mu}"
        gap = np.max(np.abs(solution.theta - base.theta))
        assert gap <= 1e-8, f"rule {rule}: weights differ from baseline by {gap:.3e}"


def test_a05_eigenvalue_shift_and_selection_condition_limit():
    """Ridge shifts both Gram eigenvalues by exactly mu, and at mu=0 the
    penalized selection condition reduces to the plain one term for term."""
    rng = np.random.default_rng(505)
    for i in range(50):
        cols = int(rng.integers(3, 9))
        z_t = rng.normal(size=(int(rng.integers(20, 61)), cols))
        size = int(rng.integers(1, cols))
        active = rng.choice(cols, size=size, replace=False)
        mu = float(rng.uniform(0.05, 1.0))

        a0, f0 = gram_min_eigenvalues(z_t, active, 0.0)
        am, fm = gram_min_eigenvalues(z_t, active, mu)
        assert abs(am - (a0 + mu)) <= 1e-9, f"instance {i}: active shift broken"
        assert abs(fm - (f0 + mu)) <= 1e-9, f"instance {i}: full shift broken"

        # explicit plain-condition terms; the mu=0 margin must match exactly
        gram = z_t.T @ z_t / z_t.shape[0]
        inactive = np.setdiff1d(np.arange(cols), active)
        solved = np.linalg.solve(gram[np.ix_(active, active)], np.ones(size))
        terms = gram[np.ix_(inactive, active)] @ solved
        margin = irrepresentable_margin(z_t, active, mu=0.0)
        assert abs(margin - (1.0 - terms.max())) <= 1e-9, f"instance {i}"

        weights = rng.dirichlet(np.ones(size)) * 0.9
        ridge_terms = gram[np.ix_(inactive, active)] @ np.linalg.solve(
            gram[np.ix_(active, active)] + mu * np.eye(size),
            np.ones(size) + (mu / 0.05) * weights,
        )
        got = irrepresentable_margin(z_t, active, mu, lam=0.05, active_weights=weights)
        assert abs(got - (1.0 - ridge_terms.max())) <= 1e-9, f"instance {i}"


def test_a06_cdf_shape_and_kernel_normalization():
    """Fitted CDFs are monotone with total mass one; kernel rows sum to one
    including the outside share."""
    rng = np.random.default_rng(606)
    for i in range(100):
        r = int(rng.choice([4, 9, 16, 25]))
        scheme = "lattice" if i % 2 == 0 else "halton"
        grid = build_grid([(-2.0, 2.0), (-1.0, 3.0)], r, scheme=scheme)
        theta = rng.dirichlet(np.full(r, 0.5))
        cdf = StepCDF(grid, theta)

        lower = rng.uniform(-2.5, 3.0, size=(20, 2))
        upper = lower + rng.uniform(0.0, 3.0, size=(20, 2))
        lo_vals = cdf(lower)
        hi_vals = cdf(upper)
        assert np.all(hi_vals - lo_vals >= -1e-12), f"vector {i}: not monotone"
        assert np.all((lo_vals >= 0.0) & (hi_vals <= 1.0 + 1e-12))
        corner = cdf(np.array([[2.0, 3.0]]))[0]
        assert abs(corner - 1.0) <= 1e-12, f"vector {i}: corner mass {corner}"

    for i in range(10):
        n_alts = int(rng.integers(1, 5))
        has_outside = i % 2 == 0
        x = draw_covariates(30, n_alts, seed=600 + i)
        grid = build_grid([(-1.0, 1.0), (-1.0, 1.0)], 9)
        betas = rng.uniform(-1.0, 1.0, size=(30, 2))
        choices = simulate_choices(x, betas, seed=650 + i)
        if not has_outside:
            # force an inside pick so the stricter dataset is valid
            rows = choices.sum(axis=1) == 0
            choices[rows, 0] = 1.0
        data = ChoiceDataset(x=x, choices=choices, has_outside=has_outside)
        per_alt = kernel_matrix(data, grid).per_alt
        sums = per_alt.sum(axis=1)
        if has_outside:
            utilities = np.einsum("ijk,rk->ijr", x, grid.points)
            outside = 1.0 / (1.0 + np.exp(utilities).sum(axis=1))
            sums = sums + outside
        err = np.max(np.abs(sums - 1.0))
        assert err <= 1e-12, f"dataset {i}: row sums off by {err:.3e}"


def _small_mixed_data(n_units, beta_fixed, values, seed):
    rng = np.random.default_rng(seed)
    x = draw_covariates(n_units, 3, seed)
    random_coef = rng.choice(values, size=n_units)
    betas = np.column_stack([np.full(n_units, beta_fixed), random_coef])
    choices = simulate_choices(x, betas, seed + 1)
    return ChoiceDataset(x=x, choices=choices, has_outside=True)


def _grid_1d(points):
    template = build_grid([(min(points) - 1.0, max(points) + 1.0)], len(points))
    return dataclasses.replace(template, points=np.atleast_2d(points).T)


def _fd_elasticity_means(data, grid, theta, var_index, beta, fixed_cols, h=1e-5):
    base = kernel_matrix(data, grid, fixed_cols, beta).per_alt @ theta
    n_alts = data.n_alts
    out = np.empty((n_alts, n_alts))
    for changed in range(n_alts):
        bumped = []
        for sign in (1.0, -1.0):
            x = data.x.copy()
            x[:, changed, var_index] *= 1.0 + sign * h
            shifted = dataclasses.replace(data, x=x)
            bumped.append(kernel_matrix(shifted, grid, fixed_cols, beta).per_alt @ theta)
        out[changed] = ((bumped[0] - bumped[1]) / (2.0 * h * base)).mean(axis=0)
    return out


def test_a07_em_step_monotone_and_elasticities_match_fd():
    """20 coefficient updates on 10 random instances never lower the mixture
    log-likelihood; point elasticities agree with finite differences."""
    rng = np.random.default_rng(707)
    for inst in range(10):
        values = sorted(rng.uniform(-1.5, 1.5, size=2))
        data = _small_mixed_data(
            120, float(rng.uniform(-1.0, 1.0)), values, seed=7000 + inst
        )
        grid = _grid_1d(values)
        theta = rng.dirichlet(np.ones(2))
        beta = np.array([rng.normal()])
        kernel = kernel_matrix(data, grid, (0,), beta)
        ll = mixture_log_likelihood(observed_choice_probs(kernel, data), theta)
        for step in range(20):
            h = posterior_weights(data, grid, beta, theta, fixed_cols=(0,))
            beta = fit_weighted_logit(data, h, grid, beta, (0,))
            kernel = kernel_matrix(data, grid, (0,), beta)
            new_ll = mixture_log_likelihood(observed_choice_probs(kernel, data), theta)
            assert new_ll >= ll - 1e-10, (
                f"instance {inst} step {step}: {new_ll:.12f} < {ll:.12f}"
            )
            ll = new_ll

    for inst in range(5):
        data = _small_mixed_data(40, 0.6, [-0.8, 0.8], seed=7700 + inst)
        grid = _grid_1d([-0.8, 0.8])
        theta = rng.dirichlet(np.ones(2))
        beta = np.array([0.6])
        for var_index in (0, 1):
            got = elasticities(
                data, grid, theta, var_index, beta_fixed=beta, fixed_cols=(0,)
            )
            assert got.excluded == 0
            fd = _fd_elasticity_means(data, grid, theta, var_index, beta, (0,))
            assert np.allclose(got.mean, fd, rtol=1e-4, atol=1e-8), (
                f"instance {inst} variable {var_index}: max diff "
                f"{np.max(np.abs(got.mean - fd)):.3e}"
            )


def test_a08_weight_error_bound_holds_with_stated_probability():
    """On two-region draws (1000 units, 25 grid points) the transformed
    weight error stays within the finite-sample bound in at least 95% of the
    eligible replications at delta = 0.05."""
    grid = build_grid(DEFAULT_BOUNDS, 25)
    process = DiscreteDGP(n_units=1000, grid=grid)
    eligible = 0
    covered = 0
    for rep in range(50):
        data, truth = sample_dgp(
            process, np.random.SeedSequence(entropy=808, spawn_key=(rep,)), n_alts=4
        )
        kernel = kernel_matrix(data, grid)
        y = choice_vector(data)
        solution = solve_simplex_ridge(kernel.z, y, SolverConfig(mu=0.0))
        if solution.lambda_hat <= 0:
            continue
        design = transform_design(kernel.z, y)
        active = np.flatnonzero(truth.support_mask[: grid.n_points - 1])
        _, xi_full = gram_min_eigenvalues(design.z, active, 0.0)
        if xi_full <= 0:
            continue
        eligible += 1
        bounds = recovery_error_bounds(
            grid.n_points, data.n_alts, data.n_units, 0.05, active.size,
            float(truth.theta[active].max()), 0.0, solution.lambda_hat,
            xi_full, xi_full,
        )
        err = float(np.linalg.norm(solution.theta[:-1] - truth.theta[:-1]))
        covered += err <= bounds.weight_bound
    assert eligible > 0, "no replication met the eligibility conditions"
    share = covered / eligible
    assert share >= 0.95, f"bound held in {covered}/{eligible} = {share:.2%}"


def _study(dgp_name, n_grid, seed):
    """20-replication study at 1000 units; per-replication fit quality for
    the plain fit and the conservative cross-validated fit."""
    n_units, n_alts, n_reps = 1000, 4, 20
    scheme = "lattice" if dgp_name == "discrete" else "halton"
    grid = build_grid(DEFAULT_BOUNDS, n_grid, scheme=scheme)
    if dgp_name == "discrete":
        process = DiscreteDGP(n_units=n_units, grid=grid)
    else:
        process = MixtureDGP(n_units=n_units)
    eval_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    bounds = np.asarray(DEFAULT_BOUNDS)
    eval_points = eval_rng.uniform(bounds[:, 0], bounds[:, 1], size=(10000, 2))
    indicator = cdf_indicator(grid, eval_points)
    mu_path = make_mu_path(100.0 / (n_units * n_alts), 101)

    results = {
        "mse_ls": [], "mse_cv": [], "pos_ls": [], "pos_cv": [],
        "true_pos_cv": [], "rho": [],
    }
    truth_values = None
    for rep in range(n_reps):
        data, truth = sample_dgp(
            process,
            np.random.SeedSequence(entropy=seed, spawn_key=(1, rep)),
            grid=None if dgp_name == "discrete" else grid,
            n_alts=n_alts,
        )
        if truth_values is None:
            truth_values = np.asarray(truth.cdf(eval_points), dtype=float)
        kernel = kernel_matrix(data, grid)
        results["rho"].append(correlation_quartile(kernel.z))

        base = solve_simplex_ridge(kernel.z, choice_vector(data), SolverConfig(mu=0.0))
        _, fits = cv_fit(
            data, grid, rules=("one_se",), mu_path=mu_path,
            n_folds=10, seed=seed + rep, kernel=kernel,
        )
        cv_theta = fits["one_se"][1].theta

        for tag, theta in (("ls", base.theta), ("cv", cv_theta)):
            errors = indicator @ theta - truth_values
            results[f"mse_{tag}"].append(float(np.mean(errors**2)))
            results[f"pos_{tag}"].append(int(np.sum(theta > SUPPORT_THRESHOLD)))
        if truth.support_mask is not None:
            results["true_pos_cv"].append(
                support_metrics(cv_theta, truth.support_mask).true_pos_share
            )
    return {key: np.asarray(val) for key, val in results.items()}


@functools.lru_cache(maxsize=None)
def _discrete_study():
    return _study("discrete", 25, seed=900)


@functools.lru_cache(maxsize=None)
def _mixture_study():
    return _study("mixture", 50, seed=1100)


def test_a09_discrete_study_rmise_bands():
    """Two-region truth, 25 grid points, 20 replications: plain-fit RMISE in
    0.067 +/- 0.02, conservative CV RMISE in 0.034 +/- 0.015, CV better in at
    least 80% of replications."""
    study = _discrete_study()
    rmise_ls = float(np.sqrt(study["mse_ls"].mean()))
    rmise_cv = float(np.sqrt(study["mse_cv"].mean()))
    wins = float(np.mean(study["mse_cv"] < study["mse_ls"]))
    assert abs(rmise_ls - 0.067) <= 0.02, f"plain RMISE {rmise_ls:.4f}"
    assert abs(rmise_cv - 0.034) <= 0.015, f"CV RMISE {rmise_cv:.4f}"
    assert wins >= 0.8, f"CV beat the plain fit in {wins:.0%} of replications"


def test_a10_discrete_study_support_recovery():
    """Support counts: plain fit 13.3 +/- 4 points, CV fit 22.4 +/- 4, and at
    least 90% of CV-selected points are truly in the support."""
    study = _discrete_study()
    pos_ls = float(study["pos_ls"].mean())
    pos_cv = float(study["pos_cv"].mean())
    true_pos = float(study["true_pos_cv"].mean())
    assert abs(pos_ls - 13.3) <= 4.0, f"plain support count {pos_ls:.2f}"
    assert abs(pos_cv - 22.4) <= 4.0, f"CV support count {pos_cv:.2f}"
    assert true_pos >= 0.9, f"CV true-positive share {true_pos:.3f}"


def test_a11_mixture_study_rmise_and_support():
    """Bimodal continuous truth, 50 grid points: plain RMISE 0.09 +/- 0.025,
    CV RMISE 0.058 +/- 0.02, and CV spreads mass onto more grid points in
    every replication."""
    study = _mixture_study()
    rmise_ls = float(np.sqrt(study["mse_ls"].mean()))
    rmise_cv = float(np.sqrt(study["mse_cv"].mean()))
    assert abs(rmise_ls - 0.09) <= 0.025, f"plain RMISE {rmise_ls:.4f}"
    assert abs(rmise_cv - 0.058) <= 0.02, f"CV RMISE {rmise_cv:.4f}"
    spread = int(np.sum(study["pos_cv"] > study["pos_ls"]))
    assert spread == 20, f"CV used more support points in {spread}/20 replications"


def test_a12_kernel_correlation_quartile():
    """Third quartile of absolute pairwise kernel-column rank correlations
    sits at 0.81 +/- 0.05 for the two-region design."""
    study = _discrete_study()
    rho = float(study["rho"].mean())
    assert abs(rho - 0.81) <= 0.05, f"correlation quartile {rho:.4f}"
