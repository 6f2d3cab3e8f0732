"""Command-line interface.

Every subcommand reads an optional key = value config file; any key can be
overridden by a flag of the same name.  Precedence: defaults, then config
file, then flags.  Exit codes: 0 success, 2 validation, 3 numerical
failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import io, report
from .errors import NumericalError, ValidationError
from .metrics import SUPPORT_THRESHOLD
from .model import (
    Grid,
    StepCDF,
    build_grid,
    choice_vector,
    kernel_matrix,
    transform_design,
)
from .simulate import (
    DEFAULT_BOUNDS,
    DiscreteDGP,
    MixtureDGP,
    ExperimentSpec,
    run_monte_carlo,
    sample_dgp,
)
from .solver import SolverConfig, solve_simplex_ridge
from .theory import diagnostics
from .tuning import RULES, cv_fit, make_mu_path
from .twostep import MixedSpec, elasticities as point_elasticities, run_em

_DEFAULT_BOUNDS_TEXT = "-4.5:3.5,-4.5:3.5"

COMMON_DEFAULTS = {
    "out": ".",
    "figures": "true",
    "seed": "0",
    "threads": "0",
}

_DATA_KEYS = {
    "data": None,
    "covariates": None,
    "has_outside": "false",
}

_GRID_KEYS = {
    "bounds": _DEFAULT_BOUNDS_TEXT,
    "grid_size": None,
    "scheme": "lattice",
}

_PATH_KEYS = {
    "mu_max": "100",
    "path_length": "101",
    "folds": "10",
}

COMMAND_KEYS = {
    "estimate": {**_DATA_KEYS, **_GRID_KEYS, "mu": "0"},
    "crossval": {**_DATA_KEYS, **_GRID_KEYS, **_PATH_KEYS, "rule": "one_se"},
    "simulate": {
        "dgp": None, "n": None, "grid_sizes": None, "reps": None,
        "rules": "min_mse,one_se", "n_alts": "4", "n_eval": "10000",
        "bounds": _DEFAULT_BOUNDS_TEXT, **_PATH_KEYS,
    },
    "theory": {
        **{k: v for k, v in _DATA_KEYS.items()},
        "data": "", "covariates": "", "dgp": "", "n": "",
        **_GRID_KEYS, "n_alts": "4",
        "mu": "0", "lam": "", "k": "", "delta": "0.05",
    },
    "twostep": {
        **_DATA_KEYS, **_GRID_KEYS, **_PATH_KEYS,
        "fixed": "", "first_stage": "", "em": "false",
        "mu": "", "rule": "one_se",
    },
    "elasticities": {
        **_DATA_KEYS,
        "weights": None, "variable": None,
        "fixed": "", "first_stage": "",
    },
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gridmix",
        description="Grid-based mixture estimation for discrete choice data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value config file")
        for key in {**COMMON_DEFAULTS, **keys}:
            p.add_argument(f"--{key}", default=argparse.SUPPRESS)
    return parser


def _merge_options(args):
    values = dict(COMMON_DEFAULTS)
    values.update(COMMAND_KEYS[args.command])
    known = set(values)
    if args.config is not None:
        config = io.read_config(args.config)
        unknown = sorted(set(config) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        values.update(config)
    for key in known:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return values


def _need(opts, key):
    value = opts.get(key)
    if value is None or value == "":
        raise ValidationError(f"missing required key: {key}")
    return value


def _to_int(opts, key):
    raw = _need(opts, key)
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{key} must be an integer, got {raw!r}") from None


def _to_float(opts, key):
    raw = _need(opts, key)
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"{key} must be a number, got {raw!r}") from None


def _to_bool(opts, key):
    raw = _need(opts, key).lower()
    if raw in ("true", "1", "yes"):
        return True
    if raw in ("false", "0", "no"):
        return False
    raise ValidationError(f"{key} must be true or false, got {raw!r}")


def _to_list(opts, key):
    return tuple(part.strip() for part in _need(opts, key).split(",") if part.strip())


def _to_int_list(opts, key):
    try:
        return tuple(int(part) for part in _to_list(opts, key))
    except ValueError:
        raise ValidationError(f"{key} must be a comma-separated integer list") from None


def _to_bounds(opts, key):
    parts = _to_list(opts, key)
    bounds = []
    for part in parts:
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ValidationError(f"{key} entries must look like lo:hi, got {part!r}")
        try:
            lo, hi = float(pieces[0]), float(pieces[1])
        except ValueError:
            raise ValidationError(f"{key} entries must be numeric, got {part!r}") from None
        bounds.append((lo, hi))
    return tuple(bounds)


def _out_dir(opts):
    path = _need(opts, "out")
    os.makedirs(path, exist_ok=True)
    return path


def _load_dataset(opts):
    covariates = _to_list(opts, "covariates")
    return io.load_choice_csv(
        _need(opts, "data"), covariates, has_outside=_to_bool(opts, "has_outside")
    )


def _cdf_table(grid, theta):
    """Fitted CDF at the sorted grid points plus the upper corner of the box."""
    order = np.lexsort(grid.points.T[::-1])
    points = np.vstack([grid.points[order], grid.bounds[:, 1]])
    return points, StepCDF(grid, theta)(points)


def _write_fit(opts, grid, theta, names, cv=None, selected=None):
    out = _out_dir(opts)
    io.write_weights_csv(os.path.join(out, "weights.csv"), grid, theta, names=names)
    points, values = _cdf_table(grid, theta)
    io.write_cdf_csv(os.path.join(out, "cdf.csv"), points, values, names=names)
    if cv is not None:
        io.write_cv_csv(os.path.join(out, "cv.csv"), cv)
    if _to_bool(opts, "figures"):
        report.save_weights_figure(os.path.join(out, "weights.png"), grid, theta)
        report.save_cdf_figure(os.path.join(out, "cdf.png"), grid, theta)
        if cv is not None:
            report.save_cv_figure(
                os.path.join(out, "cv.png"), cv, selected=selected
            )


def cmd_estimate(opts):
    dataset = _load_dataset(opts)
    grid = build_grid(_to_bounds(opts, "bounds"), _to_int(opts, "grid_size"),
                      scheme=_need(opts, "scheme"))
    kernel = kernel_matrix(dataset, grid)
    solution = solve_simplex_ridge(
        kernel.z, choice_vector(dataset), SolverConfig(mu=_to_float(opts, "mu"))
    )
    _write_fit(opts, grid, solution.theta, dataset.var_names)
    support = int(np.sum(solution.theta > SUPPORT_THRESHOLD))
    print(
        f"fit: mu={solution.mu:g} objective={solution.objective:.10g} "
        f"multiplier={solution.lambda_hat:.6g} iterations={solution.iterations} "
        f"support={support}/{grid.n_points}"
    )


def cmd_crossval(opts):
    dataset = _load_dataset(opts)
    grid = build_grid(_to_bounds(opts, "bounds"), _to_int(opts, "grid_size"),
                      scheme=_need(opts, "scheme"))
    rule = _need(opts, "rule")
    if rule not in RULES:
        raise ValidationError(f"rule must be one of {', '.join(RULES)}")
    mu_path = make_mu_path(_to_float(opts, "mu_max"), _to_int(opts, "path_length"))
    cv, fits = cv_fit(
        dataset, grid, rules=(rule,), mu_path=mu_path,
        n_folds=_to_int(opts, "folds"), seed=_to_int(opts, "seed"),
    )
    mu_selected, solution = fits[rule]
    _write_fit(opts, grid, solution.theta, dataset.var_names,
               cv=cv, selected={rule: mu_selected})
    if cv.ll_clamped:
        print("note: some validation likelihoods were clamped at the floor")
    support = int(np.sum(solution.theta > SUPPORT_THRESHOLD))
    print(
        f"selected: rule={rule} mu={mu_selected:g} support={support}/{grid.n_points} "
        f"objective={solution.objective:.10g}"
    )


def cmd_simulate(opts):
    spec = ExperimentSpec(
        dgp=_need(opts, "dgp"),
        n_units=_to_int(opts, "n"),
        grid_sizes=_to_int_list(opts, "grid_sizes"),
        n_reps=_to_int(opts, "reps"),
        rules=_to_list(opts, "rules") if opts.get("rules") else (),
        seed=_to_int(opts, "seed"),
        n_alts=_to_int(opts, "n_alts"),
        bounds=_to_bounds(opts, "bounds"),
        n_folds=_to_int(opts, "folds"),
        n_eval=_to_int(opts, "n_eval"),
        mu_max=_to_float(opts, "mu_max"),
        path_length=_to_int(opts, "path_length"),
    )
    rows = run_monte_carlo(spec)
    out = _out_dir(opts)
    io.write_summary_csv(os.path.join(out, "summary.csv"), rows)
    if _to_bool(opts, "figures"):
        report.save_summary_figure(os.path.join(out, "summary.png"), rows)
    header = "{:>6} {:>5} {:>4} {:>12} {:>8} {:>8} {:>7} {:>9} {:>7} {:>8} {:>6} {:>8}".format(
        *io.SUMMARY_COLUMNS
    )
    print(header)
    for row in rows:
        print(
            f"{row.n_units:>6} {row.n_grid:>5} {row.n_support:>4} "
            f"{row.estimator:>12} {row.rmise:>8.4f} {row.l1:>8.4f} "
            f"{row.pos:>7.2f} {row.true_pos:>9.4f} {row.sign:>7.4f} "
            f"{row.mu:>8.3f} {row.rho:>6.3f} {row.failures:>8}"
        )


def _theory_instance(opts):
    """Build (dataset, grid, active set source) for the theory command."""
    dgp = opts.get("dgp", "")
    if dgp:
        grid_scheme = opts.get("scheme") or ""
        if grid_scheme == "" or grid_scheme == "auto":
            grid_scheme = "lattice" if dgp == "discrete" else "halton"
        grid = build_grid(_to_bounds(opts, "bounds"), _to_int(opts, "grid_size"),
                          scheme=grid_scheme)
        n_units = _to_int(opts, "n")
        if dgp == "discrete":
            process = DiscreteDGP(n_units=n_units, grid=grid)
        elif dgp == "mixture":
            process = MixtureDGP(n_units=n_units)
        else:
            raise ValidationError("dgp must be 'discrete' or 'mixture'")
        dataset, truth = sample_dgp(
            process, np.random.SeedSequence(_to_int(opts, "seed")),
            grid=None if dgp == "discrete" else grid,
            n_alts=_to_int(opts, "n_alts"),
        )
        return dataset, grid, truth
    dataset = _load_dataset(opts)
    grid = build_grid(_to_bounds(opts, "bounds"), _to_int(opts, "grid_size"),
                      scheme=_need(opts, "scheme"))
    return dataset, grid, None


def cmd_theory(opts):
    dataset, grid, truth = _theory_instance(opts)
    mu = _to_float(opts, "mu")
    kernel = kernel_matrix(dataset, grid)
    y = choice_vector(dataset)
    solution = solve_simplex_ridge(kernel.z, y, SolverConfig(mu=mu))

    lam = float(opts["lam"]) if opts.get("lam") else solution.lambda_hat
    k = float(opts["k"]) if opts.get("k") else None

    if truth is not None and truth.theta is not None:
        full_active = np.flatnonzero(truth.support_mask)
        full_weights = truth.theta
    else:
        full_active = np.flatnonzero(solution.theta > SUPPORT_THRESHOLD)
        full_weights = solution.theta
    design = transform_design(kernel.z, y)
    ref = design.ref_index
    active = np.array([i for i in full_active if i != ref], dtype=int)
    if active.size == 0:
        raise ValidationError("active set is empty after dropping the reference point")
    weights = full_weights[active]

    rep = diagnostics(
        design.z, active, weights,
        n_units=dataset.n_units, n_alts=dataset.n_alts,
        mu=mu, lam=lam, delta=_to_float(opts, "delta"), k=k,
    )
    out = _out_dir(opts)
    io.write_theory_json(os.path.join(out, "theory.json"), rep)
    print(
        f"concentration={rep.concentration:.6g} irrepresentable={rep.irrepresentable:.6g} "
        f"signal_floor={rep.signal_floor:.6g}"
    )
    print(
        f"eigenvalues: active={rep.active_min_eig:.6g} "
        f"full={rep.full_min_eig:.6g} ({rep.eig_note})"
    )
    print(
        f"bounds: weight={rep.weight_bound:.6g} cdf={rep.cdf_bound:.6g} "
        f"ridge_is_tighter={rep.ridge_is_tighter}"
    )


def _fixed_setup(opts, dataset):
    covariates = dataset.var_names
    fixed_names = _to_list(opts, "fixed") if opts.get("fixed") else ()
    for name in fixed_names:
        if name not in covariates:
            raise ValidationError(f"fixed column {name!r} not among covariates")
    fixed_cols = tuple(covariates.index(name) for name in fixed_names)
    random_names = tuple(n for n in covariates if n not in fixed_names)
    return fixed_names, fixed_cols, random_names


def _first_stage_values(opts, fixed_names):
    names, values = io.read_named_values(_need(opts, "first_stage"))
    table = dict(zip(names, values))
    missing = [n for n in fixed_names if n not in table]
    if missing:
        raise ValidationError(f"first_stage file lacks coefficients: {missing}")
    return np.array([table[n] for n in fixed_names])


def cmd_twostep(opts):
    dataset = _load_dataset(opts)
    fixed_names, fixed_cols, random_names = _fixed_setup(opts, dataset)
    grid = build_grid(_to_bounds(opts, "bounds"), _to_int(opts, "grid_size"),
                      scheme=_need(opts, "scheme"))
    rule = _need(opts, "rule")
    if rule not in RULES:
        raise ValidationError(f"rule must be one of {', '.join(RULES)}")
    mu = float(opts["mu"]) if opts.get("mu") else None
    mu_path = make_mu_path(_to_float(opts, "mu_max"), _to_int(opts, "path_length"))

    if _to_bool(opts, "em"):
        beta_init = (
            _first_stage_values(opts, fixed_names)
            if opts.get("first_stage") else None
        )
        spec = MixedSpec(fixed_cols=fixed_cols, grid=grid, beta_init=beta_init)
        result = run_em(
            dataset, spec, mu=mu, rule=rule, mu_path=mu_path,
            n_folds=_to_int(opts, "folds"), cv_seed=_to_int(opts, "seed"),
        )
        beta, theta, mu_used = result.beta_fixed, result.theta, result.mu
        print(
            f"em: iterations={result.iterations} mu={mu_used:g} "
            f"log_likelihood={result.log_likelihood:.10g}"
        )
    else:
        if not fixed_cols:
            raise ValidationError("twostep without em needs fixed columns")
        beta = _first_stage_values(opts, fixed_names)
        kernel = kernel_matrix(dataset, grid, fixed_cols, beta)
        if mu is None:
            cv, fits = cv_fit(
                dataset, grid, rules=(rule,), mu_path=mu_path,
                n_folds=_to_int(opts, "folds"), seed=_to_int(opts, "seed"),
                kernel=kernel,
            )
            mu_used, solution = fits[rule]
        else:
            mu_used = mu
            solution = solve_simplex_ridge(
                kernel.z, choice_vector(dataset), SolverConfig(mu=mu)
            )
        theta = solution.theta
        print(f"twostep: mu={mu_used:g} objective={solution.objective:.10g}")

    _write_fit(opts, grid, theta, random_names)
    out = _out_dir(opts)
    io.write_named_values(
        os.path.join(out, "coefficients.csv"), fixed_names, beta
    )


def cmd_elasticities(opts):
    dataset = _load_dataset(opts)
    fixed_names, fixed_cols, _ = _fixed_setup(opts, dataset)
    points, theta = io.load_weights_csv(_need(opts, "weights"))
    bounds = np.stack([points.min(axis=0), points.max(axis=0)], axis=1)
    grid = Grid(points=points, bounds=bounds, scheme="loaded")
    variable = _need(opts, "variable")
    if variable not in dataset.var_names:
        raise ValidationError(f"variable {variable!r} not among covariates")
    beta = _first_stage_values(opts, fixed_names) if fixed_names else None
    result = point_elasticities(
        dataset, grid, theta, dataset.var_names.index(variable),
        beta_fixed=beta, fixed_cols=fixed_cols,
    )
    out = _out_dir(opts)
    path = os.path.join(out, "elasticity.csv")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("variable", "changed_alt", "affected_alt", "mean", "median"))
        n_alts = dataset.n_alts
        for changed in range(n_alts):
            for affected in range(n_alts):
                writer.writerow((
                    variable, changed + 1, affected + 1,
                    io.format_float(result.mean[changed, affected]),
                    io.format_float(result.median[changed, affected]),
                ))
    print(f"elasticities for {variable}: excluded={result.excluded}")
    with np.printoptions(precision=4, suppress=True):
        print("mean (rows: changed alternative):")
        print(result.mean)


_HANDLERS = {
    "estimate": cmd_estimate,
    "crossval": cmd_crossval,
    "simulate": cmd_simulate,
    "theory": cmd_theory,
    "twostep": cmd_twostep,
    "elasticities": cmd_elasticities,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        _HANDLERS[args.command](_merge_options(args))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
