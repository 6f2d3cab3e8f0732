"""Core model objects: grids, choice data, logit kernels, and step CDFs.

The estimator approximates an unknown random-coefficients distribution by a
probability vector over a fixed grid of candidate coefficient vectors.  This
module builds the grid, evaluates the logit choice kernel at every grid
point, and turns an estimated weight vector into a step-function CDF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SIMPLEX_TOL = 1e-10

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)


def _as_readonly(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def check_weights(theta, tol=SIMPLEX_TOL):
    """Validate a mixing-weight vector: finite, nonnegative, unit sum."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise ValidationError("weights must be a nonempty 1-D vector")
    if not np.all(np.isfinite(theta)):
        raise ValidationError("weights contain non-finite entries")
    if theta.min() < -tol:
        raise ValidationError(f"weights contain negative entry {theta.min():g}")
    total = theta.sum()
    if abs(total - 1.0) > tol:
        raise ValidationError(f"weights sum to {total!r}, expected 1 within {tol:g}")
    return theta


@dataclass(frozen=True)
class Grid:
    """Fixed grid of candidate coefficient vectors inside a closed box.

    points: (R, K) array, pairwise distinct rows.
    bounds: (K, 2) array of per-dimension [low, high] limits.
    scheme: construction label ("lattice", "halton", or "custom").
    """

    points: np.ndarray
    bounds: np.ndarray
    scheme: str = "custom"

    def __post_init__(self):
        pts = _as_readonly(np.atleast_2d(self.points))
        bounds = _as_readonly(np.atleast_2d(self.bounds))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bounds", bounds)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("grid points must be finite")
        if bounds.shape != (pts.shape[1], 2):
            raise ValidationError("bounds must be (K, 2) for K-dimensional points")
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValidationError("each bounds row needs low < high")
        if np.any(pts < bounds[:, 0]) or np.any(pts > bounds[:, 1]):
            raise ValidationError("grid points fall outside bounds")
        if len(np.unique(pts, axis=0)) != pts.shape[0]:
            raise ValidationError("grid points must be pairwise distinct")

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def n_dims(self):
        return self.points.shape[1]


def _radical_inverse(index, base):
    inv, scale = 0.0, 1.0 / base
    while index > 0:
        index, digit = divmod(index, base)
        inv += digit * scale
        scale /= base
    return inv


def build_grid(bounds, n_points, scheme="lattice"):
    """Construct a grid over a closed box.

    "lattice" places n_points**(1/K) equally spaced values per axis with the
    box endpoints included (the box midpoint when a single value per axis),
    so n_points must be a perfect K-th power.  "halton" takes the first
    n_points terms of the Halton sequence (prime bases, index starting at 1)
    scaled affinely into the box.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValidationError("bounds must be a (K, 2) array")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValidationError("each bounds row needs low < high")
    n_dims = bounds.shape[0]
    n_points = int(n_points)
    if n_points < 1:
        raise ValidationError("n_points must be positive")

    if scheme == "lattice":
        per_axis = int(round(n_points ** (1.0 / n_dims)))
        # guard against float roundoff in the root
        for cand in (per_axis - 1, per_axis, per_axis + 1):
            if cand >= 1 and cand**n_dims == n_points:
                per_axis = cand
                break
        else:
            raise ValidationError(
                f"lattice size {n_points} is not a perfect power for {n_dims} dimensions"
            )
        axes = []
        for lo, hi in bounds:
            if per_axis == 1:
                axes.append(np.array([(lo + hi) / 2.0]))
            else:
                axes.append(np.linspace(lo, hi, per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.column_stack([m.ravel() for m in mesh])
    elif scheme == "halton":
        if n_dims > len(_PRIMES):
            raise ValidationError(f"halton grids support at most {len(_PRIMES)} dimensions")
        unit = np.empty((n_points, n_dims))
        for dim in range(n_dims):
            base = _PRIMES[dim]
            unit[:, dim] = [_radical_inverse(i, base) for i in range(1, n_points + 1)]
        points = bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])
    else:
        raise ValidationError(f"unknown grid scheme {scheme!r}")
    return Grid(points=points, bounds=bounds, scheme=scheme)


@dataclass(frozen=True)
class ChoiceDataset:
    """Discrete-choice panel: N units, J inside alternatives, K covariates.

    x: (N, J, K) alternative-specific covariates.
    choices: (N, J) one-hot indicator of the chosen alternative; an all-zero
        row means the outside option was chosen (requires has_outside).
    has_outside: whether an outside option with utility 0 exists.
    """

    x: np.ndarray
    choices: np.ndarray
    has_outside: bool
    unit_ids: tuple = None
    var_names: tuple = None

    def __post_init__(self):
        x = _as_readonly(self.x)
        choices = _as_readonly(self.choices)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "choices", choices)
        if x.ndim != 3:
            raise ValidationError("x must have shape (N, J, K)")
        n, j = x.shape[0], x.shape[1]
        if n < 1 or j < 1 or x.shape[2] < 1:
            raise ValidationError("x must be nonempty in every dimension")
        if not np.all(np.isfinite(x)):
            raise ValidationError("covariates contain non-finite values")
        if choices.shape != (n, j):
            raise ValidationError("choices must have shape (N, J)")
        if not np.all((choices == 0.0) | (choices == 1.0)):
            raise ValidationError("choices must be 0/1 indicators")
        row_sums = choices.sum(axis=1)
        if np.any(row_sums > 1):
            bad = int(np.argmax(row_sums > 1))
            raise ValidationError(f"unit {self._unit_label(bad)} marks multiple choices")
        if not self.has_outside and np.any(row_sums == 0):
            bad = int(np.argmax(row_sums == 0))
            raise ValidationError(
                f"unit {self._unit_label(bad)} chose nothing but there is no outside option"
            )
        if self.unit_ids is not None and len(self.unit_ids) != n:
            raise ValidationError("unit_ids length must match N")
        if self.var_names is not None and len(self.var_names) != x.shape[2]:
            raise ValidationError("var_names length must match K")

    def _unit_label(self, i):
        return self.unit_ids[i] if self.unit_ids is not None else i

    @property
    def n_units(self):
        return self.x.shape[0]

    @property
    def n_alts(self):
        return self.x.shape[1]

    @property
    def n_vars(self):
        return self.x.shape[2]

    @property
    def chosen(self):
        """Index of the chosen alternative per unit, -1 for the outside option."""
        inside = self.choices.sum(axis=1) > 0
        return np.where(inside, np.argmax(self.choices, axis=1), -1)


def choice_vector(dataset):
    """Stacked response in row order (unit fastest over alternatives)."""
    return dataset.choices.reshape(-1).astype(float)


@dataclass(frozen=True)
class KernelMatrix:
    """Logit choice probabilities for every grid point.

    z: (N*J, R) matrix; row i*J + j holds the probability that unit i picks
    alternative j when its coefficients equal grid point r.
    """

    z: np.ndarray
    n_units: int
    n_alts: int
    has_outside: bool

    @property
    def n_points(self):
        return self.z.shape[1]

    @property
    def per_alt(self):
        """View shaped (N, J, R)."""
        return self.z.reshape(self.n_units, self.n_alts, self.n_points)


def kernel_matrix(dataset, grid, fixed_cols=(), fixed_coefs=None):
    """Evaluate the logit kernel of a dataset at every grid point.

    Utilities are x_random @ grid_point plus, when fixed_cols is nonempty,
    x_fixed @ fixed_coefs shared across grid points.  With an outside option
    the choice set gains a zero-utility alternative.  Probabilities are
    computed with a max-utility shift, so extreme utilities saturate instead
    of overflowing.
    """
    fixed_cols = tuple(int(c) for c in fixed_cols)
    all_cols = range(dataset.n_vars)
    if any(c not in all_cols for c in fixed_cols) or len(set(fixed_cols)) != len(fixed_cols):
        raise ValidationError("fixed_cols must be distinct covariate column indices")
    random_cols = [c for c in all_cols if c not in fixed_cols]
    if len(random_cols) != grid.n_dims:
        raise ValidationError(
            f"grid has {grid.n_dims} dimensions but {len(random_cols)} random columns remain"
        )

    util = np.tensordot(dataset.x[:, :, random_cols], grid.points, axes=([2], [1]))
    if fixed_cols:
        if fixed_coefs is None:
            raise ValidationError("fixed_coefs required when fixed_cols is nonempty")
        fixed_coefs = np.asarray(fixed_coefs, dtype=float)
        if fixed_coefs.shape != (len(fixed_cols),):
            raise ValidationError("fixed_coefs length must match fixed_cols")
        if not np.all(np.isfinite(fixed_coefs)):
            raise ValidationError("fixed_coefs must be finite")
        util += (dataset.x[:, :, fixed_cols] @ fixed_coefs)[:, :, None]
    if not np.all(np.isfinite(util)):
        raise ValidationError("utilities are non-finite; check covariates and grid scale")

    # shift by the rowwise max utility (including the outside 0) before exp
    shift = util.max(axis=1, keepdims=True)
    if dataset.has_outside:
        shift = np.maximum(shift, 0.0)
    expu = np.exp(util - shift)
    denom = expu.sum(axis=1, keepdims=True)
    if dataset.has_outside:
        denom = denom + np.exp(-shift)
    z = expu / denom
    n, j = dataset.n_units, dataset.n_alts
    return KernelMatrix(
        z=z.reshape(n * j, grid.n_points),
        n_units=n,
        n_alts=j,
        has_outside=dataset.has_outside,
    )


def observed_choice_probs(kernel, dataset):
    """(N, R) probabilities of each unit's observed choice at each grid point."""
    z3 = kernel.per_alt
    chosen = dataset.chosen
    inside = chosen >= 0
    out = np.empty((kernel.n_units, kernel.n_points))
    idx = np.where(inside)[0]
    out[idx] = z3[idx, chosen[idx], :]
    if np.any(~inside):
        out[~inside] = 1.0 - z3[~inside].sum(axis=1)
    return out


def predict_choices(kernel, theta):
    """Modal predicted choice per unit under mixing weights theta.

    Returns the alternative index, or -1 when the outside option has strictly
    the highest predicted probability.  Ties among alternatives go to the
    lowest index; the outside option never wins a tie.
    """
    probs = kernel.per_alt @ np.asarray(theta, dtype=float)
    best = np.argmax(probs, axis=1)
    if not kernel.has_outside:
        return best
    p_best = probs[np.arange(kernel.n_units), best]
    p_out = 1.0 - probs.sum(axis=1)
    return np.where(p_out > p_best, -1, best)


@dataclass(frozen=True)
class TransformedDesign:
    """Design with one grid column used as reference and subtracted out.

    Encodes the reduced system y_t = z_t @ theta_rest where the reference
    weight is recovered as 1 - sum(theta_rest); feasible weights satisfy
    theta_rest >= 0 and sum(theta_rest) <= 1.
    """

    y: np.ndarray
    z: np.ndarray
    ref_index: int

    @property
    def n_points(self):
        return self.z.shape[1] + 1


def transform_design(z, y, ref_index=None):
    """Subtract a reference column from the design and drop it.

    ref_index defaults to the last grid point.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise ValidationError("z must be (rows, R) aligned with y")
    n_points = z.shape[1]
    if n_points < 2:
        raise ValidationError("transformation needs at least two grid points")
    if ref_index is None:
        ref_index = n_points - 1
    ref_index = int(ref_index)
    if not 0 <= ref_index < n_points:
        raise ValidationError(f"ref_index {ref_index} out of range")
    ref = z[:, ref_index]
    keep = [c for c in range(n_points) if c != ref_index]
    return TransformedDesign(y=y - ref, z=z[:, keep] - ref[:, None], ref_index=ref_index)


def cdf_indicator(grid, points):
    """(E, R) indicator matrix: entry (e, r) is 1 when grid point r <= point e
    componentwise.  Multiplying by a weight vector evaluates the step CDF."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != grid.n_dims:
        raise ValidationError("evaluation points must match the grid dimension")
    # chunk to keep the boolean intermediate small for large E * R
    out = np.empty((points.shape[0], grid.n_points))
    step = max(1, int(2_000_000 // max(1, grid.n_points)))
    for start in range(0, points.shape[0], step):
        block = points[start : start + step]
        out[start : start + step] = np.all(
            grid.points[None, :, :] <= block[:, None, :], axis=2
        )
    return out


@dataclass(frozen=True)
class StepCDF:
    """Step-function CDF putting mass weights[r] at grid point r."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_readonly(self.weights))
        check_weights(self.weights)
        if self.weights.shape[0] != self.grid.n_points:
            raise ValidationError("weights length must match the grid size")

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        scalar = points.ndim == 1
        values = cdf_indicator(self.grid, points) @ self.weights
        return float(values[0]) if scalar else values

    def marginal(self, dim):
        """Sorted support values and cumulative weights along one dimension."""
        coords = self.grid.points[:, dim]
        order = np.argsort(coords, kind="stable")
        return coords[order], np.cumsum(self.weights[order])
