"""Simplex-constrained ridge least squares.

Minimizes f(theta) = ||y - Z theta||^2 / (2 * rows) + mu/2 * ||theta||^2
over the probability simplex (or over {theta >= 0, sum <= 1}).  The solver
is an accelerated projected-gradient method with monotone restarts plus an
exact active-set refinement, and it reports a KKT residual certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError

#: iterate entries above this count as support points in KKT checks
ACTIVE_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    mu: float = 0.0
    tol_kkt: float = 1e-9
    tol_obj: float = 1e-12
    max_iters: int = 50_000
    active_tol: float = ACTIVE_TOL
    record_trace: bool = False

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.mu < 0:
            raise ValidationError("mu must be finite and nonnegative")
        if self.tol_kkt <= 0 or self.tol_obj <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be positive")


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the first-order conditions at a candidate solution.

    lambda_hat is the multiplier on the unit-sum constraint in the convention
    grad f(theta)_r + lambda = nu_r with nu >= 0 and nu_r theta_r = 0, so on
    the support grad f equals -lambda.
    """

    stationarity: float
    complementarity: float
    feasibility: float
    lambda_hat: float
    nu: np.ndarray

    @property
    def total(self):
        return max(self.stationarity, self.complementarity, self.feasibility)


@dataclass(frozen=True)
class Solution:
    theta: np.ndarray
    objective: float
    lambda_hat: float
    iterations: int
    converged: bool
    kkt: KKTReport
    mu: float
    trace: np.ndarray = None


class QuadraticForm:
    """Data-reduced objective: gram = Z'Z/rows, lin = Z'y/rows, const = y'y/rows.

    All solver iterations run in R-dimensional space, so repeated solves over
    a regularization path never touch the raw design again.
    """

    def __init__(self, gram, lin, const, mu=0.0):
        self.gram = np.asarray(gram, dtype=float)
        self.lin = np.asarray(lin, dtype=float)
        self.const = float(const)
        self.mu = float(mu)
        r = self.gram.shape[0]
        if self.gram.shape != (r, r) or self.lin.shape != (r,):
            raise ValidationError("gram must be (R, R) and lin (R,)")
        if not (np.all(np.isfinite(self.gram)) and np.all(np.isfinite(self.lin))):
            raise ValidationError("design products must be finite")

    @classmethod
    def from_design(cls, z, y, mu=0.0):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise ValidationError("z must be (rows, R) aligned with y")
        if z.shape[0] < 1 or z.shape[1] < 1:
            raise ValidationError("design must be nonempty")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValidationError("design contains non-finite values")
        rows = z.shape[0]
        return cls(z.T @ z / rows, z.T @ y / rows, y @ y / rows, mu)

    @property
    def n_points(self):
        return self.gram.shape[0]

    def with_mu(self, mu):
        return QuadraticForm(self.gram, self.lin, self.const, mu)

    def value(self, theta):
        return 0.5 * (theta @ self.gram @ theta - 2.0 * self.lin @ theta + self.const) + (
            0.5 * self.mu * theta @ theta
        )

    def grad(self, theta):
        return self.gram @ theta - self.lin + self.mu * theta

    def lipschitz(self, iters=30, tol=1e-8):
        """Largest Gram eigenvalue by power iteration, plus the ridge term."""
        r = self.n_points
        v = np.full(r, 1.0 / np.sqrt(r))
        lam = 0.0
        for _ in range(iters):
            w = self.gram @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return self.mu
            v = w / norm
            lam_new = v @ self.gram @ v
            if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        return lam + self.mu


def project_simplex(v):
    """Euclidean projection onto {theta >= 0, sum(theta) = 1} by sorting."""
    v = np.asarray(v, dtype=float)
    sorted_desc = np.sort(v)[::-1]
    cumulative = np.cumsum(sorted_desc) - 1.0
    ranks = np.arange(1, v.size + 1)
    candidates = sorted_desc - cumulative / ranks
    rho = ranks[candidates > 0][-1]
    tau = cumulative[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def project_subsimplex(v):
    """Euclidean projection onto {theta >= 0, sum(theta) <= 1}."""
    clipped = np.maximum(np.asarray(v, dtype=float), 0.0)
    if clipped.sum() <= 1.0:
        return clipped
    return project_simplex(v)


def kkt_residuals(z, y, mu, theta, active_tol=ACTIVE_TOL):
    """KKT residual certificate for the unit-sum problem at theta."""
    quad = QuadraticForm.from_design(z, y, mu)
    return _kkt_from_grad(theta, quad.grad(np.asarray(theta, dtype=float)), active_tol)


def _kkt_from_grad(theta, grad, active_tol):
    support = theta > active_tol
    if not np.any(support):
        support = theta == theta.max()
    lam_eq = float(grad[support].mean())
    nu = grad - lam_eq
    stationarity = float(abs(nu[support]).max())
    if np.any(~support):
        stationarity = max(stationarity, float(np.maximum(-nu[~support], 0.0).max()))
    complementarity = float(abs(nu * theta).max())
    feasibility = max(abs(float(theta.sum()) - 1.0), max(0.0, -float(theta.min())))
    return KKTReport(
        stationarity=stationarity,
        complementarity=complementarity,
        feasibility=feasibility,
        lambda_hat=-lam_eq,
        nu=nu,
    )


def _face_system_solve(quad, active):
    """Equality-constrained normal equations on one face: weights and multiplier."""
    s = active.size
    system = np.empty((s + 1, s + 1))
    system[:s, :s] = quad.gram[np.ix_(active, active)]
    system[:s, :s][np.diag_indices(s)] += quad.mu
    system[:s, s] = 1.0
    system[s, :s] = 1.0
    system[s, s] = 0.0
    rhs = np.append(quad.lin[active], 1.0)
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(solution)):
        return None
    return solution[:s]


def _refine_equality(quad, active, nonneg_multiplier=False):
    """Active-set refinement toward the exact unit-sum minimizer.

    Drops nonpositive weights, re-solves, and admits the most violated
    outside index until the face is optimal.  Bounded passes; returns None
    when refinement stalls so the caller keeps iterating instead.
    """
    r = quad.n_points
    active = list(active)
    for _ in range(2 * r + 8):
        face = np.asarray(active, dtype=int)
        theta_face = _face_system_solve(quad, face)
        if theta_face is None:
            return None
        if theta_face.min() <= 0.0:
            keep = theta_face > 0.0
            if not keep.any():
                return None
            active = [a for a, k in zip(active, keep) if k]
            continue
        candidate = np.zeros(r)
        candidate[face] = theta_face
        candidate /= candidate.sum()
        grad = quad.grad(candidate)
        lam_eq = float(grad[face].mean())
        scale = max(1.0, float(np.abs(grad).max()))
        nu = grad - lam_eq
        nu[face] = 0.0
        worst = int(np.argmin(nu))
        if nu[worst] < -1e-12 * scale:
            active.append(worst)
            continue
        if nonneg_multiplier and lam_eq > 1e-12 * scale:
            return None
        return candidate
    return None


def _refine_free(quad, active):
    """Active-set refinement for an optimum with a slack weight budget."""
    r = quad.n_points
    active = list(active)
    for _ in range(2 * r + 8):
        face = np.asarray(active, dtype=int)
        block = quad.gram[np.ix_(face, face)].copy()
        block[np.diag_indices(face.size)] += quad.mu
        try:
            theta_face = np.linalg.solve(block, quad.lin[face])
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(theta_face)):
            return None
        if theta_face.min() <= 0.0:
            keep = theta_face > 0.0
            if not keep.any():
                return None
            active = [a for a, k in zip(active, keep) if k]
            continue
        if theta_face.sum() > 1.0:
            return None
        candidate = np.zeros(r)
        candidate[face] = theta_face
        grad = quad.grad(candidate)
        scale = max(1.0, float(np.abs(grad).max()))
        grad_off = grad.copy()
        grad_off[face] = 0.0
        worst = int(np.argmin(grad_off))
        if grad_off[worst] < -1e-12 * scale:
            active.append(worst)
            continue
        return candidate
    return None


def _polish(quad, theta, active_tol, equality=True):
    """Exact candidate minimizer grown from the iterate's current support."""
    support = np.flatnonzero(theta > active_tol)
    if support.size == 0:
        support = np.array([int(np.argmax(theta))])
    if equality:
        return _refine_equality(quad, support)
    candidate = _refine_free(quad, support)
    if candidate is not None:
        return candidate
    # slack-budget face infeasible: the budget binds at the optimum
    return _refine_equality(quad, support, nonneg_multiplier=True)


def _solve_quadratic(quad, config, warm_start=None, equality=True):
    r = quad.n_points
    project = project_simplex if equality else project_subsimplex
    if r == 1:
        if equality:
            theta = np.ones(1)
        else:
            # scalar quadratic: minimize directly then clip into [0, 1]
            curv = quad.gram[0, 0] + quad.mu
            raw = quad.lin[0] / curv if curv > 0 else 0.0
            theta = np.array([min(max(raw, 0.0), 1.0)])
        grad = quad.grad(theta)
        kkt = _kkt_from_grad(theta, grad, config.active_tol)
        return Solution(
            theta=theta,
            objective=quad.value(theta),
            lambda_hat=kkt.lambda_hat,
            iterations=0,
            converged=True,
            kkt=kkt,
            mu=quad.mu,
            trace=np.array([quad.value(theta)]) if config.record_trace else None,
        )

    if warm_start is not None:
        theta = project(np.asarray(warm_start, dtype=float))
    else:
        theta = np.full(r, 1.0 / r)
    lipschitz = quad.lipschitz()
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    objective = quad.value(theta)
    momentum = theta.copy()
    t_acc = 1.0
    trace = [objective] if config.record_trace else None
    check_every = 10
    stall_count = 0

    def finish(theta, objective, iteration, converged, kkt):
        return Solution(
            theta=theta,
            objective=objective,
            lambda_hat=kkt.lambda_hat,
            iterations=iteration,
            converged=converged,
            kkt=kkt,
            mu=quad.mu,
            trace=np.asarray(trace) if trace is not None else None,
        )

    iteration = 0
    while iteration < config.max_iters:
        iteration += 1
        candidate = project(momentum - step * quad.grad(momentum))
        candidate_obj = quad.value(candidate)
        if candidate_obj > objective:
            # momentum overshot: restart acceleration with a plain step
            t_acc = 1.0
            candidate = project(theta - step * quad.grad(theta))
            candidate_obj = quad.value(candidate)
            if candidate_obj > objective:
                candidate, candidate_obj = theta, objective
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        momentum = candidate + ((t_acc - 1.0) / t_next) * (candidate - theta)
        t_acc = t_next

        stalled = abs(objective - candidate_obj) <= config.tol_obj * max(1.0, abs(candidate_obj))
        stall_count = stall_count + 1 if stalled else 0
        theta, objective = candidate, candidate_obj
        if trace is not None:
            trace.append(objective)

        if iteration % check_every == 0 or stall_count >= 3:
            if equality:
                kkt = _kkt_from_grad(theta, quad.grad(theta), config.active_tol)
                if kkt.total <= config.tol_kkt:
                    return finish(theta, objective, iteration, True, kkt)
                polished = _polish(quad, theta, config.active_tol)
                if polished is not None:
                    polished_obj = quad.value(polished)
                    slack = config.tol_obj * max(1.0, abs(objective))
                    if polished_obj <= objective + slack:
                        pol_kkt = _kkt_from_grad(polished, quad.grad(polished), config.active_tol)
                        if pol_kkt.total <= config.tol_kkt:
                            if trace is not None:
                                trace.append(polished_obj)
                            return finish(polished, polished_obj, iteration, True, pol_kkt)
            else:
                # inequality form: certify via the projected-gradient fixed point
                residual = theta - project(theta - step * quad.grad(theta))
                if np.abs(residual).max() <= config.tol_kkt * max(1.0, step):
                    kkt = _kkt_from_grad(theta, quad.grad(theta), config.active_tol)
                    return finish(theta, objective, iteration, True, kkt)
                polished = _polish(quad, theta, config.active_tol, equality=False)
                if polished is not None:
                    polished_obj = quad.value(polished)
                    if polished_obj <= objective + config.tol_obj * max(1.0, abs(objective)):
                        residual = polished - project(polished - step * quad.grad(polished))
                        if np.abs(residual).max() <= config.tol_kkt * max(1.0, step):
                            if trace is not None:
                                trace.append(polished_obj)
                            kkt = _kkt_from_grad(polished, quad.grad(polished), config.active_tol)
                            return finish(polished, polished_obj, iteration, True, kkt)
            if stall_count >= 3:
                stall_count = 0

    kkt = _kkt_from_grad(theta, quad.grad(theta), config.active_tol)
    best = finish(theta, objective, iteration, False, kkt)
    raise ConvergenceError(
        f"solver hit max_iters={config.max_iters} with KKT residual {kkt.total:.3e}",
        best=best,
    )


def solve_simplex_ridge(z, y, config=None, warm_start=None, equality=True):
    """Solve the constrained ridge problem for a raw design.

    With equality=True the feasible set is the probability simplex; with
    equality=False it is {theta >= 0, sum(theta) <= 1}, the form obtained
    after eliminating a reference grid point.
    """
    config = config or SolverConfig()
    quad = QuadraticForm.from_design(z, y, config.mu)
    return _solve_quadratic(quad, config, warm_start, equality)


def solve_prepared(quad, config=None, warm_start=None, equality=True):
    """Solve from a precomputed QuadraticForm (fast path for CV loops)."""
    config = config or SolverConfig(mu=quad.mu)
    if config.mu != quad.mu:
        quad = quad.with_mu(config.mu)
    return _solve_quadratic(quad, config, warm_start, equality)


def lattice_search(z, y, mu, step):
    """Exhaustive minimizer over the simplex lattice with the given resolution.

    Enumerates every weight vector whose entries are multiples of step and
    sum to one, and returns (theta, objective) for the best lattice point.
    Intended as an independent cross-check on small problems, so the grid
    size is capped at four.
    """
    quad = QuadraticForm.from_design(z, y, mu)
    r = quad.n_points
    if r > 4:
        raise ValidationError("lattice search supports at most 4 grid points")
    if not 0 < step <= 0.1:
        raise ValidationError("step must lie in (0, 0.1]")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValidationError("1/step must be an integer")

    matrix = quad.gram + quad.mu * np.eye(r)

    def evaluate(block):
        return 0.5 * np.einsum("ij,jk,ik->i", block, matrix, block) - block @ quad.lin + (
            0.5 * quad.const
        )

    best_theta, best_val = None, np.inf
    if r == 1:
        best_theta, best_val = np.ones(1), quad.value(np.ones(1))
    elif r == 2:
        k = np.arange(n + 1)
        block = np.column_stack([k, n - k]) / n
        vals = evaluate(block)
        i = int(np.argmin(vals))
        best_theta, best_val = block[i], float(vals[i])
    else:
        for k1 in range(n + 1):
            rem = n - k1
            if r == 3:
                k2 = np.arange(rem + 1)
                block = np.column_stack([np.full(rem + 1, k1), k2, rem - k2]) / n
            else:
                k2g, k3g = np.meshgrid(np.arange(rem + 1), np.arange(rem + 1), indexing="ij")
                keep = k2g + k3g <= rem
                k2, k3 = k2g[keep], k3g[keep]
                block = np.column_stack([np.full(k2.size, k1), k2, k3, rem - k2 - k3]) / n
            vals = evaluate(block)
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_theta, best_val = block[i].copy(), float(vals[i])
    return best_theta, best_val
