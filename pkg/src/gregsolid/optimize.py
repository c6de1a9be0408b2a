"""ADMM over the free tangent-patch control points.

The variables X enter the grid vertices affinely (``P = P0 + B X``), so the
smoothing subproblem is a quadratic solved by steepest descent with exact
trial steps and Armijo backtracking, while the Jacobian subproblems use
normalized sub-gradient steps with a diminishing ``a / t`` schedule.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericError
from .gregory import GregorySolid, LinearGridMap, linear_grid_map, pack_variables, unpack_variables
from .quality import EPSILON, e_positive, e_sparse, jacobian_values, jacobian_vjp, smoothing_operator

log = logging.getLogger(__name__)

THREADS_ENV = "GREGSOLID_THREADS"


def worker_count() -> int:
    """Worker cap from ``GREGSOLID_THREADS`` (0 or unset means automatic)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be non-negative")
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class SolverConfig:
    mu: float = 1e-5
    nu: float = 0.1
    rho: float = 1.0
    epsilon: float = EPSILON
    max_outer: int = 50
    inner_iters: int = 15
    sub_iters: int = 25
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    sub_step: float = 0.1
    tol_factor: float = 1e-4
    fd_factor: float = 1e-4

    def __post_init__(self):
        for name in ("rho", "epsilon", "max_outer", "inner_iters", "sub_iters", "armijo_c", "initial_step", "sub_step", "tol_factor", "fd_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu < 0 or self.nu < 0:
            raise ValueError("mu and nu must be non-negative")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")


def numeric_gradient(f, X, step: float = 1e-4, coords=None, workers: int | None = None) -> np.ndarray:
    """Central differences of ``f`` at ``X`` (optionally on a coordinate subset)."""
    X = np.asarray(X, dtype=float)
    idx = np.arange(X.size) if coords is None else np.asarray(coords, dtype=int)

    def partial(i):
        e = np.zeros_like(X)
        e[i] = step
        fp, fm = f(X + e), f(X - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective is not finite when perturbing coordinate {i}")
        return (fp - fm) / (2 * step)

    n = worker_count() if workers is None else workers
    if n > 1 and idx.size > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            vals = list(pool.map(partial, idx))
    else:
        vals = [partial(i) for i in idx]
    g = np.zeros_like(X)
    g[idx] = vals
    return g if coords is None else g[idx]


class Problem:
    """Objective terms as functions of X with analytic gradients."""

    def __init__(self, gmap: LinearGridMap, cfg: SolverConfig):
        self.gmap = gmap
        self.cfg = cfg
        grid = gmap.grid
        self.cells = grid.cells
        A = smoothing_operator(grid)
        self.r0 = A @ gmap.P0
        self.M = np.asarray(A @ gmap.B)
        pts = gmap.P0
        self.diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def points(self, X):
        return self.gmap.points(X)

    def jacobians(self, X):
        J, _ = jacobian_values(self.points(X), self.cells)
        return J

    # smoothing: ||r0 + M X||^2 with X viewed as (n_free, 3)
    def smooth(self, X) -> float:
        r = self.r0 + self.M @ np.asarray(X).reshape(-1, 3)
        return float(np.sum(r * r))

    def smooth_grad(self, X) -> np.ndarray:
        r = self.r0 + self.M @ np.asarray(X).reshape(-1, 3)
        return (2.0 * self.M.T @ r).ravel()

    def smooth_hess(self, V) -> np.ndarray:
        return (2.0 * self.M.T @ (self.M @ np.asarray(V).reshape(-1, 3))).ravel()

    def positive(self, X) -> float:
        return e_positive(self.jacobians(X), self.cfg.epsilon)

    def positive_grad(self, X) -> np.ndarray:
        J = self.jacobians(X)
        dJ = np.where(J >= 0, -1.0 / (J + self.cfg.epsilon) ** 2, 0.0)
        return self.gmap.pullback(jacobian_vjp(self.points(X), self.cells, dJ))

    def sparse_l1(self, X) -> float:
        return e_sparse(self.jacobians(X))[1]

    def sparse_grad(self, X) -> np.ndarray:
        J = self.jacobians(X)
        dJ = np.where(J < 0, -1.0, 0.0)
        return self.gmap.pullback(jacobian_vjp(self.points(X), self.cells, dJ))

    def terms(self, X) -> dict:
        J = self.jacobians(X)
        l0, l1 = e_sparse(J)
        return {
            "smooth": self.smooth(X),
            "positive": e_positive(J, self.cfg.epsilon),
            "sparse_l0": l0,
            "sparse_l1": l1,
        }

    def total(self, X, terms=None) -> float:
        t = self.terms(X) if terms is None else terms
        return t["smooth"] + self.cfg.mu * t["positive"] + self.cfg.nu * t["sparse_l1"]


@dataclass
class AdmmState:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    UY: np.ndarray
    UZ: np.ndarray
    rho: float
    mu: float
    nu: float
    epsilon: float
    iteration: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        n = self.X.size
        if any(v.size != n for v in (self.Y, self.Z, self.UY, self.UZ)):
            raise ValueError("ADMM vectors must have equal length")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @classmethod
    def initial(cls, X0, cfg: SolverConfig) -> AdmmState:
        X0 = np.asarray(X0, dtype=float)
        z = np.zeros_like(X0)
        return cls(X0.copy(), X0.copy(), X0.copy(), z.copy(), z.copy(), cfg.rho, cfg.mu, cfg.nu, cfg.epsilon)


def x_objective(problem: Problem, state: AdmmState, X) -> float:
    dy = X - state.Y + state.UY
    dz = X - state.Z + state.UZ
    return problem.smooth(X) + 0.5 * state.rho * (dy @ dy + dz @ dz)


def x_update(problem: Problem, state: AdmmState, cfg: SolverConfig):
    """Gradient descent on the smoothing subproblem; returns ``(X, stalled)``."""
    X = state.X.copy()
    f = x_objective(problem, state, X)
    stalled = False
    for _ in range(cfg.inner_iters):
        g = problem.smooth_grad(X) + state.rho * (2 * X - state.Y + state.UY - state.Z + state.UZ)
        gg = g @ g
        if gg == 0.0:
            break
        curv = g @ problem.smooth_hess(g) + 2 * state.rho * gg
        step = cfg.initial_step * gg / curv
        while True:
            trial = X - step * g
            ft = x_objective(problem, state, trial)
            if ft <= f - cfg.armijo_c * step * gg:
                break
            step *= cfg.backtrack
            if step < 1e-14:
                stalled = True
                break
        if stalled:
            break
        X, f = trial, ft
    return X, stalled


def _subgradient(objective, gradient, start, prox, a: float, iters: int):
    """Normalized sub-gradient descent with steps ``a / t``, best iterate kept."""
    best, fbest = start, objective(start)
    fp = objective(prox)
    if fp < fbest:
        best, fbest = prox, fp
    Y = best
    for t in range(1, iters + 1):
        g = gradient(Y)
        norm = np.linalg.norm(g)
        if norm == 0 or not np.isfinite(norm):
            break
        Y = Y - (a / t) * g / norm
        fy = objective(Y)
        if not np.isfinite(fy):
            raise NumericError("sub-gradient iterate produced a non-finite objective")
        if fy < fbest:
            best, fbest = Y, fy
    return best


def y_update(problem: Problem, state: AdmmState, cfg: SolverConfig) -> np.ndarray:
    prox = state.X + state.UY
    rho, mu = state.rho, state.mu
    if mu == 0:
        return prox

    def obj(Y):
        d = state.X - Y + state.UY
        return mu * problem.positive(Y) + 0.5 * rho * (d @ d)

    def grad(Y):
        return mu * problem.positive_grad(Y) - rho * (state.X - Y + state.UY)

    return _subgradient(obj, grad, state.Y, prox, cfg.sub_step * problem.diag, cfg.sub_iters)


def z_update(problem: Problem, state: AdmmState, cfg: SolverConfig) -> np.ndarray:
    prox = state.X + state.UZ
    rho, nu = state.rho, state.nu
    if nu == 0:
        return prox

    def obj(Z):
        d = state.X - Z + state.UZ
        return nu * problem.sparse_l1(Z) + 0.5 * rho * (d @ d)

    def grad(Z):
        return nu * problem.sparse_grad(Z) - rho * (state.X - Z + state.UZ)

    return _subgradient(obj, grad, state.Z, prox, cfg.sub_step * problem.diag, cfg.sub_iters)


@dataclass
class AdmmResult:
    solid: GregorySolid
    X: np.ndarray
    history: list
    initial: dict
    final: dict
    iterations: int
    converged: bool
    best_iteration: int

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "best_iteration": self.best_iteration,
            "initial": self.initial,
            "final": self.final,
        }


def admm_solve(solid: GregorySolid, grid, cfg: SolverConfig | None = None, gmap: LinearGridMap | None = None) -> AdmmResult:
    """Run the consensus ADMM and return the best admissible consensus iterate.

    An iterate is admissible when its negative-Jacobian count does not exceed
    the initial one; among those the smallest combined (l1) objective wins,
    the starting point included.
    """
    cfg = cfg or SolverConfig()
    gmap = gmap or linear_grid_map(solid, grid)
    problem = Problem(gmap, cfg)
    X0 = pack_variables(solid)
    state = AdmmState.initial(X0, cfg)
    tol = cfg.tol_factor * np.sqrt(max(X0.size, 1))

    t0 = problem.terms(X0)
    e0 = problem.total(X0, t0)
    if not np.isfinite(e0):
        raise NumericError("initial objective is not finite")
    initial = dict(t0, objective=e0)
    best_X, best_e, best_it = X0, e0, 0
    converged = False
    for it in range(1, cfg.max_outer + 1):
        X, stalled = x_update(problem, state, cfg)
        state.X = X
        Y = y_update(problem, state, cfg)
        Z = z_update(problem, state, cfg)
        dual = state.rho * np.sqrt(np.sum((Y - state.Y) ** 2) + np.sum((Z - state.Z) ** 2))
        state.Y, state.Z = Y, Z
        state.UY = state.UY + state.rho * (X - Y)
        state.UZ = state.UZ + state.rho * (X - Z)
        primal = float(np.sqrt(np.sum((X - Y) ** 2) + np.sum((X - Z) ** 2)))
        state.iteration = it

        terms = problem.terms(X)
        e = problem.total(X, terms)
        if not np.isfinite(e):
            raise NumericError(f"objective became non-finite at iteration {it} (terms {terms})")
        state.history.append(
            dict(iteration=it, objective=e, primal_residual=primal, dual_residual=float(dual), x_stalled=stalled, **terms)
        )
        log.debug("admm %d: E=%.6g l0=%d primal=%.3g dual=%.3g", it, e, terms["sparse_l0"], primal, dual)
        if terms["sparse_l0"] <= t0["sparse_l0"] and e < best_e:
            best_X, best_e, best_it = X, e, it
        if primal < tol and dual < tol:
            converged = True
            break

    result_solid = unpack_variables(solid, best_X)
    final_terms = problem.terms(best_X)
    final = dict(final_terms, objective=problem.total(best_X, final_terms))
    return AdmmResult(result_solid, best_X, state.history, initial, final, state.iteration, converged, best_it)


def config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
