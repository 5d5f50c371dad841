"""ADMM solver for weighted-L1 penalised convex losses.

Minimises ``(1/n) sum_i L(y_i, x_i' beta) + lam * sum_k w_k |beta_k|`` through
the substitution ``alpha = D beta`` with ``D = diag(w)``.  Each outer step runs a
safeguarded Newton solve for ``alpha``, a closed-form soft-threshold for
``theta`` and a dual ascent step.  Iteration stops once the primal residual
``||alpha - theta||_2`` is below ``primal_tol`` and ``theta`` has settled
(``eta^2 ||theta - theta_prev||_2 <= dual_tol``); the primal test alone can
fire long before the iterates converge.  ``eta`` is the starting value of
the augmented-Lagrangian parameter; with ``adapt_eta`` it is doubled or
halved every ``adapt_every`` iterations while one residual exceeds the other
by ``balance_ratio``, up to iteration ``adapt_until``, after which it is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    LossOverflowError,
    NonConvergenceError,
)
from .model import (
    DataShard,
    Family,
    LossModel,
    loss_derivatives,
    loss_values,
    validate_response,
)


@dataclass(frozen=True)
class AdmmConfig:
    eta: float = 1.0
    primal_tol: float = 1e-6
    max_outer_iter: int = 20000
    newton_tol: float = 1e-6
    max_newton_iter: int = 25
    curvature_floor: float = 1e-6
    hessian_reuse_tol: float = 0.05
    dual_tol: float = 1e-6
    adapt_eta: bool = True
    adapt_every: int = 10
    adapt_until: int = 1000
    balance_ratio: float = 10.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if not (self.primal_tol > 0 and self.newton_tol > 0 and self.dual_tol > 0):
            raise ConfigurationError("tolerances must be positive")
        if self.max_outer_iter < 1 or self.max_newton_iter < 1:
            raise ConfigurationError("iteration limits must be at least 1")
        if self.adapt_every < 1 or self.adapt_until < 0 or not self.balance_ratio > 1:
            raise ConfigurationError("adapt_every >= 1, adapt_until >= 0 and balance_ratio > 1 required")
        if self.curvature_floor < 0 or self.hessian_reuse_tol < 0:
            raise ConfigurationError("curvature_floor and hessian_reuse_tol must be nonnegative")


@dataclass
class SolverState:
    alpha: np.ndarray
    theta: np.ndarray
    dual: np.ndarray
    iter: int = 0
    primal_residual_norm: float = float("inf")
    newton_steps: int = field(default=0, compare=False)


def soft_threshold(x, t):
    """``sign(x) * max(|x| - t, 0)``; works on scalars and arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    # sign(x)*0 can be -0.0; normalise so zeros compare bit-exact
    out = out + 0.0
    if np.ndim(out) == 0:
        return float(out)
    return out


# --- smooth parts -----------------------------------------------------------


class QuadraticObjective:
    """``0.5 b'Gb - c'b + const``; the least-squares loss in sufficient statistics."""

    constant_hessian = True

    def __init__(self, gram: np.ndarray, lin: np.ndarray, const: float = 0.0):
        self.gram = np.asarray(gram, dtype=np.float64)
        self.lin = np.asarray(lin, dtype=np.float64)
        self.const = float(const)
        self.p = self.lin.shape[0]

    @classmethod
    def from_shard(cls, shard: DataShard) -> QuadraticObjective:
        n = shard.n
        x, y = shard.x, shard.y
        return cls(x.T @ x / n, x.T @ y / n, 0.5 * float(y @ y) / n)

    def value(self, beta: np.ndarray) -> float:
        return float(0.5 * beta @ (self.gram @ beta) - self.lin @ beta + self.const)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        return self.gram @ beta - self.lin

    def hessian(self, beta: np.ndarray, floor: float) -> np.ndarray:
        return self.gram

    def restrict(self, keep: np.ndarray) -> QuadraticObjective:
        return QuadraticObjective(self.gram[np.ix_(keep, keep)], self.lin[keep], self.const)


class ShardObjective:
    """``(1/n) sum_i L(y_i, x_i' b)`` evaluated directly on the rows."""

    constant_hessian = False

    def __init__(self, shard: DataShard, model: LossModel):
        self.x = shard.x
        self.y = validate_response(model, shard.y)
        self.model = model
        self.n, self.p = shard.x.shape

    def value(self, beta: np.ndarray) -> float:
        return float(loss_values(self.model, self.y, self.x @ beta).sum() / self.n)

    def derivatives(self, beta):
        """Linear predictor and per-row first and second derivatives."""
        z = self.x @ beta
        d1, d2 = loss_derivatives(self.model, self.y, z)
        return z, d1, d2

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        _, d1, _ = self.derivatives(beta)
        return self.x.T @ d1 / self.n

    def hessian(self, beta: np.ndarray, floor: float) -> np.ndarray:
        _, _, d2 = self.derivatives(beta)
        d2 = np.maximum(d2, floor)
        return (self.x.T * d2) @ self.x / self.n

    def restrict(self, keep: np.ndarray) -> ShardObjective:
        out = object.__new__(ShardObjective)
        out.x = np.ascontiguousarray(self.x[:, keep])
        out.y = self.y
        out.model = self.model
        out.n, out.p = out.x.shape
        return out


def make_objective(shard: DataShard, model: LossModel):
    if model.family is Family.LEAST_SQUARES:
        validate_response(model, shard.y)
        return QuadraticObjective.from_shard(shard)
    return ShardObjective(shard, model)


# --- ADMM steps ---------------------------------------------------------------


def admm_theta_update(state: SolverState, lam: float, cfg: AdmmConfig) -> np.ndarray:
    eta2 = cfg.eta**2
    return soft_threshold(state.alpha - state.dual / eta2, lam / eta2)


def _step1_value(obj, dinv, alpha, theta, dual, eta2):
    try:
        v = obj.value(dinv * alpha)
    except (LossOverflowError, FloatingPointError):
        return float("inf")
    diff = alpha - theta
    return v - dual @ diff + 0.5 * eta2 * (diff @ diff)


class _AlphaSolver:
    """Safeguarded Newton solver for the alpha subproblem.

    The factorised Hessian is kept between calls and refactorised once the
    linear predictor has moved more than ``cfg.hessian_reuse_tol`` (sup-norm)
    from where it was formed; ``0`` refactorises on every Newton step.
    """

    def __init__(self, obj, weights: np.ndarray, cfg: AdmmConfig):
        self.obj = obj
        self.dinv = 1.0 / weights
        self.cfg = cfg
        self.eta2 = cfg.eta**2
        self._chol = None
        self._z_at_chol = None
        if obj.constant_hessian:
            self._chol = self._factor(obj.gram)

    def set_eta2(self, eta2: float) -> None:
        self.eta2 = eta2
        if self.obj.constant_hessian:
            self._chol = self._factor(self.obj.gram)
        else:
            self._chol = None

    def _factor(self, hess_beta):
        h = self.dinv[:, None] * hess_beta * self.dinv[None, :]
        h[np.diag_indices_from(h)] += self.eta2
        return cho_factor(h, check_finite=False)

    def _gradient(self, alpha, theta, dual):
        beta = self.dinv * alpha
        if self.obj.constant_hessian:
            g, z = self.obj.gradient(beta), None
        else:
            z, d1, _ = self.obj.derivatives(beta)
            g = self.obj.x.T @ d1 / self.obj.n
        return self.dinv * g - dual + self.eta2 * (alpha - theta), z

    def _factor_at(self, alpha, z):
        if self.obj.constant_hessian:
            return self._chol
        tol = self.cfg.hessian_reuse_tol
        if (
            self._chol is None
            or tol <= 0
            or np.max(np.abs(z - self._z_at_chol)) > tol
        ):
            self._chol = self._factor(self.obj.hessian(self.dinv * alpha, self.cfg.curvature_floor))
            self._z_at_chol = z
        return self._chol

    def solve(self, alpha, theta, dual):
        cfg = self.cfg
        eta2 = self.eta2
        alpha = alpha.copy()
        fval = _step1_value(self.obj, self.dinv, alpha, theta, dual, eta2)
        if not np.isfinite(fval):
            raise DivergenceError("non-finite objective in alpha update", 0)
        steps = 0
        for t in range(cfg.max_newton_iter):
            grad, z = self._gradient(alpha, theta, dual)
            if not np.all(np.isfinite(grad)):
                raise DivergenceError("non-finite gradient in alpha update", t)
            # H >= eta^2 I, so this bounds the Newton step's sup-norm
            if math.sqrt(grad @ grad) / eta2 < cfg.newton_tol:
                break
            step = cho_solve(self._factor_at(alpha, z), grad, check_finite=False)
            steps += 1
            scale = 1.0
            for _ in range(31):
                trial = alpha - scale * step
                ftrial = _step1_value(self.obj, self.dinv, trial, theta, dual, eta2)
                if ftrial <= fval:
                    break
                scale *= 0.5
            else:
                # no decrease along the Newton direction: numerically optimal
                break
            alpha = trial
            fval = ftrial
            if np.max(np.abs(scale * step)) < cfg.newton_tol:
                break
        return alpha, steps


def admm_alpha_update(
    shard: DataShard,
    model: LossModel,
    weights,
    state: SolverState,
    cfg: AdmmConfig,
) -> np.ndarray:
    weights = _check_weights(weights, shard.p)
    solver = _AlphaSolver(make_objective(shard, model), weights, cfg)
    alpha, _ = solver.solve(state.alpha, state.theta, state.dual)
    return alpha


def _check_weights(weights, p: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (p,):
        raise DimensionError(f"weights have shape {w.shape}, expected ({p},)")
    if not np.all(np.isfinite(w) & (w > 0)):
        raise ConfigurationError("weights must be strictly positive and finite")
    return w


def admm(obj, lam: float, weights, cfg: AdmmConfig = AdmmConfig(), init=None):
    """Run ADMM on a prepared smooth objective; returns ``(beta, state)``.

    The weights are rescaled by their minimum before forming ``D`` (with the
    penalty level scaled to match) so that ``(w, lam)`` and ``(c*w, lam/c)``
    follow the same iterates.
    """
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    p = obj.p
    w = _check_weights(weights, p)
    scale = float(w.min())
    d = w / scale
    lam_eff = lam * scale

    beta0 = np.zeros(p) if init is None else np.asarray(init, dtype=np.float64)
    if beta0.shape != (p,):
        raise DimensionError(f"init has shape {beta0.shape}, expected ({p},)")
    alpha_solver = _AlphaSolver(obj, d, cfg)
    alpha = d * beta0
    theta = alpha.copy()
    # dual warm start: stationarity of the alpha step at alpha == theta
    try:
        dual = alpha_solver.dinv * obj.gradient(beta0)
    except LossOverflowError:
        alpha = np.zeros(p)
        theta = np.zeros(p)
        dual = alpha_solver.dinv * obj.gradient(alpha)
    state = SolverState(alpha, theta, dual)
    if obj.constant_hessian:
        _admm_quadratic(obj, alpha_solver, state, lam_eff, cfg)
    else:
        _admm_newton(alpha_solver, state, lam_eff, cfg)
    if not state.primal_residual_norm <= 10 * cfg.primal_tol:
        raise NonConvergenceError(state.primal_residual_norm, state.iter)

    beta = state.theta / d
    return beta + 0.0, state


def _rebalance(eta2, res, dres, cfg):
    """Residual balancing: grow ``eta^2`` when the primal residual dominates."""
    mu = cfg.balance_ratio
    if res > mu * dres:
        return eta2 * 2.0
    if dres > mu * res:
        return eta2 / 2.0
    return eta2


def _admm_quadratic(obj, alpha_solver, state, lam_eff, cfg):
    # A single Newton step solves the alpha subproblem exactly for a quadratic
    # loss, so the inverse Hessian is formed once per eta and applied directly.
    dinv = alpha_solver.dinv

    def prepare():
        hinv = cho_solve(alpha_solver._chol, np.eye(obj.p), check_finite=False)
        return hinv, hinv @ (dinv * obj.lin)

    eta2 = alpha_solver.eta2
    hinv, base = prepare()
    alpha, theta, dual = state.alpha, state.theta, state.dual
    tol, dtol = cfg.primal_tol, cfg.dual_tol
    res = float("inf")
    m = 0
    for m in range(1, cfg.max_outer_iter + 1):
        alpha = base + hinv @ (dual + eta2 * theta)
        u = alpha - dual / eta2
        prev = theta
        theta = np.sign(u) * np.maximum(np.abs(u) - lam_eff / eta2, 0.0)
        r = alpha - theta
        dual = dual - eta2 * r
        res = math.sqrt(r @ r)
        ds = theta - prev
        dres = eta2 * math.sqrt(ds @ ds)
        if res <= tol and dres <= dtol:
            break
        if cfg.adapt_eta and m % cfg.adapt_every == 0 and m <= cfg.adapt_until:
            new = _rebalance(eta2, res, dres, cfg)
            if new != eta2:
                eta2 = new
                alpha_solver.set_eta2(eta2)
                hinv, base = prepare()
    state.alpha, state.theta, state.dual = alpha, theta + 0.0, dual
    state.iter = m
    state.newton_steps += m
    state.primal_residual_norm = res


def _admm_newton(alpha_solver, state, lam_eff, cfg):
    eta2 = alpha_solver.eta2
    for m in range(1, cfg.max_outer_iter + 1):
        state.alpha, steps = alpha_solver.solve(state.alpha, state.theta, state.dual)
        state.newton_steps += steps
        u = state.alpha - state.dual / eta2
        prev = state.theta
        state.theta = np.sign(u) * np.maximum(np.abs(u) - lam_eff / eta2, 0.0) + 0.0
        r = state.alpha - state.theta
        state.dual = state.dual - eta2 * r
        state.iter = m
        res = float(np.sqrt(r @ r))
        state.primal_residual_norm = res
        ds = state.theta - prev
        dres = eta2 * math.sqrt(ds @ ds)
        if res <= cfg.primal_tol and dres <= cfg.dual_tol:
            break
        if cfg.adapt_eta and m % cfg.adapt_every == 0 and m <= cfg.adapt_until:
            new = _rebalance(eta2, res, dres, cfg)
            if new != eta2:
                eta2 = new
                alpha_solver.set_eta2(eta2)


def solve_weighted_l1(
    shard: DataShard,
    model: LossModel,
    lam: float,
    weights,
    cfg: AdmmConfig = AdmmConfig(),
    init=None,
) -> np.ndarray:
    beta, _ = admm(make_objective(shard, model), lam, weights, cfg, init)
    return beta


def lambda_max(obj, weights) -> float:
    """Smallest penalty level whose solution is identically zero."""
    g = obj.gradient(np.zeros(obj.p))
    return float(np.max(np.abs(g) / np.asarray(weights, dtype=np.float64)))


def penalized_objective(obj, lam: float, weights, beta) -> float:
    return obj.value(beta) + lam * float(np.sum(np.asarray(weights) * np.abs(beta)))
