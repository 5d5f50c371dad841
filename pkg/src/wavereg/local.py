"""Worker-side computations: pre-estimate, adaptive lasso and precision diagonal."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConfigurationError, DimensionError, SingularityError
from .model import DataShard, LossModel, loss_arrays
from .solver import AdmmConfig, admm, lambda_max, make_objective

DIAG_FLOOR = 1e-12


class AllExcludedWarning(UserWarning):
    """Every coordinate was excluded by the pre-estimate."""


class ClampedPrecisionWarning(UserWarning):
    """A precision-diagonal entry fell below the floor and was clamped."""


@dataclass(frozen=True)
class LocalBIC:
    """``mean loss + log(n) * d / n`` on the worker's own rows."""


@dataclass(frozen=True)
class KFoldCV:
    k: int = 10


def parse_tuning(method) -> LocalBIC | KFoldCV:
    """Accept a tuning object or a string such as ``"bic"``, ``"cv"``, ``"cv5"``."""
    if isinstance(method, (LocalBIC, KFoldCV)):
        return method
    s = str(method).strip().lower()
    if s in ("bic", "localbic"):
        return LocalBIC()
    if s.startswith("cv") or s.startswith("kfold"):
        digits = "".join(ch for ch in s if ch.isdigit())
        return KFoldCV(int(digits) if digits else 10)
    raise ConfigurationError(f"unknown tuning method {method!r}")


@dataclass(frozen=True)
class AdaptiveWeights:
    omega: np.ndarray
    xi: float
    excluded: tuple[int, ...]

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.omega))


def adaptive_weights(beta_pre, xi: float = 1.0) -> AdaptiveWeights:
    if not xi > 0:
        raise ConfigurationError(f"xi must be positive, got {xi}")
    b = np.abs(np.asarray(beta_pre, dtype=np.float64))
    zero = b == 0
    with np.errstate(divide="ignore"):
        omega = np.where(zero, np.inf, 1.0 / np.where(zero, 1.0, b) ** xi)
    return AdaptiveWeights(omega, float(xi), tuple(int(i) for i in np.flatnonzero(zero)))


def default_lambda_grid(obj, weights, n_points: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced descending grid from the zero-model level down to ``ratio`` of it."""
    top = lambda_max(obj, weights)
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, n_points)


def _descending(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ConfigurationError("lambda grid is empty")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ConfigurationError("lambda grid must hold positive finite values")
    return np.sort(grid)[::-1]


def _path(obj, weights, grid, cfg, init=None):
    fits = []
    beta = init
    for lam in grid:
        beta, _ = admm(obj, lam, weights, cfg, beta)
        fits.append(beta)
    return fits


def _argmin_sparsest(scores) -> int:
    # grid is descending, so the first minimiser is the largest lambda
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def _select_on_objective(obj, shard, model, weights, grid, method, cfg, init=None, kept=None):
    grid = _descending(grid)
    fits = _path(obj, weights, grid, cfg, init)
    n = shard.n
    if isinstance(method, LocalBIC):
        scores = [obj.value(b) + np.log(n) * np.count_nonzero(b) / n for b in fits]
    else:
        scores = _cv_scores(shard, model, weights, grid, method.k, cfg, kept)
    i = _argmin_sparsest(scores)
    return float(grid[i]), fits[i]


def _cv_scores(shard, model, weights, grid, k, cfg, keep):
    n = shard.n
    if k < 2 or n < k:
        raise ConfigurationError(f"{k}-fold CV needs k >= 2 and n >= k (n={n})")
    folds = np.arange(n) % k
    scores = np.zeros(grid.size)
    for f in range(k):
        train = folds != f
        test = ~train
        sub = DataShard(shard.worker_id, shard.x[train], shard.y[train])
        tobj = make_objective(sub, model)
        if keep is not None:
            tobj = tobj.restrict(keep)
        xt = shard.x[test] if keep is None else shard.x[test][:, keep]
        for i, b in enumerate(_path(tobj, weights, grid, cfg)):
            v, _, _ = loss_arrays(model, shard.y[test], xt @ b)
            scores[i] += v.sum()
    return list(scores / n)


def select_lambda(
    shard: DataShard,
    model: LossModel,
    weights: AdaptiveWeights,
    lambda_grid,
    method=LocalBIC(),
    cfg: AdmmConfig = AdmmConfig(),
) -> tuple[float, np.ndarray]:
    """Fit along the grid and return the chosen ``(lambda, beta)``.

    Excluded coordinates (infinite weight) are held at zero.  Ties in the
    criterion go to the larger lambda.
    """
    method = parse_tuning(method)
    kept = weights.kept
    beta = np.zeros(shard.p)
    if kept.size == 0:
        return float(_descending(lambda_grid)[0]), beta
    obj = make_objective(shard, model)
    cols = None
    if kept.size < shard.p:
        obj = obj.restrict(kept)
        cols = kept
    lam, b = _select_on_objective(
        obj, shard, model, weights.omega[kept], lambda_grid, method, cfg, kept=cols
    )
    beta[kept] = b
    return lam, beta


def fit_pre_estimate(
    shard: DataShard,
    model: LossModel,
    lambda_grid=None,
    cfg: AdmmConfig = AdmmConfig(),
    method=LocalBIC(),
) -> np.ndarray:
    """Plain lasso (unit weights) tuned over the grid."""
    return _pre_estimate(shard, model, lambda_grid, cfg, parse_tuning(method))[1]


def _pre_estimate(shard, model, lambda_grid, cfg, method):
    obj = make_objective(shard, model)
    ones = np.ones(shard.p)
    grid = default_lambda_grid(obj, ones) if lambda_grid is None else lambda_grid
    return _select_on_objective(obj, shard, model, ones, grid, method, cfg)


@dataclass
class LocalFit:
    beta: np.ndarray
    beta_pre: np.ndarray
    lam: float
    lam_pre: float
    weights: AdaptiveWeights
    flags: list[str] = field(default_factory=list)


def fit_local_detailed(
    shard: DataShard,
    model: LossModel,
    xi: float = 1.0,
    lambda_grid=None,
    cfg: AdmmConfig = AdmmConfig(),
    method=LocalBIC(),
    grid_points: int = 50,
    grid_ratio: float = 1e-3,
) -> LocalFit:
    method = parse_tuning(method)
    obj = make_objective(shard, model)
    ones = np.ones(shard.p)
    grid = default_lambda_grid(obj, ones, grid_points, grid_ratio) if lambda_grid is None else lambda_grid
    lam_pre, pre = _select_on_objective(obj, shard, model, ones, grid, method, cfg)

    weights = adaptive_weights(pre, xi)
    kept = weights.kept
    beta = np.zeros(shard.p)
    if kept.size == 0:
        warnings.warn(
            f"worker {shard.worker_id}: pre-estimate is identically zero",
            AllExcludedWarning,
            stacklevel=2,
        )
        return LocalFit(beta, pre, float("nan"), lam_pre, weights, ["all_excluded"])

    sub = obj.restrict(kept)
    w = weights.omega[kept]
    if lambda_grid is None:
        grid = default_lambda_grid(sub, w, grid_points, grid_ratio)
    lam, b = _select_on_objective(
        sub, shard, model, w, grid, method, cfg, init=pre[kept], kept=kept
    )
    beta[kept] = b
    return LocalFit(beta, pre, lam, lam_pre, weights)


def fit_local(
    shard: DataShard,
    model: LossModel,
    xi: float = 1.0,
    lambda_grid=None,
    cfg: AdmmConfig = AdmmConfig(),
    method=LocalBIC(),
) -> np.ndarray:
    """Local adaptive lasso; coordinates the pre-estimate zeroed stay exactly zero."""
    return fit_local_detailed(shard, model, xi, lambda_grid, cfg, method).beta


def default_ridge(phi: np.ndarray, n: int) -> float:
    p = phi.shape[0]
    return 1e-6 * float(np.trace(phi)) / p if p >= n else 0.0


def _sandwich_diag(psi: np.ndarray, phi: np.ndarray, ridge: float) -> np.ndarray:
    """``diag(psi (phi + ridge I)^{-1} psi)`` for symmetric ``psi``."""
    m = phi.copy()
    m[np.diag_indices_from(m)] += ridge
    try:
        chol = cho_factor(m)
    except LinAlgError as exc:
        raise SingularityError(
            "gradient second-moment matrix is not positive definite; pass a positive ridge value"
        ) from exc
    return np.sum(psi * cho_solve(chol, psi), axis=0)


def estimate_lambda_diag(
    shard: DataShard,
    model: LossModel,
    beta_hat,
    ridge: float | None = None,
    branch: str = "auto",
) -> np.ndarray:
    """Diagonal of the plug-in inverse covariance of the local estimate.

    ``branch="glm"`` returns ``diag((1/n) X' diag(L'') X)``; ``"sandwich"``
    returns ``diag(Psi (Phi + ridge I)^{-1} Psi)``.  ``"auto"`` picks the GLM
    shortcut for canonical families and the sandwich for Huber.
    """
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    if beta_hat.shape != (shard.p,):
        raise DimensionError(f"beta_hat has shape {beta_hat.shape}, expected ({shard.p},)")
    if branch == "auto":
        branch = "glm" if model.is_glm else "sandwich"
    x, n, p = shard.x, shard.n, shard.p
    _, d1, d2 = loss_arrays(model, shard.y, x @ beta_hat)
    if branch == "glm":
        out = (d2 @ (x * x)) / n
    elif branch == "sandwich":
        psi = (x.T * d2) @ x / n
        phi = (x.T * (d1 * d1)) @ x / n
        if ridge is None:
            ridge = default_ridge(phi, n)
        if ridge == 0 and p >= n:
            raise SingularityError(
                f"p={p} >= n={n}: the gradient second-moment matrix is singular; "
                "pass a positive ridge value"
            )
        out = _sandwich_diag(psi, phi, ridge)
    else:
        raise ConfigurationError(f"unknown branch {branch!r}")
    low = out < DIAG_FLOOR
    if np.any(low):
        warnings.warn(
            f"worker {shard.worker_id}: precision entries {np.flatnonzero(low).tolist()} clamped",
            ClampedPrecisionWarning,
            stacklevel=2,
        )
        out = np.maximum(out, DIAG_FLOOR)
    return out


def estimate_precision_matrix(
    shard: DataShard,
    model: LossModel,
    beta_hat,
    ridge: float | None = None,
    branch: str = "auto",
) -> np.ndarray:
    """Full plug-in inverse covariance; only the reference combiner uses it."""
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    if branch == "auto":
        branch = "glm" if model.is_glm else "sandwich"
    x, n, p = shard.x, shard.n, shard.p
    _, d1, d2 = loss_arrays(model, shard.y, x @ beta_hat)
    psi = (x.T * d2) @ x / n
    if branch == "glm":
        return psi
    phi = (x.T * (d1 * d1)) @ x / n
    if ridge is None:
        ridge = default_ridge(phi, n)
    m = phi.copy()
    m[np.diag_indices_from(m)] += ridge
    try:
        return psi @ np.linalg.solve(m, psi)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("gradient second-moment matrix is singular") from exc
