"""Master-side ensembling of local summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataIntegrityError, DimensionError, SingularityError
from .local import adaptive_weights


@dataclass(frozen=True)
class LocalSummary:
    """What a worker ships: its estimate, precision diagonal and row count."""

    worker_id: int
    n_j: int
    beta_hat: np.ndarray
    lambda_diag: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta_hat, dtype=np.float64)
        g = np.asarray(self.lambda_diag, dtype=np.float64)
        if b.ndim != 1 or b.shape != g.shape:
            raise DimensionError(
                f"worker {self.worker_id}: beta_hat {b.shape} and lambda_diag {g.shape} differ"
            )
        if int(self.n_j) < 1:
            raise DataIntegrityError(f"worker {self.worker_id}: n_j must be positive")
        object.__setattr__(self, "beta_hat", b)
        object.__setattr__(self, "lambda_diag", g)
        object.__setattr__(self, "n_j", int(self.n_j))

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]


@dataclass(frozen=True)
class VarianceEstimate:
    v_diag: np.ndarray
    var_wave: np.ndarray


@dataclass(frozen=True)
class AggregateResult:
    beta_wave: np.ndarray
    beta_sparse: np.ndarray
    nu_hat: float
    support: tuple[int, ...]
    ci_halfwidth: np.ndarray
    alpha: np.ndarray
    beta_average: np.ndarray
    variance: VarianceEstimate


def _stack(summaries):
    summaries = list(summaries)
    if not summaries:
        raise ConfigurationError("no summaries to aggregate")
    p = summaries[0].p
    for s in summaries:
        if s.p != p:
            raise DimensionError(f"worker {s.worker_id} has p={s.p}, expected {p}")
    n = np.array([s.n_j for s in summaries], dtype=np.float64)
    betas = np.vstack([s.beta_hat for s in summaries])
    gammas = np.vstack([s.lambda_diag for s in summaries])
    return summaries, n / n.sum(), betas, gammas


def worker_alpha(summaries) -> np.ndarray:
    return _stack(summaries)[1]


def _relative(gammas: np.ndarray) -> np.ndarray:
    # scale each column by its first entry: identical precisions become exact ones
    return gammas / gammas[0]


def _weighted_mean(alpha: np.ndarray, rel: np.ndarray, betas: np.ndarray) -> np.ndarray:
    num = alpha[:, None] * rel
    return np.sum(num * betas, axis=0) / np.sum(num, axis=0)


def simple_average(summaries) -> np.ndarray:
    _, alpha, betas, _ = _stack(summaries)
    return _weighted_mean(alpha, np.ones_like(betas), betas)


def coordinate_weights(alpha: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Per-coordinate worker weights ``alpha_j g_jl / sum_k alpha_k g_kl`` (K x p)."""
    num = alpha[:, None] * _relative(np.asarray(gammas, dtype=np.float64))
    return num / num.sum(axis=0)


def variance_estimate(alpha, gammas, sigma2=None) -> VarianceEstimate:
    """Diagonal of ``V_N`` and the per-coordinate asymptotic variance of the WAVE estimate.

    ``sigma2[k, l]`` is worker k's variance for coordinate l; by default the
    reciprocal precision ``1 / gammas[k, l]``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    if sigma2 is None:
        sigma2 = 1.0 / gammas
    v = alpha @ gammas
    s = alpha @ (gammas * gammas * np.asarray(sigma2, dtype=np.float64))
    return VarianceEstimate(v, s / (v * v))


def wave_point(summaries) -> tuple[np.ndarray, VarianceEstimate]:
    summaries, alpha, betas, gammas = _stack(summaries)
    bad = np.argwhere(~(gammas > 0) | ~np.isfinite(gammas))
    if bad.size:
        j, l = bad[0]
        raise DataIntegrityError(
            f"worker {summaries[j].worker_id}: lambda_diag[{l}] = {gammas[j, l]!r} is not positive"
        )
    beta = _weighted_mean(alpha, _relative(gammas), betas)
    return beta, variance_estimate(alpha, gammas)


def full_ls_reference(summaries_full, alpha) -> np.ndarray:
    """Combine local estimates with full inverse-covariance matrices (small p only)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    items = list(summaries_full)
    if not items or len(items) != alpha.size:
        raise DimensionError("need one (beta, matrix) pair per weight")
    p = np.asarray(items[0][0]).shape[0]
    if p > 200:
        raise ConfigurationError(f"full least-squares reference is limited to p <= 200 (p={p})")
    a = np.zeros((p, p))
    b = np.zeros(p)
    for aj, (beta, prec) in zip(alpha, items):
        prec = np.asarray(prec, dtype=np.float64)
        if prec.shape != (p, p):
            raise DimensionError(f"matrix has shape {prec.shape}, expected ({p}, {p})")
        a += aj * prec
        b += aj * (prec @ np.asarray(beta, dtype=np.float64))
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("accumulated precision matrix is singular") from exc


def delta_weights(beta_av, xi: float = 1.0) -> np.ndarray:
    return adaptive_weights(beta_av, xi).omega


def wave_sparse(beta_wave, v_diag, delta, nu: float) -> np.ndarray:
    """Closed-form minimiser of the diagonal quadratic with adaptive L1 penalty."""
    beta_wave = np.asarray(beta_wave, dtype=np.float64)
    v = np.asarray(v_diag, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if not (beta_wave.shape == v.shape == delta.shape):
        raise DimensionError("beta_wave, v_diag and delta must have equal length")
    if nu < 0:
        raise ConfigurationError("nu must be nonnegative")
    if np.any(~(v > 0)):
        raise DataIntegrityError("v_diag must be strictly positive")
    out = np.zeros_like(beta_wave)
    finite = np.isfinite(delta)
    thr = nu * delta[finite] / v[finite]
    b = beta_wave[finite]
    out[finite] = np.sign(b) * np.maximum(np.abs(b) - thr, 0.0)
    return out + 0.0


def wave_sparse_admm(beta_wave, v_diag, delta, nu: float, cfg=None) -> np.ndarray:
    """Same problem solved with the ADMM solver; kept for cross-checking."""
    from .solver import AdmmConfig, QuadraticObjective, admm

    beta_wave = np.asarray(beta_wave, dtype=np.float64)
    v = np.asarray(v_diag, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    out = np.zeros_like(beta_wave)
    keep = np.flatnonzero(np.isfinite(delta))
    if keep.size == 0:
        return out
    obj = QuadraticObjective(np.diag(v[keep]), v[keep] * beta_wave[keep])
    beta, _ = admm(obj, nu, delta[keep], cfg or AdmmConfig(primal_tol=1e-10, dual_tol=1e-10))
    out[keep] = beta
    return out


def default_nu_grid(beta_wave, v_diag, delta, n_points: int = 100, low: float = 1e-6) -> np.ndarray:
    beta_wave = np.asarray(beta_wave, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    finite = np.isfinite(delta) & (beta_wave != 0)
    if not np.any(finite):
        return np.array([0.0])
    top = float(np.max(np.abs(beta_wave[finite]) * np.asarray(v_diag)[finite] / delta[finite]))
    if top <= low:
        return np.array([top])
    return np.geomspace(low, top, n_points)


def bic_criterion(beta_nu, beta_wave, v_diag, N: int) -> float:
    d = beta_nu - beta_wave
    return float(np.sum(v_diag * d * d) + math.log(N) * np.count_nonzero(beta_nu) / N)


def select_nu_bic(beta_wave, v_diag, delta, nu_grid, N: int) -> tuple[float, np.ndarray]:
    """Grid minimiser of the BIC-type criterion; ties go to the larger ``nu``."""
    grid = np.asarray(nu_grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ConfigurationError("nu grid is empty")
    if N < 1:
        raise ConfigurationError("N must be at least 1")
    v = np.asarray(v_diag, dtype=np.float64)
    best = None
    for nu in np.sort(grid)[::-1]:
        fit = wave_sparse(beta_wave, v, delta, float(nu))
        score = bic_criterion(fit, beta_wave, v, N)
        if best is None or score < best[0]:
            best = (score, float(nu), fit)
    return best[1], best[2]


# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(q: float) -> float:
    """Standard normal quantile, rational approximation plus one Halley step."""
    if not 0 < q < 1:
        raise ValueError(f"quantile level must be in (0, 1), got {q}")
    lo = 0.02425
    if q < lo:
        t = math.sqrt(-2 * math.log(q))
        x = (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / (
            (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1)
    elif q <= 1 - lo:
        u = q - 0.5
        r = u * u
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        t = math.sqrt(-2 * math.log1p(-q))
        x = -(((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / (
            (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - q
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def confidence_intervals(var: VarianceEstimate, N: int, level: float = 0.95) -> np.ndarray:
    if not 0 < level < 1:
        raise ConfigurationError(f"level must be in (0, 1), got {level}")
    z = normal_quantile((1 + level) / 2)
    return z * np.sqrt(np.asarray(var.var_wave) / N)


def aggregate(
    summaries,
    xi: float = 1.0,
    nu_grid=None,
    level: float = 0.95,
    pilot: str = "average",
    nu_points: int = 100,
    nu_low: float = 1e-6,
) -> AggregateResult:
    """Full master pipeline on already-collected summaries.

    Summaries are sorted by worker id first so the floating-point reduction
    order never depends on arrival order.
    """
    summaries = sorted(summaries, key=lambda s: s.worker_id)
    alpha = worker_alpha(summaries)
    beta_av = simple_average(summaries)
    beta_w, var = wave_point(summaries)
    if pilot == "average":
        delta = delta_weights(beta_av, xi)
    elif pilot == "wave":
        delta = delta_weights(beta_w, xi)
    else:
        raise ConfigurationError(f"unknown pilot {pilot!r}")
    N = int(sum(s.n_j for s in summaries))
    if nu_grid is None:
        nu_grid = default_nu_grid(beta_w, var.v_diag, delta, nu_points, nu_low)
    nu, sparse = select_nu_bic(beta_w, var.v_diag, delta, nu_grid, N)
    ci = confidence_intervals(var, N, level)
    support = tuple(int(i) for i in np.flatnonzero(sparse))
    return AggregateResult(beta_w, sparse, nu, support, ci, alpha, beta_av, var)
