"""Loss families, data containers and the linear predictor."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, LossOverflowError

# largest z with finite exp(z) in binary64
_EXP_MAX = float(np.log(np.finfo(np.float64).max))


class Family(str, enum.Enum):
    LEAST_SQUARES = "least_squares"
    HUBER = "huber"
    LOGISTIC = "logistic"
    POISSON = "poisson"


@dataclass(frozen=True)
class LossModel:
    """A convex loss ``L(y, z)`` in the linear predictor ``z``.

    Least squares uses ``0.5 * (y - z)**2`` so that its curvature is one.
    ``huber_a`` is the Huber threshold and is ignored by other families.
    """

    family: Family = Family.LEAST_SQUARES
    huber_a: float = 1.345

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.HUBER and not self.huber_a > 0:
            raise DomainError(f"huber_a must be positive, got {self.huber_a}")

    @property
    def is_glm(self) -> bool:
        """Canonical GLM families, for which the sandwich collapses to the Hessian."""
        return self.family is not Family.HUBER

    @classmethod
    def least_squares(cls) -> LossModel:
        return cls(Family.LEAST_SQUARES)

    @classmethod
    def huber(cls, a: float = 1.345) -> LossModel:
        return cls(Family.HUBER, a)

    @classmethod
    def logistic(cls) -> LossModel:
        return cls(Family.LOGISTIC)

    @classmethod
    def poisson(cls) -> LossModel:
        return cls(Family.POISSON)

    def to_dict(self) -> dict:
        d = {"family": self.family.value}
        if self.family is Family.HUBER:
            d["huber_a"] = self.huber_a
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LossModel:
        return cls(Family(d["family"]), float(d.get("huber_a", 1.345)))


def validate_response(model: LossModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise DomainError("response contains non-finite values")
    if model.family is Family.LOGISTIC and not np.all((y == 0) | (y == 1)):
        raise DomainError("logistic responses must be 0 or 1")
    if model.family is Family.POISSON and not np.all((y >= 0) & (y == np.floor(y))):
        raise DomainError("Poisson responses must be nonnegative integers")
    return y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_values(model: LossModel, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-row loss values; responses are assumed already validated."""
    fam = model.family
    if fam is Family.LEAST_SQUARES:
        r = z - y
        return 0.5 * r * r
    if fam is Family.HUBER:
        a = model.huber_a
        ar = np.abs(y - z)
        return np.where(ar <= a, 0.5 * ar * ar, a * ar - 0.5 * a * a)
    if fam is Family.LOGISTIC:
        return np.logaddexp(0.0, z) - y * z
    return _safe_exp(z) - y * z


def loss_derivatives(model: LossModel, y: np.ndarray, z: np.ndarray):
    """First and second derivatives in ``z``; responses assumed validated."""
    fam = model.family
    if fam is Family.LEAST_SQUARES:
        return z - y, np.ones_like(z)
    if fam is Family.HUBER:
        a = model.huber_a
        r = y - z
        return -np.clip(r, -a, a), (np.abs(r) <= a).astype(np.float64)
    if fam is Family.LOGISTIC:
        s = _sigmoid(z)
        return s - y, s * (1.0 - s)
    ez = _safe_exp(z)
    return ez - y, ez


def _safe_exp(z: np.ndarray) -> np.ndarray:
    if z.size and z.max() > _EXP_MAX:
        i = int(np.argmax(z > _EXP_MAX))
        raise LossOverflowError(i, float(z.flat[i]))
    return np.exp(z)


def loss_arrays(model: LossModel, y, z, check: bool = True):
    """Vectorised loss value, first and second derivative in ``z``.

    Returns three arrays shaped like ``z``.  ``check=False`` skips response
    validation (callers that validated once up front).
    """
    y = validate_response(model, y) if check else y
    z = np.asarray(z, dtype=np.float64)
    value = loss_values(model, y, z)
    d1, d2 = loss_derivatives(model, y, z)
    return value, d1, d2


def loss_eval(model: LossModel, y: float, z: float) -> tuple[float, float, float]:
    if not np.isfinite(z):
        raise DomainError(f"linear predictor must be finite, got {z}")
    v, d1, d2 = loss_arrays(model, np.array([y], dtype=float), np.array([z], dtype=float))
    return float(v[0]), float(d1[0]), float(d2[0])


@dataclass(frozen=True)
class DataShard:
    """One worker's rows: design ``x`` (n x p) and response ``y``."""

    worker_id: int
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64).ravel()
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionError(f"x must be a nonempty 2-D matrix, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DimensionError(f"y has {y.shape[0]} entries but x has {x.shape[0]} rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("shard contains non-finite entries")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def columns(self, keep) -> DataShard:
        """Shard restricted to the given covariate columns."""
        return DataShard(self.worker_id, self.x[:, keep], self.y, dict(self.meta))


@dataclass(frozen=True)
class TrueModel:
    beta_star: np.ndarray
    active_set: tuple[int, ...] = ()

    def __post_init__(self):
        b = np.asarray(self.beta_star, dtype=np.float64)
        object.__setattr__(self, "beta_star", b)
        object.__setattr__(self, "active_set", tuple(int(i) for i in np.flatnonzero(b)))

    @property
    def p(self) -> int:
        return self.beta_star.shape[0]


def linear_predict(shard: DataShard, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (shard.p,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({shard.p},)")
    return shard.x @ beta
