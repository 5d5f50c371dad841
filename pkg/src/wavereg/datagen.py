"""Seeded synthetic shards for the linear, logistic, Poisson and Huber examples.

Random streams
--------------
Every draw comes from ``numpy.random.Generator(Philox(SeedSequence([seed,
worker_id, kind])))``.  Philox is a counter-based generator and
``SeedSequence`` hashes the three-part key into an independent stream, so a
worker's data depends only on ``(seed, worker_id)``: adding workers never
changes existing ones.  ``kind`` separates the draws of one worker:

* ``0`` heterogeneity parameters (correlation, noise variance)
* ``1`` covariates
* ``2`` noise / response randomness
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import DataShard, TrueModel

log = logging.getLogger(__name__)

KIND_PARAMS, KIND_X, KIND_NOISE = 0, 1, 2
HOMOGENEOUS_RHO = 0.5
POISSON_CLIP = 20.0


class Example(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"
    HUBER_LINEAR = "huber_linear"


class Setting(str, enum.Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"


@dataclass(frozen=True)
class GenConfig:
    example: Example = Example.LINEAR
    setting: Setting = Setting.HOMOGENEOUS
    K: int = 10
    n_per_worker: int = 500
    p: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "example", Example(self.example))
        object.__setattr__(self, "setting", Setting(self.setting))
        if self.p < 5:
            raise ConfigurationError(f"p must be at least 5, got {self.p}")
        if self.K < 1 or self.n_per_worker < 1:
            raise ConfigurationError("K and n_per_worker must be at least 1")
        if self.example is Example.HUBER_LINEAR and self.setting is Setting.HETEROGENEOUS:
            raise ConfigurationError("the Huber example is defined for the homogeneous setting only")

    @property
    def N(self) -> int:
        return self.K * self.n_per_worker

    def to_dict(self) -> dict:
        d = asdict(self)
        d["example"] = self.example.value
        d["setting"] = self.setting.value
        return d


def true_beta(example, p: int) -> TrueModel:
    example = Example(example)
    if p < 5:
        raise ConfigurationError(f"p must be at least 5, got {p}")
    if example is Example.POISSON:
        head = [0.8, -0.6, 0.0, 0.0, 0.4]
    elif example is Example.HUBER_LINEAR:
        head = [3.0, 3.0, 3.0, 3.0, 3.0]
    else:
        head = [3.0, 1.5, 0.0, 0.0, 2.0]
    return TrueModel(np.concatenate([head, np.zeros(p - 5)]))


def worker_rng(seed: int, worker_id: int, kind: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(worker_id), int(kind)])
    return np.random.Generator(np.random.Philox(ss))


def sample_ar1(rho: float, n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows with unit variances and correlation ``rho**|i-j|``."""
    if not -1 < rho < 1:
        raise ConfigurationError(f"|rho| must be < 1, got {rho}")
    eps = rng.standard_normal((n, p))
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for k in range(1, p):
        out[:, k] = rho * out[:, k - 1] + c * eps[:, k]
    return out


def sample_ar1_row(rho: float, p: int, rng: np.random.Generator) -> np.ndarray:
    return sample_ar1(rho, 1, p, rng)[0]


def worker_params(cfg: GenConfig, worker_id: int) -> tuple[float, float]:
    """Covariate correlation and noise variance of one worker."""
    if cfg.setting is Setting.HOMOGENEOUS:
        return HOMOGENEOUS_RHO, 1.0
    rng = worker_rng(cfg.seed, worker_id, KIND_PARAMS)
    rho = float(rng.uniform(0.1, 0.8))
    s = float(rng.uniform(1.0, 4.0))
    return rho, s if cfg.example is Example.LINEAR else 1.0


def generate_shard(cfg: GenConfig, worker_id: int, truth: TrueModel | None = None) -> DataShard:
    truth = truth or true_beta(cfg.example, cfg.p)
    rho, s = worker_params(cfg, worker_id)
    n = cfg.n_per_worker
    x = sample_ar1(rho, n, cfg.p, worker_rng(cfg.seed, worker_id, KIND_X))
    eta = x @ truth.beta_star
    rng = worker_rng(cfg.seed, worker_id, KIND_NOISE)
    ex = cfg.example
    if ex is Example.LINEAR:
        y = eta + np.sqrt(s) * rng.standard_normal(n)
    elif ex is Example.HUBER_LINEAR:
        y = eta + rng.standard_t(3, size=n)
    elif ex is Example.LOGISTIC:
        prob = 1.0 / (1.0 + np.exp(-eta))
        y = (rng.random(n) < prob).astype(np.float64)
    else:
        if np.any(eta > POISSON_CLIP):
            log.warning("worker %d: clipping %d linear predictors at %g",
                        worker_id, int(np.sum(eta > POISSON_CLIP)), POISSON_CLIP)
        y = rng.poisson(np.exp(np.minimum(eta, POISSON_CLIP))).astype(np.float64)
    meta = {"rho": rho, "noise_var": s, "example": ex.value, "setting": cfg.setting.value}
    return DataShard(worker_id, x, y, meta)


def generate(cfg: GenConfig) -> tuple[list[DataShard], TrueModel]:
    truth = true_beta(cfg.example, cfg.p)
    return [generate_shard(cfg, j, truth) for j in range(cfg.K)], truth


def export_csv(shards, out_dir) -> list[Path]:
    """Write one CSV per shard with columns ``y, x1..xp``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sh in shards:
        path = out_dir / f"shard_{sh.worker_id:04d}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["y"] + [f"x{k + 1}" for k in range(sh.p)])
            for yi, row in zip(sh.y, sh.x):
                w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])
        paths.append(path)
    return paths


def read_csv(path, worker_id: int = 0) -> DataShard:
    """Read a shard written by :func:`export_csv` (or any CSV with a ``y`` column)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if "y" not in header:
        raise ConfigurationError(f"{path}: no column named 'y'")
    iy = header.index("y")
    data = np.array(body, dtype=np.float64)
    x = np.delete(data, iy, axis=1)
    return DataShard(worker_id, x, data[:, iy])
