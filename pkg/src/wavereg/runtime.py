"""Master-worker orchestration and the newline-delimited summary protocol."""

from __future__ import annotations

import io
import json
import math
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregate import AggregateResult, LocalSummary, aggregate
from .errors import ConfigurationError, DecodeError, WaveError, WorkerError
from .local import (
    AllExcludedWarning,
    ClampedPrecisionWarning,
    estimate_lambda_diag,
    fit_local_detailed,
    parse_tuning,
)
from .model import DataShard, LossModel
from .solver import AdmmConfig

PROTOCOL_VERSION = 1
_KEYS = ("version", "worker_id", "n", "p", "beta", "lambda_diag")


# --- wire format ------------------------------------------------------------


def encode_summary(s: LocalSummary) -> bytes:
    """One JSON object per line; floats as shortest round-trip decimal strings."""
    for name, vec in (("beta", s.beta_hat), ("lambda_diag", s.lambda_diag)):
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"{name} of worker {s.worker_id} has non-finite entries")
    msg = {
        "version": PROTOCOL_VERSION,
        "worker_id": int(s.worker_id),
        "n": int(s.n_j),
        "p": int(s.p),
        "beta": [repr(float(v)) for v in s.beta_hat],
        "lambda_diag": [repr(float(v)) for v in s.lambda_diag],
    }
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def _int_field(msg, key):
    v = msg[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise DecodeError(f"expected an integer, got {v!r}", key)
    return v


def _vector_field(msg, key, p):
    raw = msg[key]
    if not isinstance(raw, list):
        raise DecodeError("expected a list of decimal strings", key)
    if len(raw) != p:
        raise DecodeError(f"length {len(raw)} does not match p={p}", key)
    if not all(isinstance(t, str) for t in raw):
        raise DecodeError("numbers must be encoded as strings", key)
    try:
        vec = np.array([float(t) for t in raw], dtype=np.float64)
    except ValueError as exc:
        raise DecodeError(f"unparseable number ({exc})", key) from None
    if not np.all(np.isfinite(vec)):
        raise DecodeError("non-finite entry", key)
    return vec


def decode_summary(data: bytes | str) -> LocalSummary:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 ({exc})") from None
    text = data.strip()
    if not text:
        raise DecodeError("truncated message")
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"truncated message ({exc.msg})") from None
    if not isinstance(msg, dict):
        raise DecodeError("message must be a JSON object")
    for key in _KEYS:
        if key not in msg:
            raise DecodeError("missing field", key)
    version = _int_field(msg, "version")
    if version != PROTOCOL_VERSION:
        raise DecodeError(f"unsupported version {version}", "version")
    worker_id = _int_field(msg, "worker_id")
    n = _int_field(msg, "n")
    if n < 1:
        raise DecodeError("must be positive", "n")
    p = _int_field(msg, "p")
    if p < 1:
        raise DecodeError("must be positive", "p")
    beta = _vector_field(msg, "beta", p)
    lam = _vector_field(msg, "lambda_diag", p)
    return LocalSummary(worker_id, n, beta, lam)


def write_summaries(stream, summaries) -> int:
    count = 0
    for s in summaries:
        stream.write(encode_summary(s))
        count += 1
    return count


def read_summaries(stream):
    """Yield summaries from a binary stream of newline-delimited messages."""
    for line in stream:
        if line.strip():
            yield decode_summary(line)


class ByteStreamChannel:
    """Carries summaries over a byte stream and counts messages per worker."""

    def __init__(self, stream=None):
        self.stream = stream if stream is not None else io.BytesIO()
        self.messages = Counter()
        self.bytes_sent = 0
        self._start = self.stream.tell()

    def send(self, summary: LocalSummary) -> None:
        data = encode_summary(summary)
        self.stream.write(data)
        self.messages[summary.worker_id] += 1
        self.bytes_sent += len(data)

    def receive_all(self) -> list[LocalSummary]:
        self.stream.seek(self._start)
        return list(read_summaries(self.stream))


# --- sharding -----------------------------------------------------------------


def shard_dataset(x, y, K: int, policy="uniform") -> list[DataShard]:
    """Contiguous row partition; ``policy`` is ``"uniform"`` or a list of sizes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    N = x.shape[0]
    if K < 1 or K > N:
        raise ConfigurationError(f"cannot split {N} rows into K={K} shards")
    if isinstance(policy, str):
        if policy != "uniform":
            raise ConfigurationError(f"unknown sharding policy {policy!r}")
        base, extra = divmod(N, K)
        sizes = [base + (1 if j < extra else 0) for j in range(K)]
    else:
        sizes = [int(v) for v in policy]
        if len(sizes) != K or sum(sizes) != N or min(sizes) < 1:
            raise ConfigurationError(f"sizes {sizes} do not partition {N} rows into {K} shards")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [DataShard(j, x[bounds[j]:bounds[j + 1]], y[bounds[j]:bounds[j + 1]]) for j in range(K)]


# --- pipeline -----------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    model: LossModel = field(default_factory=LossModel)
    xi: float = 1.0
    tuning: str = "bic"
    lambda_points: int = 50
    lambda_ratio: float = 1e-3
    lambda_grid: tuple | None = None
    nu_points: int = 100
    nu_low: float = 1e-6
    nu_grid: tuple | None = None
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    mode: str = "inprocess"
    worker_parallelism: int = 1
    executor: str = "thread"
    branch: str = "auto"
    ridge: float | None = None
    level: float = 0.95
    pilot: str = "average"

    def __post_init__(self):
        if self.worker_parallelism < 1:
            raise ConfigurationError("worker_parallelism must be at least 1")
        if self.mode not in ("inprocess", "stream"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.executor not in ("thread", "process"):
            raise ConfigurationError(f"unknown executor {self.executor!r}")
        parse_tuning(self.tuning)


@dataclass
class WorkerReport:
    summary: LocalSummary
    flags: list[str]
    lam: float


def run_worker(shard: DataShard, cfg: RunConfig) -> WorkerReport:
    """Everything one worker does before it sends its summary."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_local_detailed(
            shard,
            cfg.model,
            cfg.xi,
            cfg.lambda_grid,
            cfg.admm,
            cfg.tuning,
            cfg.lambda_points,
            cfg.lambda_ratio,
        )
        diag = estimate_lambda_diag(shard, cfg.model, fit.beta, cfg.ridge, cfg.branch)
    flags = list(fit.flags)
    for w in caught:
        if issubclass(w.category, ClampedPrecisionWarning):
            flags.append("clamped_precision")
        elif not issubclass(w.category, AllExcludedWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return WorkerReport(LocalSummary(shard.worker_id, shard.n, fit.beta, diag), flags, fit.lam)


def _run_worker_safe(args):
    shard, cfg = args
    try:
        return run_worker(shard, cfg)
    except WaveError as exc:
        raise WorkerError(shard.worker_id, exc) from exc


def _collect(shards, cfg):
    jobs = [(sh, cfg) for sh in shards]
    if cfg.worker_parallelism == 1:
        return [_run_worker_safe(j) for j in jobs]
    pool_cls = ThreadPoolExecutor if cfg.executor == "thread" else ProcessPoolExecutor
    with pool_cls(max_workers=cfg.worker_parallelism) as pool:
        futures = [pool.submit(_run_worker_safe, j) for j in jobs]
        return [f.result() for f in futures]


@dataclass
class PipelineRun:
    result: AggregateResult
    reports: list[WorkerReport]
    messages: Counter


def run_pipeline_detailed(shards, cfg: RunConfig = RunConfig(), channel=None) -> PipelineRun:
    shards = list(shards)
    if not shards:
        raise ConfigurationError("no shards")
    p = shards[0].p
    ids = [sh.worker_id for sh in shards]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("worker ids must be unique")
    for sh in shards:
        if sh.p != p:
            raise ConfigurationError(f"worker {sh.worker_id} has p={sh.p}, expected {p}")
    reports = _collect(shards, cfg)
    summaries = [r.summary for r in reports]
    messages = Counter()
    if cfg.mode == "stream":
        channel = channel if channel is not None else ByteStreamChannel()
        for s in summaries:
            channel.send(s)
        summaries = channel.receive_all()
        messages = channel.messages
    result = aggregate(summaries, cfg.xi, cfg.nu_grid, cfg.level, cfg.pilot, cfg.nu_points, cfg.nu_low)
    return PipelineRun(result, sorted(reports, key=lambda r: r.summary.worker_id), messages)


def run_pipeline(shards, cfg: RunConfig = RunConfig(), channel=None) -> AggregateResult:
    return run_pipeline_detailed(shards, cfg, channel).result


def message_size(p: int) -> tuple[int, int]:
    """Payload of one summary: (number of reals, number of integers)."""
    return 2 * p, 3


def run_config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    if "model" in d and isinstance(d["model"], dict):
        d["model"] = LossModel.from_dict(d["model"])
    elif "model" in d and isinstance(d["model"], str):
        d["model"] = LossModel.from_dict({"family": d["model"]})
    if "admm" in d and isinstance(d["admm"], dict):
        d["admm"] = AdmmConfig(**d["admm"])
    for key in ("lambda_grid", "nu_grid"):
        if d.get(key) is not None:
            d[key] = tuple(float(v) for v in d[key])
    known = RunConfig.__dataclass_fields__
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown run settings: {', '.join(unknown)}")
    return RunConfig(**d)


def run_config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in RunConfig.__dataclass_fields__:
        v = getattr(cfg, name)
        if isinstance(v, LossModel):
            v = v.to_dict()
        elif isinstance(v, AdmmConfig):
            v = {k: getattr(v, k) for k in AdmmConfig.__dataclass_fields__}
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, float) and not math.isfinite(v):
            v = repr(v)
        out[name] = v
    return out
