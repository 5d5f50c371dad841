"""Monte-Carlo benchmark harness: experiment grids, metrics and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import full_ls_reference
from .datagen import Example, GenConfig, generate
from .errors import ConfigurationError, DimensionError, WaveError
from .local import estimate_precision_matrix
from .model import LossModel, TrueModel
from .runtime import RunConfig, run_config_from_dict, run_config_to_dict, run_pipeline_detailed

log = logging.getLogger(__name__)

METHODS = ("WAVE", "AVE", "LS")

_DEFAULT_MODELS = {
    Example.LINEAR: LossModel.least_squares(),
    Example.LOGISTIC: LossModel.logistic(),
    Example.POISSON: LossModel.poisson(),
    Example.HUBER_LINEAR: LossModel.huber(1.345),
}


def squared_error(beta_hat, beta_star) -> float:
    a = np.asarray(beta_hat, dtype=np.float64)
    b = np.asarray(beta_star, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def selection_metrics(beta_hat, truth: TrueModel) -> tuple[bool, float, float]:
    """Exact-support flag, true-positive rate and false-positive rate."""
    est = np.asarray(beta_hat) != 0
    act = truth.beta_star != 0
    if est.shape != act.shape:
        raise DimensionError(f"lengths differ: {est.shape} vs {act.shape}")
    n_act = int(act.sum())
    n_inact = act.size - n_act
    tpr = float(np.sum(est & act) / n_act) if n_act else 1.0
    fpr = float(np.sum(est & ~act) / n_inact) if n_inact else 0.0
    return bool(np.array_equal(est, act)), tpr, fpr


@dataclass(frozen=True)
class Cell:
    name: str
    gen: GenConfig
    run: RunConfig
    repetitions: int
    ls_reference: bool = False

    def methods(self) -> tuple[str, ...]:
        return METHODS if self.ls_reference else METHODS[:2]

    def echo(self) -> dict:
        g = self.gen.to_dict()
        g.pop("seed")
        return {
            "name": self.name,
            **g,
            "N": self.gen.N,
            "repetitions": self.repetitions,
            "ls_reference": self.ls_reference,
            "run": run_config_to_dict(self.run),
        }


@dataclass
class MethodStats:
    errors: list[float] = field(default_factory=list)
    exact: list[bool] = field(default_factory=list)
    tpr: list[float] = field(default_factory=list)
    fpr: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        e = np.array(self.errors)
        return {
            "mean_sq_error": float(e.mean()) if e.size else float("nan"),
            "std_sq_error": float(e.std(ddof=1)) if e.size > 1 else float("nan"),
            "exact_support_rate": float(np.mean(self.exact)) if e.size else float("nan"),
            "tpr": float(np.mean(self.tpr)) if e.size else float("nan"),
            "fpr": float(np.mean(self.fpr)) if e.size else float("nan"),
            "completed": int(e.size),
        }


@dataclass
class CellReport:
    cell: Cell
    stats: dict[str, MethodStats]
    repetitions: list[int]
    failures: list[dict]
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "config": self.cell.echo(),
            "methods": {m: s.summary() for m, s in self.stats.items()},
            "failures": self.failures,
            "wall_time": self.wall_time,
        }


# --- config parsing -------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_bench_config(data: dict, seed_offset: int = 0) -> tuple[list[Cell], int]:
    """Turn a parsed JSON grid config into cells; returns ``(cells, base_seed)``."""
    if not isinstance(data, dict) or "cells" not in data:
        raise ConfigurationError("config must be an object with a 'cells' list")
    base_run = data.get("run", {})
    reps_default = int(data.get("repetitions", 50))
    seed = int(data.get("seed", 0)) + int(seed_offset)
    cells = []
    for i, c in enumerate(data["cells"]):
        where = f"cells[{i}]"
        try:
            example = Example(c.get("example", "linear"))
            K = int(c["K"])
            p = int(c["p"])
            if "n_per_worker" in c:
                n = int(c["n_per_worker"])
            elif "N" in c:
                N = int(c["N"])
                if N % K:
                    raise ConfigurationError(f"N={N} is not divisible by K={K}")
                n = N // K
            else:
                raise ConfigurationError("give N or n_per_worker")
            gen = GenConfig(example, c.get("setting", "homogeneous"), K, n, p, seed)
            run_dict = _merge(base_run, c.get("run", {}))
            run_dict.setdefault("model", _DEFAULT_MODELS[example].to_dict())
            run = run_config_from_dict(run_dict)
            reps = int(c.get("repetitions", reps_default))
            if reps < 1:
                raise ConfigurationError("repetitions must be at least 1")
            ls = bool(c.get("ls_reference", False))
            if ls and p > 200:
                raise ConfigurationError("ls_reference needs p <= 200")
            name = str(c.get("name", f"{example.value}-{gen.setting.value}-K{K}-p{p}"))
        except KeyError as exc:
            raise ConfigurationError(f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{where}: {exc}") from None
        cells.append(Cell(name, gen, run, reps, ls))
    if not cells:
        raise ConfigurationError("config has no cells")
    return cells, seed


def load_bench_config(path, seed_offset: int = 0) -> tuple[list[Cell], int]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return parse_bench_config(data, seed_offset)


# --- running --------------------------------------------------------------------


def run_repetition(cell: Cell, rep: int) -> dict:
    """One seeded repetition; returns per-method estimates and timings."""
    gen = GenConfig(
        cell.gen.example, cell.gen.setting, cell.gen.K, cell.gen.n_per_worker, cell.gen.p,
        cell.gen.seed + rep,
    )
    shards, truth = generate(gen)
    t0 = time.perf_counter()
    run = run_pipeline_detailed(shards, cell.run)
    res = run.result
    estimates = {"WAVE": res.beta_sparse, "AVE": res.beta_average}
    if cell.ls_reference:
        pairs = [
            (r.summary.beta_hat, estimate_precision_matrix(sh, cell.run.model, r.summary.beta_hat,
                                                           cell.run.ridge, cell.run.branch))
            for sh, r in zip(sorted(shards, key=lambda s: s.worker_id), run.reports)
        ]
        estimates["LS"] = full_ls_reference(pairs, res.alpha)
    return {
        "estimates": estimates,
        "truth": truth,
        "seconds": time.perf_counter() - t0,
        "beta_wave": res.beta_wave,
        "ci_halfwidth": res.ci_halfwidth,
        "nu_hat": res.nu_hat,
    }


def _job(args):
    cell, rep = args
    try:
        return rep, run_repetition(cell, rep), None
    except WaveError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_cells(cells: list[Cell], threads: int = 1) -> list[CellReport]:
    jobs = [(c, r) for c in cells for r in range(c.repetitions)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_job, jobs))
    else:
        outcomes = [_job(j) for j in jobs]
    reports = []
    pos = 0
    for c in cells:
        chunk = outcomes[pos:pos + c.repetitions]
        pos += c.repetitions
        stats = {m: MethodStats() for m in c.methods()}
        done, failures, wall = [], [], 0.0
        for rep, out, err in chunk:
            if err is not None:
                failures.append({"repetition": rep, "error": err})
                log.warning("cell %s repetition %d failed: %s", c.name, rep, err)
                continue
            done.append(rep)
            wall += out["seconds"]
            for m in c.methods():
                b = out["estimates"][m]
                st = stats[m]
                st.errors.append(squared_error(b, out["truth"].beta_star))
                exact, tpr, fpr = selection_metrics(b, out["truth"])
                st.exact.append(exact)
                st.tpr.append(tpr)
                st.fpr.append(fpr)
        reports.append(CellReport(c, stats, done, failures, wall))
    return reports


# --- output ---------------------------------------------------------------------

REPORT_COLUMNS = (
    "cell", "example", "setting", "K", "N", "p", "method", "repetitions", "completed",
    "failed", "mean_sq_error", "std_sq_error", "exact_support_rate", "tpr", "fpr", "wall_time",
)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_reports(reports: list[CellReport], out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            g = r.cell.gen
            for m, st in r.stats.items():
                s = st.summary()
                w.writerow([
                    r.cell.name, g.example.value, g.setting.value, g.K, g.N, g.p, m,
                    r.cell.repetitions, s["completed"], len(r.failures),
                    _fmt(s["mean_sq_error"]), _fmt(s["std_sq_error"]),
                    _fmt(s["exact_support_rate"]), _fmt(s["tpr"]), _fmt(s["fpr"]),
                    _fmt(r.wall_time),
                ])
    json_path = out_dir / "report.json"
    payload = {"cells": [r.to_dict() for r in reports]}
    json_path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")
    paths = {"csv": csv_path, "json": json_path}
    paths.update(emit_plot_data(reports, out_dir))
    return paths


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"cannot serialise {type(o).__name__}")


def emit_plot_data(reports: list[CellReport], out_dir) -> dict[str, Path]:
    """Per-repetition errors as a tidy CSV plus a whitespace-delimited summary."""
    if not reports:
        raise ConfigurationError("no reports to emit")
    out_dir = Path(out_dir)
    raw = out_dir / "errors_by_repetition.csv"
    dat = out_dir / "errors_summary.dat"
    rows = []
    for r in reports:
        for m, st in r.stats.items():
            for rep, e in zip(r.repetitions, st.errors):
                rows.append((r.cell.name, m, rep, e))
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with raw.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "method", "repetition", "error"])
            for cell, m, rep, e in rows:
                w.writerow([cell, m, rep, repr(e)])
        lines = ["# index cell method n mean std min q1 median q3 max"]
        keyed = sorted(
            ((r.cell.name, m, st.errors) for r in reports for m, st in r.stats.items()),
            key=lambda t: (t[0], t[1]),
        )
        for i, (cell, m, errs) in enumerate(keyed):
            e = np.array(errs)
            if e.size == 0:
                continue
            q = np.quantile(e, [0.0, 0.25, 0.5, 0.75, 1.0])
            sd = e.std(ddof=1) if e.size > 1 else float("nan")
            lines.append(" ".join(
                [str(i), f'"{cell}"', m, str(e.size), repr(float(e.mean())), repr(float(sd))]
                + [repr(float(v)) for v in q]
            ))
        dat.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"writing plot data under {out_dir}: {exc}") from exc
    return {"plot_csv": raw, "plot_summary": dat}


def run_bench(config_path, out_dir, threads: int = 1, seed_offset: int = 0) -> list[CellReport]:
    cells, _ = load_bench_config(config_path, seed_offset)
    reports = run_cells(cells, threads)
    write_reports(reports, out_dir)
    return reports
