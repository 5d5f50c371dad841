"""Command-line entry point: ``wavereg {bench,simulate,solve,gen,protocol-echo}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import load_bench_config, run_cells, write_reports
from .datagen import GenConfig, export_csv, generate, read_csv
from .errors import ConfigurationError, DecodeError, WaveError
from .local import parse_tuning
from .model import LossModel
from .runtime import (
    RunConfig,
    decode_summary,
    encode_summary,
    run_pipeline_detailed,
)
from .solver import AdmmConfig, solve_weighted_l1

EXIT_CONFIG = 2
EXIT_FAILURE = 1

_FAMILY_FOR_EXAMPLE = {
    "linear": "least_squares",
    "logistic": "logistic",
    "poisson": "poisson",
    "huber_linear": "huber",
}


def _model_from_args(args) -> LossModel:
    family = args.family or _FAMILY_FOR_EXAMPLE[args.example]
    return LossModel.from_dict({"family": family, "huber_a": args.huber_a})


def _add_gen_args(p):
    p.add_argument("--example", default="linear", choices=sorted(_FAMILY_FOR_EXAMPLE))
    p.add_argument("--setting", default="homogeneous", choices=["homogeneous", "heterogeneous"])
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--n-per-worker", type=int, default=500)
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _add_model_args(p):
    p.add_argument("--family", choices=["least_squares", "huber", "logistic", "poisson"])
    p.add_argument("--huber-a", type=float, default=1.345)


def cmd_bench(args) -> int:
    cells, _ = load_bench_config(args.config, args.seed_offset)
    reports = run_cells(cells, args.threads)
    paths = write_reports(reports, args.out_dir)
    for r in reports:
        parts = [f"{m}={s.summary()['mean_sq_error']:.4e}" for m, s in r.stats.items()]
        fails = f" failures={len(r.failures)}" if r.failures else ""
        print(f"{r.cell.name}: " + " ".join(parts) + fails)
    for kind, path in paths.items():
        print(f"wrote {kind}: {path}")
    return 0


def cmd_simulate(args) -> int:
    gen = GenConfig(args.example, args.setting, args.K, args.n_per_worker, args.p, args.seed)
    shards, truth = generate(gen)
    cfg = RunConfig(
        model=_model_from_args(args),
        xi=args.xi,
        tuning=args.tuning,
        mode=args.mode,
        worker_parallelism=args.parallelism,
    )
    run = run_pipeline_detailed(shards, cfg)
    res = run.result
    for r in run.reports:
        s = r.summary
        flags = ",".join(r.flags) or "-"
        print(f"worker {s.worker_id:3d} n={s.n_j} lambda={r.lam:.4g} "
              f"nonzeros={np.count_nonzero(s.beta_hat)} flags={flags}")
    err_w = float(np.sum((res.beta_sparse - truth.beta_star) ** 2))
    err_a = float(np.sum((res.beta_average - truth.beta_star) ** 2))
    out = {
        "config": gen.to_dict(),
        "N": gen.N,
        "nu_hat": res.nu_hat,
        "support": [i + 1 for i in res.support],
        "true_support": [i + 1 for i in truth.active_set],
        "sq_error_wave": err_w,
        "sq_error_ave": err_a,
        "messages": dict(sorted(run.messages.items())) if args.mode == "stream" else None,
        "active": [
            {"coordinate": i + 1, "beta_wave": float(res.beta_wave[i]),
             "beta_sparse": float(res.beta_sparse[i]), "ci_halfwidth": float(res.ci_halfwidth[i])}
            for i in sorted(set(res.support) | set(truth.active_set))
        ],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_solve(args) -> int:
    if args.csv:
        shard = read_csv(args.csv)
    else:
        gen = GenConfig(args.example, args.setting, 1, args.n_per_worker, args.p, args.seed)
        shard = generate(gen)[0][0]
    weights = np.ones(shard.p) if args.weights is None else np.array(
        [float(v) for v in args.weights.split(",")])
    cfg = AdmmConfig(eta=args.eta, primal_tol=args.tol, max_outer_iter=args.max_iter)
    beta = solve_weighted_l1(shard, _model_from_args(args), args.lam, weights, cfg)
    print(json.dumps({"lambda": args.lam, "nonzeros": int(np.count_nonzero(beta)),
                      "beta": [float(v) for v in beta]}))
    return 0


def cmd_gen(args) -> int:
    gen = GenConfig(args.example, args.setting, args.K, args.n_per_worker, args.p, args.seed)
    shards, truth = generate(gen)
    paths = export_csv(shards, args.out_dir)
    meta = {"config": gen.to_dict(), "beta_star": [float(v) for v in truth.beta_star],
            "files": [p.name for p in paths]}
    (Path(args.out_dir) / "truth.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(paths)} shards to {args.out_dir}")
    return 0


def cmd_protocol_echo(args) -> int:
    src = open(args.input, "rb") if args.input else sys.stdin.buffer
    dst = open(args.output, "wb") if args.output else sys.stdout.buffer
    count = 0
    try:
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            try:
                s = decode_summary(line)
            except DecodeError as exc:
                print(f"line {lineno}: {exc}", file=sys.stderr)
                return EXIT_FAILURE
            dst.write(encode_summary(s))
            count += 1
    finally:
        if args.input:
            src.close()
        if args.output:
            dst.close()
        else:
            dst.flush()
    print(f"echoed {count} messages", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavereg", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run an experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed-offset", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="run one cell once and print details")
    _add_gen_args(p)
    _add_model_args(p)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--tuning", default="bic")
    p.add_argument("--mode", default="inprocess", choices=["inprocess", "stream"])
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve one weighted-L1 problem on one shard")
    _add_gen_args(p)
    _add_model_args(p)
    p.add_argument("--csv", help="shard CSV with a 'y' column (overrides generation)")
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--weights", help="comma-separated penalty weights (default all ones)")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=20000)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gen", help="write generated shards as CSV files")
    _add_gen_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("protocol-echo", help="decode and re-encode a summary stream")
    p.add_argument("--input")
    p.add_argument("--output")
    p.set_defaults(func=cmd_protocol_echo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "tuning"):
        try:
            parse_tuning(args.tuning)
        except ConfigurationError as exc:
            parser.error(str(exc))
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WaveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
