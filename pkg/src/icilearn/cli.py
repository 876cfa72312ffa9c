"""Command-line driver: ``icilearn <verb> --config FILE [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 a
verification did not pass.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAILED = 0, 2, 3, 4
OUT_ENV = "ICILEARN_OUT"


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "icilearn-out")


def _load(args) -> dict:
    cfg = cfgmod.load_config(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg["run"]["seed"] = args.seed
    cfgmod.validate_config(cfg)
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    sc = cfgmod.validate_config(cfg)
    M, K = sc.shape
    print(f"ok: {M} BSs x {K} users, N_Q={sc.system.buffer_size} {sc.system.queue_unit.value}, "
          f"{len(sc.patterns)} patterns, channel={sc.channel.kind}, arrivals={sc.arrivals.kind}, "
          f"regions starting at {list(sc.breakpoints)}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .sim import RunSpec, run_config, write_checkpoints, write_metrics, make_streams
    cfg = _load(args)
    spec = RunSpec.from_config(cfg, policy=args.policy, horizon=args.horizon)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    trace_fh = None
    writer = None
    if args.trace:
        trace_fh = open(out / "trace.csv", "w", newline="")
        writer = csv.writer(trace_fh)
        M, K = cfg["system"]["num_bs"], cfg["system"]["users_per_bs"]
        users = [f"{m}_{k}" for m in range(M) for k in range(K)]
        writer.writerow(["slot", "pattern"] + [f"q_{u}" for u in users] + [f"a_{u}" for u in users]
                        + [f"served_{u}" for u in users] + [f"dropped_{u}" for u in users])
    try:
        rec = run_config(cfg, spec, trace=writer)
    finally:
        if trace_fh:
            trace_fh.close()
    stem = f"metrics_{spec.policy}"
    jpath, _ = write_metrics(rec, out, stem)
    if rec.checkpoints:
        scenario = cfgmod.build_scenario(cfg, make_streams(spec.seed)["placement"])
        write_checkpoints(rec.checkpoints, scenario, out)
    print(f"{spec.policy}: avg delay {rec.avg_delay:.4f} +/- {rec.delay_ci:.4f} slots, "
          f"drop prob {rec.overall_drop_prob:.4f}, cost {rec.mean_cost:.4f} "
          f"({time.time() - t0:.1f}s) -> {jpath}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sim import sweep, write_sweep
    cfg = _load(args)
    sw = cfg["sweep"]
    param = args.param or sw["param"]
    values = [json.loads(v) for v in args.values.split(",")] if args.values else sw["values"]
    policies = args.policies.split(",") if args.policies else sw["policies"]
    reps = args.replicates or sw["replicates"]
    t0 = time.time()
    rows = sweep(cfg, param, values, policies, reps, horizon=args.horizon, jobs=args.jobs)
    cpath, _ = write_sweep(rows, _out_dir(args), stem=args.stem)
    for r in rows:
        print(f"{param}={r['value']} {r['policy']}: delay {r['avg_delay']:.4f} +/- {r['delay_ci']:.4f}, "
              f"drop {r['drop_prob']:.4f}")
    print(f"sweep done in {time.time() - t0:.1f}s -> {cpath}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import OracleModel, evaluate_policy, relative_value_iteration, save_oracle
    cfg = _load(args)
    scenario = cfgmod.build_scenario(cfg)
    t0 = time.time()
    model = OracleModel(scenario)
    table, policy = relative_value_iteration(model, tol=args.tol, max_iters=args.max_iters)
    elapsed = time.time() - t0
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config": str(args.config), "overrides": args.set, "seconds": elapsed}
    if args.evaluate:
        est = evaluate_policy(policy, scenario, args.evaluate, cfg["run"]["seed"], model=model)
        meta["simulated_cost"] = est.mean
        meta["simulated_ci"] = est.half_width
    path = save_oracle(out / "oracle.json", table, policy, meta)
    print(f"theta {table.theta:.6f} after {table.iterations} iterations "
          f"(span {table.span:.2e}, {elapsed:.1f}s) -> {path}")
    if args.evaluate:
        print(f"simulated cost {meta['simulated_cost']:.6f} +/- {meta['simulated_ci']:.6f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .sim import verify_fixed_points, write_checkpoints
    cfg = _load(args)
    cks = [int(c) for c in args.checkpoints.split(",")]
    rep = verify_fixed_points(cfg, horizon=args.horizon, checkpoints=cks, freeze=args.freeze)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "fixed_point_distance.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "value_distance", "q_distance"])
        for row in zip(rep["slots"], rep["value_distance"], rep["q_distance"]):
            w.writerow(row)
    write_checkpoints(rep["checkpoints"], rep["scenario"], out)
    for t, dv, dq in zip(rep["slots"], rep["value_distance"], rep["q_distance"]):
        print(f"slot {t}: value distance {dv:.5f}, Q-factor distance {dq:.5f}")
    verdict = "PASS" if rep["passed"] else "FAIL"
    print(f"{verdict}: threshold {rep['threshold']}, slack {rep['slack']}")
    return EXIT_OK if rep["passed"] else EXIT_FAILED


def cmd_report(args) -> int:
    from .report import write_report
    paths = write_report(args.inputs, _out_dir(args), plots=args.plots)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icilearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="config file or bundled config name")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./icilearn-out)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("validate", help="check a config without running anything")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[])
    p.set_defaults(func=cmd_validate, seed=None)

    p = sub.add_parser("run", help="simulate one policy")
    common(p)
    p.add_argument("--policy", choices=["proposed", "oracle", "csit", "backpressure", "timescale", "never"])
    p.add_argument("--horizon", type=int)
    p.add_argument("--trace", action="store_true", help="also write a per-slot trace.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid of runs over one parameter")
    common(p)
    p.add_argument("--param", help="dotted config key, e.g. system.max_power_dbm")
    p.add_argument("--values", help="comma-separated grid values")
    p.add_argument("--policies", help="comma-separated policy names")
    p.add_argument("--replicates", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--stem", default="sweep", help="output file stem")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="solve the centralized Bellman equation")
    common(p)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--evaluate", type=int, default=0, metavar="SLOTS",
                   help="also simulate the extracted policy for this many slots")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify-fixed-points", help="compare learned tables with direct fixed points")
    common(p)
    p.add_argument("--horizon", type=int, default=1_000_000)
    p.add_argument("--checkpoints", default="10000,100000,1000000")
    p.add_argument("--freeze", action="store_true", help="disable learning (negative control)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="write figure-data CSVs from earlier outputs")
    p.add_argument("inputs", nargs="*", help="output directories or files")
    p.add_argument("--out")
    p.add_argument("--plots", action="store_true", help="also render PNGs with matplotlib")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
