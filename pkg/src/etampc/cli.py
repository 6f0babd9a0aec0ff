"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (collision or solver failure in a
single run), 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, default_config, load_config, load_sweep
from .experiment import compute_baselines, run_grid
from .fixtures import regenerate_fixtures
from .metrics import aggregate, evaluate, write_aggregate_csv, write_metrics_csv
from .prediction import OutOfDomainError, TraceFormatError, read_trace_csv
from .qp import ContractError
from .sim import run, run_idm, synth_trace

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("etampc")


def _load_trace(trace_path, loaded):
    if trace_path:
        return read_trace_csv(trace_path)
    if loaded.lead is None:
        raise ConfigError("no lead trace: pass --trace or add a lead section to the config")
    spec = loaded.lead
    return synth_trace(spec["kind"], dict(spec["params"]), spec["duration"], spec["seed"])


def _load(args):
    loaded = load_config(args.config) if args.config else default_config()
    if getattr(args, "sigma", None) is not None or getattr(args, "spacing", None) is not None:
        sim = loaded.sim
        sim = sim.with_noise(args.spacing if args.spacing is not None else sim.spacing,
                             args.sigma if args.sigma is not None else sim.noise.sigma,
                             args.seed if args.seed is not None else sim.noise.rng_seed)
        loaded.sim = sim
    return loaded, _load_trace(args.trace, loaded)


def cmd_simulate(args) -> int:
    loaded, trace = _load(args)
    cfg = loaded.sim
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    record = run(cfg, trace)
    elapsed = time.perf_counter() - tic
    record.write_csv(out / "record.csv")
    record.write_plan_csv(out / "plans.csv")
    base = compute_baselines(cfg, trace)
    rep = evaluate(record, base.idm, base.oracle_velocities, cfg.track_period, cfg.vehicle_length,
                   cfg.spacing, cfg.noise.sigma, cfg.noise.rng_seed)
    print(f"ticks={len(record)} plans={len(record.plans)} wall={elapsed:.1f}s")
    print(f"e={rep.e:.4f} m/s  f={rep.f:.2f}%  min_gap={rep.min_gap:.3f} m  "
          f"fallbacks={record.fallback_count}")
    print(f"mean solve: plan={record.mean_plan_time() * 1e3:.2f} ms  "
          f"track={record.mean_track_time() * 1e3:.2f} ms")
    if record.collision:
        print(f"collision: {record.events[-1]}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_baseline(args) -> int:
    loaded, trace = _load(args)
    cfg = loaded.sim
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.controller == "idm":
        record = run_idm(cfg, trace)
    else:
        record = run(replace(cfg, prediction="oracle"), trace)
        record.write_plan_csv(out / "oracle_plans.csv")
    record.write_csv(out / f"{args.controller}_record.csv")
    print(f"{args.controller}: ticks={len(record)} min_gap={record.min_bumper_gap(cfg.vehicle_length):.3f} m")
    if record.collision:
        print("collision", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec)
    cfg = spec.config.sim
    trace = read_trace_csv(spec.trace) if spec.trace else _load_trace(None, spec.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    base = compute_baselines(cfg, trace)
    base.idm.write_csv(out / "idm_record.csv")
    np.savetxt(out / "oracle_velocities.csv", base.oracle_velocities, fmt="%.10g", header="v", comments="")
    reports = run_grid(cfg, trace, spec.cells, spec.seeds, args.jobs, base)
    write_metrics_csv(reports, out / "metrics.csv")
    write_aggregate_csv(aggregate(reports), out / "heatmap.csv")
    collided = sum(r.collision for r in reports)
    print(f"{len(reports)} runs in {time.perf_counter() - tic:.0f}s; {collided} collided")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    status = regenerate_fixtures(args.dir, check_only=not args.regenerate)
    print(status.summary())
    return EXIT_OK if status.ok else EXIT_RUNTIME


def _common(p, with_noise=True):
    p.add_argument("--config", help="YAML config (defaults to the packaged one)")
    p.add_argument("--trace", help="lead trace CSV with header t,s,v,a")
    p.add_argument("--out", required=True, help="output directory")
    if with_noise:
        p.add_argument("--spacing", type=float, help="override prediction.spacing")
        p.add_argument("--sigma", type=float, help="override prediction.sigma")
        p.add_argument("--seed", type=int, help="override prediction.seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etampc", description="Car-following MPC simulations, baselines and sweeps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="one closed-loop MPC run")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("baseline", help="IDM or oracle run")
    p.add_argument("--controller", choices=("idm", "oracle"), required=True)
    _common(p, with_noise=False)
    p.set_defaults(func=cmd_baseline)
    p = sub.add_parser("sweep", help="(spacing, sigma, seed) grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("fixtures", help="check or regenerate fixture files")
    p.add_argument("--dir", help="fixture directory (defaults to the repository's)")
    p.add_argument("--regenerate", action="store_true", help="rewrite instead of only checking")
    p.set_defaults(func=cmd_fixtures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ContractError, TraceFormatError, OutOfDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
