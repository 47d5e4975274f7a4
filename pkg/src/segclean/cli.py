"""Experiment runner CLI.

Subcommands: simulate (policy x fill-factor sweeps), analyze (closed-form
tables and the pairing-sum self-check), replay (trace-driven runs), and
sweep-sortbuffer. Configuration is flat key=value text; any key can also be
set through the environment (SEGCLEAN_<KEY>) or --set on the command line.
Precedence: defaults < config file < environment < --set/flags.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor


import numpy as np

from .analytics import (TABLE1_FILL_FACTORS, SkewSpec, max_pairing_sum,
                        optimize_split, split_cost, table1)
from .engine import RunSpec, Simulator
from .model import ConfigError, SimulationFault, StoreConfig
from .policies import parse_policy, policy_label
from .workloads import TraceError, WorkloadSpec

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

ENV_PREFIX = "SEGCLEAN_"

CSV_COLUMNS = ("policy", "workload", "theta_or_m", "fill_factor", "user_writes",
               "gc_writes", "wamp_cumulative", "wamp_window", "avg_E_at_clean",
               "cleanings", "runtime_seconds")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    "capacity": (int, 2 << 30, "physical store size in bytes"),
    "page_size": (int, 4096, "page size in bytes"),
    "segment_size": (int, 2 * 2**20, "segment size in bytes"),
    "fill_factor": (_parse_float_list, [0.8], "fill factor(s), comma separated"),
    "policy": (_parse_str_list, ["mdc"],
               "policies: age greedy cost_benefit multi_log multi_log_opt "
               "mdc mdc_opt mdc_no_sep_user mdc_no_sep_user_gc"),
    "workload": (str, "uniform", "uniform | hotcold | zipfian | trace"),
    "m": (float, None, "hotcold: fraction of updates to the hot set"),
    "theta": (float, None, "zipfian exponent"),
    "trace_path": (str, None, "trace file for workload=trace"),
    "gc_trigger_free": (int, 32, "clean when free segments fall below this"),
    "gc_batch": (int, 64, "segments cleaned per cycle"),
    "sort_buffer_segments": (int, 16, "user write staging buffer, in segments"),
    "total_user_writes": (int, None, "absolute write count (overrides multiplier)"),
    "write_multiplier": (float, 100.0, "writes as a multiple of logical pages"),
    "measure_window": (float, 0.5, "trailing fraction measured for windowed stats"),
    "seed": (int, 0, "base RNG seed"),
    "repetitions": (int, 1, "repeat each point with seed+i"),
    "cost_benefit_variant": (str, "lfs_classic", "lfs_classic | paper_text"),
    "serpentine_gc": (_parse_bool, True,
                      "alternate survivor packing direction between cycles"),
    "workers": (int, None, "worker processes (default: cpu count)"),
    "out": (str, "-", "output CSV path, - for stdout"),
}


def load_config(path: str | None, sets: list[str], env: dict | None = None) -> dict:
    """Resolve the flat configuration: defaults, file, environment, --set."""
    cfg = {k: default for k, (_, default, _) in SCHEMA.items()}

    def apply(key: str, raw: str, origin: str):
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} ({origin})")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(raw.strip())
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({origin}): {exc}") from None

    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                if "=" not in body:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, raw = body.split("=", 1)
                apply(key, raw, f"{path}:{lineno}")
    env = os.environ if env is None else env
    for key in SCHEMA:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            apply(key, raw, "environment")
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        apply(key, raw, "--set")
    return cfg


def _workload_spec(cfg: dict) -> WorkloadSpec:
    return WorkloadSpec(kind=cfg["workload"], m=cfg["m"], theta=cfg["theta"],
                        trace_path=cfg["trace_path"])


def _run_specs(cfg: dict) -> list[RunSpec]:
    """Expand the policy x fill-factor x repetition grid, in config order."""
    wl = _workload_spec(cfg)
    specs = []
    for policy_name, F, rep in itertools.product(
            cfg["policy"], cfg["fill_factor"], range(cfg["repetitions"])):
        store = StoreConfig(
            capacity=cfg["capacity"], page_size=cfg["page_size"],
            segment_size=cfg["segment_size"], fill_factor=F,
            gc_trigger_free=cfg["gc_trigger_free"], gc_batch=cfg["gc_batch"],
            sort_buffer_segments=cfg["sort_buffer_segments"])
        policy = parse_policy(policy_name, cfg["cost_benefit_variant"])
        specs.append(RunSpec(
            config=store, policy=policy, workload=wl,
            total_user_writes=cfg["total_user_writes"],
            write_multiplier=cfg["write_multiplier"],
            measure_window=cfg["measure_window"],
            seed=cfg["seed"] + rep,
            gc_pack_serpentine=cfg["serpentine_gc"]))
    return specs


def _row_from(spec: RunSpec, report, runtime: float) -> dict:
    return {
        "policy": policy_label(spec.policy),
        "workload": spec.workload.kind,
        "theta_or_m": spec.workload.skew_label,
        "fill_factor": repr(spec.config.fill_factor),
        "user_writes": report.user_writes,
        "gc_writes": report.gc_writes,
        "wamp_cumulative": repr(report.wamp_cumulative),
        "wamp_window": repr(report.wamp_window),
        "avg_E_at_clean": repr(report.avg_E_at_clean),
        "cleanings": report.cleanings,
        "runtime_seconds": round(runtime, 3),
    }


def _execute(spec: RunSpec) -> dict:
    t0 = time.perf_counter()
    report = Simulator(spec).run()
    return _row_from(spec, report, time.perf_counter() - t0)


def _run_grid(specs: list[RunSpec], workers: int | None) -> list[dict]:
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(workers, len(specs)))
    if workers == 1 or len(specs) == 1:
        return [_execute(s) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute, specs))  # map preserves submit order


def _emit_csv(rows: list[dict], columns, out_path: str):
    fh = sys.stdout if out_path == "-" else open(out_path, "w", encoding="utf-8",
                                                 newline="")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])
    finally:
        if fh is not sys.stdout:
            fh.close()


# -- subcommands -----------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.quick:
        cfg["capacity"] = 256 << 20
        cfg["write_multiplier"] = 20.0
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    specs = _run_specs(cfg)
    if args.cycle_trace:
        if len(specs) != 1:
            raise ConfigError("--cycle-trace needs a single-run configuration")
        specs[0].collect_cycle_trace = True
        sim = Simulator(specs[0])
        t0 = time.perf_counter()
        report = sim.run()
        dt = time.perf_counter() - t0
        with open(args.cycle_trace, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("cycle", "victim", "emptiness"))
            writer.writerows(sim.cycle_trace)
        rows = [_row_from(specs[0], report, dt)]
    else:
        rows = _run_grid(specs, cfg["workers"])
    _emit_csv(rows, CSV_COLUMNS, cfg["out"])
    return EXIT_OK


def cmd_replay(args) -> int:
    sets = list(args.set or [])
    sets.append("workload=trace")
    sets.append(f"trace_path={args.trace}")
    cfg = load_config(args.config, sets)
    if args.out is not None:
        cfg["out"] = args.out
    specs = _run_specs(cfg)
    rows = _run_grid(specs, cfg["workers"])
    _emit_csv(rows, CSV_COLUMNS, cfg["out"])
    return EXIT_OK


def cmd_sweep_sortbuffer(args) -> int:
    sets = list(args.set or [])
    cfg = load_config(args.config, sets)
    cfg["policy"] = ["mdc"]
    cfg["workload"] = "zipfian"
    if cfg["theta"] is None:
        cfg["theta"] = 0.99
    cfg["m"] = None
    cfg["trace_path"] = None
    if args.out is not None:
        cfg["out"] = args.out
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise ConfigError("empty size list")
    specs = []
    for size in sizes:
        c = dict(cfg)
        c["sort_buffer_segments"] = size
        specs.extend(_run_specs(c))
    rows = _run_grid(specs, cfg["workers"])
    for size, row in zip(sizes, rows):
        row["sort_buffer_segments"] = size
    _emit_csv(rows, ("sort_buffer_segments",) + CSV_COLUMNS, cfg["out"])
    return EXIT_OK


def cmd_analyze(args) -> int:
    writer = csv.writer(sys.stdout, lineterminator="\n")
    if args.what == "table1":
        fill = (_parse_float_list(args.fill_factor) if args.fill_factor
                else list(TABLE1_FILL_FACTORS))
        writer.writerow(("fill_factor", "emptiness", "cost", "slack_ratio", "wamp"))
        for pt in table1(fill, args.num_pages):
            writer.writerow((pt.fill_factor, f"{pt.emptiness:.6f}", f"{pt.cost:.6f}",
                             f"{pt.slack_ratio:.6f}", f"{pt.wamp:.6f}"))
        return EXIT_OK
    if args.what == "split":
        F = float(args.fill_factor) if args.fill_factor else 0.8
        ms = _parse_float_list(args.m) if args.m else [0.9, 0.8, 0.7, 0.6, 0.5]
        writer.writerow(("m", "min_cost", "g_hot", "closed_form_g_hot",
                         "cost_hot60", "cost_hot40"))
        for m in ms:
            opt = optimize_split(F, (1.0 - m, m), (m, 1.0 - m))
            c60 = split_cost(SkewSpec.from_hotcold(F, m, 0.6)).total
            c40 = split_cost(SkewSpec.from_hotcold(F, m, 0.4)).total
            writer.writerow((m, f"{opt.min_cost:.6f}", f"{opt.g_hot:.6f}",
                             f"{opt.closed_form_g_hot:.6f}", f"{c60:.6f}",
                             f"{c40:.6f}"))
        return EXIT_OK
    # lemma: randomized check of the sorted-pairing maximality
    import itertools as it
    rng = np.random.default_rng(args.seed)
    failures = 0
    for _ in range(args.trials):
        n = int(rng.integers(1, args.max_len + 1))
        xs = rng.uniform(0.01, 10.0, n)
        ys = rng.uniform(0.01, 10.0, n)
        best = max(float(np.dot(xs, np.asarray(perm)))
                   for perm in it.permutations(ys))
        if not math.isclose(max_pairing_sum(xs, ys), best, rel_tol=1e-12):
            failures += 1
    print(f"trials={args.trials} passes={args.trials - failures} failures={failures}")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are configuration errors
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    schema_help = "; ".join(f"{k} (default {d!r}): {h}"
                            for k, (_, d, h) in SCHEMA.items())
    parser = _Parser(prog="segclean",
                     description=__doc__,
                     epilog="config keys: " + schema_help,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help="output CSV path (- for stdout)")

    p_sim = sub.add_parser("simulate", help="run the policy/fill-factor grid")
    common(p_sim)
    p_sim.add_argument("--quick", action="store_true",
                       help="small profile: 256 MiB store, 20x writes")
    p_sim.add_argument("--workers", type=int)
    p_sim.add_argument("--cycle-trace", dest="cycle_trace", metavar="PATH",
                       help="write per-cleaning-cycle victim records "
                            "(single-run configs only)")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("replay", help="replay a page-id trace")
    p_rep.add_argument("trace", help="trace file: one decimal page id per line")
    common(p_rep)
    p_rep.set_defaults(func=cmd_replay)

    p_swp = sub.add_parser("sweep-sortbuffer",
                           help="wamp vs. sort buffer size (mdc, zipfian)")
    common(p_swp)
    p_swp.add_argument("--sizes", default="1,2,4,8,16,32,64",
                       help="buffer sizes in segments, comma separated")
    p_swp.set_defaults(func=cmd_sweep_sortbuffer)

    p_ana = sub.add_parser("analyze", help="closed-form analysis tables")
    ana_sub = p_ana.add_subparsers(dest="what", required=True)
    p_t1 = ana_sub.add_parser("table1", help="emptiness fixpoint table")
    p_t1.add_argument("--fill-factor", "--F", dest="fill_factor",
                      help="comma-separated list (default: the 17 tabulated)")
    p_t1.add_argument("--num-pages", dest="num_pages", type=int, default=None,
                      help="finite page count (default: asymptotic form)")
    p_t1.set_defaults(func=cmd_analyze)
    p_sp = ana_sub.add_parser("split", help="hot/cold slack-division costs")
    p_sp.add_argument("--fill-factor", "--F", dest="fill_factor")
    p_sp.add_argument("--m", help="comma-separated hot update fractions")
    p_sp.set_defaults(func=cmd_analyze)
    p_lm = ana_sub.add_parser("lemma", help="sorted-pairing maximality self-check")
    p_lm.add_argument("--trials", type=int, default=10000)
    p_lm.add_argument("--max-len", "--len", dest="max_len", type=int, default=6)
    p_lm.add_argument("--seed", type=int, default=0)
    p_lm.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"segclean: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationFault as exc:
        print(f"segclean: fatal: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
