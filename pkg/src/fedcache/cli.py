"""Command-line entry point.

Every subcommand accepts ``--config file.toml`` and ``--set key=value`` on top
of the dedicated flags; flags win over ``--set``, which wins over the file.
Failures print one JSON line ``{"error": ..., "message": ...}`` on stderr and
exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import Config, ConfigError, parse_assignments
from .core import Workload, make_request
from .metrics import RunReport, emit_report, write_rows
from .traces import (BlobFactory, build_trace, gen_fault_schedule, read_faults, read_trace, write_faults,
                     write_trace)

log = logging.getLogger("fedcache")

# flag dest -> config key
FLAG_KEYS = {
    "policy": "policy", "replicas": "replicas", "capacity_gib": "capacity_gib", "rounds": "rounds",
    "clients": "clients", "per_round": "per_round", "model_mb": "model_mb", "seed": "seed",
    "parallel": "parallel", "store_root": "store.root",
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--policy")
    p.add_argument("--replicas", type=int)
    p.add_argument("--capacity-gib", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--clients", type=int, help="client pool size")
    p.add_argument("--per-round", type=int)
    p.add_argument("--model-mb", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--store-root")
    p.add_argument("--out", help="output path (base name for reports)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="fedcache", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a trace (and optionally a fault schedule)")
    g.add_argument("--workload", default=Workload.MALICIOUS_FILTER.value, choices=[w.value for w in Workload])
    g.add_argument("--unscoped", action="store_true", help="one request per round instead of per client")
    g.add_argument("--faults", help="also write a Zipfian fault schedule here")
    g.add_argument("--fault-rate", type=float, default=ex.FAULT_RATE_PER_S, help="faults per simulated second")
    g.add_argument("--zipf-s", type=float, default=1.0)
    g.add_argument("--n-functions", type=int, default=ex.FAULT_SLOTS)

    r = sub.add_parser("run", parents=[common], help="replay a trace and write a report")
    r.add_argument("--trace", required=True)
    r.add_argument("--faults")

    t = sub.add_parser("table3", parents=[common], help="hit/miss table for tailored and reactive policies")
    t.add_argument("--p3-rounds", type=int, default=64)

    c = sub.add_parser("compare", parents=[common], help="unified plane vs separated-plane baselines")
    c.add_argument("--trace", help="replay this trace instead of the per-workload suite")

    f = sub.add_parser("faults", parents=[common], help="fault-free vs Zipfian reclamations, k=3 vs k=0")
    f.add_argument("--fault-rate", type=float, default=ex.FAULT_RATE_PER_S)
    f.add_argument("--zipf-s", type=float, default=1.0)
    f.add_argument("--n-functions", type=int, default=ex.FAULT_SLOTS)

    s = sub.add_parser("submit", parents=[common], help="ingest a trace, then run one request")
    s.add_argument("--trace", required=True, help="trace whose ingest events are loaded first")
    s.add_argument("--workload", required=True, choices=[w.value for w in Workload])
    s.add_argument("--round", type=int, required=True)
    s.add_argument("--client")
    s.add_argument("--id", default="req-cli")
    s.add_argument("--state", default="fedcache-requests.jsonl", help="JSON-lines file recording entries")

    q = sub.add_parser("poll", help="show a request recorded by submit")
    q.add_argument("--id", required=True)
    q.add_argument("--state", default="fedcache-requests.jsonl")
    return parser


def load_config(args) -> Config:
    overrides = parse_assignments(args.set)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return Config.load(args.config, overrides)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen(args, cfg: Config) -> int:
    spec = cfg.job_spec()
    events = build_trace(spec, args.workload, scoped=not args.unscoped)
    out = args.out or f"{args.workload}.jsonl"
    write_trace(events, out)
    info = {"trace": out, "events": len(events), "requests": sum(e.ev == "request" for e in events)}
    if args.faults:
        horizon = events[-1].t + 1 if events else 0.0
        sched = gen_fault_schedule(args.n_functions, horizon, args.zipf_s, cfg.seed, args.fault_rate)
        write_faults(sched, args.faults)
        info.update(faults=args.faults, fault_events=len(sched.events))
    _print(info)
    return 0


def _emit(report: RunReport, out) -> dict:
    csv_path, json_path = emit_report(report, out)
    summary = report.summary()
    summary["files"] = [str(csv_path), str(json_path)]
    return summary


def cmd_run(args, cfg: Config) -> int:
    events = read_trace(args.trace)
    faults = read_faults(args.faults) if args.faults else None
    report = ex.run_trace(events, cfg, faults=faults)
    summary = _emit(report, args.out or Path(args.trace).with_suffix("").as_posix() + f".{cfg.policy}")
    _print({k: summary[k] for k in ("aggregates", "hit_stats", "files", "info")})
    return 0


def cmd_table3(args, cfg: Config) -> int:
    rows = ex.table3(seed=cfg.seed, rounds=args.rounds or 2000, p3_rounds=args.p3_rounds, config=cfg)
    print(ex.format_table3(rows))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "trace", "hits", "misses", "total", "hit_rate"])
            for r in rows:
                w.writerow([r.policy, r.trace, r.hits, r.misses, r.total, f"{r.hit_rate:.4f}"])
    return 0


def cmd_compare(args, cfg: Config) -> int:
    if args.trace:
        report = ex.run_trace(read_trace(args.trace), cfg)
        rows = report.rows + ex.baseline_rows(report.rows, cfg, "objstore") + ex.baseline_rows(report.rows, cfg, "cache")
        for r in report.rows:
            r.policy = "unified"
        write_rows(rows, args.out or "compare.csv")
        print(args.out or "compare.csv")
        return 0
    rows = ex.compare(cfg, rounds=args.rounds or 20)
    fields = [f.name for f in dataclasses.fields(ex.CompareRow)]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_faults(args, cfg: Config) -> int:
    runs = ex.fault_experiment(cfg, rounds=args.rounds or 200, seed=cfg.seed, rate_per_s=args.fault_rate,
                               zipf_s=args.zipf_s, n_functions=args.n_functions)
    out = {name: {"replicas": r.replicas, "faults": r.faults, "completion": r.completion, "p50_s": r.p50,
                  "p99_s": r.report.aggregates()["p99_s"], "reroutes": r.report.info["reroutes"],
                  "refetched": r.report.info["refetched"], "consistency_errors": len(r.consistency_errors)}
           for name, r in runs.items()}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    _print(out)
    return 0


def cmd_submit(args, cfg: Config) -> int:
    import tempfile

    events = [e for e in read_trace(args.trace) if e.ev == "ingest"]
    with tempfile.TemporaryDirectory(prefix="fedcache-") as tmp:
        sys_ = ex.make_system(cfg, cfg.store_root or tmp)
        try:
            factory = BlobFactory(cfg.vector_len, cfg.seed)
            for e in events:
                sys_.engine.now = e.t
                sys_.engine.ingest(factory(e))
            req = make_request(args.id, args.workload, args.round, args.client)
            now = events[-1].t if events else 0.0
            sys_.tracker.submit(req, now=now)
            entry = sys_.tracker.poll(args.id)
            result = sys_.tracker.result(args.id)
        finally:
            sys_.close()
    record = {"request_id": entry.request_id, "routed_to": entry.routed_to, "status": entry.status,
              "attempts": entry.attempts, "hit": result.hit, "total_s": result.latency.total_s,
              "output": result.output}
    with open(args.state, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    _print(record)
    return 0


def cmd_poll(args) -> int:
    found = None
    try:
        with open(args.state, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["request_id"] == args.id:
                    found = rec
    except FileNotFoundError:
        raise CliError(f"no state file {args.state}") from None
    if found is None:
        raise CliError(f"unknown request id {args.id!r}")
    _print(found)
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "table3": cmd_table3, "compare": cmd_compare,
            "faults": cmd_faults, "submit": cmd_submit}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.cmd == "poll":
            return cmd_poll(args)
        cfg = load_config(args)
        return COMMANDS[args.cmd](args, cfg)
    except (CliError, ConfigError, OSError, KeyError, ValueError) as e:
        kind = "usage" if isinstance(e, CliError) else type(e).__name__
        msg = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
        print(json.dumps({"error": kind, "message": str(msg)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
