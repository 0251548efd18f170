"""Experiment drivers shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import contextlib
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Config
from .core import WORKLOAD_CLASS, Workload, WorkloadClass, make_request
from .engine import CacheEngine
from .metrics import (MODES, RequestRow, RunReport, cost_of, latency_baseline_cache,
                      latency_baseline_objstore, request_cost)
from .policies import HitStats, make_policy
from .pool import FunctionPool
from .store import PersistentStore
from .traces import BlobFactory, FaultSchedule, JobSpec, build_trace, gen_fault_schedule, replay
from .tracker import RequestTracker

# One representative workload per class for the hit-rate table.
TABLE3_WORKLOADS = {
    WorkloadClass.P2: Workload.MALICIOUS_FILTER,
    WorkloadClass.P3: Workload.PROVENANCE,
    WorkloadClass.P4: Workload.HYPERPARAM_TUNING,
}
TABLE3_POLICIES = ("fifo", "lfu", "lru")


@dataclass
class System:
    store: PersistentStore
    pool: FunctionPool
    engine: CacheEngine
    tracker: RequestTracker
    config: Config

    def close(self):
        self.store.close()


def baseline_capacity_entries(cfg: Config) -> int:
    """Reactive baselines get the byte capacity of one function, counted in model-sized entries."""
    return max(1, cfg.capacity_bytes // cfg.model_size_bytes)


def make_system(cfg: Config, store_root, policy: Optional[str] = None,
                replicas: Optional[int] = None) -> System:
    name = policy or cfg.policy
    pol = make_policy(name, capacity_entries=baseline_capacity_entries(cfg), seed=cfg.seed,
                      p4_window=cfg.p4_window)
    store = PersistentStore(store_root)
    pool = FunctionPool(cfg.capacity_bytes, cfg.keepalive_window_s, cfg.compute_table)
    engine = CacheEngine(store, pool, pol, replicas=cfg.replicas if replicas is None else replicas,
                         max_functions=cfg.max_functions or None)
    tracker = RequestTracker(engine, cfg.cost, cfg.compute_table, cfg.reroute_timeout_s, cfg.dispatch_s)
    return System(store, pool, engine, tracker, cfg)


def scratch_parent() -> Optional[str]:
    """Parent directory for throwaway stores: RAM-backed when the host has one."""
    shm = "/dev/shm"
    return shm if os.path.isdir(shm) and os.access(shm, os.W_OK) else None


@contextlib.contextmanager
def _store_dir(root):
    if root:
        yield root
    else:
        with tempfile.TemporaryDirectory(prefix="fedcache-", dir=scratch_parent()) as d:
            yield d


def run_trace(events, cfg: Config, policy: Optional[str] = None, faults: Optional[FaultSchedule] = None,
              replicas: Optional[int] = None, store_root=None, check=None, factory=None) -> RunReport:
    """Replay ``events`` on a fresh system built from ``cfg``."""
    with _store_dir(store_root or cfg.store_root) as root:
        sys_ = make_system(cfg, root, policy, replicas)
        try:
            factory = factory or BlobFactory(cfg.vector_len, cfg.seed)
            check_fn = (lambda stage, t: check(sys_, stage, t)) if check else None
            report = replay(events, sys_.engine, sys_.tracker, faults, cfg.ping_interval_s, cfg.parallel,
                            factory, check_fn)
        finally:
            sys_.close()
    report.info["replicas"] = sys_.engine.k
    return report


def replay_workload(spec: JobSpec, workload=None, policy: str = "p2", store_root=None, scoped: bool = True,
                    config: Optional[Config] = None, **overrides) -> RunReport:
    """Build the trace for ``workload`` (default: the class representative for ``policy``) and replay it."""
    cfg = (config or Config()).with_overrides(overrides) if overrides else (config or Config())
    if workload is None:
        cls = WorkloadClass(policy) if policy in {c.value for c in WorkloadClass} else WorkloadClass.P2
        workload = TABLE3_WORKLOADS.get(cls, Workload.INFERENCE)
    return run_trace(build_trace(spec, workload, scoped), cfg, policy=policy, store_root=store_root)


# ---------------------------------------------------------------------------
# hit-rate table


@dataclass
class Table3Row:
    policy: str
    trace: str
    hits: int
    misses: int

    @property
    def total(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.total if self.total else 0.0


def table3(seed: int = 0, rounds: int = 2000, p3_rounds: int = 64, config: Optional[Config] = None,
           policies=TABLE3_POLICIES) -> list[Table3Row]:
    """Hits and misses of the tailored policy and the reactive baselines on the P2, P3 and P4 traces."""
    cfg = config or Config()
    rows = []
    for cls, workload in TABLE3_WORKLOADS.items():
        spec = cfg.job_spec(rounds=p3_rounds if cls is WorkloadClass.P3 else rounds, seed=seed)
        events = build_trace(spec, workload)
        factory = BlobFactory(cfg.vector_len, cfg.seed, memo=True)  # same blobs for every policy
        for policy in (cls.value, *policies):
            report = run_trace(events, cfg, policy=policy, replicas=0, factory=factory)
            stats = sum(report.hit_stats.values(), HitStats())
            label = f"Tailored ({cls.value.upper()})" if policy == cls.value else policy.upper()
            rows.append(Table3Row(label, cls.value.upper(), stats.hits, stats.misses))
    return rows


def format_table3(rows: list[Table3Row]) -> str:
    lines = [f"{'Policy':<14} {'Trace':<5} {'Hits':>6} {'Misses':>6} {'Total':>6} {'Hit %':>6}"]
    for r in rows:
        lines.append(f"{r.policy:<14} {r.trace:<5} {r.hits:>6} {r.misses:>6} {r.total:>6} {r.hit_rate:>6.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# unified plane vs separated-plane baselines


def _blob_bytes(cfg: Config, workload: Workload) -> int:
    return cfg.metadata_size_bytes if WORKLOAD_CLASS[workload] is WorkloadClass.P4 else cfg.model_size_bytes


def baseline_rows(rows: list[RequestRow], cfg: Config, mode: str) -> list[RequestRow]:
    """The same requests served by an aggregator that fetches every input from ``mode``'s data plane."""
    fn = {"objstore": latency_baseline_objstore, "cache": latency_baseline_cache}[mode]
    out = []
    for r in rows:
        w = Workload(r.workload)
        size = _blob_bytes(cfg, w)
        lat = fn(None, size, r.n_blobs, cfg.cost, cfg.compute_table[w])
        row = RequestRow(r.request_id, r.workload, mode, False, lat.comm_s, lat.compute_s, 0.0, lat.total_s,
                         0.0, size * r.n_blobs, r.n_blobs, r.t)
        row.cost = request_cost(row, cfg.cost, mode)
        out.append(row)
    return out


@dataclass
class CompareRow:
    workload: str
    mode: str
    requests: int
    mean_comm_s: float
    mean_compute_s: float
    mean_total_s: float
    p50_s: float
    comm_fraction: float
    cost: float


def compare(cfg: Optional[Config] = None, rounds: int = 20, workloads=None) -> list[CompareRow]:
    """Per-workload latency and modelled cost for the unified plane and both baselines.

    P2 requests cover every update of a round; the other classes read one blob
    per request.
    """
    cfg = cfg or Config()
    out = []
    for w in workloads or cfg.compute_table:
        w = Workload(w)
        spec = cfg.job_spec(rounds=rounds)
        scoped = WORKLOAD_CLASS[w] is not WorkloadClass.P2
        report = run_trace(build_trace(spec, w, scoped), cfg, policy="auto")
        duration = report.info.get("duration_s", 0.0)
        per_mode = {"unified": report.rows, "objstore": baseline_rows(report.rows, cfg, "objstore"),
                    "cache": baseline_rows(report.rows, cfg, "cache")}
        for mode in MODES:
            rows = per_mode[mode]
            total = np.array([r.total_s for r in rows])
            comm = np.array([r.comm_s for r in rows])
            money = cost_of(rows, cfg.cost, mode, fn_memory_gb=cfg.capacity_gib, duration_s=duration,
                            functions=report.function_count)
            out.append(CompareRow(w.value, mode, len(rows), float(comm.mean()),
                                  float(np.mean([r.compute_s for r in rows])), float(total.mean()),
                                  float(np.median(total)), float(comm.sum() / total.sum()), money["total"]))
    return out


def reductions(rows: list[CompareRow]) -> dict[str, dict[str, float]]:
    """Relative reduction of mean latency of the unified plane vs each baseline, per workload."""
    by = {(r.workload, r.mode): r for r in rows}
    out = {}
    for w in sorted({r.workload for r in rows}):
        u = by[(w, "unified")].mean_total_s
        out[w] = {m: 1 - u / by[(w, m)].mean_total_s for m in ("objstore", "cache")}
    return out


# ---------------------------------------------------------------------------
# faults


@dataclass
class FaultRun:
    replicas: int
    faults: int
    report: RunReport
    consistency_errors: list = field(default_factory=list)

    @property
    def p50(self) -> float:
        return self.report.aggregates()["p50_s"]

    @property
    def completion(self) -> float:
        n = self.report.info.get("requests", 0) + self.report.info.get("unavailable", 0)
        return self.report.info.get("completed", 0) / n if n else 1.0


FAULT_RATE_PER_S = 1 / 20
FAULT_SLOTS = 8


def fault_experiment(cfg: Optional[Config] = None, rounds: int = 200, replicas=(3, 0), seed: int = 0,
                     rate_per_s: float = FAULT_RATE_PER_S, zipf_s: float = 1.0,
                     n_functions: int = FAULT_SLOTS) -> dict[str, FaultRun]:
    """Replay the P2 trace fault-free and under a seeded Zipfian reclamation schedule."""
    cfg = cfg or Config()
    spec = cfg.job_spec(rounds=rounds, seed=seed)
    events = build_trace(spec, Workload.MALICIOUS_FILTER)
    horizon = events[-1].t + 1 if events else 0.0
    schedule = gen_fault_schedule(n_functions, horizon, zipf_s, seed, rate_per_s)

    def checked(k, faults):
        errors = []

        def check(sys_, stage, t):
            errors.extend(f"t={t}: {e}" for e in sys_.engine.check_consistency())
        report = run_trace(events, cfg, policy="auto", faults=faults, replicas=k, check=check)
        return FaultRun(k, report.info["faults_applied"], report, errors)

    out = {"fault_free": checked(max(replicas), None)}
    for k in replicas:
        out[f"k={k}"] = checked(k, schedule)
    return out


# ---------------------------------------------------------------------------
# scalability


def scalability(cfg: Optional[Config] = None, instances: int = 5, concurrency=range(1, 11),
                workload=Workload.MALICIOUS_FILTER, store_root=None) -> dict[int, float]:
    """p50 latency of a burst of ``n`` concurrent requests against ``instances`` cached copies.

    One round of updates is cached on a primary and ``instances - 1`` clones;
    each burst runs on a fresh system.
    """
    cfg = cfg or Config()
    spec = cfg.job_spec(rounds=1)
    ingest = [e for e in build_trace(spec, workload, scoped=False) if e.ev == "ingest"]
    factory = BlobFactory(cfg.vector_len, cfg.seed)
    out = {}
    for n in concurrency:
        with _store_dir(store_root) as root:
            sys_ = make_system(cfg, root, "auto", replicas=instances - 1)
            try:
                for e in ingest:
                    sys_.engine.ingest(factory(e))
                warm = make_request("warm", workload, 0)
                sys_.tracker.submit(warm, now=1.0)  # activates the policy; the data is now resident
                t = 100.0
                for i in range(n):
                    sys_.tracker.submit(make_request(f"burst-{i}", workload, 0), now=t)
                lat = [r.total_s for r in sys_.tracker.rows[1:]]
                out[n] = float(np.percentile(lat, 50))
            finally:
                sys_.close()
    return out
