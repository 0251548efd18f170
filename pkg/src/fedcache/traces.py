"""Federated job traces, request traces, Zipfian fault schedules and replay.

Trace files are JSON lines, one event per line::

    {"t": 30.0, "ev": "request", "client": "c0007", "round": 0, "kind": "update",
     "workload": "MaliciousFilter", "size": 0}

Fault files hold ``{"t": 12.5, "fn": "#1"}``: ``#r`` targets the r-th alive
function instance in id order (wrapping around when fewer are alive), any
other value names an instance directly.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import (AGG_CLIENT, MB, WORKLOAD_CLASS, BlobRecord, CacheKey, Kind, MetadataRecord, Workload,
                   WorkloadClass, make_request)
from .engine import CacheEngine, DataUnavailable
from .metrics import RunReport
from .tracker import RequestTracker

log = logging.getLogger(__name__)


@dataclass
class JobSpec:
    pool_size: int = 250
    per_round: int = 10
    rounds: int = 1000
    model_size_bytes: int = int(84.5 * MB)
    seed: int = 0
    metadata_size_bytes: int = 4000
    round_s: float = 60.0
    request_gap_s: float = 2.0
    vector_len: int = 256
    pinned: tuple = ()

    def __post_init__(self):
        if not 1 <= self.per_round <= self.pool_size:
            raise ValueError("need 1 <= per_round <= pool_size")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if len(self.pinned) > self.per_round:
            raise ValueError("more pinned clients than per_round")


@dataclass(slots=True)
class Event:
    t: float
    ev: str  # "ingest" | "request"
    client: Optional[str]
    round: int
    kind: str = Kind.UPDATE.value
    workload: str = ""
    size: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(float(d["t"]), d["ev"], d.get("client"), int(d["round"]), d.get("kind", "update"),
                   d.get("workload", ""), int(d.get("size", 0)))


@dataclass
class FaultSchedule:
    events: list[tuple[float, str]] = field(default_factory=list)
    zipf_s: float = 1.0

    def __post_init__(self):
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("fault times must be non-decreasing")


def client_name(i: int) -> str:
    return f"c{i:04d}"


def selected_clients(spec: JobSpec) -> list[list[str]]:
    """Clients participating in each round (seeded sample of the pool)."""
    rng = np.random.default_rng(spec.seed)
    pinned = list(spec.pinned)
    out = []
    for _ in range(spec.rounds):
        picks = [client_name(i) for i in rng.choice(spec.pool_size, spec.per_round, replace=False)]
        if pinned:
            rest = [c for c in picks if c not in pinned]
            picks = pinned + rest[:spec.per_round - len(pinned)]
        out.append(picks)
    return out


def _class_kinds(cls: WorkloadClass) -> tuple[Kind, ...]:
    if cls is WorkloadClass.P1:
        return (Kind.UPDATE, Kind.AGGREGATED)
    if cls is WorkloadClass.P4:
        return (Kind.METADATA,)
    return (Kind.UPDATE,)


def gen_ingest_trace(spec: JobSpec, kinds: Sequence[Kind] = (Kind.UPDATE,)) -> list[Event]:
    """Ingest events, round by round; an aggregated model follows a round's updates."""
    kinds = [Kind(k) for k in kinds]
    events = []
    for r, clients in enumerate(selected_clients(spec)):
        t0 = r * spec.round_s
        i = 0
        for c in clients:
            for kind in kinds:
                if kind is Kind.AGGREGATED:
                    continue
                size = spec.metadata_size_bytes if kind is Kind.METADATA else spec.model_size_bytes
                events.append(Event(t0 + i * 1e-3, "ingest", c, r, kind.value, "", size))
                i += 1
        if Kind.AGGREGATED in kinds:
            events.append(Event(t0 + i * 1e-3, "ingest", AGG_CLIENT, r, Kind.AGGREGATED.value, "",
                                spec.model_size_bytes))
    return events


def gen_request_trace(spec: JobSpec, workload, scoped: bool = True) -> list[Event]:
    """Request events for one workload.

    P2 and P4: one request per (round, selected client), or one per round when
    ``scoped`` is false.  P3: one request per round for a single tracked client
    (the first pinned client, else the first client of round 0).  P1: one
    request per round for that round's aggregated model.
    """
    w = Workload(workload)
    cls = WORKLOAD_CLASS[w]
    sel = selected_clients(spec)
    events = []
    tracked = None
    if cls is WorkloadClass.P3 and sel:
        tracked = spec.pinned[0] if spec.pinned else sel[0][0]
    for r, clients in enumerate(sel):
        t0 = r * spec.round_s + spec.round_s / 2
        if cls is WorkloadClass.P1:
            targets = [(AGG_CLIENT, Kind.AGGREGATED)]
        elif cls is WorkloadClass.P3:
            targets = [(tracked, Kind.UPDATE)] if tracked in clients else []
        else:
            kind = Kind.METADATA if cls is WorkloadClass.P4 else Kind.UPDATE
            targets = [(c, kind) for c in clients] if scoped else [(None, kind)]
        for j, (c, kind) in enumerate(targets):
            events.append(Event(t0 + j * spec.request_gap_s, "request", c, r, kind.value, w.value, 0))
    return events


def build_trace(spec: JobSpec, workload, scoped: bool = True) -> list[Event]:
    """Ingest and request events for a workload, merged in time order."""
    cls = WORKLOAD_CLASS[Workload(workload)]
    if cls is WorkloadClass.P3 and not spec.pinned:
        first = selected_clients(JobSpec(**{**asdict(spec), "rounds": 1}))
        spec = JobSpec(**{**asdict(spec), "pinned": (first[0][0],)} if first else asdict(spec))
    events = gen_ingest_trace(spec, _class_kinds(cls)) + gen_request_trace(spec, workload, scoped)
    return sorted(events, key=lambda e: (e.t, e.ev != "ingest"))


def gen_fault_schedule(n_functions: int, horizon: float, zipf_s: float = 1.0, seed: int = 0,
                       rate_per_s: float = 1 / 60) -> FaultSchedule:
    """Poisson fault times over ``[0, horizon)``; targets are Zipf-ranked over ``n_functions`` slots."""
    if n_functions < 1:
        raise ValueError("n_functions must be >= 1")
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, n_functions + 1)
    p = ranks ** -float(zipf_s)
    p /= p.sum()
    events = []
    t = 0.0
    if rate_per_s > 0:
        while True:
            t += float(rng.exponential(1 / rate_per_s))
            if t >= horizon:
                break
            events.append((t, f"#{int(rng.choice(ranks, p=p))}"))
    return FaultSchedule(events, zipf_s)


# ---------------------------------------------------------------------------
# file formats


def write_trace(events: Iterable[Event], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            f.write(e.to_json() + "\n")


def read_trace(path) -> list[Event]:
    with open(path, encoding="utf-8") as f:
        return [Event.from_dict(json.loads(line)) for line in f if line.strip()]


def write_faults(schedule: FaultSchedule, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t, fn in schedule.events:
            f.write(json.dumps({"fn": fn, "t": t}, sort_keys=True) + "\n")


def read_faults(path, zipf_s: float = 1.0) -> FaultSchedule:
    with open(path, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return FaultSchedule([(float(r["t"]), str(r["fn"])) for r in rows], zipf_s)


# ---------------------------------------------------------------------------
# replay


def _seed_of(*parts) -> list[int]:
    return [zlib.crc32(str(p).encode()) for p in parts]


class BlobFactory:
    """Deterministic synthetic blobs for ingest events.

    Updates drift around a per-round global model; one client in fifty sends
    a scaled-up update so the malicious-client filter has something to find.
    """

    def __init__(self, vector_len: int = 256, seed: int = 0, memo: bool = False):
        self.vector_len = vector_len
        self.seed = seed
        self._memo: Optional[dict] = {} if memo else None
        self._base: tuple[int, np.ndarray] = (-1, np.empty(0))

    def _global(self, round: int) -> np.ndarray:
        if self._base[0] != round:
            rng = np.random.default_rng(_seed_of(self.seed, "global", round))
            self._base = (round, rng.standard_normal(self.vector_len))
        return self._base[1]

    def __call__(self, e: Event) -> BlobRecord:
        if self._memo is not None:
            ident = (e.client, e.round, e.kind, e.size)
            blob = self._memo.get(ident)
            if blob is None:
                blob = self._memo[ident] = self._make(e)
            return blob
        return self._make(e)

    def _make(self, e: Event) -> BlobRecord:
        key = CacheKey(e.client, e.round, Kind(e.kind))
        rng = np.random.default_rng(_seed_of(self.seed, e.client, e.round, e.kind))
        weights = self._global(e.round) + 0.1 * rng.standard_normal(self.vector_len)
        if key.kind is Kind.UPDATE and zlib.crc32(e.client.encode()) % 50 == 0:
            weights = weights * 10
        meta = MetadataRecord(
            e.client, e.round,
            hyperparameters={"lr": float(10 ** rng.uniform(-3, -1)), "batch_size": float(rng.choice([16, 32, 64]))},
            perf={
                "availability": float(rng.uniform()),
                "train_time_s": float(rng.uniform(5, 60)),
                "accuracy": float(rng.uniform(0.5, 0.95)),
                "contribution": float(rng.uniform()),
            },
        )
        return BlobRecord(key, weights, max(e.size, 1), meta)


def _resolve_target(selector: str, pool) -> Optional[str]:
    if selector.startswith("#"):
        alive = pool.alive_ids()
        rank = int(selector[1:])
        return alive[(rank - 1) % len(alive)] if alive and rank >= 1 else None
    return selector if pool.is_alive(selector) else None


def replay(events: Sequence[Event], engine: CacheEngine, tracker: RequestTracker,
           faults: Optional[FaultSchedule] = None, ping_interval_s: float = 60.0, parallel: int = 1,
           factory: Optional[Callable[[Event], BlobRecord]] = None,
           check: Optional[Callable[[str, float], None]] = None) -> RunReport:
    """Drive ``engine`` and ``tracker`` through a trace in simulated time.

    Faults and keep-alive pings due before an event are applied first; the
    provider then reclaims anything idle past its keep-alive window.  With
    ``parallel > 1`` consecutive requests are issued in bursts at the time of
    the first request of the burst.  ``check(stage, t)`` is called after every
    event and fault.
    """
    factory = factory or BlobFactory()
    pool = engine.pool
    fault_events = list(faults.events) if faults else []
    fi = 0
    next_ping = ping_interval_s if ping_interval_s > 0 else math.inf
    info = {"faults_applied": 0, "unavailable": 0, "reclaimed_idle": 0}
    counter = 0

    def advance(t):
        nonlocal fi, next_ping
        while True:
            tf = fault_events[fi][0] if fi < len(fault_events) else math.inf
            tn = min(tf, next_ping)
            if tn > t:
                break
            if tf <= next_ping:
                target = _resolve_target(fault_events[fi][1], pool)
                fi += 1
                if target is not None:
                    pool.reclaim(target)
                    info["faults_applied"] += 1
                if check:
                    check("fault", tf)
            else:
                engine.keepalive(next_ping)
                next_ping += ping_interval_s
        info["reclaimed_idle"] += len(pool.sweep(t))
        engine.now = t

    i = 0
    n = len(events)
    while i < n:
        e = events[i]
        advance(e.t)
        if e.ev == "ingest":
            engine.ingest(factory(e))
            i += 1
        elif e.ev == "request":
            burst = [e]
            while parallel > 1 and len(burst) < parallel and i + len(burst) < n \
                    and events[i + len(burst)].ev == "request":
                burst.append(events[i + len(burst)])
            for b in burst:
                req = make_request(f"req-{counter:07d}", b.workload, b.round, b.client)
                counter += 1
                try:
                    tracker.submit(req, now=e.t)
                except DataUnavailable:
                    info["unavailable"] += 1
            i += len(burst)
        else:
            raise ValueError(f"unknown event type {e.ev!r}")
        if check:
            check(e.ev, e.t)
    engine.store.flush()

    entries = tracker.entries.values()
    duration = events[-1].t - events[0].t if events else 0.0
    info.update(
        policy=engine.policy.name,
        requests=len(tracker.rows),
        completed=sum(1 for x in entries if x.status),
        refetched=sum(1 for x in entries if x.refetched),
        reroutes=sum(x.reroutes for x in entries),
        duration_s=duration,
        pings=engine.pings,
        store_fetches=engine.fetches,
        spawned=pool.spawned,
    )
    return RunReport(
        rows=list(tracker.rows),
        hit_stats={engine.policy.name: tracker.stats},
        footprint_bytes=engine.peak_resident_bytes,
        function_count=engine.peak_functions,
        info=info,
    )
