"""Request tracker: routes non-training requests to the functions holding their data.

Latency is simulated.  The tracker dispatches one request every
``dispatch_s`` seconds, each instance serves one request at a time
(``busy_until``), and a request routed to a reclaimed instance waits
``reroute_timeout_s`` before it is reissued to the next replica.  When no
replica is left, the data is re-fetched from the persistent store into a fresh
instance.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

from .core import DEFAULT_COMPUTE_S, GiB, CostParams, NonTrainingRequest, validate_request
from .engine import CacheEngine, DataUnavailable, deep_sizeof
from .kernels import run_workload
from .metrics import LatencyBreakdown, RequestRow, latency_unified, request_cost
from .policies import HitStats

log = logging.getLogger(__name__)

__all__ = ["RequestTracker", "TrackerEntry", "RequestResult", "DataUnavailable"]


@dataclass(slots=True)
class TrackerEntry:
    request_id: str
    routed_to: list[str] = field(default_factory=list)
    status: bool = False
    issued_at: float = 0.0
    attempts: int = 0
    reroutes: int = 0
    refetched: bool = False


@dataclass
class RequestResult:
    request_id: str
    output: dict
    latency: LatencyBreakdown
    hit: bool
    bytes_fetched: int
    n_blobs: int
    finished_at: float


class RequestTracker:
    def __init__(self, engine: CacheEngine, cost: Optional[CostParams] = None, compute_table: Optional[dict] = None,
                 reroute_timeout_s: float = 2.0, dispatch_s: float = 0.001):
        self.engine = engine
        self.cost = cost or CostParams()
        self.compute_table = dict(DEFAULT_COMPUTE_S, **(compute_table or {}))
        self.reroute_timeout_s = reroute_timeout_s
        self.dispatch_s = dispatch_s
        self.entries: dict[str, TrackerEntry] = {}
        self.results: dict[str, RequestResult] = {}
        self.rows: list[RequestRow] = []
        self.stats = HitStats()
        self.suspected: set[str] = set()
        self.busy_until: dict[str, float] = {}
        self.duplicates = 0
        self._last_dispatch = -math.inf
        self._lock = threading.RLock()

    @property
    def pool(self):
        return self.engine.pool

    # -- public API --------------------------------------------------------

    def submit(self, req: NonTrainingRequest, now: Optional[float] = None) -> str:
        """Route and execute ``req``; returns its request id once the result is recorded."""
        validate_request(req)
        now = self.engine.now if now is None else now
        rid = req.request_id
        with self._lock:
            if rid in self.entries:
                raise ValueError(f"duplicate request id {rid!r}")
            t = max(now, self._last_dispatch + self.dispatch_s)
            self._last_dispatch = t
            entry = self.entries[rid] = TrackerEntry(rid, issued_at=now)
        try:
            self._run(entry, req, now, t)
        except DataUnavailable:
            with self._lock:
                del self.entries[rid]
            raise
        return rid

    def poll(self, request_id: str) -> TrackerEntry:
        return self.entries[request_id]

    def result(self, request_id: str) -> RequestResult:
        return self.results[request_id]

    def deliver(self, result: RequestResult) -> bool:
        """Record a result once; later duplicates for the same request id are dropped."""
        with self._lock:
            if result.request_id in self.results:
                self.duplicates += 1
                return False
            self.results[result.request_id] = result
            entry = self.entries.get(result.request_id)
            if entry is not None:
                entry.status = True
            return True

    def reroute_on_timeout(self, request_id: str, failed_fn: str) -> float:
        """The instance did not acknowledge: suspect it, repair its group, return the time lost."""
        with self._lock:
            entry = self.entries[request_id]
            entry.reroutes += 1
            self.suspected.add(failed_fn)
        self.engine.failover(failed_fn)
        return self.reroute_timeout_s

    def replicate(self, key, k: int) -> list[str]:
        return self.engine.replicate(key, k)

    def memory_overhead(self) -> int:
        with self._lock:
            seen: set = set()
            return sum(deep_sizeof(x, seen) for x in (self.entries, self.suspected, self.busy_until))

    # -- routing -----------------------------------------------------------

    def _run(self, entry: TrackerEntry, req: NonTrainingRequest, now: float, t: float) -> None:
        engine, cost = self.engine, self.cost
        compute_s = float(self.compute_table.get(req.workload, 0.0))
        with engine._lock:
            keys = engine.resolve_keys(req)
            was_resident = {k: engine.is_resident(k) for k in keys}
            for owner, d in engine.policy.on_request(req, keys, engine).items():
                engine.apply_decision(d, owner)
            groups: dict[str, list] = {}
            cold = []
            for k in keys:
                fn = engine.lookup(k)
                if fn is None:
                    cold.append(k)
                else:
                    groups.setdefault(fn, []).append(k)
            plan = [(fn, ks, engine.locations(ks[0])) for fn, ks in groups.items()]

        missing_bytes = sum(engine.sizes.get(k, 0) for k, hit in was_resident.items() if not hit)
        gather = len(plan) + bool(cold) > 1
        hit = all(was_resident.values())
        outputs, blobs = [], []
        finish = t
        queue_s = 0.0
        extra_comm = cost.transfer_s(missing_bytes) if missing_bytes else 0.0
        fetched = missing_bytes

        for fn, ks, candidates in plan:
            res, done, waited, penalty, from_cache = self._execute_group(entry, req, ks, candidates, t, compute_s,
                                                                         extra_comm, gather)
            hit = hit and from_cache
            if not from_cache:
                fetched += sum(engine.sizes.get(k, 0) for k in ks)
            outputs.append(res)
            finish = max(finish, done)
            queue_s = max(queue_s, waited)
        if cold:
            res, done = self._scratch(entry, req, cold, t, compute_s, 0.0, gather)
            hit = False
            outputs.append(res)
            finish = max(finish, done)

        if gather:
            for r in outputs:
                blobs.extend(r.blobs)
            output = run_workload(req.workload, blobs, req.params).to_dict()
        else:
            output = outputs[0].output

        total = finish - now
        comm = max(total - compute_s - queue_s, 0.0)
        latency = LatencyBreakdown(comm, compute_s, queue_s)
        result = RequestResult(req.request_id, output, latency, hit, fetched, len(keys), finish)
        row = RequestRow(req.request_id, req.workload.value, engine.policy.name, hit, latency.comm_s,
                         latency.compute_s, latency.queue_s, latency.total_s, 0.0, fetched, len(keys), now)
        row.cost = request_cost(row, cost, "unified", fn_memory_gb=self.pool.capacity_bytes / GiB)
        with self._lock:
            self.stats.record(hit)
            self.rows.append(row)
        self.deliver(result)

    def _execute_group(self, entry, req, keys, candidates, t, compute_s, extra_comm, gather):
        """Try the primary and its replicas; returns (result, finish, queue_s, penalty, from_cache)."""
        penalty = 0.0
        order = sorted(enumerate(candidates), key=lambda p: (self.busy_until.get(p[1], -math.inf), p[0]))
        for _, fn in order:
            if fn in self.suspected:
                continue
            with self._lock:
                entry.attempts += 1
                entry.routed_to.append(fn)
            if not self.pool.is_alive(fn):
                penalty += self.reroute_on_timeout(entry.request_id, fn)
                continue
            ready = t + penalty
            with self._lock:
                start = max(ready, self.busy_until.get(fn, -math.inf))
                service = latency_unified(req, True, 0, self.cost, compute_s).total_s + extra_comm
                self.busy_until[fn] = start + service
            res = self.pool.execute(fn, req, keys, now=start, gather=gather)
            return res, start + service, start - ready, penalty, True
        res, done = self._scratch(entry, req, keys, t, compute_s, penalty, gather)
        return res, done, 0.0, penalty, False

    def _scratch(self, entry, req, keys, t, compute_s, penalty, gather):
        """Fetch ``keys`` from the persistent store into a fresh instance and run there."""
        engine, pool, cost = self.engine, self.pool, self.cost
        blobs = [engine.store.get(k) for k in keys]
        nbytes = sum(b.size_bytes for b in blobs)
        fn = pool.spawn(capacity_bytes=max(pool.capacity_bytes, nbytes), now=t)
        try:
            for b in blobs:
                pool.store(fn, b)
            res = pool.execute(fn, req, keys, now=t, gather=gather)
        finally:
            pool.release(fn)
        with self._lock:
            entry.refetched = True
            entry.routed_to.append(fn)
        service = cost.cold_start_s + latency_unified(req, False, nbytes, cost, compute_s).total_s
        return res, t + penalty + service
