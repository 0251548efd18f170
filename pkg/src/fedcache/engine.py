"""Cache engine: ingestion, hot/cold classification and blob placement.

Every ingested blob is persisted.  Blobs the active policy classifies as hot
are also placed on a function instance; the placement map records where.
Instances are organised in replica groups: a primary plus ``replicas``
secondary clones that receive every write to the primary.
"""

from __future__ import annotations

import logging
import sys
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .core import AGG_CLIENT, BlobRecord, CacheKey, Kind, NonTrainingRequest, WorkloadClass
from .policies import EMPTY, Policy, PolicyDecision, make_policy
from .pool import CapacityExceeded, FunctionPool
from .store import NotFound, PersistentStore

log = logging.getLogger(__name__)


class CapacityExhausted(RuntimeError):
    pass


class DataUnavailable(KeyError):
    pass


@dataclass
class PlacementDecision:
    key: CacheKey
    hot: bool
    fn: Optional[str] = None
    owners: tuple = ()


@dataclass
class PlacementMap:
    entries: dict[CacheKey, str] = field(default_factory=dict)
    groups: dict[str, list[str]] = field(default_factory=dict)

    def replicas_of(self, key: CacheKey) -> list[str]:
        fn = self.entries.get(key)
        return list(self.groups.get(fn, ())) if fn is not None else []

    @property
    def replicas(self) -> dict[CacheKey, list[str]]:
        return {k: list(self.groups.get(f, ())) for k, f in self.entries.items()}


def deep_sizeof(obj, _seen=None) -> int:
    """Recursive ``sys.getsizeof`` over containers, slots and instance dicts."""
    seen = _seen if _seen is not None else set()
    if id(obj) in seen:
        return 0
    seen.add(id(obj))
    size = sys.getsizeof(obj)
    if isinstance(obj, dict):
        size += sum(deep_sizeof(k, seen) + deep_sizeof(v, seen) for k, v in obj.items())
    elif isinstance(obj, (list, tuple, set, frozenset)):
        size += sum(deep_sizeof(x, seen) for x in obj)
    elif hasattr(obj, "__slots__"):
        size += sum(deep_sizeof(getattr(obj, s), seen) for s in obj.__slots__ if hasattr(obj, s))
    elif hasattr(obj, "__dict__") and not isinstance(obj, type):
        size += deep_sizeof(vars(obj), seen)
    return size


class CacheEngine:
    def __init__(self, store: PersistentStore, pool: FunctionPool, policy: Policy | str = "auto",
                 replicas: int = 0, max_functions: Optional[int] = None):
        self.store = store
        self.pool = pool
        self.policy = make_policy(policy) if isinstance(policy, str) else policy
        self.k = replicas
        self.max_functions = max_functions
        self.placement = PlacementMap()
        self.members: dict[str, set[CacheKey]] = {}  # primary -> keys it holds
        self.index: dict[tuple[int, Kind], set[CacheKey]] = {}
        self.sizes: dict[CacheKey, int] = {}
        self.owners: dict[CacheKey, set[str]] = {}
        self.reservations: dict[CacheKey, set[str]] = {}
        self._latest: dict[Kind, int] = {}
        self.now = 0.0
        self.resident_bytes = 0
        self.peak_resident_bytes = 0
        self.peak_functions = 0
        self.fetches = 0
        self.warnings = 0
        self.pings = 0
        self._lock = threading.RLock()

    # -- view used by policies ---------------------------------------------

    def round_keys(self, round: int, kind: Kind) -> set[CacheKey]:
        return self.index.get((round, kind), set())

    def latest_round(self, kind: Kind) -> Optional[int]:
        return self._latest.get(kind)

    def is_resident(self, key: CacheKey) -> bool:
        return key in self.placement.entries

    def exists(self, key: CacheKey) -> bool:
        return key in self.sizes or self.store.contains(key)

    # -- lookups -----------------------------------------------------------

    def lookup(self, key: CacheKey) -> Optional[str]:
        """Primary function holding ``key``, or None on a miss."""
        return self.placement.entries.get(key)

    def locations(self, key: CacheKey) -> list[str]:
        with self._lock:
            fn = self.placement.entries.get(key)
            return [] if fn is None else [fn, *self.placement.groups.get(fn, ())]

    def resolve_keys(self, req: NonTrainingRequest) -> list[CacheKey]:
        """Keys a request reads.  Raises DataUnavailable if any was never ingested."""
        r = req.scope_round
        if req.workload_class is WorkloadClass.P4:
            kind = Kind.METADATA
        elif req.workload_class is WorkloadClass.P1 and req.scope_client in (None, AGG_CLIENT):
            kind = Kind.AGGREGATED
        else:
            kind = Kind.UPDATE
        if kind is Kind.AGGREGATED:
            keys = [CacheKey.aggregated(r)]
        elif req.scope_client:
            keys = [CacheKey(req.scope_client, r, kind)]
            if req.params.get("window") and r >= 1:
                keys.insert(0, CacheKey(req.scope_client, r - 1, kind))
        else:
            keys = sorted(self.round_keys(r, kind) or
                          (k for k in self.store.list(r) if k.kind is kind))
            if not keys:
                raise DataUnavailable(f"round {r} has no {kind.value} data")
        missing = [k for k in keys if not self.exists(k)]
        if missing:
            raise DataUnavailable(", ".join(map(str, missing)))
        return keys

    # -- ingestion ---------------------------------------------------------

    def ingest(self, blob: BlobRecord, current_requests: Iterable[NonTrainingRequest] = ()) -> PlacementDecision:
        key = blob.key
        with self._lock:
            self.store.put(key, blob)
            self.index.setdefault((key.round, key.kind), set()).add(key)
            self.sizes[key] = blob.size_bytes
            if key.round > self._latest.get(key.kind, -1):
                self._latest[key.kind] = key.round
            for req in current_requests:
                try:
                    keys = self.resolve_keys(req)
                except DataUnavailable:
                    continue
                for owner, d in self.policy.on_request(req, keys, self).items():
                    self.apply_decision(d, owner)

            decisions = dict(self.policy.on_ingest(key, self))
            for owner in self.reservations.pop(key, set()):
                d = decisions.get(owner, EMPTY)
                decisions[owner] = PolicyDecision(d.cache_now | {key}, d.prefetch, d.evict - {key})
            for owner, d in decisions.items():
                self.apply_decision(d, owner, {key: blob})
            fn = self.placement.entries.get(key)
            return PlacementDecision(key, fn is not None, fn, tuple(sorted(self.owners.get(key, ()))))

    def apply_decision(self, d: PolicyDecision, owner: str = "policy",
                       blobs: Optional[dict[CacheKey, BlobRecord]] = None) -> None:
        """Evict, then cache and prefetch.  Keys that do not exist yet become reservations."""
        blobs = blobs or {}
        with self._lock:
            for key in sorted(d.evict):
                self._release(owner, key)
            for key in sorted(d.cache_now | d.prefetch):
                if key not in blobs and not self.exists(key):
                    self.reservations.setdefault(key, set()).add(owner)
                    continue
                if key not in self.placement.entries:
                    try:
                        blob = blobs[key] if key in blobs else self.store.get(key)
                    except NotFound:
                        continue
                    if key not in blobs:
                        self.fetches += 1
                    try:
                        self._place(blob)
                    except CapacityExhausted as e:
                        self.warnings += 1
                        log.warning("%s stays cold: %s", key, e)
                        continue
                self.owners.setdefault(key, set()).add(owner)

    def _release(self, owner: str, key: CacheKey) -> None:
        res = self.reservations.get(key)
        if res is not None:
            res.discard(owner)
            if not res:
                del self.reservations[key]
        owners = self.owners.get(key)
        if owners is None:
            return
        owners.discard(owner)
        if not owners:
            del self.owners[key]
            self._evict(key)

    def set_policy(self, policy: Policy | str) -> None:
        """Switch policy; everything cached for the previous one is dropped."""
        with self._lock:
            for key in list(self.placement.entries):
                self._evict(key)
            self.owners.clear()
            self.reservations.clear()
            self.policy = make_policy(policy) if isinstance(policy, str) else policy

    # -- placement ---------------------------------------------------------

    def choose_instance(self, size_bytes: int) -> str:
        """Best-fit alive primary (ties by id); spawns a new group when none fits."""
        with self._lock:
            best = None
            for fn in self.placement.groups:
                if not self.pool.is_alive(fn):
                    continue
                free = self.pool.instance(fn).free_bytes
                if free >= size_bytes:
                    cand = (free - size_bytes, fn)
                    if best is None or cand < best:
                        best = cand
            if best is not None:
                return best[1]
            if size_bytes > self.pool.capacity_bytes:
                raise CapacityExhausted(f"{size_bytes} bytes exceed function capacity")
            if self.max_functions is not None and len(self.placement.groups) >= self.max_functions:
                raise CapacityExhausted(f"all {self.max_functions} functions are full")
            fn = self.pool.spawn(now=self.now)
            self.placement.groups[fn] = [self.pool.spawn(now=self.now) for _ in range(self.k)]
            self.members[fn] = set()
            self._track_peaks()
            return fn

    def _place(self, blob: BlobRecord) -> str:
        fn = self.choose_instance(blob.size_bytes)
        try:
            self.pool.store(fn, blob)
        except CapacityExceeded as e:  # choose_instance checked free space
            raise CapacityExhausted(str(e)) from e
        for s in self.placement.groups[fn]:
            if self.pool.is_alive(s):
                self.pool.store(s, blob)
        self.placement.entries[blob.key] = fn
        self.members[fn].add(blob.key)
        self.resident_bytes += blob.size_bytes
        self._track_peaks()
        return fn

    def _evict(self, key: CacheKey) -> None:
        fn = self.placement.entries.pop(key, None)
        if fn is None:
            return
        self.resident_bytes -= self.sizes.get(key, 0)
        group = self.placement.groups.get(fn, [])
        for f in (fn, *group):
            if self.pool.has(f, key):
                self.pool.evict(f, key)
        held = self.members.get(fn)
        if held is not None:
            held.discard(key)
            if not held:
                self._drop_group(fn)

    def _drop_group(self, fn: str) -> None:
        for f in (fn, *self.placement.groups.pop(fn, ())):
            self.pool.release(f)
        self.members.pop(fn, None)

    def _track_peaks(self):
        self.peak_resident_bytes = max(self.peak_resident_bytes, self.resident_bytes)
        n = sum(1 + len(g) for g in self.placement.groups.values())
        self.peak_functions = max(self.peak_functions, n)

    # -- replication and liveness -------------------------------------------

    def group_of(self, fn: str) -> Optional[str]:
        if fn in self.placement.groups:
            return fn
        for p, sec in self.placement.groups.items():
            if fn in sec:
                return p
        return None

    def replicate(self, key: CacheKey, k: int) -> list[str]:
        """Clone the key's primary until ``k`` alive secondaries hold it."""
        with self._lock:
            fn = self.placement.entries.get(key)
            if fn is None:
                raise KeyError(key)
            self._restore(fn, k)
            return list(self.placement.groups[fn])

    def _restore(self, primary: str, k: Optional[int] = None) -> None:
        k = self.k if k is None else k
        group = self.placement.groups[primary]
        for s in [s for s in group if not self.pool.is_alive(s)]:
            group.remove(s)
            self.pool.release(s)
        while len(group) < k:
            group.append(self.pool.clone(primary, now=self.now))
        self._track_peaks()

    def failover(self, dead: str, drop_orphans: bool = False) -> Optional[str]:
        """Repair the group containing a dead instance.

        A dead primary is replaced by its first alive secondary and the group
        is topped back up to ``k`` clones.  Returns the new primary, or None
        when no replica survived.  Orphaned keys are dropped only with
        ``drop_orphans`` (the keep-alive sweep); the request path leaves them
        in place and re-fetches per request.
        """
        with self._lock:
            primary = self.group_of(dead)
            if primary is None:
                return None
            if self.pool.is_alive(primary):
                self._restore(primary)
                return primary
            survivors = [s for s in self.placement.groups[primary] if self.pool.is_alive(s)]
            if not survivors:
                if drop_orphans:
                    for key in sorted(self.members.get(primary, ())):
                        self.owners.pop(key, None)
                        self._evict(key)
                    self._drop_group(primary)
                return None
            new = survivors[0]
            rest = [s for s in self.placement.groups.pop(primary) if s != new]
            keys = self.members.pop(primary, set())
            self.placement.groups[new] = rest
            self.members[new] = keys
            for key in keys:
                self.placement.entries[key] = new
            self.pool.release(primary)
            self._restore(new)
            return new

    def keepalive(self, now: float) -> list[str]:
        """Ping every cached instance; repair groups with dead members."""
        with self._lock:
            self.now = now
            dead = []
            for primary in list(self.placement.groups):
                for fn in (primary, *self.placement.groups.get(primary, ())):
                    self.pings += 1
                    if not self.pool.ping(fn, now):
                        dead.append(fn)
            for fn in dead:
                if self.pool.instances.get(fn) is not None:
                    self.failover(fn, drop_orphans=True)
            return dead

    def check_consistency(self) -> list[str]:
        """Entries whose primary is alive but no longer holds the key."""
        bad = []
        for key, fn in self.placement.entries.items():
            if self.pool.is_alive(fn) and not self.pool.has(fn, key):
                bad.append(f"{key} -> {fn}")
            if fn not in self.placement.groups:
                bad.append(f"{key} -> {fn} (unknown group)")
        return bad

    # -- bookkeeping -------------------------------------------------------

    def memory_overhead(self) -> int:
        """Bytes used by the placement map and its indexes (blob payloads excluded)."""
        with self._lock:
            seen: set = set()
            return sum(deep_sizeof(x, seen) for x in (
                self.placement.entries, self.placement.groups, self.members, self.owners,
                self.reservations, self.index, self.sizes))

    def function_count(self) -> int:
        return sum(1 + len(g) for g in self.placement.groups.values())
