"""Caching policies.

Tailored policies exploit the round structure of federated jobs:

* P1 keeps the requested model plus the two newest aggregated models.
* P2 keeps every client update of the requested round, the next round and
  the latest round.
* P3 keeps a tracked client's updates for rounds r-1, r and r+1.
* P4 keeps metadata of the newest R ingested rounds, maintained at ingest.

P1-P3 start inactive: the first request of their class is a cold miss that
activates them.  LRU/LFU/FIFO baselines are reactive (insert on miss, no
prefetch).

Policies never touch instances.  They read the engine through a small view
(``round_keys``, ``latest_round``, ``is_resident``) and return
:class:`PolicyDecision` objects keyed by an owner name; the engine applies
them.
"""

from __future__ import annotations

import heapq
import random
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

from .core import WORKLOAD_CLASS, CacheKey, Kind, NonTrainingRequest, Workload, WorkloadClass


class PolicyView(Protocol):
    def round_keys(self, round: int, kind: Kind) -> set[CacheKey]: ...
    def latest_round(self, kind: Kind) -> Optional[int]: ...
    def is_resident(self, key: CacheKey) -> bool: ...


@dataclass(frozen=True)
class PolicyDecision:
    cache_now: frozenset = frozenset()
    prefetch: frozenset = frozenset()
    evict: frozenset = frozenset()

    def __post_init__(self):
        for name in ("cache_now", "prefetch", "evict"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.cache_now & self.evict or self.prefetch & self.evict:
            raise ValueError("a key cannot be both cached and evicted")

    def __bool__(self):
        return bool(self.cache_now or self.prefetch or self.evict)


EMPTY = PolicyDecision()


@dataclass
class HitStats:
    hits: int = 0
    misses: int = 0

    @property
    def total(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def record(self, hit: bool) -> None:
        if hit:
            self.hits += 1
        else:
            self.misses += 1

    def __add__(self, other: "HitStats") -> "HitStats":
        return HitStats(self.hits + other.hits, self.misses + other.misses)


def record_access(key: CacheKey, resident: bool) -> HitStats:
    """Hit/miss delta for one access event."""
    return HitStats(1, 0) if resident else HitStats(0, 1)


def classify_workload(w) -> WorkloadClass:
    return WORKLOAD_CLASS[Workload(w)]


# ---------------------------------------------------------------------------
# tailored sub-policies


class _Sub:
    cls: WorkloadClass

    def __init__(self):
        self.active = False
        self.held: set[CacheKey] = set()

    def _decide(self, cache_now: Iterable, prefetch: Iterable, keep) -> PolicyDecision:
        cache_now, prefetch = set(cache_now), set(prefetch) - set(cache_now)
        evict = {k for k in self.held if not keep(k)} - cache_now - prefetch
        self.held = (self.held - evict) | cache_now | prefetch
        return PolicyDecision(cache_now, prefetch, evict)

    def on_request(self, req: NonTrainingRequest, keys: list[CacheKey], view: PolicyView) -> PolicyDecision:
        raise NotImplementedError

    def on_ingest(self, key: CacheKey, view: PolicyView) -> PolicyDecision:
        return EMPTY


class P1Policy(_Sub):
    cls = WorkloadClass.P1
    keep_latest = 2

    def __init__(self):
        super().__init__()
        self.requested: set[CacheKey] = set()

    def _keep(self, view):
        latest = view.latest_round(Kind.AGGREGATED)
        floor = latest - self.keep_latest + 1 if latest is not None else None
        return lambda k: k in self.requested or (
            k.kind is Kind.AGGREGATED and floor is not None and k.round >= floor)

    def on_request(self, req, keys, view):
        self.active = True
        self.requested = set(keys)
        latest = view.latest_round(Kind.AGGREGATED)
        prefetch = view.round_keys(latest, Kind.AGGREGATED) if latest is not None else set()
        return self._decide(keys, prefetch, self._keep(view))

    def on_ingest(self, key, view):
        if not self.active or key.kind is not Kind.AGGREGATED:
            return EMPTY
        keep = self._keep(view)
        return self._decide([key] if keep(key) else [], [], keep)


class P2Policy(_Sub):
    cls = WorkloadClass.P2

    def __init__(self):
        super().__init__()
        self.current: Optional[int] = None
        self.kind = Kind.UPDATE

    def _rounds(self, view) -> set[int]:
        latest = view.latest_round(self.kind)
        rounds = {self.current, self.current + 1}
        if latest is not None:
            rounds.add(latest)
        return rounds

    def on_request(self, req, keys, view):
        self.active = True
        self.current = req.scope_round
        if keys:
            self.kind = keys[0].kind
        rounds = self._rounds(view)
        cache_now = set(view.round_keys(self.current, self.kind)) | set(keys)
        prefetch = set()
        for r in rounds - {self.current}:
            prefetch |= view.round_keys(r, self.kind)
        kind = self.kind
        return self._decide(cache_now, prefetch, lambda k: k.kind is kind and k.round in rounds)

    def on_ingest(self, key, view):
        if not self.active or key.kind is not self.kind:
            return EMPTY
        rounds = self._rounds(view)
        if key.round not in rounds:
            return EMPTY
        kind = self.kind
        return self._decide([key], [], lambda k: k.kind is kind and k.round in rounds)


class P3Policy(_Sub):
    cls = WorkloadClass.P3

    def __init__(self):
        super().__init__()
        self.windows: dict[str, int] = {}

    def on_request(self, req, keys, view):
        client = req.scope_client
        if not client:
            return EMPTY
        self.active = True
        r = req.scope_round
        self.windows[client] = r
        kind = keys[0].kind if keys else Kind.UPDATE
        prefetch = {CacheKey(client, r + 1, kind)}
        if r >= 1:
            prefetch.add(CacheKey(client, r - 1, kind))

        def keep(k):
            c = self.windows.get(k.client)
            return c is not None and abs(k.round - c) <= 1
        return self._decide(keys, prefetch, keep)


class P4Policy(_Sub):
    cls = WorkloadClass.P4

    def __init__(self, window: int = 10, proactive: bool = True):
        super().__init__()
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.active = proactive

    def on_request(self, req, keys, view):
        self.active = True
        return EMPTY

    def on_ingest(self, key, view):
        if not self.active or key.kind is not Kind.METADATA:
            return EMPTY
        floor = view.latest_round(Kind.METADATA) - self.window
        keep = lambda k: k.kind is Kind.METADATA and k.round > floor  # noqa: E731
        return self._decide([key] if keep(key) else [], [], keep)


# ---------------------------------------------------------------------------
# policy objects owned by the cache engine


class Policy:
    name = "policy"
    reactive = False

    def on_request(self, req, keys, view) -> dict[str, PolicyDecision]:
        raise NotImplementedError

    def on_ingest(self, key, view) -> dict[str, PolicyDecision]:
        return {}


_SUBS = {WorkloadClass.P1: P1Policy, WorkloadClass.P2: P2Policy, WorkloadClass.P3: P3Policy}


class TailoredPolicy(Policy):
    """Dispatches each request to one of P1-P4.

    ``mode`` is ``"auto"`` (class from the workload taxonomy), ``"static"``
    (always ``fixed``) or ``"random"`` (uniform draw per request, seeded).
    """

    def __init__(self, mode: str = "auto", fixed: Optional[WorkloadClass] = None, seed: int = 0,
                 p4_window: int = 10):
        if mode not in ("auto", "static", "random"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "static" and fixed is None:
            raise ValueError("static mode needs a fixed class")
        self.mode = mode
        self.fixed = WorkloadClass(fixed) if fixed is not None else None
        self._rng = random.Random(seed)
        self.subs: dict[WorkloadClass, _Sub] = {c: f() for c, f in _SUBS.items()}
        p4_possible = mode != "static" or self.fixed is WorkloadClass.P4
        self.subs[WorkloadClass.P4] = P4Policy(p4_window, proactive=p4_possible)
        if mode == "auto":
            self.name = "auto"
        elif mode == "random":
            self.name = "random"
        else:
            self.name = self.fixed.value

    def select(self, req: NonTrainingRequest) -> WorkloadClass:
        if self.mode == "auto":
            return classify_workload(req.workload)
        if self.mode == "static":
            return self.fixed
        return self._rng.choice(list(WorkloadClass))

    def on_request(self, req, keys, view):
        cls = self.select(req)
        return {cls.value: self.subs[cls].on_request(req, keys, view)}

    def on_ingest(self, key, view):
        out = {}
        for cls, sub in self.subs.items():
            d = sub.on_ingest(key, view)
            if d:
                out[cls.value] = d
        return out


class ReactivePolicy(Policy):
    """Insert-on-miss baseline with a bounded number of entries."""

    reactive = True

    def __init__(self, capacity_entries: int):
        if capacity_entries < 1:
            raise ValueError("capacity_entries must be >= 1")
        self.capacity = capacity_entries
        self.entries: OrderedDict[CacheKey, int] = OrderedDict()

    def _touch(self, key):
        pass

    def _inserted(self, key):
        pass

    def _victim(self, exclude) -> CacheKey:
        for k in self.entries:
            if k not in exclude:
                return k
        raise LookupError("no evictable entry")

    def on_request(self, req, keys, view):
        cache_now, evict = [], set()
        for key in keys:
            if key in self.entries:
                self._touch(key)
            elif len(cache_now) < self.capacity:
                cache_now.append(key)
        for key in cache_now:
            while len(self.entries) >= self.capacity:
                victim = self._victim(set(keys))
                del self.entries[victim]
                evict.add(victim)
            self.entries[key] = 1
            self._inserted(key)
        return {self.name: PolicyDecision(cache_now, (), evict)}


class LRUPolicy(ReactivePolicy):
    name = "lru"

    def _touch(self, key):
        self.entries.move_to_end(key)


class FIFOPolicy(ReactivePolicy):
    name = "fifo"


class LFUPolicy(ReactivePolicy):
    """Evicts the least frequently used entry, oldest insertion first on ties.

    A heap of ``(count, insertion order, key)`` with lazy deletion keeps
    victim selection logarithmic.
    """

    name = "lfu"

    def __init__(self, capacity_entries: int):
        super().__init__(capacity_entries)
        self._heap: list[tuple[int, int, CacheKey]] = []
        self._order: dict[CacheKey, int] = {}
        self._seq = 0

    def _touch(self, key):
        self.entries[key] += 1
        heapq.heappush(self._heap, (self.entries[key], self._order[key], key))

    def _inserted(self, key):
        self._order[key] = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (1, self._order[key], key))

    def _victim(self, exclude):
        skipped = []
        try:
            while self._heap:
                count, seq, key = heapq.heappop(self._heap)
                if self.entries.get(key) != count or self._order.get(key) != seq:
                    continue  # stale heap entry
                if key in exclude:
                    skipped.append((count, seq, key))
                    continue
                del self._order[key]
                return key
            raise LookupError("no evictable entry")
        finally:
            for item in skipped:
                heapq.heappush(self._heap, item)


BASELINES = {"lru": LRUPolicy, "lfu": LFUPolicy, "fifo": FIFOPolicy}
POLICY_NAMES = ("p1", "p2", "p3", "p4", "auto", "lru", "lfu", "fifo", "random", "static:<class>")


def make_policy(name: str, *, capacity_entries: int = 127, seed: int = 0, p4_window: int = 10) -> Policy:
    """Build a policy from its configuration name (see ``POLICY_NAMES``)."""
    name = name.strip().lower()
    if name in BASELINES:
        return BASELINES[name](capacity_entries)
    if name in ("auto", "random"):
        return TailoredPolicy(name, seed=seed, p4_window=p4_window)
    if name.startswith("static:"):
        name = name.split(":", 1)[1]
    try:
        cls = WorkloadClass(name)
    except ValueError:
        raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}") from None
    return TailoredPolicy("static", fixed=cls, p4_window=p4_window)
