"""Emulated serverless function instances holding blobs in memory.

Each instance is a bounded in-memory blob store co-located with a kernel
executor.  Instances execute one request at a time (a per-instance lock);
distinct instances may execute in parallel.  Time is simulated: the caller
passes ``now`` to ping/sweep, and the provider reclaims instances that have
not been pinged or invoked within ``keepalive_window_s``.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .core import GiB, BlobRecord, CacheKey, NonTrainingRequest
from .kernels import run_workload

DEFAULT_CAPACITY = 10 * GiB


class PoolError(Exception):
    pass


class CapacityExceeded(PoolError):
    pass


class DeadInstance(PoolError):
    pass


class NotResident(PoolError, KeyError):
    pass


class MissingData(PoolError):
    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__(f"not resident: {', '.join(map(str, self.keys))}")


@dataclass
class ExecResult:
    request_id: str
    output: dict
    compute_s: float
    bytes_touched: int
    wall_s: float = 0.0
    fn: str = ""
    blobs: Optional[list] = None  # set when the instance only gathers inputs


@dataclass
class FunctionInstance:
    id: str
    capacity_bytes: int
    resident: dict[CacheKey, BlobRecord] = field(default_factory=dict)
    used_bytes: int = 0
    alive: bool = True
    last_ping: float = 0.0
    replica_group: list[str] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - self.used_bytes


class FunctionPool:
    def __init__(self, capacity_bytes: int = DEFAULT_CAPACITY, keepalive_window_s: float = 60.0,
                 compute_table: Optional[dict] = None):
        self.capacity_bytes = int(capacity_bytes)
        self.keepalive_window_s = keepalive_window_s
        self.compute_table = compute_table or {}
        self.instances: dict[str, FunctionInstance] = {}
        self.spawned = 0
        self.reclaimed = 0
        self._ids = itertools.count()
        self._lock = threading.RLock()

    # -- lifecycle ---------------------------------------------------------

    def spawn(self, capacity_bytes: Optional[int] = None, now: float = 0.0) -> str:
        with self._lock:
            fid = f"fn-{next(self._ids):05d}"
            self.instances[fid] = FunctionInstance(fid, int(capacity_bytes or self.capacity_bytes), last_ping=now)
            self.spawned += 1
            return fid

    def clone(self, fn: str, now: float = 0.0) -> str:
        src = self._alive(fn)
        with src.lock:
            new = self.spawn(src.capacity_bytes, now)
            inst = self.instances[new]
            inst.resident = dict(src.resident)
            inst.used_bytes = src.used_bytes
        return new

    def reclaim(self, fn: str) -> None:
        inst = self.instances.get(fn)
        if inst is None or not inst.alive:
            return
        with inst.lock:
            inst.alive = False
            inst.resident = {}
            inst.used_bytes = 0
        self.reclaimed += 1

    def release(self, fn: str) -> None:
        """Remove an instance that is no longer needed."""
        with self._lock:
            self.instances.pop(fn, None)

    def ping(self, fn: str, now: float) -> bool:
        inst = self.instances.get(fn)
        if inst is None or not inst.alive:
            return False
        inst.last_ping = max(inst.last_ping, now)
        return True

    def sweep(self, now: float) -> list[str]:
        """Provider side: reclaim instances idle for longer than the keep-alive window."""
        gone = [f for f, i in list(self.instances.items())
                if i.alive and now - i.last_ping > self.keepalive_window_s]
        for f in gone:
            self.reclaim(f)
        return gone

    # -- data --------------------------------------------------------------

    def is_alive(self, fn: str) -> bool:
        inst = self.instances.get(fn)
        return inst is not None and inst.alive

    def alive_ids(self) -> list[str]:
        return sorted(f for f, i in self.instances.items() if i.alive)

    def instance(self, fn: str) -> FunctionInstance:
        try:
            return self.instances[fn]
        except KeyError:
            raise DeadInstance(fn) from None

    def _alive(self, fn: str) -> FunctionInstance:
        inst = self.instance(fn)
        if not inst.alive:
            raise DeadInstance(fn)
        return inst

    def store(self, fn: str, blob: BlobRecord) -> None:
        inst = self._alive(fn)
        with inst.lock:
            old = inst.resident.get(blob.key)
            delta = blob.size_bytes - (old.size_bytes if old else 0)
            if inst.used_bytes + delta > inst.capacity_bytes:
                raise CapacityExceeded(f"{fn}: {blob.size_bytes} bytes do not fit in {inst.free_bytes}")
            inst.resident[blob.key] = blob
            inst.used_bytes += delta

    def evict(self, fn: str, key: CacheKey) -> None:
        inst = self._alive(fn)
        with inst.lock:
            blob = inst.resident.pop(key, None)
            if blob is None:
                raise NotResident(key)
            inst.used_bytes -= blob.size_bytes

    def has(self, fn: str, key: CacheKey) -> bool:
        inst = self.instances.get(fn)
        return inst is not None and inst.alive and key in inst.resident

    def execute(self, fn: str, req: NonTrainingRequest, keys, now: Optional[float] = None,
                gather: bool = False) -> ExecResult:
        """Run ``req``'s kernel over resident ``keys``.

        With ``gather`` the instance returns its inputs instead of running the
        kernel, so a caller can combine inputs held by several instances.
        """
        inst = self._alive(fn)
        with inst.lock:
            if not inst.alive:
                raise DeadInstance(fn)
            missing = [k for k in keys if k not in inst.resident]
            if missing:
                raise MissingData(missing)
            blobs = [inst.resident[k] for k in keys]
            if now is not None:
                inst.last_ping = max(inst.last_ping, now)
            t0 = time.perf_counter()
            output = {} if gather else run_workload(req.workload, blobs, req.params).to_dict()
            wall = time.perf_counter() - t0
        return ExecResult(
            request_id=req.request_id,
            output=output,
            compute_s=float(self.compute_table.get(req.workload, 0.0)),
            bytes_touched=sum(b.size_bytes for b in blobs),
            wall_s=wall,
            fn=fn,
            blobs=blobs if gather else None,
        )
