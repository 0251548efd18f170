"""Latency and cost model, footprint calculator and run reports.

Three architectures are modelled:

``unified``   kernels run inside the function that caches the data; a hit
              costs one control round trip, a miss adds the store fetch.
``objstore``  an aggregator fetches every blob from an object store and writes
              the result back (two extra round trips).
``cache``     the same shape against an in-memory cloud cache.

All dollar figures are modelled from :class:`~fedcache.core.CostParams`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GiB, CostParams
from .policies import HitStats

MODES = ("unified", "objstore", "cache")
SECONDS_PER_MONTH = 30 * 24 * 3600


@dataclass
class LatencyBreakdown:
    comm_s: float
    compute_s: float
    queue_s: float = 0.0

    def __post_init__(self):
        if min(self.comm_s, self.compute_s, self.queue_s) < 0:
            raise ValueError("latency components must be >= 0")

    @property
    def total_s(self) -> float:
        return self.comm_s + self.compute_s + self.queue_s


def latency_unified(req, hit: bool, model_size: int, cost: CostParams, workload_compute_s: float) -> LatencyBreakdown:
    """Unified plane: control round trip, plus the store fetch of ``model_size`` bytes on a miss."""
    comm = cost.rtt_s
    if not hit:
        comm += cost.transfer_s(model_size)
    return LatencyBreakdown(comm, workload_compute_s)


def _separated(model_size: int, n_blobs: int, cost: CostParams, compute_s: float, gbps: float,
               rtt: float) -> LatencyBreakdown:
    fetch = cost.transfer_s(model_size * n_blobs, gbps)
    writeback = cost.transfer_s(cost.result_bytes, gbps)
    return LatencyBreakdown(fetch + writeback + 2 * rtt, compute_s)


def latency_baseline_objstore(req, model_size: int, n_blobs: int, cost: CostParams,
                              workload_compute_s: float) -> LatencyBreakdown:
    return _separated(model_size, n_blobs, cost, workload_compute_s, cost.objstore_bandwidth_gbps, cost.objstore_rtt_s)


def latency_baseline_cache(req, model_size: int, n_blobs: int, cost: CostParams,
                           workload_compute_s: float) -> LatencyBreakdown:
    return _separated(model_size, n_blobs, cost, workload_compute_s, cost.cache_bandwidth_gbps, cost.cache_rtt_s)


# ---------------------------------------------------------------------------
# cost


@dataclass
class RequestRow:
    request_id: str
    workload: str
    policy: str
    hit: bool
    comm_s: float
    compute_s: float
    queue_s: float = 0.0
    total_s: float = 0.0
    cost: float = 0.0
    bytes_fetched: int = 0
    n_blobs: int = 0
    t: float = 0.0


def request_cost(row: RequestRow, cost: CostParams, mode: str = "unified", fn_memory_gb: float = 10.0,
                 bytes_moved: Optional[int] = None) -> float:
    """Per-request modelled cost; fixed charges (keep-alive, cache instances) are run-level."""
    busy = row.comm_s + row.compute_s
    if mode == "unified":
        gets = row.n_blobs if row.bytes_fetched else 0
        return cost.fn_compute_per_gb_s * fn_memory_gb * busy + gets * cost.objstore_get_per_req
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    moved = row.bytes_fetched if bytes_moved is None else bytes_moved
    c = cost.aggregator_per_hr * busy / 3600 + cost.egress_per_gb * moved / 1e9
    if mode == "objstore":
        c += row.n_blobs * cost.objstore_get_per_req + cost.objstore_put_per_req
    return c


def cost_of(rows: Sequence[RequestRow], cost: CostParams, mode: str = "unified", *, fn_memory_gb: float = 10.0,
            duration_s: float = 0.0, functions: int = 0) -> dict[str, float]:
    """Cost totals for a run.  ``rows[i].cost`` must already hold the per-request charge."""
    per_request = math.fsum(r.cost for r in rows)
    fixed = 0.0
    if mode == "unified":
        fixed = cost.ping_cost_per_fn_month * functions * duration_s / SECONDS_PER_MONTH
    elif mode == "cache":
        fixed = cost.cache_instance_per_hr * duration_s / 3600
    elif mode != "objstore":
        raise ValueError(f"unknown mode {mode!r}")
    return {"per_request": per_request, "fixed": fixed, "total": per_request + fixed}


# ---------------------------------------------------------------------------
# footprint


def footprint_untailored(spec, effective_capacity_bytes: int = 10 * GiB) -> tuple[int, int]:
    """Bytes and function count to keep every update of every round in memory."""
    total = spec.per_round * spec.rounds * spec.model_size_bytes
    return total, math.ceil(total / effective_capacity_bytes) if total else 0


def footprint_tailored(spec, policy: str = "p2", workload=None, store_root=None, **config) -> tuple[int, int]:
    """Peak resident bytes and peak function count while replaying ``spec`` under ``policy``."""
    from .experiments import replay_workload  # replay depends on this module

    report = replay_workload(spec, workload, policy=policy, store_root=store_root, **config)
    return report.footprint_bytes, report.function_count


# ---------------------------------------------------------------------------
# reports


def _p(values, q):
    return float(np.percentile(values, q)) if len(values) else 0.0


@dataclass
class RunReport:
    rows: list[RequestRow] = field(default_factory=list)
    hit_stats: dict[str, HitStats] = field(default_factory=dict)
    footprint_bytes: int = 0
    function_count: int = 0
    info: dict = field(default_factory=dict)

    def aggregates(self) -> dict[str, float]:
        total = [r.total_s for r in self.rows]
        comm = [r.comm_s for r in self.rows]
        return {
            "requests": len(self.rows),
            "hits": sum(1 for r in self.rows if r.hit),
            "mean_s": float(np.mean(total)) if total else 0.0,
            "p50_s": _p(total, 50),
            "p99_s": _p(total, 99),
            "mean_comm_s": float(np.mean(comm)) if comm else 0.0,
            "total_s": math.fsum(total),
            "total_cost": math.fsum(r.cost for r in self.rows),
        }

    def summary(self) -> dict:
        return {
            "aggregates": self.aggregates(),
            "hit_stats": {k: {"hits": v.hits, "misses": v.misses, "total": v.total, "hit_rate": v.hit_rate}
                          for k, v in sorted(self.hit_stats.items())},
            "footprint_bytes": self.footprint_bytes,
            "function_count": self.function_count,
            "info": self.info,
            "cost_label": "modelled",
        }


CSV_FIELDS = [f.name for f in fields(RequestRow)]


def write_rows(rows: Iterable[RequestRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            d = asdict(r)
            d["hit"] = int(r.hit)
            w.writerow([repr(v) if isinstance(v, float) else v for v in (d[k] for k in CSV_FIELDS)])


def read_rows(path) -> list[RequestRow]:
    out = []
    with open(path, newline="") as f:
        for d in csv.DictReader(f):
            out.append(RequestRow(
                d["request_id"], d["workload"], d["policy"], d["hit"] == "1",
                float(d["comm_s"]), float(d["compute_s"]), float(d["queue_s"]), float(d["total_s"]),
                float(d["cost"]), int(d["bytes_fetched"]), int(d["n_blobs"]), float(d["t"])))
    return out


def emit_report(run: RunReport, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (per-request rows) and ``<path>.json`` (summary)."""
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    write_rows(run.rows, csv_path)
    json_path.write_text(json.dumps(run.summary(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def load_report(path) -> RunReport:
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    summary = json.loads(base.with_suffix(".json").read_text())
    return RunReport(
        rows=read_rows(base.with_suffix(".csv")),
        hit_stats={k: HitStats(v["hits"], v["misses"]) for k, v in summary["hit_stats"].items()},
        footprint_bytes=summary["footprint_bytes"],
        function_count=summary["function_count"],
        info=summary["info"],
    )
