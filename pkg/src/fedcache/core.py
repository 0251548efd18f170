"""Shared domain types: cache keys, blobs, requests and cost constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

AGG_CLIENT = "AGG"

MB = 1_000_000
GiB = 1 << 30


class Kind(str, Enum):
    UPDATE = "update"
    AGGREGATED = "agg"
    METADATA = "meta"


class WorkloadClass(str, Enum):
    P1 = "p1"  # single client or aggregated model
    P2 = "p2"  # all client updates of a round
    P3 = "p3"  # one client across rounds
    P4 = "p4"  # metadata and hyperparameters


class Workload(str, Enum):
    INFERENCE = "Inference"
    EVAL = "Eval"
    MALICIOUS_FILTER = "MaliciousFilter"
    CONTRIBUTION = "Contribution"
    CLUSTERING = "Clustering"
    COSINE_SIMILARITY = "CosineSimilarity"
    PERSONALIZATION = "Personalization"
    SCHEDULING_PERF = "SchedulingPerf"
    SCHEDULING_CLUSTERED = "SchedulingClustered"
    DEBUGGING = "Debugging"
    PROVENANCE = "Provenance"
    INCENTIVE_TRACKING = "IncentiveTracking"
    HYPERPARAM_TUNING = "HyperparamTuning"


WORKLOAD_CLASS: dict[Workload, WorkloadClass] = {
    Workload.INFERENCE: WorkloadClass.P1,
    Workload.EVAL: WorkloadClass.P1,
    Workload.MALICIOUS_FILTER: WorkloadClass.P2,
    Workload.CONTRIBUTION: WorkloadClass.P2,
    Workload.CLUSTERING: WorkloadClass.P2,
    Workload.COSINE_SIMILARITY: WorkloadClass.P2,
    Workload.PERSONALIZATION: WorkloadClass.P2,
    Workload.SCHEDULING_CLUSTERED: WorkloadClass.P2,
    Workload.DEBUGGING: WorkloadClass.P3,
    Workload.PROVENANCE: WorkloadClass.P3,
    Workload.SCHEDULING_PERF: WorkloadClass.P4,
    Workload.INCENTIVE_TRACKING: WorkloadClass.P4,
    Workload.HYPERPARAM_TUNING: WorkloadClass.P4,
}

# Mean over all workloads is 2.8 s.
DEFAULT_COMPUTE_S: dict[Workload, float] = {
    Workload.INFERENCE: 0.6,
    Workload.EVAL: 1.8,
    Workload.MALICIOUS_FILTER: 1.0,
    Workload.CONTRIBUTION: 3.5,
    Workload.CLUSTERING: 6.0,
    Workload.COSINE_SIMILARITY: 0.3,
    Workload.PERSONALIZATION: 5.0,
    Workload.SCHEDULING_PERF: 0.4,
    Workload.SCHEDULING_CLUSTERED: 1.0,
    Workload.DEBUGGING: 7.5,
    Workload.PROVENANCE: 2.0,
    Workload.INCENTIVE_TRACKING: 1.5,
    Workload.HYPERPARAM_TUNING: 5.8,
}


class RequestError(ValueError):
    pass


class MissingScopeClient(RequestError):
    pass


class ClassMismatch(RequestError):
    pass


@dataclass(frozen=True, order=True, slots=True)
class CacheKey:
    """Address of one cached blob: (client, round, kind)."""

    client: str
    round: int
    kind: Kind = Kind.UPDATE
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.client, str) or not self.client:
            raise ValueError("client id must be a non-empty string")
        if isinstance(self.round, bool) or not isinstance(self.round, (int, np.integer)) or self.round < 0:
            raise ValueError(f"round must be a non-negative integer, got {self.round!r}")
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "round", int(self.round))
        if (kind is Kind.AGGREGATED) != (self.client == AGG_CLIENT):
            raise ValueError(f"client id {AGG_CLIENT!r} is reserved for aggregated models")
        # keys are hashed on every placement lookup, so the hash is computed once
        object.__setattr__(self, "_hash", hash((self.client, self.round, kind)))

    def __hash__(self):
        return self._hash

    @classmethod
    def aggregated(cls, round: int) -> "CacheKey":
        return cls(AGG_CLIENT, round, Kind.AGGREGATED)

    def __str__(self):
        return f"{self.client}/{self.round}/{self.kind.value}"


def _check_finite(name: str, values: dict) -> None:
    for k, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{name}[{k!r}] is not finite: {v!r}")


@dataclass
class MetadataRecord:
    client: str
    round: int
    hyperparameters: dict[str, float] = field(default_factory=dict)
    perf: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.hyperparameters = {str(k): float(v) for k, v in self.hyperparameters.items()}
        self.perf = {str(k): float(v) for k, v in self.perf.items()}
        _check_finite("hyperparameters", self.hyperparameters)
        _check_finite("perf", self.perf)

    def to_dict(self) -> dict:
        return {
            "client": self.client,
            "round": self.round,
            "hyperparameters": self.hyperparameters,
            "perf": self.perf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetadataRecord":
        return cls(d["client"], int(d["round"]), d.get("hyperparameters", {}), d.get("perf", {}))


@dataclass(eq=False)
class BlobRecord:
    """A model update, aggregated model or metadata blob.

    ``size_bytes`` is what capacity accounting and the transfer model see;
    ``weights`` may be far shorter than ``size_bytes / 8``.
    """

    key: CacheKey
    weights: np.ndarray
    size_bytes: int
    meta: Optional[MetadataRecord] = None

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).ravel()
        if int(self.size_bytes) <= 0:
            raise ValueError("size_bytes must be positive")
        self.size_bytes = int(self.size_bytes)
        if self.meta is None:
            self.meta = MetadataRecord(self.key.client, self.key.round)

    def __eq__(self, other):
        if not isinstance(other, BlobRecord):
            return NotImplemented
        return (
            self.key == other.key
            and self.size_bytes == other.size_bytes
            and self.meta == other.meta
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class NonTrainingRequest:
    request_id: str
    workload: Workload
    workload_class: WorkloadClass
    scope_round: int
    scope_client: Optional[str] = None
    params: dict = field(default_factory=dict, compare=False)


def make_request(request_id: str, workload, scope_round: int, scope_client: Optional[str] = None,
                 params: Optional[dict] = None) -> NonTrainingRequest:
    """Build a request whose class is looked up from the workload taxonomy."""
    w = Workload(workload)
    return NonTrainingRequest(request_id, w, WORKLOAD_CLASS[w], int(scope_round), scope_client, dict(params or {}))


def validate_request(req: NonTrainingRequest) -> NonTrainingRequest:
    expected = WORKLOAD_CLASS[Workload(req.workload)]
    if WorkloadClass(req.workload_class) is not expected:
        raise ClassMismatch(
            f"{req.workload.value} belongs to {expected.value}, not {WorkloadClass(req.workload_class).value}")
    if expected is WorkloadClass.P3 and not req.scope_client:
        raise MissingScopeClient(f"{req.workload.value} needs a scope client")
    if req.scope_round < 0:
        raise RequestError("scope_round must be non-negative")
    return req


@dataclass
class CostParams:
    """Price and network constants. Dollar outputs built from these are modelled, not billed."""

    egress_per_gb: float = 0.09
    fn_compute_per_gb_s: float = 0.0000166667
    cache_instance_per_hr: float = 0.068
    aggregator_per_hr: float = 0.23
    objstore_get_per_req: float = 0.0000004
    objstore_put_per_req: float = 0.000005
    ping_cost_per_fn_month: float = 0.0087
    # function <-> persistent store path, and control-message round trip
    bandwidth_gbps: float = 0.8
    rtt_s: float = 0.01
    # separated-plane baselines
    objstore_bandwidth_gbps: float = 0.08
    objstore_rtt_s: float = 0.05
    cache_bandwidth_gbps: float = 0.25
    cache_rtt_s: float = 0.02
    cold_start_s: float = 0.25
    result_bytes: int = 1 * MB

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("bandwidth_gbps", "objstore_bandwidth_gbps", "cache_bandwidth_gbps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    def transfer_s(self, nbytes: int, gbps: Optional[float] = None) -> float:
        return nbytes * 8 / ((gbps or self.bandwidth_gbps) * 1e9)
