"""fedcache: a simulated serverless cache that runs federated-learning
non-training workloads next to the data they read."""

from .core import (AGG_CLIENT, BlobRecord, CacheKey, CostParams, Kind, MetadataRecord, NonTrainingRequest,
                   Workload, WorkloadClass, make_request, validate_request)
from .config import Config
from .engine import CacheEngine, DataUnavailable
from .policies import HitStats, PolicyDecision, make_policy
from .pool import FunctionPool
from .store import PersistentStore
from .tracker import RequestTracker

__version__ = "0.1.0"

__all__ = [
    "AGG_CLIENT", "BlobRecord", "CacheEngine", "CacheKey", "Config", "CostParams", "DataUnavailable",
    "FunctionPool", "HitStats", "Kind", "MetadataRecord", "NonTrainingRequest", "PersistentStore",
    "PolicyDecision", "RequestTracker", "Workload", "WorkloadClass", "make_policy", "make_request",
    "validate_request",
]
