"""Desk-scale non-training computations over model updates and metadata.

These are deterministic proxies: cosine/norm statistics, weighted means and
seeded k-means stand in for the real analyses a production deployment runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BlobRecord, Kind, MetadataRecord, Workload


class ZeroVector(ValueError):
    pass


@dataclass
class KernelOutput:
    scalars: dict[str, float] = field(default_factory=dict)
    vectors: dict[str, list] = field(default_factory=dict)
    flagged: Optional[set[str]] = None

    def to_dict(self) -> dict:
        d = {"scalars": dict(sorted(self.scalars.items())), "vectors": self.vectors}
        if self.flagged is not None:
            d["flagged"] = sorted(self.flagged)
        return d


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def fedavg(updates: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Weighted mean ``sum(w_i * v_i) / sum(w_i)``."""
    if not updates:
        raise ValueError("fedavg of no updates")
    vecs = np.stack([np.asarray(v, dtype=np.float64) for v, _ in updates])
    w = np.array([float(w) for _, w in updates])
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return (w / w.sum()) @ vecs  # normalise first so a single update comes back unchanged


def malicious_filter(updates: dict[str, np.ndarray], tau: float = 2.5) -> set[str]:
    """Flag clients whose distance to the coordinate-wise mean is an outlier.

    A client is flagged when its L2 distance exceeds ``mean + tau * std`` of
    all distances.  Needs at least three updates.
    """
    if len(updates) < 3:
        return set()
    clients = sorted(updates)
    vecs = np.stack([np.asarray(updates[c], dtype=np.float64) for c in clients])
    dist = np.linalg.norm(vecs - vecs.mean(axis=0), axis=1)
    sd = dist.std()
    if sd == 0:
        return set()
    cut = dist.mean() + tau * sd
    return {c for c, d in zip(clients, dist) if d > cut}


def kmeans_objective(x: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(((x - centroids[assign]) ** 2).sum())


def kmeans_cluster(updates: np.ndarray, k: int, max_iter: int = 50, seed: int = 0):
    """Lloyd's k-means with seeded farthest-point initialisation.

    Returns ``(assignments, centroids, objective_history)``; the history has one
    entry per completed iteration and is non-increasing.
    """
    x = np.asarray(updates, dtype=np.float64)
    n = len(x)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    while len(idx) < k:
        nxt = int(np.argmax(d2))  # first index on ties
        idx.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    centroids = x[idx].copy()

    history = []
    assign = None
    for _ in range(max_iter):
        dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dists, axis=1)
        for j in range(k):
            members = x[new_assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        history.append(kmeans_objective(x, centroids, new_assign))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return new_assign, centroids, history


def contribution_score(update, aggregate) -> float:
    return cosine_similarity(update, aggregate)


def schedule_topk(metadata: Sequence[MetadataRecord], score_key: str, k: int) -> list[str]:
    ranked = sorted(metadata, key=lambda m: (-m.perf.get(score_key, float("-inf")), m.client))
    return [m.client for m in ranked[:max(k, 0)]]


def debug_diff(update_r, update_prev, eps: float = 1e-3) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(update_r) - np.asarray(update_prev)) > eps))


def eval_stub(update, probe_seed: int = 0, n_probes: int = 64) -> float:
    """Pseudo-accuracy: share of seeded probe vectors with a positive response."""
    w = np.asarray(update, dtype=np.float64)
    probes = np.random.default_rng(probe_seed).standard_normal((n_probes, w.size))
    return float(np.count_nonzero(probes @ w > 0) / n_probes)


def incentive_tally(metadata: Sequence[MetadataRecord], score_key: str = "contribution") -> dict[str, float]:
    tally: dict[str, float] = {}
    for m in metadata:
        tally[m.client] = tally.get(m.client, 0.0) + m.perf.get(score_key, 0.0)
    return dict(sorted(tally.items()))


# ---------------------------------------------------------------------------
# dispatch from a workload to a kernel over resident blobs


def _updates(blobs: Sequence[BlobRecord]) -> dict[str, np.ndarray]:
    out = {}
    for b in blobs:
        label = b.key.client if b.key.kind is not Kind.AGGREGATED else f"AGG@{b.key.round}"
        if label in out:
            label = f"{label}@{b.key.round}"
        out[label] = b.weights
    return out


def run_workload(workload: Workload, blobs: Sequence[BlobRecord], params: Optional[dict] = None) -> KernelOutput:
    """Run one workload over ``blobs`` (sorted by key for determinism)."""
    params = params or {}
    blobs = sorted(blobs, key=lambda b: b.key)
    if not blobs:
        raise ValueError("no input blobs")
    w = Workload(workload)
    ups = _updates(blobs)
    seed = int(params.get("seed", 0))

    if w in (Workload.INFERENCE, Workload.EVAL):
        name = "accuracy" if w is Workload.EVAL else "score"
        return KernelOutput({f"{name}:{c}": eval_stub(v, seed) for c, v in ups.items()})

    if w is Workload.MALICIOUS_FILTER:
        flagged = malicious_filter(ups, float(params.get("tau", 2.5)))
        return KernelOutput({"n": float(len(ups)), "n_flagged": float(len(flagged))}, flagged=flagged)

    if w is Workload.COSINE_SIMILARITY:
        names = list(ups)
        if len(names) == 1:
            return KernelOutput({"mean_similarity": 1.0})
        sims = [cosine_similarity(ups[a], ups[b]) for i, a in enumerate(names) for b in names[i + 1:]]
        return KernelOutput({"mean_similarity": float(np.mean(sims))}, {"pairwise": sims})

    if w is Workload.CONTRIBUTION:
        agg = fedavg([(v, 1.0) for v in ups.values()])
        if not np.any(agg):
            return KernelOutput({f"contribution:{c}": 0.0 for c in ups})
        return KernelOutput({f"contribution:{c}": contribution_score(v, agg) if np.any(v) else 0.0
                             for c, v in ups.items()})

    if w in (Workload.CLUSTERING, Workload.PERSONALIZATION, Workload.SCHEDULING_CLUSTERED):
        names = list(ups)
        k = min(int(params.get("k", 2)), len(names))
        assign, _, hist = kmeans_cluster(np.stack(list(ups.values())), k, seed=seed)
        return KernelOutput({"objective": hist[-1], "k": float(k)},
                            {"clients": names, "assignments": [int(a) for a in assign]})

    if w is Workload.DEBUGGING:
        eps = float(params.get("eps", 1e-3))
        by_client: dict[str, list[BlobRecord]] = {}
        for b in blobs:
            by_client.setdefault(b.key.client, []).append(b)
        out = {}
        for c, bs in by_client.items():
            bs.sort(key=lambda b: b.key.round)
            latest = bs[-1].weights
            prev = bs[-2].weights if len(bs) > 1 else np.zeros_like(latest)
            out[f"changed:{c}"] = float(debug_diff(latest, prev, eps))
        return KernelOutput(out)

    if w is Workload.PROVENANCE:
        return KernelOutput({f"l2:{b.key.client}@{b.key.round}": float(np.linalg.norm(b.weights))
                             for b in blobs})

    metas = [b.meta for b in blobs]
    if w is Workload.SCHEDULING_PERF:
        sel = schedule_topk(metas, params.get("score_key", "availability"), int(params.get("k", 3)))
        return KernelOutput({"n": float(len(metas))}, {"selected": sel})

    if w is Workload.INCENTIVE_TRACKING:
        return KernelOutput(incentive_tally(metas))

    if w is Workload.HYPERPARAM_TUNING:
        score_key = params.get("score_key", "accuracy")
        best = min(metas, key=lambda m: (-m.perf.get(score_key, float("-inf")), m.client))
        return KernelOutput({f"best:{k}": v for k, v in best.hyperparameters.items()}, {"best": [best.client]})

    raise ValueError(f"unknown workload {workload!r}")
