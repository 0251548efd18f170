import random

import pytest

from conftest import blob
from fedcache.core import CacheKey, GiB, Kind, make_request
from fedcache.engine import CacheEngine, CapacityExhausted
from fedcache.policies import make_policy
from fedcache.pool import FunctionPool
from invariants import violations

SMALL = 1000


def ingest_round(engine, r, n=5, size=SMALL, kind=Kind.UPDATE):
    for i in range(n):
        engine.ingest(blob(f"c{i}", r, kind, size=size))


def test_p2_hot_and_cold_ingest(system):
    engine, tracker = system()
    for r in range(3):
        ingest_round(engine, r)
    tracker.submit(make_request("q", "MaliciousFilter", 2))
    assert engine.ingest(blob("c3", 3, size=SMALL)).hot
    # an old round that arrives late is outside {r, r+1, latest}
    engine.ingest(blob("c3", 0, size=SMALL))
    assert not engine.is_resident(CacheKey("c3", 0))
    assert not engine.ingest(blob("c9", 0, size=SMALL)).hot


def test_p4_keeps_last_ten_rounds(system):
    engine, _ = system()
    for r in range(15):
        engine.ingest(blob("c1", r, Kind.METADATA, size=SMALL))
        resident = {k.round for k in engine.placement.entries if k.kind is Kind.METADATA}
        assert resident == set(range(max(0, r - 9), r + 1))


def test_lookup_hit_miss_and_after_eviction(system):
    engine, tracker = system()
    ingest_round(engine, 0)
    key = CacheKey("c1", 0)
    assert engine.lookup(key) is None           # nothing active yet
    tracker.submit(make_request("a", "MaliciousFilter", 0))
    fn = engine.lookup(key)
    assert fn is not None and engine.pool.has(fn, key)
    ingest_round(engine, 1)
    ingest_round(engine, 2)
    tracker.submit(make_request("b", "MaliciousFilter", 2))
    assert engine.lookup(key) is None
    assert engine.store.get(key).key == key     # evicted from cache, still persisted


def test_persistence_first(system):
    engine, _ = system()
    b = blob("c2", 7, size=SMALL)
    engine.ingest(b)
    engine.store.flush()
    assert engine.store.contains(b.key) and engine.store.get(b.key) == b


def test_resident_window_characterizations(system):
    engine, tracker = system()
    for r in range(12):
        ingest_round(engine, r, n=3)
        engine.ingest(blob("c0", r, Kind.METADATA, size=SMALL))
        tracker.submit(make_request(f"p2-{r}", "MaliciousFilter", r))
        tracker.submit(make_request(f"p3-{r}", "Provenance", max(r - 2, 0), "c1"))
        assert violations(engine) == []
    p2 = {k for k, o in engine.owners.items() if "p2" in o}
    assert {k.round for k in p2} == {11}
    p3 = {k for k, o in engine.owners.items() if "p3" in o}
    assert p3 == {CacheKey("c1", r) for r in (8, 9, 10)}


def test_best_fit_placement(store):
    pool = FunctionPool(300)
    engine = CacheEngine(store, pool, "p4")
    for i, size in enumerate([200, 150, 90]):
        engine.ingest(blob(f"c{i}", 0, Kind.METADATA, size=size))
    fns = {engine.lookup(CacheKey(f"c{i}", 0, Kind.METADATA)) for i in range(3)}
    assert len(fns) == 2
    # 90 bytes fit into both (100 and 150 free): best fit picks the tighter one
    assert engine.lookup(CacheKey("c2", 0, Kind.METADATA)) == engine.lookup(CacheKey("c0", 0, Kind.METADATA))
    assert engine.choose_instance(60) == engine.lookup(CacheKey("c1", 0, Kind.METADATA))


def test_capacity_exhausted_leaves_blob_cold(store, caplog):
    engine = CacheEngine(store, FunctionPool(250), "p4", max_functions=1)
    engine.ingest(blob("c0", 0, Kind.METADATA, size=200))
    d = engine.ingest(blob("c1", 0, Kind.METADATA, size=200))
    assert not d.hot and engine.warnings == 1
    assert store.contains(CacheKey("c1", 0, Kind.METADATA))
    with pytest.raises(CapacityExhausted):
        engine.choose_instance(300)


def test_model_size_boundary(store):
    # 127 model-sized blobs fit into one 10 GiB function; the 128th needs a second
    engine = CacheEngine(store, FunctionPool(10 * GiB), "p4")
    for i in range(128):
        engine.ingest(blob(f"c{i:03d}", 0, Kind.METADATA, size=84_500_000, n=2))
    fns = [engine.lookup(CacheKey(f"c{i:03d}", 0, Kind.METADATA)) for i in range(128)]
    assert len(set(fns[:127])) == 1 and fns[127] != fns[0]


def test_set_policy_drops_cache(system):
    engine, tracker = system()
    ingest_round(engine, 0)
    tracker.submit(make_request("a", "MaliciousFilter", 0))
    assert engine.placement.entries
    engine.set_policy("lru")
    assert not engine.placement.entries and engine.function_count() == 0
    assert engine.policy.name == "lru"


def test_replicate_and_failover(system):
    engine, tracker = system(replicas=2)
    ingest_round(engine, 0)
    tracker.submit(make_request("a", "MaliciousFilter", 0))
    key = CacheKey("c0", 0)
    primary = engine.lookup(key)
    secs = engine.replicate(key, 3)
    assert len(secs) == 3 and all(engine.pool.has(s, key) for s in secs)
    engine.pool.reclaim(primary)
    new = engine.failover(primary)
    assert new == secs[0] and engine.lookup(key) == new
    assert len(engine.placement.groups[new]) == engine.k
    assert engine.check_consistency() == []


def test_failover_without_survivors_keeps_entries_unless_sweeping(system):
    engine, tracker = system(replicas=0)
    ingest_round(engine, 0)
    tracker.submit(make_request("a", "MaliciousFilter", 0))
    fn = engine.lookup(CacheKey("c0", 0))
    engine.pool.reclaim(fn)
    assert engine.failover(fn) is None and engine.lookup(CacheKey("c0", 0)) == fn
    engine.keepalive(1.0)
    assert engine.lookup(CacheKey("c0", 0)) is None and not engine.owners


def test_consistency_under_random_faults(system):
    rng = random.Random(3)
    engine, tracker = system(replicas=2)
    for r in range(40):
        ingest_round(engine, r, n=4)
        engine.ingest(blob("c0", r, Kind.METADATA, size=SMALL))
        tracker.submit(make_request(f"q{r}", "MaliciousFilter", r))
        alive = [f for p, g in engine.placement.groups.items() for f in (p, *g) if engine.pool.is_alive(f)]
        victim = rng.choice(alive)
        engine.pool.reclaim(victim)
        engine.failover(victim)
        assert violations(engine) == []


def test_engine_memory_overhead_bound(store):
    engine = CacheEngine(store, FunctionPool(10 * GiB), make_policy("p4", p4_window=100), replicas=0)
    for r in range(100):
        for c in range(10):
            engine.ingest(blob(f"c{c:03d}", r, Kind.METADATA, size=SMALL, n=1))
    assert len(engine.sizes) == 1000
    assert engine.memory_overhead() <= 5 * 600_000
