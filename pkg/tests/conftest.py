import os
import zlib

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedcache.config import Config
from fedcache.core import BlobRecord, CacheKey, Kind
from fedcache.engine import CacheEngine
from fedcache.pool import FunctionPool
from fedcache.store import PersistentStore
from fedcache.tracker import RequestTracker

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

MB = 1_000_000


def blob(client="c0001", rnd=0, kind=Kind.UPDATE, size=84_500_000, n=16, seed=None, meta=None):
    key = CacheKey(client, rnd, kind)
    rng = np.random.default_rng(seed if seed is not None else zlib.crc32(f"{client}/{rnd}".encode()))
    return BlobRecord(key, rng.standard_normal(n), size, meta)


@pytest.fixture
def make_blob():
    return blob


@pytest.fixture
def store(tmp_path):
    s = PersistentStore(tmp_path / "store")
    yield s
    s.close()


@pytest.fixture
def system(store):
    """A small engine + tracker on the default policy set (auto)."""

    def build(policy="auto", replicas=0, capacity=10 * 2**30, max_functions=None, **tracker_kw):
        pool = FunctionPool(capacity)
        engine = CacheEngine(store, pool, policy, replicas=replicas, max_functions=max_functions)
        tracker = RequestTracker(engine, **tracker_kw)
        return engine, tracker

    return build


@pytest.fixture
def small_config():
    return Config(rounds=6, clients=20, per_round=4, replicas=1)


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
