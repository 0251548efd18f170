"""Run configuration: flat ``key = value`` TOML with dotted keys.

``store.root`` maps to ``store_root``, ``cost.<name>`` to a CostParams field and
``compute.<Workload>`` to the per-workload compute-time table.  Unknown keys
are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import DEFAULT_COMPUTE_S, GiB, MB, CostParams, Workload
from .policies import make_policy


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    policy: str = "auto"
    rounds: int = 1000
    clients: int = 250
    per_round: int = 10
    model_mb: float = 84.5
    metadata_kb: float = 4.0
    vector_len: int = 256
    seed: int = 0
    replicas: int = 3
    capacity_gib: float = 10.0
    effective_capacity_gib: float = 7.8
    max_functions: int = 0  # 0 = unbounded
    p4_window: int = 10
    reroute_timeout_s: float = 2.0
    keepalive_window_s: float = 60.0
    ping_interval_s: float = 60.0
    dispatch_s: float = 0.001
    round_s: float = 60.0
    request_gap_s: float = 2.0
    parallel: int = 1
    store_root: str = ""
    out: str = ""
    cost: CostParams = field(default_factory=CostParams)
    compute: dict = field(default_factory=lambda: {w.value: s for w, s in DEFAULT_COMPUTE_S.items()})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.per_round > self.clients:
            raise ConfigError("per_round must not exceed clients")
        for name in ("rounds", "replicas", "max_functions", "vector_len"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.parallel < 1 or self.p4_window < 1 or self.vector_len < 1:
            raise ConfigError("parallel, p4_window and vector_len must be >= 1")
        if self.model_mb <= 0 or self.capacity_gib <= 0 or self.effective_capacity_gib <= 0:
            raise ConfigError("sizes must be positive")
        try:
            make_policy(self.policy)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for w, s in self.compute.items():
            Workload(w)
            if s < 0:
                raise ConfigError(f"compute.{w} must be >= 0")

    # -- derived values ----------------------------------------------------

    @property
    def model_size_bytes(self) -> int:
        return int(round(self.model_mb * MB))

    @property
    def metadata_size_bytes(self) -> int:
        return int(round(self.metadata_kb * 1000))

    @property
    def capacity_bytes(self) -> int:
        return int(self.capacity_gib * GiB)

    @property
    def effective_capacity_bytes(self) -> int:
        return int(self.effective_capacity_gib * GiB)

    @property
    def compute_table(self) -> dict[Workload, float]:
        return {Workload(w): float(s) for w, s in self.compute.items()}

    def job_spec(self, **overrides):
        from .traces import JobSpec
        kw = dict(pool_size=self.clients, per_round=self.per_round, rounds=self.rounds,
                  model_size_bytes=self.model_size_bytes, metadata_size_bytes=self.metadata_size_bytes,
                  seed=self.seed, round_s=self.round_s, request_gap_s=self.request_gap_s,
                  vector_len=self.vector_len)
        kw.update(overrides)
        return JobSpec(**kw)

    # -- parsing -----------------------------------------------------------

    def with_overrides(self, flat: dict[str, Any]) -> "Config":
        scalars = {f.name for f in dataclasses.fields(self)} - {"cost", "compute"}
        cost_fields = {f.name for f in dataclasses.fields(CostParams)}
        kw = {n: getattr(self, n) for n in scalars}
        cost = dataclasses.asdict(self.cost)
        compute = dict(self.compute)
        for key, value in flat.items():
            if key == "store.root":
                key = "store_root"
            if key in scalars:
                kw[key] = _coerce(value, type(kw[key]), key)
            elif key.startswith("cost.") and key[5:] in cost_fields:
                cost[key[5:]] = _coerce(value, type(cost[key[5:]]), key)
            elif key.startswith("compute."):
                try:
                    compute[Workload(key[8:]).value] = _coerce(value, float, key)
                except ValueError:
                    raise ConfigError(f"unknown workload in {key!r}") from None
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return Config(cost=CostParams(**cost), compute=compute, **kw)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_toml(cls, text: str, base: Optional["Config"] = None) -> "Config":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad config: {e}") from None
        return (base or cls()).with_overrides(_flatten(data))

    @classmethod
    def load(cls, path=None, overrides: Optional[dict] = None) -> "Config":
        cfg = cls()
        if path:
            with open(path, encoding="utf-8") as f:
                cfg = cls.from_toml(f.read(), cfg)
        return cfg.with_overrides(overrides or {})


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, typ, key):
    try:
        if typ is bool:
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot convert {value!r} to {typ.__name__}") from None


def parse_assignments(items) -> dict[str, str]:
    """``["a=1", "cost.rtt_s=0.02"]`` -> dict; values are parsed as TOML scalars when possible."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            out[key.strip()] = raw.strip()
    return out


def default_config_text() -> str:
    return resources.files("fedcache").joinpath("default.toml").read_text(encoding="utf-8")
