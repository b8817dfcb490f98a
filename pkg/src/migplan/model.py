"""Domain types: services, profiles, instances, GPU configurations, deployments.

Percentages are stored as fractions (1.0 == 100%). Completion rates are never
clamped; overshoot stays visible.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SIZES = (1, 2, 3, 4, 7)
EPS = 1e-9


class ConfigurationError(ValueError):
    """Bad profile, SLO, or configuration data."""


class DimensionError(ValueError):
    pass


def check_size(size: int) -> int:
    if size not in SIZES:
        raise ConfigurationError(f"instance size {size}/7 is not constructible; allowed {SIZES}")
    return int(size)


@dataclass(frozen=True, order=True)
class Placement:
    """An instance of ``size`` slices starting at compute slot ``start``."""

    size: int
    start: int

    def __post_init__(self):
        check_size(self.size)
        if not 0 <= self.start <= 7 - self.size:
            raise ConfigurationError(f"{self.size}/7 instance cannot start at slot {self.start}")

    @property
    def slots(self) -> range:
        return range(self.start, self.start + self.size)

    def overlaps(self, other: "Placement") -> bool:
        return self.start < other.start + other.size and other.start < self.start + self.size

    def __str__(self):
        return f"{self.size}@{self.start}"


@dataclass(frozen=True)
class ProfileEntry:
    throughput: float
    p90_ms: float


class ModelProfile:
    """Measured throughput / p90 latency for one model, keyed by (size, batch)."""

    def __init__(self, name: str, entries: Mapping[tuple[int, int], ProfileEntry | tuple[float, float]]):
        self.name = name
        table: dict[tuple[int, int], ProfileEntry] = {}
        for (size, batch), value in entries.items():
            check_size(size)
            if int(batch) < 1:
                raise ConfigurationError(f"{name}: batch {batch} must be positive")
            entry = value if isinstance(value, ProfileEntry) else ProfileEntry(*map(float, value))
            if not (entry.throughput > 0 and entry.p90_ms > 0):
                raise ConfigurationError(f"{name}: non-positive measurement at size {size}, batch {batch}")
            table[(int(size), int(batch))] = entry
        self.entries = dict(sorted(table.items()))
        for size in SIZES:
            lat = [e.p90_ms for (s, _), e in self.entries.items() if s == size]
            if any(b < a for a, b in zip(lat, lat[1:])):
                raise ConfigurationError(f"{name}: p90 latency decreases with batch size on {size}/7")

    def batches(self, size: int) -> list[int]:
        return [b for (s, b) in self.entries if s == size]

    def throughput(self, size: int, batch: int) -> float:
        try:
            return self.entries[(size, batch)].throughput
        except KeyError:
            raise ConfigurationError(f"{self.name}: no profile entry for size {size}/7 batch {batch}") from None

    def latency(self, size: int, batch: int) -> float:
        return self.entries[(size, batch)].p90_ms

    def __repr__(self):
        return f"ModelProfile({self.name!r}, {len(self.entries)} entries)"


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    model_name: str
    required_throughput: float
    max_p90_latency: float

    def __post_init__(self):
        if not self.required_throughput > 0:
            raise ConfigurationError(f"{self.service_id}: required throughput must be > 0")
        if not self.max_p90_latency > 0:
            raise ConfigurationError(f"{self.service_id}: latency ceiling must be > 0")


def select_batch(service: ServiceSpec, profile: ModelProfile, size: int) -> int | None:
    """Largest batch whose p90 latency on ``size`` meets the service ceiling."""
    best = None
    for batch in profile.batches(size):
        if profile.latency(size, batch) <= service.max_p90_latency:
            best = batch if best is None else max(best, batch)
    return best


@dataclass(frozen=True, order=True)
class Assignment:
    placement: Placement
    service_id: str
    batch: int


@dataclass(frozen=True, order=True)
class GpuConfig:
    """Placed instances on one GPU; idle slices are simply absent."""

    instances: tuple[Assignment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(sorted(self.instances, key=lambda a: a.placement.start)))

    @classmethod
    def build(cls, items: Iterable[tuple[int, int, str, int]]) -> "GpuConfig":
        """From ``(size, start, service_id, batch)`` tuples."""
        return cls(tuple(Assignment(Placement(s, p), svc, b) for s, p, svc, b in items))

    @property
    def partition(self) -> frozenset[Placement]:
        return frozenset(a.placement for a in self.instances)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted((a.placement.size for a in self.instances), reverse=True))

    def slices_used(self) -> int:
        return sum(a.placement.size for a in self.instances)

    def __str__(self):
        return "{" + ", ".join(f"{a.placement}:{a.service_id}/b{a.batch}" for a in self.instances) + "}"


@dataclass(frozen=True)
class Deployment:
    gpus: tuple[GpuConfig, ...] = ()
    gpu_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "gpus", tuple(self.gpus))
        if self.gpu_ids is None:
            object.__setattr__(self, "gpu_ids", tuple(f"gpu-{k:03d}" for k in range(len(self.gpus))))
        else:
            object.__setattr__(self, "gpu_ids", tuple(self.gpu_ids))
            if len(self.gpu_ids) != len(self.gpus) or len(set(self.gpu_ids)) != len(self.gpu_ids):
                raise ConfigurationError("deployment gpu ids must be unique, one per GPU")

    def __len__(self):
        return len(self.gpus)

    def instance_counts(self) -> Counter:
        """Counter of (service_id, size, batch) across all GPUs."""
        return Counter((a.service_id, a.placement.size, a.batch) for g in self.gpus for a in g.instances)

    def size_multisets(self) -> Counter:
        return Counter(g.sizes for g in self.gpus if g.instances)


@dataclass
class Workload:
    """Services in canonical (lexicographic id) order plus the profiles they use.

    Also caches the per-(service, size) batch and throughput-fraction tables the
    optimizers work from.
    """

    services: list[ServiceSpec]
    profiles: dict[str, ModelProfile]
    batch_table: np.ndarray = field(init=False, repr=False)
    frac_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.services = sorted(self.services, key=lambda s: s.service_id)
        ids = [s.service_id for s in self.services]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate service ids")
        self.index = {sid: i for i, sid in enumerate(ids)}
        n = len(self.services)
        self.batch_table = np.zeros((n, 8), dtype=np.int64)
        self.frac_table = np.zeros((n, 8))
        for i, svc in enumerate(self.services):
            profile = self.profiles.get(svc.model_name)
            if profile is None:
                raise ConfigurationError(f"service {svc.service_id}: unknown model {svc.model_name!r}")
            for size in SIZES:
                b = select_batch(svc, profile, size)
                if b is not None:
                    self.batch_table[i, size] = b
                    self.frac_table[i, size] = profile.throughput(size, b) / svc.required_throughput
            if not self.batch_table[i].any():
                raise ConfigurationError(
                    f"service {svc.service_id}: no (size, batch) of {svc.model_name} meets {svc.max_p90_latency} ms"
                )
        self._utility_cache: dict[GpuConfig, np.ndarray] = {}

    @property
    def n(self) -> int:
        return len(self.services)

    @property
    def ids(self) -> list[str]:
        return [s.service_id for s in self.services]

    def feasible(self, i: int, size: int) -> bool:
        return bool(self.batch_table[i, size])

    def profile_of(self, service_id: str) -> ModelProfile:
        return self.profiles[self.services[self.index[service_id]].model_name]

    def throughput(self, i: int, size: int) -> float:
        return self.frac_table[i, size] * self.services[i].required_throughput

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)

    def utility(self, config: GpuConfig) -> np.ndarray:
        u = self._utility_cache.get(config)
        if u is None:
            u = utility_of(config, self.services, self.profiles)
            u.setflags(write=False)
            self._utility_cache[config] = u
        return u

    def completion(self, deployment: Deployment | Sequence[GpuConfig], base: np.ndarray | None = None) -> np.ndarray:
        """Induced completion rates, summed per (service, size, batch) in a fixed order.

        Summation order depends only on instance counts, so permuting instances
        between GPUs gives bit-identical results.
        """
        gpus = deployment.gpus if isinstance(deployment, Deployment) else deployment
        counts = Counter((a.service_id, a.placement.size, a.batch) for g in gpus for a in g.instances)
        comp = np.zeros(self.n) if base is None else np.array(base, dtype=float)
        for (sid, size, batch), k in sorted(counts.items()):
            i = self.index.get(sid)
            if i is None:
                raise ConfigurationError(f"unknown service id {sid!r} in configuration")
            svc = self.services[i]
            comp[i] += k * (self.profiles[svc.model_name].throughput(size, batch) / svc.required_throughput)
        return comp


def utility_of(config: GpuConfig, services: Sequence[ServiceSpec], profiles: Mapping[str, ModelProfile]) -> np.ndarray:
    """Per-service throughput fraction contributed by one GPU configuration."""
    index = {s.service_id: i for i, s in enumerate(services)}
    u = np.zeros(len(services))
    for a in config.instances:
        i = index.get(a.service_id)
        if i is None:
            raise ConfigurationError(f"unknown service id {a.service_id!r} in configuration")
        svc = services[i]
        u[i] += profiles[svc.model_name].throughput(a.placement.size, a.batch) / svc.required_throughput
    return u


def apply_utility(comp: Sequence[float], u: Sequence[float]) -> np.ndarray:
    comp = np.asarray(comp, dtype=float)
    u = np.asarray(u, dtype=float)
    if comp.shape != u.shape:
        raise DimensionError(f"completion rates have length {comp.shape} but utility has {u.shape}")
    return comp + u


def is_satisfied(comp: Sequence[float]) -> bool:
    comp = np.asarray(comp, dtype=float)
    return bool(np.all(comp >= 1.0 - EPS))


def unsatisfied_mask(comp: np.ndarray) -> np.ndarray:
    return comp < 1.0 - EPS


def slack(comp: np.ndarray) -> float:
    """Total overshoot above 100%."""
    return float(np.maximum(comp - 1.0, 0.0).sum())
