"""Static-partition baselines, the relaxation lower bound, workload generation,
an exhaustive oracle for tiny instances, and normalized cost tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EPS, GpuConfig, Deployment, ServiceSpec, Workload, ModelProfile
from .rules import DEFAULT_RULES, ConfigSpace, PartitionRuleSet

BASELINE_KINDS = {
    "7of7": "A100-7/7", "A100-7/7": "A100-7/7", "7/7": "A100-7/7",
    "7x1": "A100-7x1/7", "A100-7x1/7": "A100-7x1/7", "7x1/7": "A100-7x1/7",
    "mix": "A100-MIX", "A100-MIX": "A100-MIX",
}

DEFAULT_DIST_PARAMS = {
    "normal": {"mu": 5000.0, "sigma": 2000.0},
    "lognormal": {"mu_log": 8.0, "sigma_log": 0.6},
}


class BaselineError(ValueError):
    pass


class OracleBudgetError(RuntimeError):
    pass


def _ceil(x: float) -> int:
    return max(0, math.ceil(x - 1e-9))


def _needed(workload: Workload, i: int, sizes) -> int:
    svc = workload.services[i]
    for size in sizes:
        if not workload.feasible(i, size):
            raise BaselineError(f"service {svc.service_id} cannot run on {size}/7 within {svc.max_p90_latency} ms")
    thr = sum(workload.throughput(i, size) for size in sizes)
    return _ceil(svc.required_throughput / thr)


def baseline(kind: str, workload: Workload) -> Deployment:
    """Deployment under one of the fixed-partition baselines."""
    try:
        kind = BASELINE_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown baseline {kind!r}; pick from {sorted(set(BASELINE_KINDS))}") from None
    gpus = []
    wl = workload
    if kind == "A100-7/7":
        for i, svc in enumerate(wl.services):
            cfg = GpuConfig.build([(7, 0, svc.service_id, int(wl.batch_table[i, 7]))]) if wl.feasible(i, 7) else None
            gpus += [cfg] * _needed(wl, i, (7,))
    elif kind == "A100-MIX":
        for i, svc in enumerate(wl.services):
            k = _needed(wl, i, (4, 2, 1))
            cfg = GpuConfig.build([(s, p, svc.service_id, int(wl.batch_table[i, s])) for s, p in ((4, 0), (2, 4), (1, 6))])
            gpus += [cfg] * k
    else:
        instances = []
        for i, svc in enumerate(wl.services):
            instances += [(svc.service_id, int(wl.batch_table[i, 1]))] * _needed(wl, i, (1,))
        for start in range(0, len(instances), 7):
            chunk = instances[start:start + 7]
            gpus.append(GpuConfig.build([(1, slot, sid, b) for slot, (sid, b) in enumerate(chunk)]))
    return Deployment(tuple(gpus))


def lower_bound(workload: Workload) -> int:
    """GPUs needed if every service could use its most slice-efficient size without placement rules."""
    total = 0.0
    for i, svc in enumerate(workload.services):
        eff = max(workload.throughput(i, s) / s for s in (1, 2, 3, 4, 7) if workload.feasible(i, s))
        total += svc.required_throughput / eff
    return _ceil(total / 7)


@dataclass
class WorkloadSpec:
    services: list[ServiceSpec]
    distribution: str
    params: dict
    seed: int
    latency_ms: float = 100.0

    def workload(self, profiles: dict[str, ModelProfile]) -> Workload:
        return Workload(list(self.services), profiles)


def gen_workload(n: int, dist: str = "lognormal", params: dict | None = None, *, models, latency_ms: float = 100.0,
                 seed: int = 0) -> WorkloadSpec:
    """Draw ``n`` service demands; models are assigned round-robin over ``models`` (sorted)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if dist not in DEFAULT_DIST_PARAMS:
        raise ValueError(f"unknown distribution {dist!r}")
    params = {**DEFAULT_DIST_PARAMS[dist], **(params or {})}
    rng = np.random.default_rng(seed)
    models = sorted(models)

    def draw():
        if dist == "normal":
            return float(rng.normal(params["mu"], params["sigma"]))
        return float(rng.lognormal(params["mu_log"], params["sigma_log"]))

    services = []
    for i in range(n):
        rps = draw()
        while rps <= 0:
            rps = draw()
        services.append(ServiceSpec(f"svc-{i:02d}", models[i % len(models)], round(rps, 3), latency_ms))
    return WorkloadSpec(services, dist, params, seed, latency_ms)


def _undominated(U: np.ndarray) -> np.ndarray:
    U, idx = np.unique(U, axis=0, return_index=True)
    keep = []
    for r in range(len(U)):
        ge = (U >= U[r]).all(axis=1)
        gt = (U > U[r]).any(axis=1)
        if not (ge & gt).any():
            keep.append(r)
    return idx[keep]


def brute_force_optimum(workload: Workload, rules: PartitionRuleSet = DEFAULT_RULES, cap: int = 3,
                        node_budget: int = 2_000_000) -> Deployment | None:
    """Minimum-GPU deployment by iterative deepening over config multisets, or None above ``cap``."""
    if workload.n == 0:
        return Deployment(())
    space = ConfigSpace(workload, rules, max_mix=workload.n)
    rows = _undominated(space.U)
    rows = rows[np.argsort(-space.raw[rows], kind="stable")]
    U = space.U[rows]
    col_max = U.max(axis=0)
    nodes = 0

    def search(start, depth, comp, chosen):
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise OracleBudgetError(f"oracle exceeded {node_budget} nodes")
        need = 1.0 - EPS - comp
        if (need <= 0).all():
            return chosen
        if depth == 0 or (need > depth * col_max).any():
            return None
        if depth == 1:
            hit = np.flatnonzero((U[start:] >= need).all(axis=1))
            return chosen + [start + int(hit[0])] if len(hit) else None
        for r in range(start, len(U)):
            found = search(r, depth - 1, comp + U[r], chosen + [r])
            if found is not None:
                return found
        return None

    for depth in range(0, cap + 1):
        found = search(0, depth, workload.zeros(), [])
        if found is not None:
            return Deployment(tuple(space.materialize(rows[r]) for r in found))
    return None


def cost_report(deployments: dict[str, int], prices: dict[str, float]) -> list[dict]:
    """Cost per configuration (gpus x hourly price), normalized so the cheapest is 1.0."""
    missing = sorted(set(deployments) - set(prices))
    if missing:
        raise ValueError(f"no price for {missing}")
    if any(p <= 0 for p in prices.values()):
        raise ValueError("prices must be positive")
    costs = {name: gpus * prices[name] for name, gpus in deployments.items()}
    cheapest = min(costs.values())
    if cheapest <= 0:
        raise ValueError("cannot normalize against a zero-cost configuration")
    return [
        {"configuration": name, "gpus": deployments[name], "price_per_gpu_hour": prices[name],
         "cost": costs[name], "normalized": costs[name] / cheapest}
        for name in sorted(deployments)
    ]


def tiny_suite(n_cases: int = 30, profiles: dict[str, ModelProfile] | None = None, *, seed: int = 2024,
               lo: float = 0.3, hi: float = 1.5, cap: int = 3) -> list[tuple[Workload, Deployment]]:
    """Random 2-3 service workloads whose exhaustive optimum is at most ``cap`` GPUs.

    Each demand is ``uniform(lo, hi)`` times the throughput of the service's best
    single-service GPU, so instance sizes are comparable across models.
    Returns (workload, optimal deployment) pairs.
    """
    from .fixtures import fixture_profiles

    profiles = profiles or fixture_profiles()
    names = sorted(profiles)
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_cases:
        svcs = []
        for i in range(int(rng.integers(2, 4))):
            m = names[int(rng.integers(len(names)))]
            unit = Workload([ServiceSpec("unit", m, 1.0, 100.0)], profiles)
            per_gpu = ConfigSpace(unit, max_mix=1).best_single()[0]  # utility at 1 rps == rps per best GPU
            svcs.append(ServiceSpec(f"s{i}", m, round(float(rng.uniform(lo, hi)) * per_gpu, 2), 100.0))
        wl = Workload(svcs, profiles)
        opt = brute_force_optimum(wl, cap=cap)
        if opt is not None:
            out.append((wl, opt))
    return out
