"""Two-phase optimizer: greedy seed, then a GA whose crossover calls the slow algorithm.

A chromosome is a deployment; genes are GPU configs. Crossover erases a random
share of GPUs and refills the residual demand with the slow algorithm.
Mutation swaps services between equal-size instances, which never changes the
completion rates.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .greedy import fast_algo
from .mcts import mcts_solve
from .model import Assignment, Deployment, GpuConfig, Workload, is_satisfied, slack
from .rules import ConfigSpace

log = logging.getLogger(__name__)


@dataclass
class GaParams:
    population: int = 16
    erase_fraction: float = 0.10
    mutation_pairs: int = 2
    stall_rounds: int = 10
    max_rounds: int | None = None
    time_budget: float | None = None
    mcts_iterations: int = 60
    top_k: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 0 < self.erase_fraction <= 0.5:
            raise ValueError("erase_fraction must be in (0, 0.5]")


@dataclass(frozen=True)
class Chromosome:
    gpus: tuple[GpuConfig, ...]
    gpu_count: int
    slack: float

    @property
    def fitness(self) -> tuple[int, float]:
        return self.gpu_count, round(self.slack, 9)

    @property
    def deployment(self) -> Deployment:
        return Deployment(self.gpus)


def make_chromosome(gpus, workload: Workload) -> Chromosome:
    gpus = tuple(gpus)
    comp = workload.completion(gpus)
    if not is_satisfied(comp):
        raise ValueError("chromosome deployment does not satisfy every service")
    return Chromosome(gpus, len(gpus), slack(comp))


SlowAlgorithm = Callable[[np.ndarray, np.random.Generator], list]


def crossover(parent: Chromosome, workload: Workload, slow: SlowAlgorithm, params: GaParams, rng) -> Chromosome:
    """Erase ceil(erase_fraction * |gpus|) random GPUs and refill with ``slow``."""
    n_gpus = len(parent.gpus)
    if n_gpus == 0:
        return parent
    k = max(1, math.ceil(params.erase_fraction * n_gpus - 1e-9))
    erased = set(rng.choice(n_gpus, size=k, replace=False).tolist())
    survivors = [g for j, g in enumerate(parent.gpus) if j not in erased]
    residual = workload.completion(survivors)
    try:
        refill = slow(residual, rng)
        return make_chromosome(survivors + list(refill), workload)
    except Exception as exc:  # slow-algorithm failure means no-op crossover
        log.debug("crossover fell back to parent: %s", exc)
        return parent


def mutate(parent: Chromosome, workload: Workload, params: GaParams, rng) -> Chromosome:
    """Swap services between up to ``mutation_pairs`` equal-size instance pairs."""
    gpus = [list(g.instances) for g in parent.gpus]
    slots = [(gi, k) for gi, g in enumerate(gpus) for k in range(len(g))]
    changed = False
    for _ in range(params.mutation_pairs):
        by_size: dict[int, list] = {}
        for gi, k in slots:
            a = gpus[gi][k]
            by_size.setdefault(a.placement.size, []).append((gi, k))
        eligible = [
            (gi, k) for size, members in by_size.items()
            if len({gpus[g][j].service_id for g, j in members}) > 1
            for gi, k in members
        ]
        if not eligible:
            break
        gi, k = eligible[int(rng.integers(len(eligible)))]
        a = gpus[gi][k]
        partners = [(g, j) for g, j in by_size[a.placement.size] if gpus[g][j].service_id != a.service_id]
        g2, j2 = partners[int(rng.integers(len(partners)))]
        b = gpus[g2][j2]
        # equal sizes share batch per (service, size), so batches travel with services
        gpus[gi][k] = Assignment(a.placement, b.service_id, b.batch)
        gpus[g2][j2] = Assignment(b.placement, a.service_id, a.batch)
        changed = True
    if not changed:
        return parent
    new = tuple(GpuConfig(tuple(g)) for g in gpus)
    return Chromosome(new, parent.gpu_count, parent.slack)


def default_slow(space: ConfigSpace, params: GaParams) -> SlowAlgorithm:
    def slow(residual, rng):
        return mcts_solve(residual, space, iterations=params.mcts_iterations, top_k_children=params.top_k, rng=rng)
    return slow


@dataclass
class GaResult:
    best: Chromosome
    history: list = field(default_factory=list)  # one dict per round

    @property
    def deployment(self) -> Deployment:
        return self.best.deployment


def _offspring(parent, workload, slow, params, seed):
    rng = np.random.default_rng(seed)
    child = mutate(parent, workload, params, rng)
    return crossover(child, workload, slow, params, rng)


def two_phase(
    workload: Workload,
    params: GaParams | None = None,
    space: ConfigSpace | None = None,
    slow: SlowAlgorithm | None = None,
    progress: Callable[[dict], None] | None = None,
) -> GaResult:
    """Greedy seed followed by GA rounds; the best chromosome only ever improves."""
    params = params or GaParams()
    space = space or ConfigSpace(workload)
    slow = slow or default_slow(space, params)
    start = time.monotonic()

    seed_gpus = fast_algo(workload.zeros(), space)
    best = make_chromosome(seed_gpus, workload)
    population = [best]
    history = [{"round": 0, "best_gpus": best.gpu_count, "improved": True}]
    if progress:
        progress(history[-1])
    if params.time_budget is not None and params.time_budget <= 0:
        return GaResult(best, history)

    seq = np.random.SeedSequence(params.seed)
    n_parents = math.ceil(params.population / 2)
    stall = 0
    rnd = 0
    pool = ThreadPoolExecutor(params.workers) if params.workers > 1 else None
    try:
        while True:
            if params.max_rounds is not None and rnd >= params.max_rounds:
                break
            if params.time_budget is not None and time.monotonic() - start >= params.time_budget:
                break
            rnd += 1
            parents = population[:n_parents]
            n_children = params.population - len(parents)
            seeds = seq.spawn(n_children)
            jobs = [(parents[j % len(parents)], seeds[j]) for j in range(n_children)]
            if pool is None:
                children = [_offspring(p, workload, slow, params, s) for p, s in jobs]
            else:
                children = list(pool.map(lambda job: _offspring(job[0], workload, slow, params, job[1]), jobs))
            population = sorted(parents + children, key=lambda c: c.fitness)[: params.population]
            improved = population[0].fitness < best.fitness
            if improved:
                best = population[0]
                stall = 0
            else:
                stall += 1
            history.append({"round": rnd, "best_gpus": best.gpu_count, "improved": improved})
            if progress:
                progress(history[-1])
            if stall >= params.stall_rounds:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return GaResult(best, history)
