"""Monte Carlo Tree Search over completion-rate states.

Nodes are completion-rate vectors, edges are GPU configurations, and a leaf is
a node where every service is satisfied. Search looks for the shortest path to
a leaf. Two departures from textbook MCTS keep it tractable: a node only gets
the top-K scored configs as children, and rollouts draw from memoised pools of
good configs keyed by which services are still unsatisfied.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .greedy import OptimizerProcedure, fast_algo, score_rows, top_k
from .model import EPS, GpuConfig, is_satisfied
from .rules import ConfigSpace

UCB_C = math.sqrt(2.0)
PICKED_SERVICES = 5


class EstimationError(RuntimeError):
    """A rollout reached a state no configuration can improve."""


@dataclass(eq=False)
class SearchNode:
    comp: np.ndarray
    depth: int = 0
    children: list | None = None  # [(row, SearchNode)] once expanded
    visit_count: int = 0
    value_sum: float = 0.0

    @property
    def leaf(self) -> bool:
        return is_satisfied(self.comp)


@dataclass
class RolloutCache:
    """Pools of top-K configs keyed by the set of unsatisfied services."""

    space: ConfigSpace
    k: int = 10
    pools: dict = field(default_factory=dict)
    builds: dict = field(default_factory=dict)

    def pool(self, comp: np.ndarray, key: bytes | None = None):
        if key is None:
            key = (comp < 1.0 - EPS).tobytes()
        hit = self.pools.get(key)
        if hit is None:
            hit = self._build(comp)
            self.pools[key] = hit
            self.builds[key] = self.builds.get(key, 0) + 1
        return hit

    def _build(self, comp):
        sp = self.space
        rows = np.array(top_k(score_rows(sp.U, comp), sp.raw, sp.key, self.k), dtype=np.int64)
        return rows, sp.U[rows]


def _rollout(comp, cache: RolloutCache, rng, max_depth: int, record: list | None = None):
    """Returns (steps, reached_leaf)."""
    c = np.array(comp, dtype=float)
    steps = 0
    while True:
        mask = c < 1.0 - EPS
        if not mask.any():
            return steps, True
        if steps >= max_depth:
            return max_depth, False
        rows, U = cache.pool(c, mask.tobytes())
        if len(rows) == 0:
            raise EstimationError("empty candidate pool: residual demand cannot be served")
        j = int(rng.integers(len(rows)))
        c += U[j]
        steps += 1
        if record is not None:
            record.append(int(rows[j]))


def rollout(node: SearchNode | np.ndarray, cache: RolloutCache, rng, max_depth: int) -> int:
    """Random walk over memoised pools; path length, or ``max_depth`` on failure."""
    comp = node.comp if isinstance(node, SearchNode) else node
    return _rollout(comp, cache, rng, max_depth)[0]


def rollout_uncached(comp, space: ConfigSpace, rng, max_depth: int, k: int = 10) -> int:
    """Reference rollout that re-scores the whole config set at every step."""
    c = np.array(comp, dtype=float)
    steps = 0
    while not is_satisfied(c):
        if steps >= max_depth:
            return max_depth
        rows = top_k(score_rows(space.U, c), space.raw, space.key, k)
        if not rows:
            raise EstimationError("empty candidate pool: residual demand cannot be served")
        c += space.U[rows[int(rng.integers(len(rows)))]]
        steps += 1
    return steps


class _Search:
    def __init__(self, space: ConfigSpace, k: int, rng):
        self.space = space
        self.k = k
        self.rng = rng
        self.cache = RolloutCache(space, k)
        n = space.workload.n
        self.member = np.zeros((n, len(space)), dtype=bool)
        for col in range(space.svc.shape[1]):
            ok = space.svc[:, col] >= 0
            self.member[space.svc[ok, col], np.flatnonzero(ok)] = True

    def expand(self, node: SearchNode) -> list:
        unsat = np.flatnonzero(node.comp < 1.0 - EPS)
        picked = self.rng.choice(unsat, size=min(PICKED_SERVICES, len(unsat)), replace=False)
        rows = np.flatnonzero(self.member[picked].any(axis=0))
        sp = self.space
        scores = np.zeros(len(sp))
        scores[rows] = score_rows(sp.U[rows], node.comp)
        chosen = top_k(scores, sp.raw, sp.key, self.k, rows=rows)
        node.children = [(r, SearchNode(node.comp + sp.U[r], node.depth + 1)) for r in chosen]
        return node.children


def _select(node: SearchNode):
    log_n = math.log(max(node.visit_count, 1))
    best, best_val = None, -math.inf
    for edge in node.children:
        child = edge[1]
        if child.visit_count == 0:
            return edge
        val = child.value_sum / child.visit_count + UCB_C * math.sqrt(log_n / child.visit_count)
        if val > best_val:
            best, best_val = edge, val
    return best


def expand(node: SearchNode, space: ConfigSpace, k: int = 10, rng=None) -> list:
    """Attach the top-K scored children, scoring configs that serve up to five random unsatisfied services."""
    rng = np.random.default_rng(rng)
    return _Search(space, k, rng).expand(node)


def mcts_solve(
    comp,
    space: ConfigSpace,
    *,
    iterations: int = 200,
    top_k_children: int = 10,
    rng=None,
    time_limit: float | None = None,
    trace: list | None = None,
) -> list[GpuConfig]:
    """Shortest path found by MCTS, never longer than the greedy path from ``comp``."""
    comp = np.array(comp, dtype=float)
    if is_satisfied(comp):
        return []
    ref = fast_algo(comp, space)
    if iterations <= 0 and not time_limit:
        return ref
    rng = np.random.default_rng(rng)
    search = _Search(space, top_k_children, rng)
    l_ref = len(ref)
    max_depth = 2 * l_ref
    root = SearchNode(comp)
    best_rows: list[int] | None = None
    deadline = None if time_limit is None else time.monotonic() + time_limit

    it = 0
    while (iterations > 0 and it < iterations) or (iterations <= 0 and deadline is not None):
        if deadline is not None and time.monotonic() > deadline:
            break
        it += 1
        node, path, edges = root, [root], []
        while node.children and not node.leaf:
            row, node = _select(node)
            path.append(node)
            edges.append(row)
        if not node.leaf and node.children is None:
            if search.expand(node):
                row, node = node.children[0]
                path.append(node)
                edges.append(row)
        rows: list[int] = []
        if node.leaf:
            length, done = node.depth, True
        else:
            steps, done = _rollout(node.comp, search.cache, rng, max(max_depth - node.depth, 0), rows)
            length = node.depth + steps if done else max_depth
        if done and (best_rows is None or length < len(best_rows)):
            best_rows = edges + rows
        reward = 1.0 if length == 0 else min(1.0, l_ref / length)
        for n in path:
            n.visit_count += 1
            n.value_sum += reward
        if trace is not None:
            trace.append({"iteration": it, "path": [space.key(r) for r in edges], "estimate": int(length)})

    node, descent = root, []
    while node.children and not node.leaf:
        row, node = max(
            node.children,
            key=lambda e: (e[1].visit_count, e[1].value_sum / max(e[1].visit_count, 1)),
        )
        descent.append(row)
    descent_cfgs = [space.materialize(r) for r in descent] + fast_algo(node.comp, space)

    candidates = []
    if best_rows is not None:
        candidates.append([space.materialize(r) for r in best_rows])
    candidates += [descent_cfgs, ref]
    return min(candidates, key=len)


class MctsOptimizer(OptimizerProcedure):
    def __init__(self, space: ConfigSpace, iterations: int = 200, top_k_children: int = 10, rng=None,
                 time_limit: float | None = None):
        super().__init__(space)
        self.iterations = iterations
        self.top_k_children = top_k_children
        self.rng = np.random.default_rng(rng)
        self.time_limit = time_limit

    def solve(self, comp):
        return mcts_solve(comp, self.space, iterations=self.iterations, top_k_children=self.top_k_children,
                          rng=self.rng, time_limit=self.time_limit)
