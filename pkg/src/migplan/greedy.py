"""Heuristic score and the greedy fast optimizer."""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from typing import Callable

import numpy as np

from .model import GpuConfig, Workload, is_satisfied, unsatisfied_mask
from .rules import ConfigSpace

TIE_TOL = 1e-12


class PlanningError(RuntimeError):
    pass


class OptimizerProcedure(ABC):
    """Turns completion rates into a list of GPU configs that tops every service up to 100%."""

    def __init__(self, space: ConfigSpace):
        self.space = space

    @property
    def workload(self) -> Workload:
        return self.space.workload

    @abstractmethod
    def solve(self, comp: np.ndarray) -> list[GpuConfig]:
        ...

    def __call__(self, comp):
        return self.solve(comp)


def score(config: GpuConfig, comp, workload: Workload) -> float:
    """Sum over services of max(0, 1 - c_i) * u_i."""
    u = workload.utility(config)
    comp = np.asarray(comp, dtype=float)
    if u.shape != comp.shape:
        raise ValueError("utility and completion rates differ in length")
    return float(np.maximum(1.0 - comp, 0.0) @ u)


def score_rows(U: np.ndarray, comp: np.ndarray) -> np.ndarray:
    return U @ np.maximum(1.0 - comp, 0.0)


def pick_best(scores: np.ndarray, raw: np.ndarray, key: Callable[[int], tuple], rows=None) -> int:
    """Index of the best score; ties go to larger raw utility, then the smallest key.

    ``rows`` optionally restricts the candidates (indices into ``scores``).
    """
    if rows is None:
        rows = np.arange(len(scores))
    sub = scores[rows]
    top = sub.max()
    tied = rows[sub >= top - TIE_TOL * max(1.0, abs(top))]
    if len(tied) == 1:
        return int(tied[0])
    tr = raw[tied]
    tied = tied[tr >= tr.max() - TIE_TOL * max(1.0, abs(tr.max()))]
    return int(min(tied, key=key))


def top_k(scores: np.ndarray, raw: np.ndarray, key: Callable[[int], tuple], k: int, rows=None) -> list[int]:
    """Up to ``k`` positive-score rows ordered by (score desc, raw desc, key asc)."""
    if rows is None:
        rows = np.arange(len(scores))
    rows = rows[scores[rows] > 0]
    if len(rows) == 0:
        return []
    if len(rows) > 4 * k:
        cut = np.argpartition(-scores[rows], 4 * k)[: 4 * k]
        kth = scores[rows[cut]].min()
        rows = rows[scores[rows] >= kth - TIE_TOL * max(1.0, abs(kth))]
    ordered = sorted(rows.tolist(), key=lambda r: (-round(scores[r], 12), -round(raw[r], 12), key(r)))
    return ordered[:k]


class _GrowingSpace:
    """Base configuration rows plus rows appended when services near completion."""

    def __init__(self, space: ConfigSpace):
        self.space = space
        self.U = space.U
        self.raw = space.raw
        self.tmpl = space.tmpl
        self.svc = space.svc

    def key(self, r: int) -> tuple:
        return (int(self.tmpl[r]),) + tuple(int(x) for x in self.svc[r])

    def extend(self, subsets):
        tmpl, svc, U = self.space.rows_for(subsets)
        if len(tmpl):
            self.tmpl = np.concatenate([self.tmpl, tmpl])
            self.svc = np.concatenate([self.svc, svc])
            self.U = np.concatenate([self.U, U])
            self.raw = np.concatenate([self.raw, U.sum(axis=1)])

    def materialize(self, r: int) -> GpuConfig:
        return self.space.config(self.tmpl[r], self.svc[r])


def fast_algo(
    comp,
    space: ConfigSpace,
    *,
    extend_mix: int = 4,
    partner_limit: int = 6,
    trace: list | None = None,
) -> list[GpuConfig]:
    """Greedy: keep adding the best-scoring config until every service is satisfied.

    Starts from configs mixing at most ``space.max_mix`` services. Once service i
    has less than one best single-service GPU's worth of demand left it is
    "almost satisfied", and configs mixing it with up to ``extend_mix - 1`` of
    the ``partner_limit`` neediest other services are added.
    """
    comp = np.array(comp, dtype=float)
    wl = space.workload
    if comp.shape != (wl.n,):
        raise ValueError(f"completion rates must have length {wl.n}")
    if is_satisfied(comp):
        return []
    grow = _GrowingSpace(space)
    best_single = space.best_single()
    triggered: set[int] = set()
    out: list[GpuConfig] = []
    while True:
        if extend_mix > space.max_mix:
            need = np.maximum(1.0 - comp, 0.0)
            for i in np.flatnonzero(unsatisfied_mask(comp)):
                i = int(i)
                if i in triggered or need[i] >= best_single[i]:
                    continue
                triggered.add(i)
                grow.extend(_extension_subsets(i, need, space.max_mix, extend_mix, partner_limit))
        s = score_rows(grow.U, comp)
        if len(s) == 0 or s.max() <= 0:
            missing = [wl.ids[i] for i in np.flatnonzero(unsatisfied_mask(comp))]
            raise PlanningError(f"no configuration makes progress for services {missing}")
        r = pick_best(s, grow.raw, grow.key)
        comp = comp + grow.U[r]
        cfg = grow.materialize(r)
        out.append(cfg)
        if trace is not None:
            trace.append({"step": len(out), "config": str(cfg), "score": float(s[r]), "completion": comp.tolist()})
        if is_satisfied(comp):
            return out


def _extension_subsets(i, need, base_mix, extend_mix, partner_limit):
    others = [j for j in np.argsort(-need, kind="stable") if j != i and need[j] > 0][:partner_limit]
    others = sorted(int(j) for j in others)
    subsets = []
    for m in range(base_mix, extend_mix):
        for combo in itertools.combinations(others, m):
            subsets.append(tuple(sorted((i,) + combo)))
    return subsets


class GreedyOptimizer(OptimizerProcedure):
    def __init__(self, space: ConfigSpace, **kwargs):
        super().__init__(space)
        self.kwargs = kwargs

    def solve(self, comp):
        return fast_algo(comp, self.space, **self.kwargs)
