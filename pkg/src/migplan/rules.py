"""MIG partition legality, reconfiguration rule and GPU-configuration enumeration.

Legality is generative: slot positions + a memory budget + hard-coded size
exclusions. The table of maximal partitions is derived from those, not typed in.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .model import GpuConfig, Assignment, Placement, Workload, check_size


@dataclass(frozen=True)
class PartitionRuleSet:
    slot_positions: dict = field(
        default_factory=lambda: {1: (0, 1, 2, 3, 4, 5, 6), 2: (0, 2, 4), 3: (0, 4), 4: (0,), 7: (0,)}
    )
    memory_weight: dict = field(default_factory=lambda: {1: 1, 2: 2, 3: 4, 4: 4, 7: 8})
    hard_exclusions: frozenset = frozenset({(3, 4)})
    memory_budget: int = 8

    def __post_init__(self):
        positions = {check_size(int(s)): tuple(sorted(int(p) for p in ps)) for s, ps in self.slot_positions.items()}
        for size, starts in positions.items():
            if any(p < 0 or p + size > 7 for p in starts):
                raise ValueError(f"slot positions for {size}/7 run past slot 6: {starts}")
        object.__setattr__(self, "slot_positions", positions)
        object.__setattr__(self, "memory_weight", {check_size(int(s)): int(w) for s, w in self.memory_weight.items()})
        pairs = frozenset(tuple(sorted((check_size(int(a)), check_size(int(b))))) for a, b in self.hard_exclusions)
        object.__setattr__(self, "hard_exclusions", pairs)

    def __hash__(self):
        return hash((tuple(self.slot_positions.items()), tuple(self.memory_weight.items()),
                     self.hard_exclusions, self.memory_budget))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted(self.slot_positions))

    def all_placements(self) -> list[Placement]:
        return [Placement(s, p) for s in self.sizes for p in self.slot_positions[s]]

    @classmethod
    def from_dict(cls, doc: dict) -> "PartitionRuleSet":
        base = cls()
        allowed = {"slot_positions", "memory_weight", "hard_exclusions", "memory_budget"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown rules fields: {sorted(unknown)}")
        return cls(
            slot_positions={int(k): v for k, v in doc.get("slot_positions", base.slot_positions).items()},
            memory_weight={int(k): v for k, v in doc.get("memory_weight", base.memory_weight).items()},
            hard_exclusions=frozenset(tuple(p) for p in doc.get("hard_exclusions", base.hard_exclusions)),
            memory_budget=int(doc.get("memory_budget", base.memory_budget)),
        )

    @classmethod
    def load(cls, path) -> "PartitionRuleSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "slot_positions": {str(k): list(v) for k, v in self.slot_positions.items()},
            "memory_weight": {str(k): v for k, v in self.memory_weight.items()},
            "hard_exclusions": sorted(list(p) for p in self.hard_exclusions),
            "memory_budget": self.memory_budget,
        }


DEFAULT_RULES = PartitionRuleSet()


@dataclass(frozen=True)
class LegalPartition:
    placements: frozenset
    maximal: bool

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted((p.size for p in self.placements), reverse=True))

    def sort_key(self):
        return self.sizes, tuple(sorted((-p.size, p.start) for p in self.placements))

    def __str__(self):
        return "{" + ", ".join(str(p) for p in sorted(self.placements, key=lambda p: p.start)) + "}"


def is_legal_partition(placements: Iterable[Placement], rules: PartitionRuleSet = DEFAULT_RULES) -> bool:
    placements = list(placements)
    used = 0
    memory = 0
    sizes = set()
    for p in placements:
        if p.start not in rules.slot_positions.get(p.size, ()):
            return False
        mask = ((1 << p.size) - 1) << p.start
        if used & mask:
            return False
        used |= mask
        memory += rules.memory_weight[p.size]
        sizes.add(p.size)
    if memory > rules.memory_budget:
        return False
    return not any(a in sizes and b in sizes for a, b in rules.hard_exclusions)


def can_extend(placements: Iterable[Placement], rules: PartitionRuleSet = DEFAULT_RULES) -> bool:
    current = list(placements)
    return any(
        q not in current and is_legal_partition(current + [q], rules) for q in rules.all_placements()
    )


_legal_cache: dict = {}


def _legal_partitions(rules: PartitionRuleSet) -> list[frozenset]:
    if rules in _legal_cache:
        return _legal_cache[rules]
    found = []
    candidates = rules.all_placements()

    def grow(chosen, start):
        found.append(frozenset(chosen))
        for k in range(start, len(candidates)):
            nxt = chosen + [candidates[k]]
            if is_legal_partition(nxt, rules):
                grow(nxt, k + 1)

    grow([], 0)
    _legal_cache[rules] = found
    return found


_maximal_cache: dict = {}


def enumerate_maximal_partitions(rules: PartitionRuleSet = DEFAULT_RULES) -> list[LegalPartition]:
    """All placement-distinct maximal legal partitions, sorted by size multiset then slots."""
    if rules not in _maximal_cache:
        out = [
            LegalPartition(ps, True)
            for ps in _legal_partitions(rules)
            if ps and not can_extend(ps, rules)
        ]
        _maximal_cache[rules] = sorted(out, key=LegalPartition.sort_key)
    return list(_maximal_cache[rules])


def legal_layouts(sizes: Sequence[int], rules: PartitionRuleSet = DEFAULT_RULES) -> list[frozenset]:
    """Every legal placement set whose size multiset equals ``sizes``."""
    want = tuple(sorted(sizes, reverse=True))
    return sorted(
        (ps for ps in _legal_partitions(rules) if tuple(sorted((p.size for p in ps), reverse=True)) == want),
        key=lambda ps: tuple(sorted((p.start, p.size) for p in ps)),
    )


def rule_reconf(mset, mset_new, current, rules: PartitionRuleSet = DEFAULT_RULES) -> bool:
    """Whether replacing ``mset`` by ``mset_new`` on a GPU holding ``current`` is legal."""
    mset, mset_new, current = set(mset), set(mset_new), set(current)
    if not mset <= current:
        return False
    if not is_legal_partition(current, rules):
        return False
    return is_legal_partition((current - mset) | mset_new, rules)


# --- configuration space -----------------------------------------------------


@dataclass(frozen=True)
class Template:
    """One size multiset with a representative placement layout.

    ``positions`` lists placements ordered by (size desc, start); instances of
    equal size are interchangeable.
    """

    positions: tuple[Placement, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.positions)

    @cached_property
    def groups(self) -> list[tuple[int, int]]:
        """(size, count) runs along ``positions``."""
        return [(s, len(list(g))) for s, g in itertools.groupby(self.sizes)]

    def patterns(self, m: int) -> np.ndarray:
        """Colourings of the positions using exactly colours 0..m-1, one per equal-size multiset."""
        per_group = [list(itertools.combinations_with_replacement(range(m), k)) for _, k in self.groups]
        rows = []
        for combo in itertools.product(*per_group):
            flat = [c for part in combo for c in part]
            if len(set(flat)) == m:
                rows.append(flat)
        return np.array(rows, dtype=np.int64).reshape(len(rows), len(self.positions))


def templates_for(rules: PartitionRuleSet = DEFAULT_RULES) -> list[Template]:
    seen = {}
    for part in enumerate_maximal_partitions(rules):
        if part.sizes not in seen:
            seen[part.sizes] = Template(tuple(sorted(part.placements, key=lambda p: (-p.size, p.start))))
    return list(seen.values())


class ConfigSpace:
    """Vectorised set of GPU configurations over a workload.

    Row ``r`` is template ``tmpl[r]`` with services ``svc[r, :len]`` (indices into
    the workload, -1 padding) and utility vector ``U[r]``.
    """

    def __init__(self, workload: Workload, rules: PartitionRuleSet = DEFAULT_RULES, max_mix: int = 2):
        if max_mix < 1:
            raise ValueError("max_mix must be >= 1")
        self.workload = workload
        self.rules = rules
        self.max_mix = max_mix
        self.templates = templates_for(rules)
        n = workload.n
        subsets = [c for m in range(1, min(max_mix, n) + 1) for c in itertools.combinations(range(n), m)]
        self.tmpl, self.svc, self.U = self.rows_for(subsets)
        self.raw = self.U.sum(axis=1)

    def __len__(self):
        return len(self.tmpl)

    def rows_for(self, subsets: Sequence[tuple[int, ...]]):
        """Configurations whose service set is exactly one of ``subsets`` (sorted tuples)."""
        wl = self.workload
        feasible = wl.batch_table > 0
        by_m: dict[int, list] = {}
        for sub in subsets:
            by_m.setdefault(len(sub), []).append(sub)
        tmpl_out, svc_out, u_out = [], [], []
        for t_idx, tmpl in enumerate(self.templates):
            sizes = np.array(tmpl.sizes)
            L = len(sizes)
            for m in sorted(by_m):
                pats = tmpl.patterns(m)
                if len(pats) == 0:
                    continue
                S = np.array(by_m[m], dtype=np.int64)
                rows = S[:, pats].reshape(-1, L)
                ok = feasible[rows, sizes].all(axis=1)
                rows = rows[ok]
                if len(rows) == 0:
                    continue
                U = np.zeros((len(rows), wl.n))
                ar = np.arange(len(rows))
                for k in range(L):
                    np.add.at(U, (ar, rows[:, k]), wl.frac_table[rows[:, k], sizes[k]])
                padded = np.full((len(rows), 7), -1, dtype=np.int64)
                padded[:, :L] = rows
                tmpl_out.append(np.full(len(rows), t_idx, dtype=np.int64))
                svc_out.append(padded)
                u_out.append(U)
        if not tmpl_out:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 7), dtype=np.int64), np.zeros((0, wl.n))
        return np.concatenate(tmpl_out), np.concatenate(svc_out), np.concatenate(u_out)

    def config(self, tmpl_idx: int, services_row) -> GpuConfig:
        tmpl = self.templates[int(tmpl_idx)]
        wl = self.workload
        out = []
        for pos, i in zip(tmpl.positions, services_row):
            i = int(i)
            out.append(Assignment(pos, wl.services[i].service_id, int(wl.batch_table[i, pos.size])))
        return GpuConfig(tuple(out))

    def materialize(self, r: int) -> GpuConfig:
        return self.config(self.tmpl[r], self.svc[r])

    def key(self, r: int) -> tuple:
        return (int(self.tmpl[r]),) + tuple(int(x) for x in self.svc[r])

    def containing(self, services: Iterable[int]) -> np.ndarray:
        """Row mask of configurations that run at least one of ``services``."""
        services = list(services)
        if not services:
            return np.zeros(len(self), dtype=bool)
        return np.isin(self.svc, services).any(axis=1)

    def best_single(self) -> np.ndarray:
        """Per service, the largest utility of any single-service full-GPU config."""
        best = np.zeros(self.workload.n)
        single = (self.svc[:, 1:] == self.svc[:, :1]) | (self.svc[:, 1:] < 0)
        single = single.all(axis=1)
        for r in np.flatnonzero(single):
            i = self.svc[r, 0]
            best[i] = max(best[i], self.U[r, i])
        return best


def enumerate_configs(workload: Workload, rules: PartitionRuleSet = DEFAULT_RULES, max_mix: int = 2) -> list[GpuConfig]:
    space = ConfigSpace(workload, rules, max_mix)
    return [space.materialize(r) for r in range(len(space))]
