"""Exchange-and-compact transition planning between two deployments.

Exchange: per service, new instances are created before the old instances
they replace are deleted, so serving capacity never drops below what either
deployment needs. Compact: instances are migrated (replica first, then the
source is removed) onto the GPUs chosen for the new deployment, evicting
blockers to spare room when GPUs deadlock.

Planning runs against a simulated copy of the cluster, so every emitted action
has already been checked by the same code the simulator uses.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cluster import Action, ClusterState, Guard, apply_in_place, deployment_signature
from .greedy import PlanningError
from .model import Deployment, ModelProfile, Placement, ServiceSpec, Workload, is_satisfied, select_batch
from .rules import DEFAULT_RULES, PartitionRuleSet, is_legal_partition, legal_layouts


@dataclass(frozen=True)
class ServiceDelta:
    service_id: str
    added: tuple[int, ...] = ()
    removed: tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.added and not self.removed


def _size_counts(deployment: Deployment) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for g in deployment.gpus:
        for a in g.instances:
            out.setdefault(a.service_id, Counter())[a.placement.size] += 1
    return out


def compute_deltas(old: Deployment, new: Deployment) -> list[ServiceDelta]:
    """Per-service multiset difference of instance sizes, sorted by service id."""
    o, n = _size_counts(old), _size_counts(new)
    out = []
    for sid in sorted(set(o) | set(n)):
        a, b = o.get(sid, Counter()), n.get(sid, Counter())
        added = tuple(sorted((b - a).elements(), reverse=True))
        removed = tuple(sorted((a - b).elements(), reverse=True))
        out.append(ServiceDelta(sid, added, removed))
    return out


def service_throughputs(profile: ModelProfile, slo: ServiceSpec) -> dict[int, float]:
    thr = {}
    for size in (1, 2, 3, 4, 7):
        b = select_batch(slo, profile, size)
        if b is not None:
            thr[size] = profile.throughput(size, b)
    return thr


def _pair(delta: ServiceDelta, thr: Mapping[int, float]):
    new = sorted(delta.added, key=lambda s: (-thr[s], -s))
    pending = sorted(delta.removed, key=lambda s: (-thr[s], -s))
    pairs = []
    for size in new:
        room = thr[size]
        took = []
        rest = []
        for r in pending:
            if thr[r] <= room * (1 + 1e-12):
                took.append(r)
                room -= thr[r]
            else:
                rest.append(r)
        pending = rest
        pairs.append((size, took))
    return pairs, pending


def pair_exchanges(delta: ServiceDelta, profile: ModelProfile, slo: ServiceSpec):
    """First-fit-decreasing by throughput: each new instance absorbs removed ones it can cover.

    Returns ``(pairs, leftovers)`` with pairs as ``(new_size, [removed sizes])``.
    A removed instance larger than every remaining new one stays in leftovers.
    """
    thr = service_throughputs(profile, slo)
    missing = sorted(set(delta.added) - set(thr))
    if missing:
        raise PlanningError(f"{delta.service_id}: sizes {missing} cannot meet the latency ceiling")
    for size in delta.removed:
        thr.setdefault(size, profile.throughput(size, min(profile.batches(size))))
    return _pair(delta, thr)


@dataclass
class TransitionPlan:
    stages: list[list[Action]]
    extra_gpu_budget: int
    initial: ClusterState | None = None
    actions: list[Action] = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return sum(len(s) for s in self.stages)

    def kinds(self) -> Counter:
        return Counter(a.kind for s in self.stages for a in s)


def stage_actions(actions: list[Action]) -> list[list[Action]]:
    """Earliest stage consistent with the sequence: GPU sharing and create-before-delete per service."""
    gpu_stage: dict[str, int] = {}
    create_stage: dict[str, int] = {}
    stages: list[list[Action]] = []
    for a in actions:
        lvl = max((gpu_stage.get(g, -1) for g in a.gpus), default=-1)
        if a.kind == "delete":
            lvl = max(lvl, create_stage.get(a.service, -1))
        lvl += 1
        if lvl == len(stages):
            stages.append([])
        stages[lvl].append(a)
        for g in a.gpus:
            gpu_stage[g] = lvl
        if a.kind == "create":
            create_stage[a.service] = max(create_stage.get(a.service, -1), lvl)
    return stages


class _NoRoom(Exception):
    pass


class _Planner:
    def __init__(self, state: ClusterState, targets: dict, rules: PartitionRuleSet, new_batch: dict):
        self.st = state
        self.targets = targets  # gpu_id -> {Placement: (service, batch)}
        self.rules = rules
        self.new_batch = new_batch
        self.actions: list[Action] = []

    # -- bookkeeping ---------------------------------------------------------

    def emit(self, action: Action):
        apply_in_place(self.st, action, self.rules)
        self.actions.append(action)

    def fixed(self, gid: str, p: Placement) -> bool:
        t = self.targets.get(gid, {}).get(p)
        held = self.st.gpus[gid].assigned.get(p)
        return t is not None and held is not None and held[0] == t[0]

    def misplaced(self, gid: str) -> list[Placement]:
        g = self.st.gpus[gid]
        return sorted(p for p in g.assigned if not self.fixed(gid, p))

    def unfilled(self):
        out = []
        for gid, slots in self.targets.items():
            for p, (s, b) in sorted(slots.items()):
                if not self.fixed(gid, p):
                    out.append((gid, p, s, b))
        return out

    def order(self) -> list[str]:
        """GPUs by occupied slices (desc), then id."""
        return sorted(self.st.gpus, key=lambda g: (-self.st.gpus[g].used_slices(), g))

    # -- room making ---------------------------------------------------------

    def prep(self, gid: str, p: Placement):
        """Actions that make ``p`` creatable on ``gid``, or None when serving instances are in the way."""
        g = self.st.gpus[gid]
        if p in g.assigned or not is_legal_partition(set(g.assigned) | {p}, self.rules):
            return None
        if p in g.partition or is_legal_partition(g.partition | {p}, self.rules):
            return []
        idle = g.idle
        drop = {q for q in idle if q.overlaps(p)}
        if not is_legal_partition((g.partition - drop) | {p}, self.rules):
            drop = set(idle)
        return [Action("repartition", gid, remove=tuple(drop), add=(p,))]

    def parking_ok(self, gid: str, p: Placement) -> bool:
        """Parking ``p`` here never blocks this GPU's target slots."""
        slots = self.targets.get(gid)
        if not slots:
            return True
        keep = set(slots) | set(self.misplaced(gid))
        return is_legal_partition(keep | {p}, self.rules)

    def spot(self, service: str, size: int, avoid: str | None = None, machine: str | None = None):
        """Where a (service, size) instance should go: its own target slot, else harmless parking."""
        for gid, p, s, _ in self.unfilled():
            if s == service and p.size == size and self.prep(gid, p) is not None:
                return gid, p
        placements = [Placement(size, start) for start in self.rules.slot_positions.get(size, ())]
        gids = [g for g in self.order() if g != avoid]
        if machine is not None:
            gids.sort(key=lambda g: self.st.gpus[g].machine != machine)
        # prefer GPUs already serving something so fresh GPUs stay free
        gids.sort(key=lambda g: not self.st.gpus[g].assigned)
        for gid in gids:
            for p in placements:
                if self.parking_ok(gid, p) and self.prep(gid, p) is not None:
                    return gid, p
        return None

    def put(self, gid: str, p: Placement, service: str, batch: int, source: tuple[str, Placement] | None = None):
        for a in self.prep(gid, p):
            self.emit(a)
        if source is None:
            self.emit(Action("create", gid, p, service, batch))
        else:
            sg, sp = source
            held = self.st.gpus[sg].assigned[sp]
            self.emit(Action("migrate", sg, sp, held[0], held[1], target_gpu=gid, target_placement=p))

    def victim(self, service: str, size: int):
        """Instance of (service, size) to delete: misplaced ones first, on emptier GPUs."""
        best = None
        for gid, g in self.st.gpus.items():
            for p, (s, _) in g.assigned.items():
                if s != service or p.size != size:
                    continue
                key = (self.fixed(gid, p), gid in self.targets, g.used_slices(), gid, p)
                if best is None or key < best[0]:
                    best = (key, gid, p)
        if best is None:
            raise PlanningError(f"no {size}/7 instance of {service} left to delete")
        return best[1], best[2]

    def delete(self, service: str, size: int):
        gid, p = self.victim(service, size)
        self.emit(Action("delete", gid, p, service, self.st.gpus[gid].assigned[p][1]))

    # -- phases --------------------------------------------------------------

    def exchange(self, queues: dict[str, list]):
        pending = [s for s in queues if queues[s]]
        tried: set[str] = set()
        while pending:
            progress = False
            for sid in pending:
                q = queues[sid]
                while q:
                    kind, size, removed = q[0]
                    if kind == "create":
                        where = self.spot(sid, size)
                        if where is None:
                            break
                        self.put(*where, sid, self.new_batch[(sid, size)])
                    for r in removed:
                        self.delete(sid, r)
                    q.pop(0)
                    progress = True
            pending = [s for s in pending if queues[s]]
            if progress:
                tried.clear()
            elif pending and not self.consolidate(tried):
                raise _NoRoom(f"no room to create instances for {pending}")

    def fill_once(self) -> bool:
        moved = False
        for gid, p, s, _ in self.unfilled():
            if self.fixed(gid, p) or self.prep(gid, p) is None:
                continue
            src = self.source(s, p.size, self.st.gpus[gid].machine, exclude=(gid, p))
            if src is not None:
                self.put(gid, p, s, 0, source=src)
                moved = True
        return moved

    def source(self, service: str, size: int, machine: str, exclude=None):
        best = None
        for gid, g in self.st.gpus.items():
            for p, (s, _) in g.assigned.items():
                if s != service or p.size != size or self.fixed(gid, p) or (gid, p) == exclude:
                    continue
                key = (g.machine != machine, gid in self.targets, gid, p)
                if best is None or key < best[0]:
                    best = (key, gid, p)
        return None if best is None else (best[1], best[2])

    def evict(self, gid: str) -> bool:
        """Move every misplaced instance off ``gid``; all or nothing."""
        snapshot = (self.st.copy(), list(self.actions))
        for p in self.misplaced(gid):
            s, _ = self.st.gpus[gid].assigned[p]
            where = self.spot(s, p.size, avoid=gid, machine=self.st.gpus[gid].machine)
            if where is None:
                self.st, self.actions = snapshot[0], snapshot[1]
                return False
            self.put(*where, s, 0, source=(gid, p))
        return True

    def consolidate(self, tried: set) -> bool:
        if self.fill_once():
            return True
        cands = [g for g in self.st.gpus if self.misplaced(g) and g not in tried]
        cands.sort(key=lambda g: (g not in self.targets, sum(p.size for p in self.misplaced(g)), g))
        for gid in cands:
            tried.add(gid)
            if self.evict(gid):
                return True
        return False

    def compact(self):
        tried: set[str] = set()
        while self.unfilled():
            if self.fill_once():
                tried.clear()
                continue
            blocked = [gid for gid in dict.fromkeys(g for g, *_ in self.unfilled()) if self.misplaced(gid)]
            for gid in blocked:
                if gid in tried:
                    continue
                tried.add(gid)
                if self.evict(gid):
                    break
            else:
                raise _NoRoom("compaction deadlocked with no spare room to park blockers")


def _layout_targets(state: ClusterState, new: Deployment, rules: PartitionRuleSet):
    """Assign new GPUs to physical GPUs, maximising slices already in place."""
    phys = list(state.gpus)
    jobs = [g for g in new.gpus if g.instances]
    if not jobs:
        return {}
    layouts = {}
    weight = np.zeros((len(phys), len(jobs)))
    choice = {}
    for j, cfg in enumerate(jobs):
        if cfg.sizes not in layouts:
            layouts[cfg.sizes] = legal_layouts(cfg.sizes, rules)
            if not layouts[cfg.sizes]:
                raise PlanningError(f"target GPU layout {cfg.sizes} is not a legal partition")
        want = Counter((a.service_id, a.placement.size) for a in cfg.instances)
        for i, gid in enumerate(phys):
            held = state.gpus[gid].assigned
            best, best_w = None, -1.0
            for L in layouts[cfg.sizes]:
                got = Counter((held[p][0], p.size) for p in L if p in held)
                w = sum(k * min(c, want[(s, k)]) for (s, k), c in got.items())
                if w > best_w:
                    best, best_w = L, w
            weight[i, j] = best_w
            choice[i, j] = best
    rows, cols = linear_sum_assignment(weight, maximize=True)
    targets = {}
    for i, j in zip(rows, cols):
        gid = phys[i]
        L = choice[i, j]
        cfg = jobs[j]
        held = state.gpus[gid].assigned
        left = Counter((a.service_id, a.placement.size) for a in cfg.instances)
        batch = {(a.service_id, a.placement.size): a.batch for a in cfg.instances}
        slots: dict[Placement, tuple[str, int]] = {}
        for p in sorted(L):
            if p in held and left[(held[p][0], p.size)] > 0:
                s = held[p][0]
                slots[p] = (s, batch[(s, p.size)])
                left[(s, p.size)] -= 1
        for p in sorted(L):
            if p in slots:
                continue
            s = next(s for (s, k), c in sorted(left.items()) if k == p.size and c > 0)
            slots[p] = (s, batch[(s, p.size)])
            left[(s, p.size)] -= 1
        targets[gid] = slots
    return targets


def _check_inputs(old: Deployment, new: Deployment, old_wl: Workload, new_wl: Workload):
    for s in old_wl.services:
        if s.service_id in new_wl.index:
            m = new_wl.services[new_wl.index[s.service_id]].model_name
            if m != s.model_name:
                raise PlanningError(f"service {s.service_id} changes model from {s.model_name} to {m}; "
                                    "retire it and add a new service id instead")
    for label, dep, wl in (("old", old, old_wl), ("new", new, new_wl)):
        for g in dep.gpus:
            for a in g.instances:
                if a.service_id not in wl.index:
                    raise PlanningError(f"service {a.service_id} is in the {label} deployment but not its SLOs")
        if not is_satisfied(wl.completion(dep)):
            short = [wl.ids[i] for i in np.flatnonzero(wl.completion(dep) < 1 - 1e-9)]
            raise PlanningError(f"{label} deployment does not satisfy services {short}")


def _attempt(old, new, extra, old_wl, new_wl, gpus_per_machine, rules):
    pool_extra = max(len(old), len(new)) - len(old) + extra
    state = ClusterState.from_deployment(old, spare=pool_extra, gpus_per_machine=gpus_per_machine)
    initial = state.copy()
    targets = _layout_targets(state, new, rules)
    new_batch = {(a.service_id, a.placement.size): a.batch for g in new.gpus for a in g.instances}
    queues = {}
    net = {}
    for d in compute_deltas(old, new):
        if d.empty:
            continue
        wl = new_wl if d.service_id in new_wl.index else old_wl
        slo = wl.services[wl.index[d.service_id]]
        pairs, leftovers = pair_exchanges(d, wl.profiles[slo.model_name], slo)
        queues[d.service_id] = [("create", size, took) for size, took in pairs]
        if leftovers:
            queues[d.service_id].append(("delete", 0, leftovers))
        net[d.service_id] = sum(d.added) - sum(d.removed)
    # shrinking services free room for the growing ones
    queues = {s: queues[s] for s in sorted(queues, key=lambda s: (net[s], s))}
    planner = _Planner(state, targets, rules, new_batch)
    planner.exchange(queues)
    planner.compact()
    if planner.st.signature() != deployment_signature(new):
        raise PlanningError("internal error: compaction did not reach the new deployment")
    return TransitionPlan(stage_actions(planner.actions), extra, initial, planner.actions)


def plan_transition(old: Deployment, new: Deployment, extra_gpu_budget: int = 0, *,
                    old_workload: Workload, new_workload: Workload, gpus_per_machine: int = 8,
                    rules: PartitionRuleSet = DEFAULT_RULES) -> TransitionPlan:
    """Staged plan moving the cluster from ``old`` to ``new`` with at most ``extra_gpu_budget`` spare GPUs.

    Raises PlanningError naming the smallest budget that works when the given one does not.
    """
    if extra_gpu_budget < 0:
        raise ValueError("extra_gpu_budget must be >= 0")
    _check_inputs(old, new, old_workload, new_workload)
    args = (old_workload, new_workload, gpus_per_machine, rules)
    try:
        return _attempt(old, new, extra_gpu_budget, *args)
    except _NoRoom as exc:
        reason = str(exc)
    lo, hi = extra_gpu_budget + 1, extra_gpu_budget + max(len(new), 1)
    while True:
        try:
            _attempt(old, new, hi, *args)
            break
        except _NoRoom:
            if hi > extra_gpu_budget + 4 * (len(old) + len(new)) + 8:
                raise PlanningError(f"{reason}; no budget up to {hi} extra GPUs works") from None
            lo, hi = hi + 1, 2 * hi
    while lo < hi:
        mid = (lo + hi) // 2
        try:
            _attempt(old, new, mid, *args)
            hi = mid
        except _NoRoom:
            lo = mid + 1
    raise PlanningError(f"{reason}; needs extra_gpu_budget >= {hi}")


def guard_for(old_workload: Workload, new_workload: Workload) -> Guard:
    return Guard.from_workloads(old_workload, new_workload)
