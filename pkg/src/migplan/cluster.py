"""Simulated MIG cluster: GPU states, transition actions and a stage-synchronous executor.

A GPU keeps its current partition, which may contain idle GPU instances, plus
the service/batch served on each occupied placement. Deleting an instance
leaves its placement idle; only a repartition removes idle placements.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .model import EPS, Deployment, ModelProfile, Placement, Workload
from .rules import DEFAULT_RULES, PartitionRuleSet, is_legal_partition, rule_reconf

KINDS = ("create", "delete", "migrate", "repartition")


class ExecutionError(RuntimeError):
    """An action's precondition does not hold in the current cluster state."""


@dataclass(frozen=True)
class Action:
    kind: str
    gpu: str
    placement: Placement | None = None
    service: str | None = None
    batch: int | None = None
    target_gpu: str | None = None
    target_placement: Placement | None = None
    remove: tuple[Placement, ...] = ()
    add: tuple[Placement, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "repartition":
            object.__setattr__(self, "remove", tuple(sorted(self.remove)))
            object.__setattr__(self, "add", tuple(sorted(self.add)))
        elif self.placement is None:
            raise ValueError(f"{self.kind} needs a placement")
        if self.kind == "migrate" and (self.target_gpu is None or self.target_placement is None):
            raise ValueError("migrate needs a target gpu and placement")

    @property
    def gpus(self) -> frozenset[str]:
        return frozenset(g for g in (self.gpu, self.target_gpu) if g is not None)

    def __str__(self):
        if self.kind == "repartition":
            rm = ",".join(map(str, self.remove))
            ad = ",".join(map(str, self.add))
            return f"repartition {self.gpu} -[{rm}] +[{ad}]"
        s = f"{self.kind} {self.service}/b{self.batch} {self.gpu}:{self.placement}"
        if self.kind == "migrate":
            s += f" -> {self.target_gpu}:{self.target_placement}"
        return s


@dataclass
class GpuState:
    gpu_id: str
    machine: str
    partition: set = field(default_factory=set)
    assigned: dict = field(default_factory=dict)  # Placement -> (service_id, batch)

    @property
    def idle(self) -> set:
        return self.partition - set(self.assigned)

    def used_slices(self) -> int:
        return sum(p.size for p in self.assigned)

    def copy(self) -> "GpuState":
        return GpuState(self.gpu_id, self.machine, set(self.partition), dict(self.assigned))


@dataclass
class ClusterState:
    gpus: dict  # gpu_id -> GpuState, in machine order
    clock_ms: float = 0.0

    @classmethod
    def from_deployment(cls, deployment: Deployment, spare: int = 0, gpus_per_machine: int = 8,
                        spare_prefix: str = "spare") -> "ClusterState":
        """Old GPUs fill machines in order; spares top up the last machine, then open new ones."""
        if gpus_per_machine < 1:
            raise ValueError("gpus_per_machine must be >= 1")
        gpus: dict[str, GpuState] = {}
        ids = list(deployment.gpu_ids)
        taken = set(ids)
        k = 0
        for _ in range(spare):
            while f"{spare_prefix}-{k:03d}" in taken:
                k += 1
            ids.append(f"{spare_prefix}-{k:03d}")
            taken.add(ids[-1])
        for n, gid in enumerate(ids):
            gpus[gid] = GpuState(gid, f"m{n // gpus_per_machine:03d}")
        for gid, cfg in zip(deployment.gpu_ids, deployment.gpus):
            g = gpus[gid]
            for a in cfg.instances:
                g.partition.add(a.placement)
                g.assigned[a.placement] = (a.service_id, a.batch)
        return cls(gpus)

    def copy(self) -> "ClusterState":
        return ClusterState({k: g.copy() for k, g in self.gpus.items()}, self.clock_ms)

    @property
    def machines(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for g in self.gpus.values():
            out.setdefault(g.machine, []).append(g.gpu_id)
        return out

    def gpus_in_use(self) -> int:
        return sum(1 for g in self.gpus.values() if g.assigned)

    def instances(self) -> Counter:
        """(service, size) -> count over the cluster."""
        return Counter((s, p.size) for g in self.gpus.values() for p, (s, _) in g.assigned.items())

    def signature(self) -> Counter:
        """Multiset of per-GPU (size, service) multisets over GPUs that serve anything."""
        return Counter(
            tuple(sorted(((p.size, s) for p, (s, _) in g.assigned.items()), reverse=True))
            for g in self.gpus.values() if g.assigned
        )

    def capacity(self, profiles: Mapping[str, ModelProfile], exclude: Iterable = ()) -> dict[str, float]:
        """Served rps per service; ``exclude`` holds (gpu_id, placement) pairs that are not live."""
        skip = set(exclude)
        cap: dict[str, float] = {}
        for g in self.gpus.values():
            for p, (s, b) in g.assigned.items():
                if (g.gpu_id, p) in skip or s not in profiles:
                    continue
                cap[s] = cap.get(s, 0.0) + profiles[s].throughput(p.size, b)
        return cap

    def legal(self, rules: PartitionRuleSet = DEFAULT_RULES) -> bool:
        return all(is_legal_partition(g.partition, rules) for g in self.gpus.values())


def deployment_signature(deployment: Deployment) -> Counter:
    return Counter(
        tuple(sorted(((a.placement.size, a.service_id) for a in g.instances), reverse=True))
        for g in deployment.gpus if g.instances
    )


def reaches(state: ClusterState, deployment: Deployment) -> bool:
    """Per-GPU size multisets and per-service instances match ``deployment``."""
    return state.signature() == deployment_signature(deployment)


def _gpu(state: ClusterState, gid: str, action: Action) -> GpuState:
    try:
        return state.gpus[gid]
    except KeyError:
        raise ExecutionError(f"{action}: no GPU {gid!r} in cluster") from None


def _check_creatable(g: GpuState, p: Placement, action: Action, rules: PartitionRuleSet, extra=()):
    if p in g.assigned:
        raise ExecutionError(f"{action}: {g.gpu_id}:{p} already serves {g.assigned[p][0]}")
    if p in g.partition:
        return
    if not is_legal_partition(set(g.partition) | {p} | set(extra), rules):
        raise ExecutionError(
            f"{action}: {p} cannot be carved on {g.gpu_id} holding {{{', '.join(map(str, sorted(g.partition)))}}}"
        )


def apply_in_place(state: ClusterState, action: Action, rules: PartitionRuleSet = DEFAULT_RULES) -> None:
    a = action
    g = _gpu(state, a.gpu, a)
    if a.kind == "repartition":
        live = set(a.remove) & set(g.assigned)
        if live:
            raise ExecutionError(f"{a}: would destroy serving instances {sorted(map(str, live))}")
        if not rule_reconf(a.remove, a.add, g.partition, rules):
            raise ExecutionError(f"{a}: rule_reconf rejects the swap on {g.gpu_id}")
        g.partition = (g.partition - set(a.remove)) | set(a.add)
        return
    if a.kind == "create":
        if a.batch is None or a.batch < 1 or not a.service:
            raise ExecutionError(f"{a}: create needs a service and a positive batch")
        _check_creatable(g, a.placement, a, rules)
        g.partition.add(a.placement)
        g.assigned[a.placement] = (a.service, a.batch)
        return
    held = g.assigned.get(a.placement)
    if held is None:
        raise ExecutionError(f"{a}: nothing serves {g.gpu_id}:{a.placement}")
    if a.service is not None and held[0] != a.service:
        raise ExecutionError(f"{a}: {g.gpu_id}:{a.placement} serves {held[0]}, not {a.service}")
    if a.kind == "delete":
        del g.assigned[a.placement]
        return
    # migrate: replica comes up next to the source, then the source goes away
    t = _gpu(state, a.target_gpu, a)
    if t is g and a.target_placement == a.placement:
        raise ExecutionError(f"{a}: source and target coincide")
    if a.target_placement.size != a.placement.size:
        raise ExecutionError(f"{a}: migration cannot change the instance size")
    _check_creatable(t, a.target_placement, a, rules)
    t.partition.add(a.target_placement)
    t.assigned[a.target_placement] = held
    del g.assigned[a.placement]


def apply_action(state: ClusterState, action: Action, rules: PartitionRuleSet = DEFAULT_RULES) -> ClusterState:
    """Successor state; the input is left untouched."""
    nxt = state.copy()
    apply_in_place(nxt, action, rules)
    return nxt


@dataclass(frozen=True)
class ActionCostModel:
    """Action durations in ms. Defaults are configuration, not measurements."""

    create: float = 30000.0
    delete: float = 5000.0
    migrate_local: float = 30000.0
    migrate_remote: float = 60000.0
    repartition: float = 10000.0

    def __post_init__(self):
        for name in ("create", "delete", "migrate_local", "migrate_remote", "repartition"):
            if not getattr(self, name) > 0:
                raise ValueError(f"duration for {name} must be > 0")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ActionCostModel":
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("create", "delete", "migrate_local", "migrate_remote", "repartition")}

    def kind(self, action: Action, state: ClusterState) -> str:
        if action.kind != "migrate":
            return action.kind
        local = state.gpus[action.gpu].machine == state.gpus[action.target_gpu].machine
        return "migrate_local" if local else "migrate_remote"

    def duration(self, action: Action, state: ClusterState) -> float:
        return getattr(self, self.kind(action, state))


@dataclass
class Guard:
    """Per-service floor min(old_req, new_req); a side where the service is absent counts as 0."""

    floor: dict[str, float]
    profiles: dict[str, ModelProfile]

    @classmethod
    def from_workloads(cls, old: Workload | None, new: Workload | None) -> "Guard":
        reqs: dict[str, list[float]] = {}
        profiles: dict[str, ModelProfile] = {}
        for wl in (old, new):
            if wl is None:
                continue
            for svc in wl.services:
                reqs.setdefault(svc.service_id, []).append(svc.required_throughput)
                profiles.setdefault(svc.service_id, wl.profiles[svc.model_name])
        floor = {sid: (min(r) if len(r) == 2 else 0.0) for sid, r in reqs.items()}
        return cls(floor, profiles)

    def violations(self, cap: Mapping[str, float]) -> list[tuple[str, float, float]]:
        out = []
        for sid, need in sorted(self.floor.items()):
            have = cap.get(sid, 0.0)
            if have < need * (1.0 - EPS):
                out.append((sid, have, need))
        return out


@dataclass
class SimulationReport:
    wall_ms: float = 0.0
    actions: dict = field(default_factory=lambda: dict.fromkeys(
        ("create", "delete", "migrate_local", "migrate_remote", "repartition"), 0))
    peak_gpus: int = 0
    safe: bool = True
    violations: list = field(default_factory=list)
    reconf_checks: int = 0
    final_state: ClusterState | None = None

    def to_dict(self) -> dict:
        return {
            "wall_ms": self.wall_ms,
            "actions": dict(self.actions),
            "peak_gpus": self.peak_gpus,
            "safe": self.safe,
            "violations": list(self.violations),
        }


def check_stage(stage: list[Action]) -> None:
    seen: set[str] = set()
    for a in stage:
        if a.gpus & seen:
            raise ExecutionError(f"{a}: shares a GPU with another action in its stage")
        seen |= a.gpus


def run_plan(state: ClusterState, plan, costs: ActionCostModel | None = None, guard: Guard | None = None,
             rules: PartitionRuleSet = DEFAULT_RULES) -> SimulationReport:
    """Execute stages with barriers; inside a stage actions finish shortest-first.

    An instance being deleted stops serving when its stage starts. The guard is
    checked after every completion. Precondition failures raise ExecutionError.
    """
    costs = costs or ActionCostModel()
    stages = plan.stages if hasattr(plan, "stages") else plan
    st = state.copy()
    rep = SimulationReport()
    rep.peak_gpus = st.gpus_in_use()
    for sno, stage in enumerate(stages):
        check_stage(stage)
        timed = sorted(((costs.duration(a, st), k, a) for k, a in enumerate(stage)), key=lambda x: (x[0], x[1]))
        dying = {(a.gpu, a.placement) for a in stage if a.kind == "delete"}
        start = st.clock_ms
        for dur, k, a in timed:
            kind = costs.kind(a, st)
            if a.kind == "repartition":
                rep.reconf_checks += 1
            apply_in_place(st, a, rules)
            if a.kind == "delete":
                dying.discard((a.gpu, a.placement))
            st.clock_ms = start + dur
            rep.actions[kind] += 1
            rep.peak_gpus = max(rep.peak_gpus, st.gpus_in_use())
            if guard is not None:
                for sid, have, need in guard.violations(st.capacity(guard.profiles, dying)):
                    rep.safe = False
                    rep.violations.append({"stage": sno, "action": k, "kind": a.kind, "service": sid,
                                           "capacity_rps": have, "required_rps": need, "t_ms": st.clock_ms})
        st.clock_ms = start + (timed[-1][0] if timed else 0.0)
    rep.wall_ms = st.clock_ms - state.clock_ms
    rep.final_state = st
    return rep
