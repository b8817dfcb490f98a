import numpy as np
import pytest
from hypothesis import given, strategies as st

from migplan.cluster import Guard, reaches, run_plan
from migplan.greedy import PlanningError, fast_algo
from migplan.mcts import mcts_solve
from migplan.model import Deployment, GpuConfig, ModelProfile, ServiceSpec, Workload
from migplan.rules import ConfigSpace, rule_reconf
from migplan.transition import ServiceDelta, compute_deltas, pair_exchanges, plan_transition, stage_actions

from conftest import random_pair


def _dep(*gpus):
    return Deployment(tuple(GpuConfig.build(g) for g in gpus))


def test_compute_deltas_examples():
    old = _dep([(2, 0, "a", 1), (2, 2, "a", 1)])
    new = _dep([(4, 0, "a", 1)])
    assert compute_deltas(old, new) == [ServiceDelta("a", (4,), (2, 2))]
    assert all(d.empty for d in compute_deltas(old, old))
    (d,) = [d for d in compute_deltas(old, _dep([(2, 0, "a", 1), (2, 2, "a", 1), (1, 4, "b", 1)])) if d.service_id == "b"]
    assert d.added == (1,) and d.removed == ()


def _linear(name="m"):
    return ModelProfile(name, {(s, 1): (t, 20.0) for s, t in {1: 50.0, 2: 80.0, 3: 105.0, 4: 120.0, 7: 140.0}.items()})


def test_pairing_examples():
    prof, slo = _linear(), ServiceSpec("a", "m", 100.0, 50.0)
    assert pair_exchanges(ServiceDelta("a", (4,), (2,)), prof, slo) == ([(4, [2])], [])
    assert pair_exchanges(ServiceDelta("a", (1,), (7,)), prof, slo) == ([(1, [])], [7])
    assert pair_exchanges(ServiceDelta("a"), prof, slo) == ([], [])
    pairs, left = pair_exchanges(ServiceDelta("a", (7, 2), (3, 2, 1, 1)), prof, slo)
    assert pairs == [(7, [3]), (2, [2])] and left == [1, 1]


def test_identical_deployments_need_no_actions(day):
    dep = Deployment(tuple(fast_algo(day.zeros(), ConfigSpace(day))))
    plan = plan_transition(dep, dep, 0, old_workload=day, new_workload=day)
    assert plan.stages == []


def test_shrink_only_plan_has_no_creations(day, night):
    d = Deployment(tuple(fast_algo(day.zeros(), ConfigSpace(day))))
    # keep a subset of the day GPUs, which still covers the night demand
    keep = []
    for g in d.gpus:
        keep.append(g)
        if (night.completion(keep) >= 1).all():
            break
    n = Deployment(tuple(keep))
    plan = plan_transition(d, n, 0, old_workload=day, new_workload=night)
    kinds = plan.kinds()
    assert kinds["create"] == 0 and kinds["delete"] > 0
    rep = run_plan(plan.initial, plan, guard=Guard.from_workloads(day, night))
    assert rep.safe and reaches(rep.final_state, n)


def test_stages_are_gpu_disjoint(day, night):
    d = Deployment(tuple(fast_algo(day.zeros(), ConfigSpace(day))))
    n = Deployment(tuple(mcts_solve(night.zeros(), ConfigSpace(night), iterations=30, rng=1)))
    plan = plan_transition(n, d, 2, old_workload=night, new_workload=day)
    for stage in plan.stages:
        used = [g for a in stage for g in a.gpus]
        assert len(used) == len(set(used))


def test_stage_actions_keeps_create_before_delete():
    from migplan.cluster import Action
    from migplan.model import Placement
    acts = [Action("create", "g1", Placement(3, 0), "a", 1), Action("delete", "g0", Placement(1, 0), "a", 1),
            Action("create", "g2", Placement(1, 0), "b", 1)]
    stages = stage_actions(acts)
    assert stages == [[acts[0], acts[2]], [acts[1]]]


def test_unknown_service_is_named(day, night):
    d = Deployment(tuple(fast_algo(day.zeros(), ConfigSpace(day))))
    bogus = Deployment((GpuConfig.build([(7, 0, "svc-ghost", 32)]),))
    with pytest.raises(PlanningError, match="svc-ghost"):
        plan_transition(d, bogus, 0, old_workload=day, new_workload=night)


def test_insufficient_budget_reports_minimum(toy):
    wl = toy(120.0)
    old = _dep([(7, 0, "svc-0", 1)])
    new = _dep([(4, 0, "svc-0", 1), (2, 4, "svc-0", 1), (1, 6, "svc-0", 1)])
    with pytest.raises(PlanningError, match=r"needs extra_gpu_budget >= 1"):
        plan_transition(old, new, 0, old_workload=wl, new_workload=wl)
    plan = plan_transition(old, new, 1, old_workload=wl, new_workload=wl)
    rep = run_plan(plan.initial, plan, guard=Guard.from_workloads(wl, wl))
    assert rep.safe and reaches(rep.final_state, new) and rep.peak_gpus == 2


def test_model_change_is_rejected(toy):
    a = toy(100.0)
    b = Workload([ServiceSpec("svc-0", "other", 100.0, 100.0)], {**a.profiles, "other": _linear("other")})
    dep = _dep([(3, 0, "svc-0", 1)])
    with pytest.raises(PlanningError, match="changes model"):
        plan_transition(dep, dep, 0, old_workload=a, new_workload=b)


@given(st.integers(0, 2**31 - 1))
def test_random_transitions_are_safe_and_reach_target(seed):
    from migplan.fixtures import fixture_profiles
    P = fixture_profiles()
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 4, P)
    A = Deployment(tuple(fast_algo(a.zeros(), ConfigSpace(a))))
    B = Deployment(tuple(mcts_solve(b.zeros(), ConfigSpace(b), iterations=10, rng=seed)))
    try:
        plan = plan_transition(A, B, 1, old_workload=a, new_workload=b)
    except PlanningError as exc:
        plan = plan_transition(A, B, int(str(exc).rsplit(">=", 1)[1]), old_workload=a, new_workload=b)
    rep = run_plan(plan.initial, plan, guard=Guard.from_workloads(a, b))
    assert rep.safe, rep.violations
    assert reaches(rep.final_state, B)
    assert rep.peak_gpus <= max(len(A), len(B)) + plan.extra_gpu_budget
    # replay and check every repartition against the state it runs on
    from migplan.cluster import apply_in_place
    st_ = plan.initial.copy()
    for stage in plan.stages:
        for act in stage:
            if act.kind == "repartition":
                assert rule_reconf(act.remove, act.add, st_.gpus[act.gpu].partition)
            apply_in_place(st_, act)
