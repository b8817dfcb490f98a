import pytest

from migplan.bench import (
    BaselineError, OracleBudgetError, baseline, brute_force_optimum, cost_report, gen_workload, lower_bound, tiny_suite,
)
from migplan.greedy import fast_algo
from migplan.model import ServiceSpec, Workload, is_satisfied
from migplan.rules import ConfigSpace, is_legal_partition


@pytest.mark.parametrize("kind", ["7of7", "7x1", "mix"])
def test_baselines_satisfy_and_are_legal(mixed24, kind):
    dep = baseline(kind, mixed24)
    assert is_satisfied(mixed24.completion(dep))
    assert all(is_legal_partition(g.partition) for g in dep.gpus)


def test_full_gpu_baseline_counts(toy):
    wl = toy(350.0)
    assert len(baseline("7of7", wl)) == 3   # 140 rps per GPU
    assert len(baseline("7x1", wl)) == 1    # seven 50 rps instances
    assert len(baseline("mix", wl)) == 2    # 120 + 80 + 50 per GPU


def test_small_instance_baseline_rejects_infeasible():
    from migplan.model import ModelProfile
    prof = ModelProfile("big", {(s, 1): (10.0 * s, 200.0 / s) for s in (1, 2, 3, 4, 7)})
    wl = Workload([ServiceSpec("a", "big", 100.0, 30.0)], {"big": prof})
    with pytest.raises(BaselineError):
        baseline("7x1", wl)


def test_unknown_baseline():
    with pytest.raises(ValueError):
        baseline("nope", None)


def test_lower_bound_below_greedy(mixed24, day):
    for wl in (mixed24, day):
        assert lower_bound(wl) <= len(fast_algo(wl.zeros(), ConfigSpace(wl)))


def test_lower_bound_uses_best_slice_efficiency(toy):
    assert lower_bound(toy(350.0)) == 1
    assert lower_bound(toy(351.0)) == 2


def test_gen_workload_is_seeded_and_positive():
    a = gen_workload(40, "normal", {"mu": 100.0, "sigma": 200.0}, models=["m1", "m2"], seed=5)
    b = gen_workload(40, "normal", {"mu": 100.0, "sigma": 200.0}, models=["m1", "m2"], seed=5)
    assert a.services == b.services
    assert all(s.required_throughput > 0 for s in a.services)
    assert [s.model_name for s in a.services[:3]] == ["m1", "m2", "m1"]
    assert len(gen_workload(1, models=["m"], seed=0).services) == 1
    with pytest.raises(ValueError):
        gen_workload(0, models=["m"])


def test_oracle_examples(toy):
    dep = brute_force_optimum(toy(350.0, latency=50.0))
    assert len(dep) == 1 and dep.gpus[0].sizes == (1,) * 7
    wl = Workload([], {})
    assert len(brute_force_optimum(wl)) == 0


def test_oracle_cap_and_budget(toy):
    assert brute_force_optimum(toy(2000.0), cap=2) is None
    with pytest.raises(OracleBudgetError):
        brute_force_optimum(toy(300.0, n=3), cap=3, node_budget=3)


def test_oracle_lower_than_heuristics_on_tiny_suite():
    for wl, opt in tiny_suite(6, seed=99):
        assert is_satisfied(wl.completion(opt))
        assert len(opt) <= len(fast_algo(wl.zeros(), ConfigSpace(wl)))
        assert len(opt) <= 3


def test_cost_report_normalizes():
    rows = cost_report({"a": 10, "b": 10}, {"a": 2.0, "b": 2.0})
    assert [r["normalized"] for r in rows] == [1.0, 1.0]
    rows = cost_report({"x": 10, "y": 8}, {"x": 1.0, "y": 1.0})
    assert rows[0]["normalized"] == 1.25
    with pytest.raises(ValueError):
        cost_report({"x": 1}, {})
    with pytest.raises(ValueError):
        cost_report({"x": 1}, {"x": 0.0})
