import numpy as np
import pytest
from hypothesis import given, strategies as st

from migplan.fixtures import linear_test_profile
from migplan.model import (
    Assignment, ConfigurationError, Deployment, DimensionError, GpuConfig, ModelProfile, Placement, ServiceSpec,
    Workload, apply_utility, is_satisfied, select_batch, slack, utility_of,
)


def test_single_small_instance_utility_is_five_percent():
    p = {"m": ModelProfile("m", {(1, 1): (50.0, 10.0)})}
    svc = [ServiceSpec("a", "m", 1000.0, 100.0)]
    u = utility_of(GpuConfig.build([(1, 0, "a", 1)]), svc, p)
    assert u[0] == 0.05


def test_seven_small_instances_give_thirty_five_percent():
    p = {"m": ModelProfile("m", {(1, 1): (50.0, 10.0)})}
    svc = [ServiceSpec("a", "m", 1000.0, 100.0)]
    cfg = GpuConfig.build([(1, k, "a", 1) for k in range(7)])
    assert utility_of(cfg, svc, p)[0] == pytest.approx(0.35, abs=0)


def test_mixed_config_splits_utility_per_service():
    p = {"m": linear_test_profile("m")}
    svcs = [ServiceSpec("a", "m", 100.0, 50.0), ServiceSpec("b", "m", 240.0, 50.0)]
    cfg = GpuConfig.build([(4, 0, "b", 1), (2, 4, "a", 1), (1, 6, "a", 1)])
    assert utility_of(cfg, svcs, p).tolist() == [1.3, 0.5]


def test_unknown_service_in_config_is_rejected():
    p = {"m": linear_test_profile("m")}
    with pytest.raises(ConfigurationError):
        utility_of(GpuConfig.build([(7, 0, "ghost", 1)]), [ServiceSpec("a", "m", 1.0, 50.0)], p)


def test_apply_utility_checks_lengths():
    with pytest.raises(DimensionError):
        apply_utility([0.1, 0.2], [0.1])
    assert apply_utility([0.5, 0.2], [0.6, 0.0]).tolist() == [1.1, 0.2]


def test_satisfaction_and_slack():
    assert is_satisfied([1.0, 1.2])
    assert not is_satisfied([1.0, 0.99])
    assert is_satisfied([])
    assert slack(np.array([1.5, 0.5, 1.0])) == 0.5


def test_profile_rejects_latency_that_falls_with_batch():
    with pytest.raises(ConfigurationError):
        ModelProfile("m", {(1, 1): (10.0, 20.0), (1, 8): (40.0, 10.0)})


def test_profile_rejects_unknown_size_and_bad_values():
    with pytest.raises(ConfigurationError):
        ModelProfile("m", {(5, 1): (10.0, 20.0)})
    with pytest.raises(ConfigurationError):
        ModelProfile("m", {(1, 1): (0.0, 20.0)})


def test_select_batch_takes_largest_within_ceiling(profiles):
    svc = ServiceSpec("a", "bert-base", 100.0, 40.0)
    prof = profiles["bert-base"]
    b = select_batch(svc, prof, 7)
    assert prof.latency(7, b) <= 40.0
    bigger = [x for x in prof.batches(7) if x > b]
    assert all(prof.latency(7, x) > 40.0 for x in bigger)


def test_workload_rejects_unschedulable_and_unknown(profiles):
    with pytest.raises(ConfigurationError, match="unknown model"):
        Workload([ServiceSpec("a", "nope", 10.0, 100.0)], profiles)
    with pytest.raises(ConfigurationError, match="no \\(size, batch\\)"):
        Workload([ServiceSpec("a", "xlnet-large", 10.0, 1.0)], profiles)


def test_workload_orders_services_by_id(profiles):
    wl = Workload([ServiceSpec("b", "cnn-small", 10.0, 100.0), ServiceSpec("a", "cnn-small", 10.0, 100.0)], profiles)
    assert wl.ids == ["a", "b"]


def test_placement_bounds():
    with pytest.raises(ConfigurationError):
        Placement(7, 1)
    with pytest.raises(ConfigurationError):
        Placement(2, 9)
    assert Placement(3, 4).overlaps(Placement(1, 6))
    assert not Placement(3, 0).overlaps(Placement(1, 3))


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.sampled_from([1, 2, 3])), min_size=1, max_size=12),
       st.randoms(use_true_random=False))
def test_completion_is_independent_of_instance_arrangement(items, rnd):
    p = {"m": linear_test_profile("m")}
    wl = Workload([ServiceSpec(s, "m", 333.0, 50.0) for s in "abc"], p)
    insts = [Assignment(Placement(size, 0), s, 1) for s, size in items]
    shuffled = list(insts)
    rnd.shuffle(shuffled)
    a = wl.completion([GpuConfig((x,)) for x in insts])
    b = wl.completion([GpuConfig((x,)) for x in shuffled])
    assert a.tobytes() == b.tobytes()


def test_deployment_ids_default_and_uniqueness():
    d = Deployment((GpuConfig(), GpuConfig()))
    assert d.gpu_ids == ("gpu-000", "gpu-001")
    with pytest.raises(ConfigurationError):
        Deployment((GpuConfig(), GpuConfig()), ("x", "x"))
