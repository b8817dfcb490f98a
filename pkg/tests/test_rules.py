import time

import pytest
from hypothesis import given, strategies as st

from migplan.model import ServiceSpec, Workload, Placement
from migplan.fixtures import linear_test_profile
from migplan.rules import (
    DEFAULT_RULES, ConfigSpace, PartitionRuleSet, can_extend, enumerate_configs, enumerate_maximal_partitions,
    is_legal_partition, legal_layouts, rule_reconf, templates_for,
)


def P(*pairs):
    return {Placement(s, p) for s, p in pairs}


def test_default_rules_give_eighteen_maximal_partitions():
    t = time.perf_counter()
    parts = enumerate_maximal_partitions()
    assert len(parts) == 18
    assert time.perf_counter() - t < 1.0


def test_lifting_the_exclusion_adds_four_three():
    rules = PartitionRuleSet(hard_exclusions=frozenset())
    parts = enumerate_maximal_partitions(rules)
    assert len(parts) == 19
    assert frozenset(P((4, 0), (3, 4))) in {p.placements for p in parts}


def test_partition_table_contents():
    parts = {p.placements for p in enumerate_maximal_partitions()}
    assert frozenset(P((3, 0), (3, 4))) in parts
    assert frozenset(P((4, 0), (2, 4), (1, 6))) in parts
    sizes = [sorted(p.size for p in ps) for ps in parts]
    assert not any(3 in s and 4 in s for s in sizes)
    assert [1, 3, 3] not in sizes


def test_every_maximal_partition_is_legal_and_maximal():
    for part in enumerate_maximal_partitions():
        assert is_legal_partition(part.placements)
        for q in DEFAULT_RULES.all_placements():
            if q not in part.placements:
                assert not is_legal_partition(part.placements | {q})


def test_size_multiset_count_is_eleven():
    assert len(templates_for()) == 11


def test_illegal_partitions():
    assert not is_legal_partition(P((4, 0), (3, 4)))       # exclusion
    assert not is_legal_partition(P((3, 0), (3, 4), (1, 3)))  # memory: 4 + 4 + 1 > 8
    assert not is_legal_partition(P((2, 1)))                # bad start
    assert not is_legal_partition(P((2, 0), (1, 1)))        # overlap
    assert is_legal_partition(set())


def test_rule_reconf_examples():
    ones = P(*[(1, k) for k in range(7)])
    assert rule_reconf(P((1, 0), (1, 1)), P((2, 0)), ones)
    assert not rule_reconf(P((1, 1), (1, 2)), P((2, 1)), ones)
    assert not rule_reconf(P((1, 5)), P((3, 4)), P((4, 0), (1, 4), (1, 5), (1, 6)))
    assert not rule_reconf(P((2, 0)), set(), ones)  # not part of current


@given(st.sets(st.sampled_from(DEFAULT_RULES.all_placements()), max_size=7))
def test_rule_reconf_empty_swap_matches_legality(current):
    assert rule_reconf(set(), set(), current) == is_legal_partition(current)


@given(st.sampled_from([p.placements for p in enumerate_maximal_partitions()]), st.data())
def test_rule_reconf_true_implies_legal_result(current, data):
    mset = data.draw(st.sets(st.sampled_from(sorted(current)), max_size=len(current)))
    new = data.draw(st.sets(st.sampled_from(DEFAULT_RULES.all_placements()), max_size=3))
    if rule_reconf(mset, new, current):
        assert is_legal_partition((set(current) - mset) | new)


def test_can_extend():
    assert can_extend(P((4, 0)))
    assert not can_extend(P((7, 0)))


def test_legal_layouts_for_pair_of_threes():
    assert legal_layouts((3, 3)) == [frozenset(P((3, 0), (3, 4)))]
    assert legal_layouts((4, 3)) == []


def _workload(n, latency=100.0):
    p = {"toy": linear_test_profile()}
    return Workload([ServiceSpec(f"s{k}", "toy", 100.0, latency) for k in range(n)], p)


def test_one_service_has_one_config_per_size_multiset():
    assert len(enumerate_configs(_workload(1), max_mix=1)) == 11


def test_service_only_feasible_on_full_gpu():
    from migplan.model import ModelProfile
    prof = ModelProfile("big", {(s, 1): (10.0 * s, 200.0 / s) for s in (1, 2, 3, 4, 7)})
    wl = Workload([ServiceSpec("a", "big", 100.0, 30.0)], {"big": prof})
    cfgs = enumerate_configs(wl, max_mix=1)
    assert [c.sizes for c in cfgs] == [(7,)]


def test_no_services_no_configs():
    assert enumerate_configs(_workload(0)) == []


def test_config_space_rows_match_materialized_utilities():
    wl = _workload(3)
    space = ConfigSpace(wl, max_mix=2)
    for r in range(0, len(space), 7):
        cfg = space.materialize(r)
        assert is_legal_partition(cfg.partition)
        assert space.U[r].tolist() == pytest.approx(wl.utility(cfg).tolist())


def test_utilities_distinct_within_assignment_class():
    wl = _workload(2)
    space = ConfigSpace(wl, max_mix=2)
    seen = {}
    for r in range(len(space)):
        cfg = space.materialize(r)
        key = (cfg.sizes, tuple(sorted((a.placement.size, a.service_id) for a in cfg.instances)))
        assert key not in seen, "duplicate configuration"
        seen[key] = r


def test_rules_round_trip_and_unknown_fields():
    doc = DEFAULT_RULES.to_dict()
    assert PartitionRuleSet.from_dict(doc) == DEFAULT_RULES
    with pytest.raises(ValueError):
        PartitionRuleSet.from_dict({"bogus": 1})
