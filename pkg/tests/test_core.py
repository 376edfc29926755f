from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmonyep import (
    ClusterShape,
    DimensionError,
    LoadMatrix,
    Placement,
    ReplicaLoadPlan,
    UndefinedMetricError,
    aggregate_expert_loads,
    balance_ratio,
)


class TestClusterShape:
    def test_valid(self):
        shape = ClusterShape(8, 32, 2, gpus_per_node=4)
        assert shape.num_nodes == 2
        assert shape.ep_degree == 4
        assert shape.node_of(5) == 1

    def test_single_node_default(self):
        assert ClusterShape(8, 32, 2).gpus_per_node == 8

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_gpus=0, num_experts=4, d=2),
            dict(num_gpus=4, num_experts=0, d=2),
            dict(num_gpus=4, num_experts=4, d=1),
            dict(num_gpus=4, num_experts=4, d=5),
            dict(num_gpus=8, num_experts=4, d=2, gpus_per_node=3),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DimensionError):
            ClusterShape(**kwargs)


class TestAggregate:
    def test_row_sums(self):
        loads = LoadMatrix(((1, 2), (3, 4)))
        assert aggregate_expert_loads(loads) == (3, 7)

    def test_zero(self):
        loads = LoadMatrix(((0, 0), (0, 0)))
        assert aggregate_expert_loads(loads) == (0, 0)

    def test_uniform(self):
        loads = LoadMatrix(tuple(tuple(5 for _ in range(4)) for _ in range(4)))
        assert aggregate_expert_loads(loads) == (20, 20, 20, 20)

    def test_dimension_mismatch(self):
        loads = LoadMatrix(((1, 2), (3, 4)))
        with pytest.raises(DimensionError):
            aggregate_expert_loads(loads, ClusterShape(4, 2, 2))


def _plan_with_gpu_loads(gpu_loads):
    """One single-replica expert per GPU carrying that GPU's load."""
    n = len(gpu_loads)
    return ReplicaLoadPlan(
        num_gpus=n,
        groups=tuple((g,) for g in range(n)),
        entries=tuple((v,) for v in gpu_loads),
        objective=max(gpu_loads),
    )


class TestBalanceRatio:
    def test_perfect(self):
        plan = _plan_with_gpu_loads([8, 8, 8, 8])
        assert balance_ratio(plan, ClusterShape(4, 4, 2)) == 1

    def test_skewed(self):
        plan = _plan_with_gpu_loads([4, 4, 4, 20])
        assert balance_ratio(plan, ClusterShape(4, 4, 2)) == Fraction(5, 2)

    def test_zero_total(self):
        plan = _plan_with_gpu_loads([0, 0])
        with pytest.raises(UndefinedMetricError):
            balance_ratio(plan, ClusterShape(2, 2, 2))

    @given(
        loads=st.lists(st.integers(0, 1000), min_size=2, max_size=8),
        k=st.integers(1, 50),
    )
    @settings(max_examples=60)
    def test_scaling_invariance(self, loads, k):
        if sum(loads) == 0:
            return
        shape = ClusterShape(len(loads), len(loads), 2)
        r1 = balance_ratio(_plan_with_gpu_loads(loads), shape)
        r2 = balance_ratio(_plan_with_gpu_loads([v * k for v in loads]), shape)
        assert r1 == r2
        assert r1 >= 1


class TestPlacementType:
    def test_duplicate_rejected(self):
        from harmonyep import PlacementError

        with pytest.raises(PlacementError):
            Placement(4, ((0, 0),), (0,))

    def test_out_of_range_rejected(self):
        from harmonyep import PlacementError

        with pytest.raises(PlacementError):
            Placement(2, ((0, 5),), (0,))

    def test_hosted_index(self):
        pl = Placement(3, ((0, 1), (1, 2)), (0, 1))
        assert pl.hosted == ((0,), (0, 1), (1,))
        assert pl.gpu_replica_counts() == (1, 2, 1)

    def test_json_roundtrip(self):
        pl = Placement(4, ((0, 3), (1, 2)), (0, 0))
        again = Placement.from_json_dict(pl.to_json_dict())
        assert again == pl


@given(
    data=st.lists(
        st.lists(st.integers(0, 100), min_size=3, max_size=3), min_size=2, max_size=6
    ),
    splits=st.data(),
)
@settings(max_examples=60)
def test_conservation_through_any_valid_plan(data, splits):
    """Aggregating then re-distributing via a valid plan conserves totals
    exactly, with no drift (integer/rational arithmetic)."""
    loads = LoadMatrix(tuple(tuple(r) for r in data))
    totals = aggregate_expert_loads(loads)
    num_gpus = 3
    groups = tuple(tuple(range(num_gpus)) for _ in totals)
    entries = []
    for t in totals:
        cut1 = splits.draw(st.integers(0, t))
        cut2 = splits.draw(st.integers(0, t - cut1))
        entries.append((Fraction(cut1), Fraction(cut2), Fraction(t - cut1 - cut2)))
    plan = ReplicaLoadPlan(num_gpus, groups, tuple(entries), 0)
    assert plan.expert_totals() == totals
    assert sum(plan.gpu_loads()) == sum(totals)
