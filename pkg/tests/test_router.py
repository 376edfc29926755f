import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmonyep import (
    ContractViolation,
    LoadMatrix,
    Placement,
    ReplicaLoadPlan,
    Topology,
    build_transfer_plan,
    integerize_plan,
    route_tokens,
    route_topology_aware,
    solve_replica_loads,
)

from conftest import random_instance


def local_upper_bound(placement, loads, plan):
    """Provable max same-GPU volume: sum over hosted pairs of min(x, input)."""
    total = 0
    for e, group in enumerate(placement.edp_groups):
        for g, x in zip(group, plan.entries[e]):
            total += min(int(x), loads.entries[e][g])
    return total


class TestRouteTokens:
    def test_all_local(self):
        pl = Placement(2, ((0, 1),), (0,))
        loads = LoadMatrix(((4, 0),))
        plan = ReplicaLoadPlan(2, ((0, 1),), ((4, 0),), 4)
        table = route_tokens(pl, loads, plan)
        assert table.ranges == ((0, 0, 0, 4),)

    def test_remote_split_sweep_order(self):
        pl = Placement(3, ((0, 1),), (0,))
        loads = LoadMatrix(((0, 0, 4),))
        plan = ReplicaLoadPlan(3, ((0, 1),), ((3, 1),), 3)
        table = route_tokens(pl, loads, plan)
        assert table.ranges == ((0, 2, 0, 3), (0, 2, 1, 1))

    def test_ring4_with_exhibited_plan(self, ring4_placement):
        # a valid alternative optimum: x_e0=(4,0), x_e1=(4,2), x_e2=(6,8), x_e3=(0,8)
        loads = LoadMatrix(((4, 0, 0, 0), (0, 6, 0, 0), (0, 0, 14, 0), (0, 0, 8, 0)))
        plan = ReplicaLoadPlan(
            4, ring4_placement.edp_groups, ((4, 0), (4, 2), (6, 8), (0, 8)), 8
        )
        table = route_tokens(ring4_placement, loads, plan)
        received = [sum(c for e, s, d, c in table.ranges if d == g) for g in range(4)]
        assert received == [8, 8, 8, 8]
        e3 = [r for r in table.ranges if r[0] == 3]
        assert e3 == [(3, 2, 3, 8)]  # all of expert 3's tokens travel 2 -> 3

    def test_ring4_canonical_pipeline(self, ring4_placement, ring4_loads):
        plan, _ = solve_replica_loads(ring4_placement, ring4_loads)
        table = route_tokens(ring4_placement, ring4_loads, integerize_plan(plan))
        received = [sum(c for e, s, d, c in table.ranges if d == g) for g in range(4)]
        assert received == [8, 8, 8, 8]

    def test_plan_loads_mismatch(self, ring4_placement, ring4_loads):
        bad = ReplicaLoadPlan(4, ring4_placement.edp_groups, ((4, 0), (6, 0), (14, 0), (9, 0)), 14)
        with pytest.raises(ContractViolation):
            route_tokens(ring4_placement, ring4_loads, bad)

    def test_fractional_plan_rejected(self, ring4_placement, ring4_loads):
        plan, _ = solve_replica_loads(ring4_placement, ring4_loads)
        frac = ReplicaLoadPlan(
            4, ring4_placement.edp_groups,
            ((2.5, 1.5), (6, 0), (8, 6), (2, 6)), 8,
        )
        with pytest.raises(ContractViolation):
            route_tokens(ring4_placement, ring4_loads, frac)


class TestRouteTopologyAware:
    def test_single_node_identical(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            _shape, placement, loads = random_instance(rng, max_gpus=6, max_experts=8)
            plan = integerize_plan(solve_replica_loads(placement, loads)[0])
            topo = Topology(placement.num_gpus, placement.num_gpus)
            assert route_topology_aware(placement, loads, plan, topo) == route_tokens(
                placement, loads, plan
            )

    def test_same_node_before_cross_node(self):
        pl = Placement(4, ((1, 2),), (0,))
        loads = LoadMatrix(((4, 0, 0, 0),))
        plan = ReplicaLoadPlan(4, ((1, 2),), ((2, 2),), 2)
        table = route_topology_aware(pl, loads, plan, Topology(4, 2))
        assert table.ranges == ((0, 0, 1, 2), (0, 0, 2, 2))

    def test_zero_loads_empty(self):
        pl = Placement(4, ((1, 2),), (0,))
        loads = LoadMatrix(((0, 0, 0, 0),))
        plan = ReplicaLoadPlan(4, ((1, 2),), ((0, 0),), 0)
        table = route_topology_aware(pl, loads, plan, Topology(4, 2))
        assert table.ranges == ()

    def test_cross_node_never_worse(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            num_experts = int(rng.integers(4, 12))
            from harmonyep import ClusterShape, random_placement

            shape = ClusterShape(8, num_experts, 2, gpus_per_node=4)
            placement = random_placement(shape, int(rng.integers(0, 10**6)))
            loads = LoadMatrix.from_array(rng.integers(0, 50, size=(num_experts, 8)))
            plan = integerize_plan(solve_replica_loads(placement, loads)[0])
            topo = Topology(8, 4)
            plain = build_transfer_plan(route_tokens(placement, loads, plan), topo)
            aware = build_transfer_plan(
                route_topology_aware(placement, loads, plan, topo), topo
            )
            assert aware.inter_volume <= plain.inter_volume
            assert aware.local_volume == plain.local_volume


class TestConservationAndLocality:
    def test_random_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(40):
            _shape, placement, loads = random_instance(rng, max_gpus=8, max_experts=12)
            plan = integerize_plan(solve_replica_loads(placement, loads)[0])
            table = route_tokens(placement, loads, plan)
            routed_out = {}
            routed_in = {}
            for e, s, d, c in table.ranges:
                assert c > 0
                assert d in placement.edp_groups[e]
                routed_out[(e, s)] = routed_out.get((e, s), 0) + c
                routed_in[(e, d)] = routed_in.get((e, d), 0) + c
            for e in range(loads.num_experts):
                for g in range(loads.num_gpus):
                    assert routed_out.get((e, g), 0) == loads.entries[e][g]
                for g, x in zip(placement.edp_groups[e], plan.entries[e]):
                    assert routed_in.get((e, g), 0) == x
            assert table.local_volume() == local_upper_bound(placement, loads, plan)

    def test_order_preservation(self):
        """For a fixed (expert, src), destination ranges appear in sweep
        order: the local replica first, then EDP-group list order."""
        pl = Placement(4, ((2, 0, 3),), (0,))
        loads = LoadMatrix(((0, 0, 9, 0),))
        plan = ReplicaLoadPlan(4, ((2, 0, 3),), ((3, 4, 2),), 4)
        table = route_tokens(pl, loads, plan)
        assert table.ranges == ((0, 2, 2, 3), (0, 2, 0, 4), (0, 2, 3, 2))

    def test_determinism(self, ring4_placement, ring4_loads):
        plan = integerize_plan(solve_replica_loads(ring4_placement, ring4_loads)[0])
        t1 = route_tokens(ring4_placement, ring4_loads, plan)
        t2 = route_tokens(ring4_placement, ring4_loads, plan)
        assert t1 == t2
        assert t1.to_csv() == t2.to_csv()


class TestTransferPlan:
    def test_all_local(self):
        table = route_tokens(
            Placement(2, ((0, 1),), (0,)),
            LoadMatrix(((4, 0),)),
            ReplicaLoadPlan(2, ((0, 1),), ((4, 0),), 4),
        )
        tp = build_transfer_plan(table, Topology(2, 2))
        assert tp.send == (0, 0) and tp.recv == (0, 0)
        assert tp.local == (4, 0)

    def test_symmetric_exchange(self):
        from harmonyep import RoutingTable

        table = RoutingTable(((0, 0, 1, 3), (1, 1, 0, 3)))
        tp = build_transfer_plan(table, Topology(2, 2))
        assert tp.send == (3, 3)
        assert tp.recv == (3, 3)

    def test_ring4_flow_conservation(self, ring4_placement, ring4_loads):
        plan = integerize_plan(solve_replica_loads(ring4_placement, ring4_loads)[0])
        table = route_tokens(ring4_placement, ring4_loads, plan)
        tp = build_transfer_plan(table, Topology(4, 4))
        assert sum(tp.send) == sum(tp.recv)
        non_local = table.total_volume() - table.local_volume()
        assert sum(tp.send) == non_local

    def test_intra_inter_split(self):
        from harmonyep import RoutingTable

        table = RoutingTable(((0, 0, 1, 5), (0, 0, 2, 7), (1, 3, 3, 2)))
        tp = build_transfer_plan(table, Topology(4, 2))
        assert tp.intra_volume == 5  # 0 -> 1 same node
        assert tp.inter_volume == 7  # 0 -> 2 cross node
        assert tp.local == (0, 0, 0, 2)


@given(seed=st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_roundtrip_volume_properties(seed):
    rng = np.random.default_rng(seed)
    _shape, placement, loads = random_instance(rng, max_gpus=6, max_experts=8)
    plan = integerize_plan(solve_replica_loads(placement, loads)[0])
    table = route_tokens(placement, loads, plan)
    tp = build_transfer_plan(table, Topology(placement.num_gpus, placement.num_gpus))
    assert sum(tp.send) == sum(tp.recv)
    assert tp.local_volume + sum(tp.send) == loads.total()
