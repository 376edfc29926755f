"""Token-to-replica routing and all-to-all transfer accounting.

A solved (and integerized) replica-load plan says how many of each
expert's tokens each replica computes; routing decides which concrete
tokens go where. Tokens are handled as contiguous index ranges per
(expert, source GPU), never individually.

Routing is greedy and locality-first:

- phase 1 keeps tokens on their source GPU wherever it hosts a replica
  with remaining quota (this provably maximizes same-GPU volume, which
  equals ``sum_e sum_g min(x_e_g, input_e_g)``);
- phase 2 sweeps the remaining tokens over sources in ascending GPU id
  and fills each expert's replicas in EDP-group list order.

The topology-aware variant inserts a same-node phase between the two,
so cross-node volume never exceeds the plain router's.

All functions are pure and deterministic: identical inputs produce
identical tables on every call and in every process.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .core import (
    ContractViolation,
    DimensionError,
    LoadMatrix,
    Placement,
    ReplicaLoadPlan,
    Topology,
)


@dataclass(frozen=True)
class RoutingTable:
    """Ordered token-range assignments.

    ``ranges`` lists (expert, src GPU, dst GPU, token_count); for a fixed
    (expert, src) the ranges appear in routing order and partition that
    source's tokens in sequence order.
    """

    ranges: tuple[tuple[int, int, int, int], ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("expert,src,dst,count\n")
        for e, src, dst, count in self.ranges:
            buf.write(f"{e},{src},{dst},{count}\n")
        return buf.getvalue()

    def local_volume(self) -> int:
        return sum(c for e, s, d, c in self.ranges if s == d)

    def total_volume(self) -> int:
        return sum(c for _, _, _, c in self.ranges)


@dataclass(frozen=True)
class TransferPlan:
    """Pairwise all-to-all token counts aggregated from a routing table.

    Diagonal (src == dst) traffic is local and excluded from send/recv
    totals and from the intra/inter split.
    """

    pair_counts: tuple[tuple[int, ...], ...]
    send: tuple[int, ...]
    recv: tuple[int, ...]
    local: tuple[int, ...]
    send_intra: tuple[int, ...]
    recv_intra: tuple[int, ...]
    send_inter: tuple[int, ...]
    recv_inter: tuple[int, ...]
    intra_volume: int
    inter_volume: int

    @property
    def local_volume(self) -> int:
        return sum(self.local)

    def max_intra(self) -> int:
        return max(
            (max(s, r) for s, r in zip(self.send_intra, self.recv_intra)), default=0
        )

    def max_inter(self) -> int:
        return max(
            (max(s, r) for s, r in zip(self.send_inter, self.recv_inter)), default=0
        )


def _check_plan(placement: Placement, loads: LoadMatrix, plan: ReplicaLoadPlan) -> None:
    if not plan.matches_placement(placement):
        raise ContractViolation("plan was not solved against this placement")
    if loads.num_experts != placement.num_experts or loads.num_gpus != placement.num_gpus:
        raise DimensionError("loads do not match placement")
    if not plan.is_integral():
        raise ContractViolation("plan must be integerized before routing")
    for e, (group, row) in enumerate(zip(plan.groups, plan.entries)):
        if sum(row) != sum(loads.entries[e]):
            raise ContractViolation(
                f"expert {e}: plan assigns {sum(row)} tokens but loads give {sum(loads.entries[e])}"
            )
        for v in row:
            if v < 0:
                raise ContractViolation(f"expert {e}: negative replica load {v}")


def _route(
    placement: Placement,
    loads: LoadMatrix,
    plan: ReplicaLoadPlan,
    topology: Topology | None,
) -> RoutingTable:
    _check_plan(placement, loads, plan)
    num_gpus = placement.num_gpus
    ranges: list[tuple[int, int, int, int]] = []
    for e, group in enumerate(placement.edp_groups):
        if not group and sum(loads.entries[e]) == 0:
            continue
        remain_input = list(loads.entries[e])
        remain_x = {g: int(v) for g, v in zip(group, plan.entries[e])}
        # phase 1: same-GPU replicas first
        for g in sorted(group):
            y = min(remain_input[g], remain_x[g])
            if y > 0:
                ranges.append((e, g, g, y))
                remain_input[g] -= y
                remain_x[g] -= y
        # phase 2 (topology-aware only): same-node replicas
        if topology is not None and topology.num_nodes > 1:
            for src in range(num_gpus):
                if remain_input[src] == 0:
                    continue
                for dst in group:
                    if dst == src or not topology.same_node(src, dst):
                        continue
                    y = min(remain_input[src], remain_x[dst])
                    if y > 0:
                        ranges.append((e, src, dst, y))
                        remain_input[src] -= y
                        remain_x[dst] -= y
        # final phase: any remaining replica, EDP list order
        for src in range(num_gpus):
            if remain_input[src] == 0:
                continue
            for dst in group:
                y = min(remain_input[src], remain_x[dst])
                if y > 0:
                    ranges.append((e, src, dst, y))
                    remain_input[src] -= y
                    remain_x[dst] -= y
    return RoutingTable(tuple(ranges))


def route_tokens(placement: Placement, loads: LoadMatrix, plan: ReplicaLoadPlan) -> RoutingTable:
    """Locality-first greedy routing of an integerized plan."""
    return _route(placement, loads, plan, None)


def route_topology_aware(
    placement: Placement, loads: LoadMatrix, plan: ReplicaLoadPlan, topology: Topology
) -> RoutingTable:
    """Three-phase routing: same GPU, then same node, then cross node.

    On a single-node topology this is identical to :func:`route_tokens`.
    """
    if topology.num_gpus != placement.num_gpus:
        raise DimensionError("topology does not match placement")
    return _route(placement, loads, plan, topology)


def build_transfer_plan(table: RoutingTable, topology: Topology) -> TransferPlan:
    """Aggregate a routing table into pairwise/send/recv/local volumes."""
    G = topology.num_gpus
    pair = [[0] * G for _ in range(G)]
    for e, src, dst, count in table.ranges:
        if not (0 <= src < G and 0 <= dst < G):
            raise DimensionError(f"range ({e},{src},{dst}) outside {G} GPUs")
        if count < 0:
            raise ContractViolation("negative token count in routing table")
        pair[src][dst] += count
    send = [0] * G
    recv = [0] * G
    local = [0] * G
    send_intra = [0] * G
    recv_intra = [0] * G
    send_inter = [0] * G
    recv_inter = [0] * G
    intra = 0
    inter = 0
    for s in range(G):
        for d in range(G):
            c = pair[s][d]
            if c == 0:
                continue
            if s == d:
                local[s] += c
            else:
                send[s] += c
                recv[d] += c
                if topology.same_node(s, d):
                    intra += c
                    send_intra[s] += c
                    recv_intra[d] += c
                else:
                    inter += c
                    send_inter[s] += c
                    recv_inter[d] += c
    return TransferPlan(
        pair_counts=tuple(tuple(row) for row in pair),
        send=tuple(send),
        recv=tuple(recv),
        local=tuple(local),
        send_intra=tuple(send_intra),
        recv_intra=tuple(recv_intra),
        send_inter=tuple(send_inter),
        recv_inter=tuple(recv_inter),
        intra_volume=intra,
        inter_volume=inter,
    )
