"""Shared domain types for expert-replica load balancing.

Glossary used throughout the package:

- **Expert**: one FFN of an MoE layer. Experts are dense 0-based ids.
- **EDP group**: the ordered set of GPUs hosting replicas of one expert.
  A token assigned to an expert may be computed on any GPU of that
  expert's EDP group.
- **Placement**: the expert-to-GPU replica layout, i.e. all EDP groups
  plus one *local slot* index per expert (shared by all of its replicas,
  so that replica synchronization happens in a consistent order on every
  GPU and cannot deadlock).
- **Load matrix**: per-(expert, source GPU) token counts for one
  micro-batch. Row sums give each expert's total load.
- **Replica-load plan**: per-(expert, hosting GPU) assigned loads. A plan
  splits each expert's total load across its EDP group; its objective is
  the maximum per-GPU load it induces.

Loads are exact non-negative integers (token counts); plans may carry
exact rationals (``fractions.Fraction``) before integerization, or floats
when produced by the floating-point LP path. All types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np

Num = int | float | Fraction


class HarmonyError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HarmonyError):
    """Inputs disagree on the number of GPUs or experts."""


class PlacementError(HarmonyError):
    """A placement cannot serve the given loads (e.g. a loaded expert
    with an empty EDP group)."""


class ConstructionError(HarmonyError):
    """A placement constructor cannot produce a valid placement."""


class CapacityError(HarmonyError):
    """An exact computation was requested above its size cap."""


class UndefinedMetricError(HarmonyError):
    """A metric is undefined for the given input (e.g. zero total load)."""


class ContractViolation(HarmonyError):
    """An operation received inputs that break its preconditions."""


class StaleStateError(HarmonyError):
    """A solver warm-start state does not match the new inputs."""


class TraceParseError(HarmonyError):
    """A workload trace file is malformed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ConfigError(HarmonyError):
    """A run configuration is invalid. Collects every problem found."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class ClusterShape:
    """Dimensions of one scheduling group.

    ``d`` is the number of replicas per expert under a symmetric
    placement, i.e. how many plain EP groups are merged into one
    scheduling group.
    """

    num_gpus: int
    num_experts: int
    d: int
    gpus_per_node: int = 0  # 0 means single node (= num_gpus)

    def __post_init__(self):
        if self.gpus_per_node == 0:
            object.__setattr__(self, "gpus_per_node", self.num_gpus)
        if self.num_gpus < 1:
            raise DimensionError(f"num_gpus must be >= 1, got {self.num_gpus}")
        if self.num_experts < 1:
            raise DimensionError(f"num_experts must be >= 1, got {self.num_experts}")
        if not (1 < self.d <= self.num_gpus):
            raise DimensionError(
                f"d must satisfy 1 < d <= num_gpus, got d={self.d}, num_gpus={self.num_gpus}"
            )
        if self.num_gpus % self.gpus_per_node != 0:
            raise DimensionError(
                f"gpus_per_node={self.gpus_per_node} does not divide num_gpus={self.num_gpus}"
            )

    @property
    def num_nodes(self) -> int:
        return self.num_gpus // self.gpus_per_node

    @property
    def ep_degree(self) -> int:
        """GPUs per plain EP group; requires d to divide num_gpus."""
        if self.num_gpus % self.d != 0:
            raise DimensionError(
                f"d={self.d} does not divide num_gpus={self.num_gpus}; no EP-group structure"
            )
        return self.num_gpus // self.d

    def node_of(self, gpu: int) -> int:
        return gpu // self.gpus_per_node


@dataclass(frozen=True)
class Topology:
    """GPU-to-node grouping used by communication-aware paths."""

    num_gpus: int
    gpus_per_node: int

    def __post_init__(self):
        if self.num_gpus < 1 or self.gpus_per_node < 1:
            raise DimensionError("topology sizes must be >= 1")
        if self.num_gpus % self.gpus_per_node != 0:
            raise DimensionError(
                f"gpus_per_node={self.gpus_per_node} does not divide num_gpus={self.num_gpus}"
            )

    @classmethod
    def from_shape(cls, shape: ClusterShape) -> "Topology":
        return cls(shape.num_gpus, shape.gpus_per_node)

    @property
    def num_nodes(self) -> int:
        return self.num_gpus // self.gpus_per_node

    def node_of(self, gpu: int) -> int:
        return gpu // self.gpus_per_node

    def same_node(self, a: int, b: int) -> bool:
        return self.node_of(a) == self.node_of(b)


@dataclass(frozen=True)
class Placement:
    """Expert replica layout: one EDP group and one local slot per expert.

    ``edp_groups[e]`` is the ordered tuple of GPU ids hosting replicas of
    expert ``e``; routing sweeps destinations in this list order.
    ``slots[e]`` is the local slot index shared by every replica of ``e``;
    two experts hosted on the same GPU must not share a slot index.
    """

    num_gpus: int
    edp_groups: tuple[tuple[int, ...], ...]
    slots: tuple[int, ...]
    hosted: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.edp_groups)
        object.__setattr__(self, "edp_groups", groups)
        object.__setattr__(self, "slots", tuple(self.slots))
        if len(self.slots) != len(groups):
            raise DimensionError(
                f"{len(groups)} EDP groups but {len(self.slots)} slot indices"
            )
        hosted: list[list[int]] = [[] for _ in range(self.num_gpus)]
        for e, group in enumerate(groups):
            for g in group:
                if not (0 <= g < self.num_gpus):
                    raise PlacementError(f"expert {e}: GPU id {g} out of range")
            if len(set(group)) != len(group):
                raise PlacementError(f"expert {e}: duplicate GPU in EDP group {group}")
            for g in group:
                hosted[g].append(e)
        object.__setattr__(self, "hosted", tuple(tuple(h) for h in hosted))

    @property
    def num_experts(self) -> int:
        return len(self.edp_groups)

    def replica_count(self, expert: int) -> int:
        return len(self.edp_groups[expert])

    def gpu_replica_counts(self) -> tuple[int, ...]:
        return tuple(len(h) for h in self.hosted)

    def to_json_dict(self) -> dict:
        return {
            "num_gpus": self.num_gpus,
            "num_experts": self.num_experts,
            "d": max((len(g) for g in self.edp_groups), default=0),
            "edp_groups": [list(g) for g in self.edp_groups],
            "slots": list(self.slots),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Placement":
        try:
            return cls(
                num_gpus=int(data["num_gpus"]),
                edp_groups=tuple(tuple(int(g) for g in grp) for grp in data["edp_groups"]),
                slots=tuple(int(s) for s in data["slots"]),
            )
        except KeyError as exc:
            raise ContractViolation(f"placement JSON missing key {exc}") from exc


@dataclass(frozen=True)
class LoadMatrix:
    """Per-(expert, source GPU) token counts for one micro-batch."""

    entries: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in row) for row in self.entries)
        object.__setattr__(self, "entries", rows)
        width = {len(r) for r in rows}
        if len(width) > 1:
            raise DimensionError("ragged load matrix")
        for e, row in enumerate(rows):
            for v in row:
                if v < 0:
                    raise ContractViolation(f"negative load for expert {e}: {v}")

    @classmethod
    def from_array(cls, arr) -> "LoadMatrix":
        return cls(tuple(tuple(int(v) for v in row) for row in arr))

    @property
    def num_experts(self) -> int:
        return len(self.entries)

    @property
    def num_gpus(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def as_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.int64)

    def expert_totals(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.entries)

    def total(self) -> int:
        return sum(self.expert_totals())

    def scaled(self, k: int) -> "LoadMatrix":
        return LoadMatrix(tuple(tuple(v * k for v in row) for row in self.entries))


@dataclass(frozen=True)
class ReplicaLoadPlan:
    """Assigned replica loads for one micro-batch.

    ``entries[e][i]`` is the load of expert ``e`` on ``groups[e][i]``,
    where ``groups`` are the EDP groups the plan was solved against.
    ``objective`` equals the maximum per-GPU load the plan induces and is
    recomputable from the entries (see :meth:`gpu_loads`).
    """

    num_gpus: int
    groups: tuple[tuple[int, ...], ...]
    entries: tuple[tuple[Num, ...], ...]
    objective: Num

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        object.__setattr__(self, "entries", tuple(tuple(row) for row in self.entries))
        if len(self.groups) != len(self.entries):
            raise DimensionError("plan groups and entries disagree on expert count")
        for e, (group, row) in enumerate(zip(self.groups, self.entries)):
            if len(group) != len(row):
                raise DimensionError(f"expert {e}: {len(row)} entries for {len(group)} replicas")

    @property
    def num_experts(self) -> int:
        return len(self.entries)

    def is_integral(self) -> bool:
        return all(
            isinstance(v, int) or (isinstance(v, Rational) and v.denominator == 1)
            for row in self.entries
            for v in row
        )

    def expert_totals(self) -> tuple[Num, ...]:
        return tuple(sum(row) if row else 0 for row in self.entries)

    def gpu_loads(self) -> tuple[Num, ...]:
        loads: list[Num] = [0] * self.num_gpus
        for group, row in zip(self.groups, self.entries):
            for g, v in zip(group, row):
                loads[g] += v
        return tuple(loads)

    def load_on(self, expert: int, gpu: int) -> Num:
        group = self.groups[expert]
        for g, v in zip(group, self.entries[expert]):
            if g == gpu:
                return v
        return 0

    def matches_placement(self, placement: Placement) -> bool:
        return (
            self.num_gpus == placement.num_gpus
            and self.groups == placement.edp_groups
        )


def aggregate_expert_loads(loads: LoadMatrix, shape: ClusterShape | None = None) -> tuple[int, ...]:
    """Total tokens per expert (row sums of the load matrix)."""
    if shape is not None:
        if loads.num_experts != shape.num_experts or loads.num_gpus != shape.num_gpus:
            raise DimensionError(
                f"load matrix {loads.num_experts}x{loads.num_gpus} does not match "
                f"shape {shape.num_experts}x{shape.num_gpus}"
            )
    return loads.expert_totals()


def balance_ratio(plan: ReplicaLoadPlan, shape: ClusterShape) -> Fraction:
    """Maximum GPU load divided by the mean GPU load; 1.0 is perfect balance."""
    if plan.num_gpus != shape.num_gpus:
        raise DimensionError(
            f"plan covers {plan.num_gpus} GPUs but shape has {shape.num_gpus}"
        )
    gpu_loads = plan.gpu_loads()
    total = sum(gpu_loads)
    if total <= 0:
        raise UndefinedMetricError("balance ratio undefined for zero total load")
    return Fraction(max(gpu_loads)) / (Fraction(total) / shape.num_gpus)


def gpu_load_balance_ratio(gpu_loads: list[int] | tuple[int, ...]) -> float:
    """Balance ratio from raw per-GPU loads; 1.0 when total is zero."""
    total = sum(gpu_loads)
    if total <= 0:
        return 1.0
    return float(Fraction(int(max(gpu_loads)) * len(gpu_loads), int(total)))
