"""Expert placement construction and evaluation.

A placement is viewed as a weighted (hyper)graph: GPUs are vertices and
each expert is a (hyper)edge over its EDP group, weighted by the
expert's total load. The minimal achievable max-GPU-load for given
loads equals the maximum *induced subgraph density* of this graph,
where density of a vertex subset is the summed weight of edges fully
contained in it divided by the subset size. ``density_oracle``
evaluates that quantity independently of the LP solver (by subset
enumeration), which gives the test suite a second route to the same
number.

Construction strategies:

- symmetric catalog built from small abelian groups: a generating set
  ``S = -S`` over ``Z_(2^p)`` (or a product of cyclic 2-groups) yields a
  vertex-transitive 2-regular-per-generator graph whose edges spread
  evenly across vertices. Catalogued shapes: the 8-cycle (p=3, q=1), the
  4x4 torus (p=4, q=2), and K4,4 (p=3, q=2). When there are more edges
  than a complete graph holds (q >= p), full complete graphs are emitted
  first and the remainder is covered by XOR matchings (v <-> v^c), which
  also 1-factorize the complete graphs themselves.
- uniform random d-subsets with balanced per-GPU replica counts;
- asymmetric: greedy per-expert replica counts (max load-per-replica
  first) followed by Monte-Carlo search over random layouts, keeping the
  one with minimal maximum induced density.

Local slot indices come out of the construction for catalogued shapes
(each matching/cycle alternation is a proper slot assignment) and from
greedy lowest-first coloring of the expert conflict graph otherwise.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    CapacityError,
    ClusterShape,
    ConstructionError,
    ContractViolation,
    DimensionError,
    Placement,
)

_EXACT_GPU_CAP = 24


@dataclass(frozen=True)
class PlacementGraph:
    """Weighted hypergraph abstraction of a placement.

    ``edges[e]`` is (sorted GPU tuple, weight) for expert ``e``; the
    mapping between experts and edges is index-preserving.
    """

    num_gpus: int
    edges: tuple[tuple[tuple[int, ...], Fraction], ...]

    @classmethod
    def from_placement(cls, placement: Placement, weights) -> "PlacementGraph":
        if len(weights) != placement.num_experts:
            raise DimensionError(
                f"{len(weights)} weights for {placement.num_experts} experts"
            )
        edges = []
        for group, w in zip(placement.edp_groups, weights):
            w = Fraction(w)
            if w < 0:
                raise ContractViolation("edge weights must be >= 0")
            edges.append((tuple(sorted(group)), w))
        return cls(placement.num_gpus, tuple(edges))


@dataclass(frozen=True)
class DensityReport:
    """Maximum induced subgraph density and where it is attained.

    ``density`` is exact (a Fraction). ``per_size[k]`` is the maximum
    density over subsets of exactly ``k`` vertices (exact mode only).
    """

    best_subset: tuple[int, ...]
    density: Fraction
    per_size: dict[int, Fraction] | None = None


def _scaled_int_weights(edges) -> tuple[list[int], int]:
    scale = math.lcm(*(w.denominator for _, w in edges)) if edges else 1
    ints = [int(w * scale) for _, w in edges]
    if sum(ints) >= (1 << 62):
        raise CapacityError("edge weights too large for exact enumeration")
    return ints, scale


def _popcounts(n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.uint32)
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(idx).astype(np.int64)
    pc = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        pc += (idx >> np.uint32(b)) & np.uint32(1)
    return pc


def density_oracle(
    graph: PlacementGraph,
    mode: str = "exact",
    *,
    samples: int = 1000,
    seed: int = 0,
) -> DensityReport:
    """Maximum induced subgraph density of the weighted placement graph.

    ``exact`` enumerates all 2^num_gpus subsets (cap: 24 GPUs) with a
    subset-sum transform; ``sampled`` lower-bounds the maximum from
    ``samples`` random subsets plus every single-expert EDP group and
    the full vertex set.
    """
    n = graph.num_gpus
    if mode == "exact":
        if n > _EXACT_GPU_CAP:
            raise CapacityError(
                f"exact density enumeration capped at {_EXACT_GPU_CAP} GPUs, got {n}"
            )
        weights, scale = _scaled_int_weights(graph.edges)
        w = np.zeros(1 << n, dtype=np.int64)
        for (gpus, _), wi in zip(graph.edges, weights):
            if wi == 0 or not gpus:
                continue
            mask = 0
            for g in gpus:
                mask |= 1 << g
            w[mask] += wi
        # zeta transform: w[S] becomes the summed weight of edges inside S
        for b in range(n):
            view = w.reshape(-1, 2, 1 << b)
            view[:, 1, :] += view[:, 0, :]
        pc = _popcounts(n)
        per_size: dict[int, Fraction] = {}
        best_density = Fraction(0)
        best_mask = 1
        best_size = 1
        for k in range(1, n + 1):
            sel = np.flatnonzero(pc == k)
            vals = w[sel]
            arg = int(np.argmax(vals))
            best_sum = int(vals[arg])
            per_size[k] = Fraction(best_sum, k * scale)
            cand = per_size[k]
            if cand > best_density or (cand == best_density and k < best_size):
                best_density = cand
                best_mask = int(sel[arg])
                best_size = k
        subset = tuple(g for g in range(n) if best_mask >> g & 1)
        return DensityReport(subset, best_density, per_size)

    if mode == "sampled":
        rng = np.random.default_rng(seed)
        candidates: list[frozenset[int]] = [frozenset(range(n))]
        for gpus, w in graph.edges:
            if gpus and w > 0:
                candidates.append(frozenset(gpus))
        for _ in range(samples):
            size = int(rng.integers(1, n + 1))
            subset = rng.choice(n, size=size, replace=False)
            candidates.append(frozenset(int(g) for g in subset))
        best_density = Fraction(0)
        best_subset: frozenset[int] = frozenset([0])
        for s in candidates:
            inside = sum(
                w for gpus, w in graph.edges if gpus and set(gpus) <= s
            )
            dens = Fraction(inside, len(s))
            if dens > best_density or (
                dens == best_density and len(s) < len(best_subset)
            ):
                best_density = dens
                best_subset = s
        return DensityReport(tuple(sorted(best_subset)), best_density, None)

    raise ContractViolation(f"unknown density mode {mode!r}")


# ---------------------------------------------------------------------------
# symmetric catalog
# ---------------------------------------------------------------------------


def _is_pow2(v: int) -> bool:
    return v > 0 and (v & (v - 1)) == 0


SUPPORTED_CAYLEY = (
    "(p=3, q=1)  8 GPUs x  8 experts: cycle",
    "(p=4, q=2) 16 GPUs x 32 experts: 4x4 torus",
    "(p=3, q=2)  8 GPUs x 16 experts: K4,4",
    "(p, q>=p)  2^p GPUs x 2^(p+q-1) experts: complete graphs + matchings",
)


def cayley_symmetric(shape: ClusterShape) -> Placement:
    """Catalogued symmetric placement for power-of-two shapes with d=2.

    Raises :class:`ConstructionError` listing the supported shapes when
    the (p, q) pair has no catalogued construction.
    """
    if shape.d != 2:
        raise ConstructionError(
            f"symmetric catalog requires d=2, got d={shape.d}; supported: {SUPPORTED_CAYLEY}"
        )
    if not _is_pow2(shape.num_gpus) or not _is_pow2(shape.num_experts):
        raise ConstructionError(
            f"symmetric catalog requires powers of two, got {shape.num_gpus} GPUs, "
            f"{shape.num_experts} experts; supported: {SUPPORTED_CAYLEY}"
        )
    p = shape.num_gpus.bit_length() - 1
    q = shape.num_experts.bit_length() - 1 - p + 1
    if q < 1:
        raise ConstructionError(
            f"fewer experts than GPUs is not catalogued; supported: {SUPPORTED_CAYLEY}"
        )

    if (p, q) == (3, 1):
        edges = [(v, (v + 1) % 8) for v in range(8)]
        slots = [e % 2 for e in range(8)]
        return Placement(8, tuple((a, b) for a, b in edges), tuple(slots))

    if (p, q) == (4, 2):
        edges: list[tuple[int, int]] = []
        slots = []
        for x in range(4):
            for y in range(4):
                edges.append((4 * x + y, 4 * x + (y + 1) % 4))
                slots.append(y % 2)
        for x in range(4):
            for y in range(4):
                edges.append((4 * x + y, 4 * ((x + 1) % 4) + y))
                slots.append(2 + x % 2)
        return Placement(16, tuple(edges), tuple(slots))

    if (p, q) == (3, 2):
        edges = []
        slots = []
        for a in range(2):
            for b in range(4):
                edges.append((4 * a + b, 4 * a + (b + 1) % 4))
                slots.append(b % 2)
        for a in range(2):
            for b in range(4):
                edges.append((4 * a + b, 4 * ((a + 1) % 2) + (b + 1) % 4))
                slots.append(2 + b % 2)
        return Placement(8, tuple(edges), tuple(slots))

    if q >= p:
        return _complete_plus_matchings(p, q)

    raise ConstructionError(
        f"no catalogued construction for (p={p}, q={q}); supported: {SUPPORTED_CAYLEY}"
    )


def _complete_plus_matchings(p: int, q: int) -> Placement:
    """Complete graphs plus XOR matchings for edge counts > C(2^p, 2).

    A complete graph on 2^p vertices 1-factorizes into the XOR matchings
    {v, v^c} for c = 1..2^p-1, so every matching is one slot and slots
    come out proper by construction.
    """
    n = 1 << p
    num_edges = 1 << (p + q - 1)
    complete_edges = n * (n - 1) // 2
    copies, residual = divmod(num_edges, complete_edges)
    if copies < 1 or residual % (n // 2) != 0:
        raise ConstructionError(
            f"(p={p}, q={q}) does not decompose into complete graphs plus matchings"
        )
    residual_matchings = residual // (n // 2)
    edges: list[tuple[int, int]] = []
    slots: list[int] = []

    def matching(c: int, slot: int) -> None:
        for v in range(n):
            if v < v ^ c:
                edges.append((v, v ^ c))
                slots.append(slot)

    slot = 0
    for _ in range(copies):
        for c in range(1, n):
            matching(c, slot)
            slot += 1
    for c in range(1, residual_matchings + 1):
        matching(c, slot)
        slot += 1
    return Placement(n, tuple(edges), tuple(slots))


# ---------------------------------------------------------------------------
# randomized constructions
# ---------------------------------------------------------------------------


def _greedy_slots(num_gpus: int, groups: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Lowest-free-slot coloring of the expert conflict graph."""
    used_on_gpu: list[set[int]] = [set() for _ in range(num_gpus)]
    slots = []
    for group in groups:
        taken = set()
        for g in group:
            taken |= used_on_gpu[g]
        slot = 0
        while slot in taken:
            slot += 1
        slots.append(slot)
        for g in group:
            used_on_gpu[g].add(slot)
    return tuple(slots)


def _sample_groups(
    rng: np.random.Generator,
    counts: list[int],
    capacities: list[int],
    retries: int = 64,
) -> list[tuple[int, ...]] | None:
    """Random EDP groups honoring per-expert counts and per-GPU capacities."""
    num_gpus = len(capacities)
    order = sorted(range(len(counts)), key=lambda e: (-counts[e], e))
    for _ in range(retries):
        remaining = list(capacities)
        groups: list[tuple[int, ...] | None] = [None] * len(counts)
        ok = True
        for e in order:
            k = counts[e]
            eligible = [g for g in range(num_gpus) if remaining[g] > 0]
            if len(eligible) < k:
                ok = False
                break
            weights = np.array([remaining[g] for g in eligible], dtype=np.float64)
            chosen = rng.choice(
                len(eligible), size=k, replace=False, p=weights / weights.sum()
            )
            group = tuple(sorted(eligible[int(i)] for i in chosen))
            groups[e] = group
            for g in group:
                remaining[g] -= 1
        if ok:
            return [g for g in groups]  # type: ignore[misc]
    return None


def random_placement(shape: ClusterShape, seed: int) -> Placement:
    """Uniform random d-subsets with balanced per-GPU replica counts."""
    if shape.d < 2:
        raise ConstructionError("random placement requires d >= 2")
    rng = np.random.default_rng(seed)
    total = shape.num_experts * shape.d
    base, rem = divmod(total, shape.num_gpus)
    capacities = [base] * shape.num_gpus
    for g in rng.permutation(shape.num_gpus)[:rem]:
        capacities[int(g)] += 1
    groups = _sample_groups(rng, [shape.d] * shape.num_experts, capacities)
    if groups is None:
        raise ConstructionError(
            f"could not sample a balanced placement for {shape} after bounded retries"
        )
    slots = _greedy_slots(shape.num_gpus, groups)
    return Placement(shape.num_gpus, tuple(groups), slots)


def greedy_replica_counts(
    expert_loads,
    total_replica_slots: int,
    max_count: int | None = None,
) -> tuple[int, ...]:
    """Replica counts minimizing the maximum load-per-replica.

    Every expert gets one replica; remaining slots go one at a time to
    the expert with the highest load-per-replica (ties to the lowest
    expert id). ``max_count`` caps any single expert (an EDP group
    cannot repeat a GPU).
    """
    n = len(expert_loads)
    if total_replica_slots < n:
        raise ContractViolation(
            f"{total_replica_slots} slots cannot give {n} experts one replica each"
        )
    if max_count is not None and max_count * n < total_replica_slots:
        raise ContractViolation("max_count too small to absorb all replica slots")
    counts = [1] * n
    heap = [(-Fraction(load), e) for e, load in enumerate(expert_loads)]
    heapq.heapify(heap)
    for _ in range(total_replica_slots - n):
        _neg_lpr, e = heapq.heappop(heap)
        counts[e] += 1
        if max_count is None or counts[e] < max_count:
            heapq.heappush(heap, (-Fraction(expert_loads[e], counts[e]), e))
    return tuple(counts)


def monte_carlo_placement(
    expert_loads,
    replica_counts,
    shape: ClusterShape,
    n_samples: int,
    seed: int,
) -> Placement:
    """Best of ``n_samples`` random layouts by maximum induced density."""
    counts = [int(c) for c in replica_counts]
    total = sum(counts)
    if total % shape.num_gpus != 0:
        raise ContractViolation(
            f"replica counts sum to {total}, not a multiple of {shape.num_gpus} GPUs"
        )
    if len(counts) != len(expert_loads):
        raise DimensionError("replica_counts and expert_loads disagree")
    for e, c in enumerate(counts):
        if c < 1 or c > shape.num_gpus:
            raise ContractViolation(f"expert {e}: replica count {c} not in 1..{shape.num_gpus}")
    if n_samples < 1:
        raise ContractViolation("n_samples must be >= 1")
    slots_per_gpu = total // shape.num_gpus
    capacities = [slots_per_gpu] * shape.num_gpus
    rng = np.random.default_rng(seed)
    mode = "exact" if shape.num_gpus <= _EXACT_GPU_CAP else "sampled"
    best_groups = None
    best_density = None
    for _ in range(n_samples):
        groups = _sample_groups(rng, counts, capacities)
        if groups is None:
            raise ConstructionError(
                "could not sample a placement honoring the replica counts"
            )
        graph = PlacementGraph(
            shape.num_gpus,
            tuple((tuple(sorted(g)), Fraction(w)) for g, w in zip(groups, expert_loads)),
        )
        report = density_oracle(graph, mode, samples=256, seed=seed)
        if best_density is None or report.density < best_density:
            best_density = report.density
            best_groups = groups
    assert best_groups is not None
    slots = _greedy_slots(shape.num_gpus, best_groups)
    return Placement(shape.num_gpus, tuple(best_groups), slots)


def symmetric_placement(shape: ClusterShape, seed: int = 0, n_samples: int = 64) -> Placement:
    """Catalogued symmetric placement, or the Monte-Carlo fallback with
    uniform replica counts for shapes outside the catalog."""
    try:
        return cayley_symmetric(shape)
    except ConstructionError:
        total = shape.num_experts * shape.d
        if total % shape.num_gpus == 0:
            return monte_carlo_placement(
                [1] * shape.num_experts,
                [shape.d] * shape.num_experts,
                shape,
                n_samples,
                seed,
            )
        return random_placement(shape, seed)


def identical_placement(shape: ClusterShape) -> Placement:
    """The merged-EP-groups layout: every EP group places experts
    identically. Consecutive expert ids share an EP rank (experts 0..k-1
    on rank 0, the next k on rank 1, ...), and each expert's EDP group
    is its rank's GPU in every group."""
    ep = shape.ep_degree
    if shape.num_experts % ep != 0:
        raise ConstructionError(
            f"{shape.num_experts} experts do not spread evenly over EP degree {ep}"
        )
    per_rank = shape.num_experts // ep
    groups = tuple(
        tuple(e // per_rank + k * ep for k in range(shape.d))
        for e in range(shape.num_experts)
    )
    slots = tuple(e % per_rank for e in range(shape.num_experts))
    return Placement(shape.num_gpus, groups, slots)


def validate_placement(
    placement: Placement, shape: ClusterShape, uniform: bool = False
) -> list[str]:
    """All invariant violations (empty list means the placement is valid)."""
    problems: list[str] = []
    if placement.num_experts != shape.num_experts:
        problems.append(
            f"expert count: placement has {placement.num_experts}, shape {shape.num_experts}"
        )
    if placement.num_gpus != shape.num_gpus:
        problems.append(
            f"gpu count: placement has {placement.num_gpus}, shape {shape.num_gpus}"
        )
    for e, group in enumerate(placement.edp_groups):
        if not group:
            problems.append(f"empty EDP group: expert {e}")
        if len(set(group)) != len(group):
            problems.append(f"duplicate GPU: expert {e} group {group}")
        for g in group:
            if not (0 <= g < shape.num_gpus):
                problems.append(f"range: expert {e} references GPU {g} of {shape.num_gpus}")
    num_gpus = min(placement.num_gpus, shape.num_gpus)
    for g in range(num_gpus):
        seen: dict[int, int] = {}
        for e in placement.hosted[g]:
            slot = placement.slots[e]
            if slot in seen:
                problems.append(
                    f"slot collision: experts {seen[slot]} and {e} share slot {slot} on GPU {g}"
                )
            else:
                seen[slot] = e
    if uniform:
        counts = placement.gpu_replica_counts()
        cap = sum(counts) // max(placement.num_gpus, 1)
        for g, c in enumerate(counts):
            if c != cap:
                problems.append(f"uniformity: GPU {g} hosts {c} replicas, capacity {cap}")
    return problems
