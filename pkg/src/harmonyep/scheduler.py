"""Per-micro-batch replica-load solving.

Given a placement and a load matrix, find per-replica loads minimizing
the maximum GPU load, subject to each expert distributing exactly its
total load across its EDP group with non-negative replica loads.

This is a bottleneck assignment problem: a max load ``m`` is feasible
iff the bipartite expert->GPU network (expert supply = its load, GPU
capacity = ``m``) carries all load. The solver therefore runs on exact
integers scaled by ``lcm(1..num_gpus)``:

1. probe a candidate ``m`` (starting from the mean GPU load and any
   cached critical subsets from a previous solve) with a max-flow
   feasibility check;
2. if infeasible, read the violating GPU subset off the min cut and
   raise ``m`` to that subset's density (contained load / subset size);
   repeat. The final ``m`` is exact and equals the maximum induced
   subgraph density of the placement graph.
3. canonicalize ties: among all optimal plans, return the
   lexicographically smallest in (expert id, GPU id) order, computed by
   fixing each replica load at its minimum feasible value in turn.

Because step 3 yields the unique lex-minimal optimum, the returned plan
is a pure function of (placement, loads): warm and cold solves return
bit-identical plans, which is what lets independent distributed
schedulers produce identical routings from identical inputs.

Warm starts reuse the previous flow and the previous critical subsets,
so repeated solves on one placement need fewer probes and fewer BFS
phases than cold solves; both are counted and exposed on the state.

Communication-aware modes trade maximum GPU load against all-to-all
volume (``comp + alpha * comm``) and are solved as explicit LPs by
:mod:`harmonyep.simplex`; see :func:`solve_comm_aware`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    ContractViolation,
    DimensionError,
    LoadMatrix,
    Placement,
    PlacementError,
    ReplicaLoadPlan,
    StaleStateError,
    Topology,
)
from .maxflow import Dinic
from .simplex import LinearProgram, SimplexResult, simplex_solve

BALANCE_ONLY = "balance_only"
COMM_AWARE = "comm_aware"
TOPOLOGY_AWARE = "topology_aware"

_MODES = (BALANCE_ONLY, COMM_AWARE, TOPOLOGY_AWARE)
_ARC_INF = 1 << 62
_MAX_CACHED_SUBSETS = 8


@dataclass(frozen=True)
class SolveOptions:
    """Solver configuration.

    ``alpha`` weighs communication volume in ``comm_aware`` mode;
    ``alpha_intra``/``alpha_inter`` weigh intra-/inter-node volume in
    ``topology_aware`` mode (intra-node links are faster, so
    ``alpha_intra <= alpha_inter``).
    """

    mode: str = BALANCE_ONLY
    alpha: float = 1.0
    alpha_intra: float = 0.1
    alpha_inter: float = 1.0
    tolerance: float = 1e-9
    warm_state: "SolverState | None" = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ContractViolation(f"unknown mode {self.mode!r}; expected one of {_MODES}")
        if self.alpha < 0 or self.alpha_intra < 0 or self.alpha_inter < 0:
            raise ContractViolation("communication weights must be >= 0")
        if self.alpha_intra > self.alpha_inter:
            raise ContractViolation(
                "alpha_intra must not exceed alpha_inter (intra-node links are cheaper)"
            )
        if self.tolerance < 0:
            raise ContractViolation("tolerance must be >= 0")


@dataclass(frozen=True)
class CommPlanStats:
    """Per-GPU all-to-all volumes implied by a plan.

    ``local[g]`` counts tokens kept on their source GPU
    (``sum_e min(x_e_g, input_e_g)`` over experts hosted on ``g``);
    ``send[g]`` counts every token leaving ``g`` (including tokens whose
    expert has no replica on ``g``); ``recv[g]`` counts tokens arriving.
    ``comp`` is the maximum GPU load and ``comm`` the maximum over GPUs
    of ``max(send, recv)``.
    """

    send: tuple
    recv: tuple
    local: tuple
    comp: object
    comm: object

    @classmethod
    def from_plan(cls, placement: Placement, loads: LoadMatrix, plan: ReplicaLoadPlan) -> "CommPlanStats":
        G = placement.num_gpus
        send = [0] * G
        recv = [0] * G
        local = [0] * G
        gpu_loads = [0] * G
        inputs = loads.entries
        for e, group in enumerate(placement.edp_groups):
            row = plan.entries[e]
            for g, x in zip(group, row):
                kept = min(x, inputs[e][g])
                local[g] += kept
                recv[g] += x - kept
                gpu_loads[g] += x
        for g in range(G):
            originated = sum(inputs[e][g] for e in range(loads.num_experts))
            send[g] = originated - local[g]
        comp = max(gpu_loads) if gpu_loads else 0
        comm = max((max(s, r) for s, r in zip(send, recv)), default=0)
        return cls(tuple(send), tuple(recv), tuple(local), comp, comm)


@dataclass
class SolveStats:
    solves: int = 0
    probes: int = 0
    bfs_phases: int = 0
    pivots: int = 0
    iterations_last: int = 0

    @property
    def iterations_total(self) -> int:
        return self.probes + self.bfs_phases + self.pivots


class SolverState:
    """Opaque warm-start state; reusable across micro-batches on one
    placement/mode. Single-threaded, but movable between threads."""

    def __init__(self, placement: Placement, options: SolveOptions, topology: Topology | None = None):
        self.placement = placement
        self.options = options
        self.topology = topology
        self.stats = SolveStats()
        self._flow: _BalanceNetwork | None = None
        self._critical: list[frozenset[int]] = []
        self._basis = None  # simplex basis for comm modes
        self.last_objective = None

    def _check_loads(self, loads: LoadMatrix) -> None:
        if loads.num_experts != self.placement.num_experts or loads.num_gpus != self.placement.num_gpus:
            raise StaleStateError(
                f"state placement is {self.placement.num_experts}x{self.placement.num_gpus}, "
                f"loads are {loads.num_experts}x{loads.num_gpus}"
            )


class _BalanceNetwork:
    """Persistent flow network for one placement (balance mode).

    Node layout: 0 = source, 1..E = experts, 1+E..E+G = GPUs, last = sink.
    All capacities are scaled by Q = lcm(1..G) so every candidate ``m``
    (a subset density, denominator <= G) becomes integral.
    """

    def __init__(self, placement: Placement):
        self.placement = placement
        E, G = placement.num_experts, placement.num_gpus
        self.Q = math.lcm(*range(1, G + 1))
        self.s = 0
        self.t = 1 + E + G
        self.net = Dinic(self.t + 1)
        self.src_edge = [
            self.net.add_edge(self.s, 1 + e, 0) for e in range(E)
        ]
        self.arc_edges: dict[tuple[int, int], int] = {}
        self.arcs_of_expert: list[list[tuple[int, int]]] = [[] for _ in range(E)]
        self.arcs_into_gpu: list[list[tuple[int, int]]] = [[] for _ in range(G)]
        for e, group in enumerate(placement.edp_groups):
            for g in group:
                eid = self.net.add_edge(1 + e, 1 + E + g, _ARC_INF)
                self.arc_edges[(e, g)] = eid
                self.arcs_of_expert[e].append((g, eid))
                self.arcs_into_gpu[g].append((e, eid))
        self.gpu_edge = [
            self.net.add_edge(1 + E + g, self.t, 0) for g in range(G)
        ]
        self.loads: tuple[int, ...] = (0,) * E
        self.base: tuple[int, ...] = (0,) * G
        self.cap_m_scaled = 0
        # experts with their full EDP group, sorted, for subset densities
        self._group_sets = [frozenset(g) for g in placement.edp_groups]

    # -- flow surgery ------------------------------------------------

    def _transfer_off(self, eid: int, amount: int) -> None:
        """Remove ``amount`` flow from edge ``eid`` (residual grows)."""
        self.net.cap[eid] += amount
        self.net.cap[eid ^ 1] -= amount

    def set_loads(self, totals: tuple[int, ...]) -> None:
        """Point the network at new expert loads, draining removed flow."""
        Q = self.Q
        for e, load in enumerate(totals):
            target = load * Q
            src = self.src_edge[e]
            flow = self.net.flow_on(src)
            if flow > target:
                excess = flow - target
                for g, arc in self.arcs_of_expert[e]:
                    take = min(self.net.flow_on(arc), excess)
                    if take:
                        self._transfer_off(arc, take)
                        self._transfer_off(self.gpu_edge[g], take)
                        excess -= take
                    if excess == 0:
                        break
                flow = target
            self.net.force_flow(src, flow, target)
        self.loads = tuple(totals)

    def set_base(self, base: tuple[int, ...]) -> None:
        self.base = tuple(base)

    def set_gpu_caps(self, m_scaled: int) -> None:
        """Set every GPU's scaled cap to m_scaled - base*Q, draining overflow."""
        Q = self.Q
        for g, edge in enumerate(self.gpu_edge):
            cap = m_scaled - self.base[g] * Q
            if cap < 0:
                cap = 0
            flow = self.net.flow_on(edge)
            if flow > cap:
                excess = flow - cap
                for e, arc in self.arcs_into_gpu[g]:
                    take = min(self.net.flow_on(arc), excess)
                    if take:
                        self._transfer_off(arc, take)
                        self._transfer_off(self.src_edge[e], take)
                        excess -= take
                    if excess == 0:
                        break
                flow = cap
            self.net.force_flow(edge, flow, cap)
        self.cap_m_scaled = m_scaled

    def current_flow(self) -> int:
        return sum(self.net.flow_on(eid) for eid in self.src_edge)

    def probe(self, m: Fraction) -> bool:
        """Feasibility of max GPU load ``m``; augments from current flow."""
        m_scaled = m.numerator * (self.Q // m.denominator)
        self.set_gpu_caps(m_scaled)
        demand = sum(self.loads) * self.Q
        self.net.max_flow(self.s, self.t)
        return self.current_flow() == demand

    def violating_subset(self) -> frozenset[int]:
        """After an infeasible probe: GPU subset whose density exceeds m."""
        E = self.placement.num_experts
        seen = self.net.min_cut_side(self.s)
        subset = frozenset(
            g for g in range(self.placement.num_gpus) if seen[1 + E + g]
        )
        if not subset:
            raise PlacementError(
                "no feasible assignment: an expert with positive load has an empty EDP group"
            )
        return subset

    def density(self, subset: frozenset[int]) -> Fraction:
        inside = sum(
            load
            for load, group in zip(self.loads, self._group_sets)
            if load and group and group <= subset
        )
        inside += sum(self.base[g] for g in subset)
        return Fraction(inside, len(subset))

    def lex_min_plan(self) -> dict[tuple[int, int], int]:
        """Fix each replica load at its minimum, in (expert, GPU) order.

        Requires a complete feasible flow at the optimal cap. Returns
        scaled integer loads per (expert, gpu); the network is left with
        all arcs removed (call :meth:`restore` afterwards).
        """
        fixed: dict[tuple[int, int], int] = {}
        E = self.placement.num_experts
        for (e, g) in sorted(self.arc_edges):
            arc = self.arc_edges[(e, g)]
            f = self.net.flow_on(arc)
            self.net.force_flow(arc, 0, 0)
            if f == 0:
                fixed[(e, g)] = 0
                continue
            self._transfer_off(self.gpu_edge[g], f)
            rerouted = self.net.max_flow(1 + e, self.t, limit=f)
            v = f - rerouted
            fixed[(e, g)] = v
            if v:
                src = self.src_edge[e]
                self.net.force_flow(src, self.net.flow_on(src) - v, self.net.flow_on(src) - v)
                gpu = self.gpu_edge[g]
                total_cap = self.net.cap[gpu] + self.net.cap[gpu ^ 1]
                self.net.force_flow(gpu, self.net.flow_on(gpu), total_cap - v)
        return fixed

    def restore(self, fixed: dict[tuple[int, int], int]) -> None:
        """Reinstate the lex-min flow so the network is reusable."""
        Q = self.Q
        gpu_flow = [0] * self.placement.num_gpus
        for (e, g), v in fixed.items():
            self.net.force_flow(self.arc_edges[(e, g)], v, _ARC_INF)
            gpu_flow[g] += v
        for e, load in enumerate(self.loads):
            self.net.force_flow(self.src_edge[e], load * Q, load * Q)
        for g, edge in enumerate(self.gpu_edge):
            cap = self.cap_m_scaled - self.base[g] * Q
            self.net.force_flow(edge, gpu_flow[g], max(cap, 0))


def _solve_balance_exact(
    state: SolverState,
    loads: LoadMatrix,
    base: tuple[int, ...] | None = None,
) -> tuple[Fraction, dict[tuple[int, int], int], int]:
    """Exact minimal max-load and the lex-min plan (scaled by Q)."""
    placement = state.placement
    totals = loads.expert_totals()
    for e, (load, group) in enumerate(zip(totals, placement.edp_groups)):
        if load > 0 and not group:
            raise PlacementError(f"expert {e} has load {load} but an empty EDP group")
    if state._flow is None:
        state._flow = _BalanceNetwork(placement)
    net = state._flow
    phases_before = net.net.bfs_phases
    probes = 0

    net.set_base(base if base is not None else (0,) * placement.num_gpus)
    net.set_loads(totals)
    full = frozenset(range(placement.num_gpus))
    candidates = [net.density(full), Fraction(max(net.base))]
    cached = state._critical
    candidates.extend(net.density(s) for s in cached)
    m = max(candidates)
    new_critical: list[frozenset[int]] = []
    while True:
        probes += 1
        if net.probe(m):
            break
        subset = net.violating_subset()
        new_m = net.density(subset)
        if new_m <= m:  # pragma: no cover - guards against cut misreads
            raise AssertionError("feasibility cut did not raise the bound")
        m = new_m
        new_critical.append(subset)

    fixed = net.lex_min_plan()
    net.restore(fixed)

    merged: list[frozenset[int]] = []
    for s in new_critical + list(cached):
        if s not in merged:
            merged.append(s)
        if len(merged) >= _MAX_CACHED_SUBSETS:
            break
    state._critical = merged
    state.stats.probes += probes
    state.stats.bfs_phases += net.net.bfs_phases - phases_before
    state.stats.iterations_last = probes + (net.net.bfs_phases - phases_before)
    state.stats.solves += 1
    return m, fixed, net.Q


def _plan_from_fixed(
    placement: Placement, fixed: dict[tuple[int, int], int], q: int, objective: Fraction
) -> ReplicaLoadPlan:
    entries = tuple(
        tuple(Fraction(fixed.get((e, g), 0), q) for g in group)
        for e, group in enumerate(placement.edp_groups)
    )
    return ReplicaLoadPlan(
        num_gpus=placement.num_gpus,
        groups=placement.edp_groups,
        entries=entries,
        objective=objective,
    )


def solve_replica_loads(
    placement: Placement,
    loads: LoadMatrix,
    options: SolveOptions | None = None,
    *,
    gpu_base: tuple[int, ...] | None = None,
) -> tuple[ReplicaLoadPlan, SolverState]:
    """Minimize the maximum GPU load; exact, deterministic, canonical.

    ``gpu_base`` optionally adds fixed per-GPU loads (tokens already
    assigned outside this solve, e.g. the statically routed part of a
    pipelined micro-batch) to each GPU's load expression.

    Returns the lex-minimal optimal plan and a state reusable by
    :func:`warm_solve`.
    """
    options = options or SolveOptions()
    if options.mode != BALANCE_ONLY:
        raise ContractViolation(
            f"solve_replica_loads requires mode={BALANCE_ONLY!r}; use solve_comm_aware"
        )
    if options.warm_state is not None:
        return warm_solve(options.warm_state, loads, gpu_base=gpu_base)
    _check_dims(placement, loads)
    state = SolverState(placement, options)
    m, fixed, q = _solve_balance_exact(state, loads, gpu_base)
    plan = _plan_from_fixed(placement, fixed, q, m)
    state.last_objective = m
    return plan, state


def warm_solve(
    prev_state: SolverState,
    new_loads: LoadMatrix,
    *,
    gpu_base: tuple[int, ...] | None = None,
) -> tuple[ReplicaLoadPlan, SolverState]:
    """Re-solve with new loads, reusing the previous solve's state.

    The constraint structure (the placement) must be unchanged; only the
    load bounds may vary. The objective and plan are identical to a cold
    solve; the warm path needs fewer probes and BFS phases.
    """
    if not isinstance(prev_state, SolverState):
        raise StaleStateError("warm state is not a SolverState")
    prev_state._check_loads(new_loads)
    if prev_state.options.mode == BALANCE_ONLY:
        m, fixed, q = _solve_balance_exact(prev_state, new_loads, gpu_base)
        plan = _plan_from_fixed(prev_state.placement, fixed, q, m)
        prev_state.last_objective = m
        return plan, prev_state
    if prev_state.topology is None:
        raise StaleStateError("comm-mode state lost its topology")
    plan, _stats, state = solve_comm_aware(
        prev_state.placement, new_loads, prev_state.topology, prev_state.options, _state=prev_state
    )
    return plan, state


def _check_dims(placement: Placement, loads: LoadMatrix) -> None:
    if loads.num_experts != placement.num_experts:
        raise DimensionError(
            f"loads cover {loads.num_experts} experts, placement {placement.num_experts}"
        )
    if loads.num_gpus != placement.num_gpus:
        raise DimensionError(
            f"loads cover {loads.num_gpus} GPUs, placement {placement.num_gpus}"
        )


# ---------------------------------------------------------------------------
# communication-aware modes (explicit LP)
# ---------------------------------------------------------------------------


def _comm_aware_lp(placement: Placement, loads: LoadMatrix, alpha: float) -> tuple[LinearProgram, list]:
    """min comp + alpha*comm with the local volume linearized.

    Variables: one x per replica, one l per replica (the locally kept
    volume, constrained l <= x and l <= input; objective pressure drives
    l to min(x, input)), then comp and comm.
    """
    arcs = [
        (e, g) for e, group in enumerate(placement.edp_groups) for g in group
    ]
    n_arc = len(arcs)
    E, G = placement.num_experts, placement.num_gpus
    n = 2 * n_arc + 2
    i_comp, i_comm = 2 * n_arc, 2 * n_arc + 1
    totals = loads.expert_totals()
    originated = [sum(loads.entries[e][g] for e in range(E)) for g in range(G)]

    c = np.zeros(n)
    c[i_comp] = 1.0
    c[i_comm] = alpha

    a_eq = np.zeros((E, n))
    b_eq = np.zeros(E)
    for k, (e, g) in enumerate(arcs):
        a_eq[e, k] = 1.0
    for e in range(E):
        b_eq[e] = totals[e]

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    # comp >= per-GPU load
    for g in range(G):
        row = np.zeros(n)
        for k, (e, gg) in enumerate(arcs):
            if gg == g:
                row[k] = 1.0
        row[i_comp] = -1.0
        rows.append(row)
        rhs.append(0.0)
    # l <= x and l <= input
    for k, (e, g) in enumerate(arcs):
        row = np.zeros(n)
        row[n_arc + k] = 1.0
        row[k] = -1.0
        rows.append(row)
        rhs.append(0.0)
        row = np.zeros(n)
        row[n_arc + k] = 1.0
        rows.append(row)
        rhs.append(float(loads.entries[e][g]))
    # send_g = originated_g - sum(l on g) <= comm ; recv_g = sum(x on g) - sum(l on g) <= comm
    for g in range(G):
        send = np.zeros(n)
        recv = np.zeros(n)
        for k, (e, gg) in enumerate(arcs):
            if gg == g:
                send[n_arc + k] = -1.0
                recv[k] = 1.0
                recv[n_arc + k] = -1.0
        send[i_comm] = -1.0
        recv[i_comm] = -1.0
        rows.append(send)
        rhs.append(-float(originated[g]))
        rows.append(recv)
        rhs.append(0.0)

    lp = LinearProgram(c=c, a_eq=a_eq, b_eq=b_eq, a_ub=np.array(rows), b_ub=np.array(rhs))
    return lp, arcs


def _topology_aware_lp(
    placement: Placement, loads: LoadMatrix, topology: Topology, alpha_intra: float, alpha_inter: float
) -> tuple[LinearProgram, list]:
    """min comp + a1*comm_intra + a2*comm_inter over explicit token flows.

    Variables f[(e, src, dst)] route expert e's tokens from their source
    GPU to a replica; same-GPU flow is local, same-node flow intra,
    cross-node flow inter.
    """
    E, G = placement.num_experts, placement.num_gpus
    flows = [
        (e, src, dst)
        for e, group in enumerate(placement.edp_groups)
        for src in range(G)
        for dst in group
    ]
    nf = len(flows)
    n = nf + 3
    i_comp, i_ci, i_cx = nf, nf + 1, nf + 2

    c = np.zeros(n)
    c[i_comp] = 1.0
    c[i_ci] = alpha_intra
    c[i_cx] = alpha_inter

    eq_index: dict[tuple[int, int], int] = {}
    eq_rows = []
    for e, group in enumerate(placement.edp_groups):
        if not group:
            continue
        for src in range(G):
            eq_index[(e, src)] = len(eq_rows)
            eq_rows.append((e, src))
    a_eq = np.zeros((len(eq_rows), n))
    b_eq = np.zeros(len(eq_rows))
    for k, (e, src, dst) in enumerate(flows):
        a_eq[eq_index[(e, src)], k] = 1.0
    for (e, src), r in eq_index.items():
        b_eq[r] = float(loads.entries[e][src])

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    comp_rows = [np.zeros(n) for _ in range(G)]
    si = [np.zeros(n) for _ in range(G)]
    ri = [np.zeros(n) for _ in range(G)]
    sx = [np.zeros(n) for _ in range(G)]
    rx = [np.zeros(n) for _ in range(G)]
    for k, (e, src, dst) in enumerate(flows):
        comp_rows[dst][k] = 1.0
        if src == dst:
            continue
        if topology.same_node(src, dst):
            si[src][k] = 1.0
            ri[dst][k] = 1.0
        else:
            sx[src][k] = 1.0
            rx[dst][k] = 1.0
    for g in range(G):
        comp_rows[g][i_comp] = -1.0
        rows.append(comp_rows[g])
        rhs.append(0.0)
    for g in range(G):
        for row, ivar in ((si[g], i_ci), (ri[g], i_ci), (sx[g], i_cx), (rx[g], i_cx)):
            if row.any():
                row[ivar] = -1.0
                rows.append(row)
                rhs.append(0.0)

    lp = LinearProgram(c=c, a_eq=a_eq, b_eq=b_eq, a_ub=np.array(rows), b_ub=np.array(rhs))
    return lp, flows


def solve_comm_aware(
    placement: Placement,
    loads: LoadMatrix,
    topology: Topology,
    options: SolveOptions,
    *,
    _state: SolverState | None = None,
) -> tuple[ReplicaLoadPlan, CommPlanStats, SolverState]:
    """Minimize comp + alpha*comm (or the intra/inter split by node).

    With alpha = 0 the optimal comp equals the balance-only objective.
    Stats are recomputed from the returned plan, so they match a
    recomputation from (plan, loads, placement) exactly.
    """
    if options.mode not in (COMM_AWARE, TOPOLOGY_AWARE):
        raise ContractViolation(
            f"solve_comm_aware requires mode in {{comm_aware, topology_aware}}, got {options.mode!r}"
        )
    if _state is None and options.warm_state is not None:
        _state = options.warm_state
    _check_dims(placement, loads)
    if topology.num_gpus != placement.num_gpus:
        raise DimensionError("topology does not match placement")
    totals = loads.expert_totals()
    for e, (load, group) in enumerate(zip(totals, placement.edp_groups)):
        if load > 0 and not group:
            raise PlacementError(f"expert {e} has load {load} but an empty EDP group")

    state = _state or SolverState(placement, options, topology)
    state._check_loads(loads)

    if options.mode == COMM_AWARE:
        lp, keys = _comm_aware_lp(placement, loads, options.alpha)
    else:
        lp, keys = _topology_aware_lp(
            placement, loads, topology, options.alpha_intra, options.alpha_inter
        )
    result: SimplexResult = simplex_solve(lp, basis=state._basis)
    state._basis = result.basis
    state.stats.pivots += result.iterations
    state.stats.iterations_last = result.iterations
    state.stats.solves += 1

    E, G = placement.num_experts, placement.num_gpus
    x = np.zeros((E, G))
    if options.mode == COMM_AWARE:
        for k, (e, g) in enumerate(keys):
            x[e, g] = result.x[k]
    else:
        for k, (e, src, dst) in enumerate(keys):
            x[e, dst] += result.x[k]
    entries = tuple(
        tuple(float(x[e, g]) for g in group)
        for e, group in enumerate(placement.edp_groups)
    )
    gpu_loads = [0.0] * G
    for e, group in enumerate(placement.edp_groups):
        for g, v in zip(group, entries[e]):
            gpu_loads[g] += v
    plan = ReplicaLoadPlan(
        num_gpus=G,
        groups=placement.edp_groups,
        entries=entries,
        objective=max(gpu_loads) if gpu_loads else 0.0,
    )
    stats = CommPlanStats.from_plan(placement, loads, plan)
    state.last_objective = result.objective
    return plan, stats, state


# ---------------------------------------------------------------------------
# integerization
# ---------------------------------------------------------------------------


def integerize_plan(plan: ReplicaLoadPlan) -> ReplicaLoadPlan:
    """Round fractional replica loads to integers, preserving totals.

    Largest-remainder per expert; remainder ties go to the lowest GPU id.
    Each entry moves by less than one token and per-expert sums are
    preserved exactly. Requires integer per-expert totals.
    """
    new_entries = []
    for e, (group, row) in enumerate(zip(plan.groups, plan.entries)):
        exact = [Fraction(v) if not isinstance(v, Fraction) else v for v in row]
        total = sum(exact)
        if isinstance(total, Fraction):
            rounded_total = round(total)
            if abs(total - rounded_total) > Fraction(1, 10**6):
                raise ContractViolation(
                    f"expert {e}: non-integer total load {float(total)!r}"
                )
        else:
            rounded_total = int(total)
        floors = [int(math.floor(v)) for v in exact]
        units = int(rounded_total) - sum(floors)
        remainders = sorted(
            range(len(row)),
            key=lambda i: (-(exact[i] - floors[i]), group[i]),
        )
        out = list(floors)
        for i in remainders[:units]:
            out[i] += 1
        new_entries.append(tuple(out))
    gpu_loads = [0] * plan.num_gpus
    for group, row in zip(plan.groups, new_entries):
        for g, v in zip(group, row):
            gpu_loads[g] += v
    return ReplicaLoadPlan(
        num_gpus=plan.num_gpus,
        groups=plan.groups,
        entries=tuple(new_entries),
        objective=max(gpu_loads) if gpu_loads else 0,
    )
