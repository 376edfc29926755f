"""Trace-driven micro-batch simulator.

Runs gate-output workloads (synthetic Zipf draws or CSV traces) through
a chosen parallelization strategy per micro-batch and applies an
abstract cost model. Strategies, from most to least constrained:

- ``vanilla_ep``: tokens stay inside their source EP group, each expert
  has exactly one replica per group; the per-GPU load is fixed by the
  gate output.
- ``merged_ep``: EP groups are merged but expert placement stays
  identical across groups, so load balancing happens only inside each
  expert's replica set.
- ``harmony``: full token scheduling over a shuffled placement:
  solve -> integerize -> route per micro-batch.
- ``harmony_comm_aware``: same, but the solve also minimizes all-to-all
  volume (node-topology-aware when the cluster has several nodes).
- ``harmony_pipelined``: a ``1 - pipeline_ratio`` share of every token
  stream is routed statically (even split across replicas) so its
  all-to-all can start immediately and hide the scheduling latency of
  the remaining share, which is then solved with the static part's
  per-GPU loads as constants.

Simulated time is abstract: with the defaults (t_token=1,
alpha_intra=0.1, alpha_inter=1.0, t_schedule=100) one unit is roughly a
token-microsecond. Layer time is always the exact sum of its breakdown
components. Absolute times are not calibration targets; balance ratios
and volumes are.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .adaptive import LoadHistory, ReplacementPolicy, evaluate_and_maybe_replace
from .core import (
    ClusterShape,
    ConfigError,
    ContractViolation,
    LoadMatrix,
    Placement,
    ReplicaLoadPlan,
    Topology,
    TraceParseError,
    aggregate_expert_loads,
    gpu_load_balance_ratio,
)
from .placement import identical_placement
from .router import RoutingTable, TransferPlan, build_transfer_plan, route_tokens, route_topology_aware
from .scheduler import (
    COMM_AWARE,
    TOPOLOGY_AWARE,
    SolveOptions,
    SolverState,
    integerize_plan,
    solve_comm_aware,
    solve_replica_loads,
    warm_solve,
)

STRATEGIES = (
    "vanilla_ep",
    "merged_ep",
    "harmony",
    "harmony_comm_aware",
    "harmony_pipelined",
)

METRICS_CSV_HEADER = (
    "strategy,s,seed,microbatch,max_load,balance_ratio,a2a_intra,a2a_inter,local,layer_time"
)


@dataclass(frozen=True)
class Workload:
    """An ordered list of per-micro-batch load matrices."""

    shape: ClusterShape
    micro_batches: tuple[LoadMatrix, ...]
    source: str = ""

    def __post_init__(self):
        for i, mb in enumerate(self.micro_batches):
            if mb.num_experts != self.shape.num_experts or mb.num_gpus != self.shape.num_gpus:
                raise ContractViolation(
                    f"micro-batch {i} is {mb.num_experts}x{mb.num_gpus}, "
                    f"shape wants {self.shape.num_experts}x{self.shape.num_gpus}"
                )


@dataclass(frozen=True)
class CostModel:
    """Abstract per-token compute/communication times.

    ``pipeline_ratio`` is the share of tokens that goes through the
    dynamically scheduled path in ``harmony_pipelined`` (1.0 = no
    pipelining). ``overlap_schedule`` hides the scheduling latency
    behind a concurrent device-side operation.
    """

    t_token: float = 1.0
    alpha_intra: float = 0.1
    alpha_inter: float = 1.0
    t_schedule: float = 100.0
    overlap_schedule: bool = False
    pipeline_ratio: float = 1.0

    def __post_init__(self):
        if min(self.t_token, self.alpha_intra, self.alpha_inter, self.t_schedule) < 0:
            raise ContractViolation("cost model times must be >= 0")
        if not (0.0 < self.pipeline_ratio <= 1.0):
            raise ContractViolation("pipeline_ratio must be in (0, 1]")


@dataclass(frozen=True)
class MicrobatchMetrics:
    index: int
    max_gpu_load: int
    balance_ratio: float
    a2a_intra: int
    a2a_inter: int
    local_volume: int
    layer_time: float
    schedule_time_hidden: bool
    breakdown: dict[str, float] = field(compare=False)


@dataclass
class RunResult:
    strategy: str
    metrics: list[MicrobatchMetrics]
    events: list[dict]
    lp_solves: int
    tables: list[RoutingTable] | None = None

    def mean_balance_ratio(self) -> float:
        return sum(m.balance_ratio for m in self.metrics) / max(len(self.metrics), 1)

    def max_balance_ratio(self) -> float:
        return max((m.balance_ratio for m in self.metrics), default=1.0)

    def mean_layer_time(self) -> float:
        return sum(m.layer_time for m in self.metrics) / max(len(self.metrics), 1)


# ---------------------------------------------------------------------------
# workload generation and traces
# ---------------------------------------------------------------------------


def zipf_probabilities(num_experts: int, s: float) -> np.ndarray:
    """Probability of the i-th most popular expert, proportional to (i+1)^-s."""
    weights = np.arange(1, num_experts + 1, dtype=np.float64) ** (-float(s))
    return weights / weights.sum()


def gen_zipf_workload(
    shape: ClusterShape,
    s: float,
    tokens_per_gpu: int,
    n_microbatches: int,
    seed: int,
) -> Workload:
    """Skewed synthetic workload.

    Expert popularity ranks are one random permutation per seed (the
    skew persists across micro-batches); each source GPU then draws
    ``tokens_per_gpu`` token-to-expert assignments per micro-batch, so
    per-GPU token counts are exact and fluctuation comes from sampling.
    """
    if s < 0:
        raise ContractViolation("zipf skew must be >= 0")
    if tokens_per_gpu < 0 or n_microbatches < 0:
        raise ContractViolation("token and micro-batch counts must be >= 0")
    rng = np.random.default_rng(seed)
    ranking = rng.permutation(shape.num_experts)
    probs = np.empty(shape.num_experts)
    probs[ranking] = zipf_probabilities(shape.num_experts, s)
    mbs = []
    for _ in range(n_microbatches):
        matrix = np.zeros((shape.num_experts, shape.num_gpus), dtype=np.int64)
        for g in range(shape.num_gpus):
            matrix[:, g] = rng.multinomial(tokens_per_gpu, probs)
        mbs.append(LoadMatrix.from_array(matrix))
    return Workload(
        shape,
        tuple(mbs),
        source=f"zipf(s={s}, seed={seed}, tokens_per_gpu={tokens_per_gpu})",
    )


def save_trace(workload: Workload, path: str) -> None:
    with open(path, "w", newline="") as f:
        f.write("microbatch,expert,gpu,tokens\n")
        for i, mb in enumerate(workload.micro_batches):
            for e, row in enumerate(mb.entries):
                for g, v in enumerate(row):
                    if v:
                        f.write(f"{i},{e},{g},{v}\n")


def load_trace(path: str, shape: ClusterShape) -> Workload:
    """Parse a trace CSV (microbatch, expert, gpu, tokens) into a workload."""
    if not os.path.exists(path):
        raise TraceParseError(f"no such trace file: {path}")
    per_mb: dict[int, np.ndarray] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError("empty file, expected a header row", 1) from None
        if [h.strip() for h in header] != ["microbatch", "expert", "gpu", "tokens"]:
            raise TraceParseError(
                f"bad header {header!r}, expected microbatch,expert,gpu,tokens", 1
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceParseError(f"expected 4 fields, got {len(row)}", line_no)
            try:
                mb, e, g, v = (int(x) for x in row)
            except ValueError:
                raise TraceParseError(f"non-integer field in {row!r}", line_no) from None
            if mb < 0:
                raise TraceParseError(f"negative micro-batch index {mb}", line_no)
            if not (0 <= e < shape.num_experts):
                raise TraceParseError(
                    f"expert {e} out of range 0..{shape.num_experts - 1}", line_no
                )
            if not (0 <= g < shape.num_gpus):
                raise TraceParseError(f"gpu {g} out of range 0..{shape.num_gpus - 1}", line_no)
            if v < 0:
                raise TraceParseError(f"negative token count {v}", line_no)
            if mb not in per_mb:
                per_mb[mb] = np.zeros((shape.num_experts, shape.num_gpus), dtype=np.int64)
            per_mb[mb][e, g] += v
    count = max(per_mb) + 1 if per_mb else 0
    mbs = []
    for i in range(count):
        matrix = per_mb.get(i)
        if matrix is None:
            matrix = np.zeros((shape.num_experts, shape.num_gpus), dtype=np.int64)
        mbs.append(LoadMatrix.from_array(matrix))
    return Workload(shape, tuple(mbs), source=f"trace:{path}")


# ---------------------------------------------------------------------------
# strategy execution
# ---------------------------------------------------------------------------


def _vanilla_plan(shape: ClusterShape, placement: Placement, loads: LoadMatrix) -> ReplicaLoadPlan:
    """Fixed assignment: each EP group's tokens stay on its own replica."""
    ep = shape.ep_degree
    entries = []
    for e, group in enumerate(placement.edp_groups):
        row = []
        for k, _g in enumerate(group):
            row.append(
                sum(loads.entries[e][src] for src in range(k * ep, (k + 1) * ep))
            )
        entries.append(tuple(row))
    gpu_loads = [0] * placement.num_gpus
    for group, row in zip(placement.edp_groups, entries):
        for g, v in zip(group, row):
            gpu_loads[g] += v
    return ReplicaLoadPlan(
        num_gpus=placement.num_gpus,
        groups=placement.edp_groups,
        entries=tuple(entries),
        objective=max(gpu_loads),
    )


def _require_identical(shape: ClusterShape, placement: Placement, strategy: str) -> None:
    expected = identical_placement(shape)
    if placement.edp_groups != expected.edp_groups:
        raise ConfigError(
            [f"{strategy} requires the identical per-EP-group placement for this shape"]
        )


def _split_loads(loads: LoadMatrix, static_share: Fraction) -> tuple[LoadMatrix, LoadMatrix]:
    former = []
    latter = []
    for row in loads.entries:
        frow = tuple(int(v * static_share) for v in row)
        former.append(frow)
        latter.append(tuple(v - fv for v, fv in zip(row, frow)))
    return LoadMatrix(tuple(former)), LoadMatrix(tuple(latter))


def _even_split_plan(placement: Placement, loads: LoadMatrix) -> ReplicaLoadPlan:
    """Every replica of an expert gets the same share of its load."""
    entries = []
    for e, group in enumerate(placement.edp_groups):
        total = sum(loads.entries[e])
        if group:
            share = Fraction(total, len(group))
            entries.append(tuple(share for _ in group))
        else:
            if total:
                raise ContractViolation(f"expert {e} has load but no replicas")
            entries.append(())
    gpu_loads = [Fraction(0)] * placement.num_gpus
    for group, row in zip(placement.edp_groups, entries):
        for g, v in zip(group, row):
            gpu_loads[g] += v
    return ReplicaLoadPlan(
        num_gpus=placement.num_gpus,
        groups=placement.edp_groups,
        entries=tuple(entries),
        objective=max(gpu_loads) if gpu_loads else 0,
    )


@dataclass
class _Phase:
    table: RoutingTable
    transfer: TransferPlan
    gpu_loads: tuple[int, ...]


def _comm_times(cost: CostModel, transfers: list[TransferPlan]) -> tuple[float, float]:
    intra = sum(cost.alpha_intra * t.max_intra() for t in transfers)
    inter = sum(cost.alpha_inter * t.max_inter() for t in transfers)
    return intra, inter


def run_strategy(
    workload: Workload,
    strategy: str,
    placement: Placement | None,
    cost: CostModel,
    policy: ReplacementPolicy | None = None,
    *,
    seed: int = 0,
    keep_tables: bool = False,
) -> RunResult:
    """Run every micro-batch under one strategy and collect metrics.

    ``placement`` may be None for vanilla_ep/merged_ep (the identical
    placement is implied). The adaptive ``policy`` only applies to the
    scheduling strategies; replacement pauses show up as migration time
    on the iteration where they happen.
    """
    if strategy not in STRATEGIES:
        raise ConfigError([f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"])
    shape = workload.shape
    topology = Topology.from_shape(shape)
    if strategy in ("vanilla_ep", "merged_ep"):
        placement = placement if placement is not None else identical_placement(shape)
        _require_identical(shape, placement, strategy)
    elif placement is None:
        raise ConfigError([f"{strategy} requires an explicit placement"])
    if placement.num_gpus != shape.num_gpus or placement.num_experts != shape.num_experts:
        raise ConfigError(["placement does not match the workload shape"])

    metrics: list[MicrobatchMetrics] = []
    events: list[dict] = []
    tables: list[RoutingTable] | None = [] if keep_tables else None
    lp_solves = 0
    state: SolverState | None = None
    history = LoadHistory(policy.window) if policy else None
    current = placement
    schedules = strategy != "vanilla_ep"
    static_share = Fraction(1) - Fraction(cost.pipeline_ratio)

    for i, loads in enumerate(workload.micro_batches):
        migration = 0.0
        if (
            policy is not None
            and schedules
            and strategy != "merged_ep"
            and i > 0
            and i % policy.check_interval == 0
            and len(history) > 0
        ):
            decision = evaluate_and_maybe_replace(current, history, policy, shape, seed)
            if decision.replaced:
                current = decision.placement
                state = None
                migration = decision.migration_cost_total
                events.append(decision.to_event(i))

        phases: list[_Phase] = []
        comm_former_time = 0.0
        if strategy == "vanilla_ep":
            plan = _vanilla_plan(shape, current, loads)
            phases.append(_route_phase(current, loads, plan, topology, False))
        elif strategy in ("merged_ep", "harmony"):
            if state is None:
                plan, state = solve_replica_loads(current, loads, SolveOptions())
            else:
                plan, state = warm_solve(state, loads)
            lp_solves += 1
            phases.append(_route_phase(current, loads, integerize_plan(plan), topology, False))
        elif strategy == "harmony_comm_aware":
            mode = TOPOLOGY_AWARE if topology.num_nodes > 1 else COMM_AWARE
            options = SolveOptions(
                mode=mode,
                alpha=cost.alpha_inter,
                alpha_intra=cost.alpha_intra,
                alpha_inter=cost.alpha_inter,
            )
            if state is None:
                plan, _stats, state = solve_comm_aware(current, loads, topology, options)
            else:
                plan, state = warm_solve(state, loads)
            lp_solves += 1
            phases.append(_route_phase(current, loads, integerize_plan(plan), topology, True))
        else:  # harmony_pipelined
            former_loads, latter_loads = _split_loads(loads, static_share)
            former_plan = integerize_plan(_even_split_plan(current, former_loads))
            former_phase = _route_phase(current, former_loads, former_plan, topology, False)
            base = former_phase.gpu_loads
            if state is None:
                plan, state = solve_replica_loads(
                    current, latter_loads, SolveOptions(), gpu_base=base
                )
            else:
                plan, state = warm_solve(state, latter_loads, gpu_base=base)
            lp_solves += 1
            latter_phase = _route_phase(current, latter_loads, integerize_plan(plan), topology, False)
            fintra, finter = _comm_times(cost, [former_phase.transfer])
            comm_former_time = fintra + finter
            phases = [former_phase, latter_phase]

        if not phases:
            raise AssertionError("strategy produced no phases")
        gpu_loads = [0] * shape.num_gpus
        for ph in phases:
            for g, v in enumerate(ph.gpu_loads):
                gpu_loads[g] += v
        max_load = max(gpu_loads)
        intra_time, inter_time = _comm_times(cost, [ph.transfer for ph in phases])
        if not schedules:
            schedule_visible = 0.0
            hidden = False
        elif cost.overlap_schedule:
            schedule_visible = 0.0
            hidden = True
        elif strategy == "harmony_pipelined":
            schedule_visible = max(0.0, cost.t_schedule - comm_former_time)
            hidden = schedule_visible == 0.0
        else:
            schedule_visible = cost.t_schedule
            hidden = False
        breakdown = {
            "compute": cost.t_token * max_load,
            "comm_intra": intra_time,
            "comm_inter": inter_time,
            "schedule": schedule_visible,
            "migration": migration,
        }
        metrics.append(
            MicrobatchMetrics(
                index=i,
                max_gpu_load=max_load,
                balance_ratio=gpu_load_balance_ratio(gpu_loads),
                a2a_intra=sum(ph.transfer.intra_volume for ph in phases),
                a2a_inter=sum(ph.transfer.inter_volume for ph in phases),
                local_volume=sum(ph.transfer.local_volume for ph in phases),
                layer_time=sum(breakdown.values()),
                schedule_time_hidden=hidden,
                breakdown=breakdown,
            )
        )
        if tables is not None:
            merged = tuple(r for ph in phases for r in ph.table.ranges)
            tables.append(RoutingTable(merged))
        if history is not None:
            history.push(aggregate_expert_loads(loads))

    return RunResult(strategy, metrics, events, lp_solves, tables)


def _route_phase(
    placement: Placement,
    loads: LoadMatrix,
    plan: ReplicaLoadPlan,
    topology: Topology,
    topo_aware: bool,
) -> _Phase:
    if topo_aware:
        table = route_topology_aware(placement, loads, plan, topology)
    else:
        table = route_tokens(placement, loads, plan)
    transfer = build_transfer_plan(table, topology)
    gpu_loads = tuple(int(v) for v in plan.gpu_loads())
    return _Phase(table, transfer, gpu_loads)


# ---------------------------------------------------------------------------
# skew sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    strategy: str
    s: float
    seed: int
    microbatch: int
    max_load: int
    balance_ratio: float
    a2a_intra: int
    a2a_inter: int
    local: int
    layer_time: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    lp_solves: dict[str, int]
    events: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(METRICS_CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(
                f"{r.strategy},{r.s:.6f},{r.seed},{r.microbatch},{r.max_load},"
                f"{r.balance_ratio:.6f},{r.a2a_intra},{r.a2a_inter},{r.local},"
                f"{r.layer_time:.6f}\n"
            )
        return buf.getvalue()

    def summary(self) -> dict:
        groups: dict[tuple[str, float], list[SweepRow]] = {}
        for r in self.rows:
            groups.setdefault((r.strategy, r.s), []).append(r)
        out: dict[str, dict] = {}
        for (strategy, s), rows in sorted(groups.items()):
            ratios = sorted(r.balance_ratio for r in rows)
            p99 = ratios[min(len(ratios) - 1, int(0.99 * len(ratios)))]
            out.setdefault(strategy, {})[f"{s:.6f}"] = {
                "mean_balance_ratio": round(sum(ratios) / len(ratios), 6),
                "max_balance_ratio": round(ratios[-1], 6),
                "p99_balance_ratio": round(p99, 6),
                "mean_layer_time": round(
                    sum(r.layer_time for r in rows) / len(rows), 6
                ),
            }
        return out


def default_workers() -> int:
    env = os.environ.get("HARMONY_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def run_skew_sweep(
    shape: ClusterShape,
    s_values,
    strategies,
    seeds,
    *,
    placement: Placement | None = None,
    tokens_per_gpu: int = 2048,
    n_microbatches: int = 50,
    cost: CostModel | None = None,
    policy: ReplacementPolicy | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Mean/max balance ratios per (strategy, skew) over seeded runs.

    The workload for a given (s, seed) is shared by all strategies so
    dominance comparisons see identical loads. Runs execute in worker
    threads (capped by HARMONY_THREADS) and results merge in a fixed
    order regardless of completion order.
    """
    cost = cost or CostModel()
    for st in strategies:
        if st not in STRATEGIES:
            raise ConfigError([f"unknown strategy {st!r}"])
    tasks = [
        (strategy, float(s), int(seed))
        for strategy in strategies
        for s in s_values
        for seed in seeds
    ]

    def run_one(task):
        strategy, s, seed = task
        workload = gen_zipf_workload(shape, s, tokens_per_gpu, n_microbatches, seed)
        pl = placement
        if strategy in ("vanilla_ep", "merged_ep"):
            pl = identical_placement(shape)
        result = run_strategy(workload, strategy, pl, cost, policy, seed=seed)
        return task, result

    n_workers = workers if workers is not None else default_workers()
    results: dict[tuple, RunResult] = {}
    if n_workers <= 1:
        for task in tasks:
            key, res = run_one(task)
            results[key] = res
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for key, res in pool.map(run_one, tasks):
                results[key] = res

    rows: list[SweepRow] = []
    lp_solves: dict[str, int] = {}
    events: list[dict] = []
    for task in tasks:
        strategy, s, seed = task
        res = results[task]
        lp_solves[strategy] = lp_solves.get(strategy, 0) + res.lp_solves
        for ev in res.events:
            events.append({"strategy": strategy, "s": s, "seed": seed, **ev})
        for m in res.metrics:
            rows.append(
                SweepRow(
                    strategy=strategy,
                    s=s,
                    seed=seed,
                    microbatch=m.index,
                    max_load=m.max_gpu_load,
                    balance_ratio=m.balance_ratio,
                    a2a_intra=m.a2a_intra,
                    a2a_inter=m.a2a_inter,
                    local=m.local_volume,
                    layer_time=m.layer_time,
                )
            )
    return SweepResult(rows, lp_solves, events)
