"""Fine-grained MoE load balancing by token scheduling.

Per micro-batch, expert loads are split across expert replicas by an
exact min-max solver, realized as token ranges by a locality-first
router; placements are constructed and scored through a weighted-graph
density oracle, adapted over time when predicted balance degrades, and
the whole loop is reproducible at desk scale by a trace-driven
simulator.
"""

from .core import (
    CapacityError,
    ClusterShape,
    ConfigError,
    ConstructionError,
    ContractViolation,
    DimensionError,
    HarmonyError,
    LoadMatrix,
    Placement,
    PlacementError,
    ReplicaLoadPlan,
    StaleStateError,
    Topology,
    TraceParseError,
    UndefinedMetricError,
    aggregate_expert_loads,
    balance_ratio,
)
from .scheduler import (
    BALANCE_ONLY,
    COMM_AWARE,
    TOPOLOGY_AWARE,
    CommPlanStats,
    SolveOptions,
    SolverState,
    integerize_plan,
    solve_comm_aware,
    solve_replica_loads,
    warm_solve,
)
from .router import (
    RoutingTable,
    TransferPlan,
    build_transfer_plan,
    route_tokens,
    route_topology_aware,
)
from .placement import (
    DensityReport,
    PlacementGraph,
    cayley_symmetric,
    density_oracle,
    greedy_replica_counts,
    identical_placement,
    monte_carlo_placement,
    random_placement,
    symmetric_placement,
    validate_placement,
)
from .adaptive import (
    LoadHistory,
    ReplacementDecision,
    ReplacementPolicy,
    evaluate_and_maybe_replace,
    predict_loads,
)
from .simulator import (
    STRATEGIES,
    CostModel,
    MicrobatchMetrics,
    RunResult,
    SweepResult,
    Workload,
    gen_zipf_workload,
    load_trace,
    run_skew_sweep,
    run_strategy,
    save_trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
