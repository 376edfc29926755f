"""Command-line front end.

Subcommands: ``placement`` (construct and serialize placements),
``solve`` (one micro-batch: plan + routing CSV), ``sweep`` (skew sweep
from a JSON config; metrics CSV + summary JSON), and ``trace-convert``
(generate or validate workload trace CSVs).

All numeric output uses fixed 6-decimal formatting and all runs are
deterministic given their seeds, so outputs are byte-stable.

Exit codes: 0 success, 1 runtime error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .core import (
    ClusterShape,
    ConfigError,
    ConstructionError,
    ContractViolation,
    DimensionError,
    HarmonyError,
    LoadMatrix,
    Placement,
    Topology,
    balance_ratio,
)
from .placement import (
    PlacementGraph,
    cayley_symmetric,
    density_oracle,
    greedy_replica_counts,
    monte_carlo_placement,
    random_placement,
)
from .adaptive import ReplacementPolicy
from .router import build_transfer_plan, route_tokens, route_topology_aware
from .scheduler import (
    BALANCE_ONLY,
    COMM_AWARE,
    TOPOLOGY_AWARE,
    CommPlanStats,
    SolveOptions,
    integerize_plan,
    solve_comm_aware,
    solve_replica_loads,
)
from .simulator import (
    STRATEGIES,
    CostModel,
    SweepResult,
    default_workers,
    gen_zipf_workload,
    load_trace,
    run_skew_sweep,
    run_strategy,
    save_trace,
)

_USAGE_ERRORS = (ConfigError, ConstructionError, DimensionError, ContractViolation)


def _fmt(x) -> str:
    return f"{float(x):.6f}"


def load_loads_csv(path: str, num_experts: int, num_gpus: int) -> LoadMatrix:
    """Single micro-batch loads CSV with header expert,gpu,tokens."""
    import csv as _csv

    matrix = [[0] * num_gpus for _ in range(num_experts)]
    with open(path, newline="") as f:
        reader = _csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["expert", "gpu", "tokens"]:
            raise ConfigError([f"{path}: expected header expert,gpu,tokens"])
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                e, g, v = (int(x) for x in row)
            except ValueError:
                raise ConfigError([f"{path}:{line_no}: non-integer field"]) from None
            if not (0 <= e < num_experts) or not (0 <= g < num_gpus):
                raise DimensionError(f"{path}:{line_no}: (expert={e}, gpu={g}) out of range")
            if v < 0:
                raise ConfigError([f"{path}:{line_no}: negative token count"])
            matrix[e][g] += v
    return LoadMatrix(tuple(tuple(r) for r in matrix))


def _write_placement(placement: Placement, path: str | None) -> None:
    text = json.dumps(placement.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_placement(args) -> int:
    kinds = [k for k in ("cayley", "random", "asymmetric") if getattr(args, k)]
    if len(kinds) != 1:
        raise ConfigError(["choose exactly one of --cayley / --random / --asymmetric"])
    kind = kinds[0]
    if kind == "cayley":
        if args.p is None or args.q is None:
            raise ConfigError(["--cayley requires -p and -q"])
        shape = ClusterShape(
            num_gpus=1 << args.p,
            num_experts=1 << (args.p + args.q - 1),
            d=2,
        )
        placement = cayley_symmetric(shape)
    else:
        problems = []
        if args.gpus is None:
            problems.append("--gpus is required")
        if args.experts is None:
            problems.append("--experts is required")
        if problems:
            raise ConfigError(problems)
        shape = ClusterShape(num_gpus=args.gpus, num_experts=args.experts, d=args.d)
        if kind == "random":
            placement = random_placement(shape, args.seed)
        else:
            if not args.loads:
                raise ConfigError(["--asymmetric requires --loads"])
            loads = load_loads_csv(args.loads, shape.num_experts, shape.num_gpus)
            totals = loads.expert_totals()
            counts = greedy_replica_counts(
                totals, shape.num_experts * shape.d, max_count=shape.num_gpus
            )
            placement = monte_carlo_placement(totals, counts, shape, args.samples, args.seed)
    _write_placement(placement, args.output)
    if args.loads:
        loads = load_loads_csv(args.loads, placement.num_experts, placement.num_gpus)
        graph = PlacementGraph.from_placement(placement, loads.expert_totals())
        mode = "exact" if placement.num_gpus <= 24 else "sampled"
        report = density_oracle(graph, mode)
        print(f"density {_fmt(report.density)} at subset {list(report.best_subset)}")
    return 0


def cmd_solve(args) -> int:
    with open(args.placement) as f:
        placement = Placement.from_json_dict(json.load(f))
    loads = load_loads_csv(args.loads, placement.num_experts, placement.num_gpus)
    shape = ClusterShape(
        num_gpus=placement.num_gpus,
        num_experts=placement.num_experts,
        d=max((len(g) for g in placement.edp_groups), default=2),
        gpus_per_node=args.gpus_per_node or placement.num_gpus,
    )
    topology = Topology.from_shape(shape)
    mode = {"balance": BALANCE_ONLY, "comm-aware": COMM_AWARE, "topology-aware": TOPOLOGY_AWARE}[
        args.mode
    ]
    if mode == BALANCE_ONLY:
        options = SolveOptions()
        plan, _state = solve_replica_loads(placement, loads, options)
        stats = CommPlanStats.from_plan(placement, loads, plan)
        objective = plan.objective
    else:
        options = SolveOptions(
            mode=mode,
            alpha=args.alpha,
            alpha_intra=args.alpha_intra,
            alpha_inter=args.alpha_inter,
        )
        plan, stats, _state = solve_comm_aware(placement, loads, topology, options)
        objective = plan.objective
    int_plan = integerize_plan(plan)
    if mode == TOPOLOGY_AWARE:
        table = route_topology_aware(placement, loads, int_plan, topology)
    else:
        table = route_tokens(placement, loads, int_plan)
    print(f"m {_fmt(objective)}")
    total = loads.total()
    if total > 0:
        print(f"balance_ratio {_fmt(balance_ratio(int_plan, shape))}")
    else:
        print(f"balance_ratio {_fmt(1.0)}")
    print(f"comm {_fmt(stats.comm)}")
    transfer = build_transfer_plan(table, topology)
    print(
        f"a2a_intra {transfer.intra_volume} a2a_inter {transfer.inter_volume} "
        f"local {transfer.local_volume}"
    )
    if args.output:
        with open(args.output, "w") as f:
            f.write(table.to_csv())
    return 0


_CONFIG_KEYS = {
    "shape",
    "strategies",
    "placement",
    "workload",
    "cost",
    "adaptive",
    "output_dir",
}
_SHAPE_KEYS = {"num_gpus", "num_experts", "d", "gpus_per_node"}
_PLACEMENT_KEYS = {"kind", "seed", "samples", "path"}
_WORKLOAD_KEYS = {"kind", "s", "tokens_per_gpu", "microbatches", "seeds", "path"}
_COST_KEYS = {
    "t_token",
    "alpha_intra",
    "alpha_inter",
    "t_schedule",
    "overlap_schedule",
    "pipeline_ratio",
}
_ADAPTIVE_KEYS = {
    "enabled",
    "threshold",
    "check_interval",
    "window",
    "migration_cost",
    "mc_samples",
}


def _validate_config(cfg: dict) -> list[str]:
    problems: list[str] = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    for k in cfg:
        if k not in _CONFIG_KEYS:
            problems.append(f"unknown config key {k!r}")
    for key in ("shape", "strategies", "workload"):
        if key not in cfg:
            problems.append(f"missing required config key {key!r}")
    shape = cfg.get("shape", {})
    if isinstance(shape, dict):
        for k in shape:
            if k not in _SHAPE_KEYS:
                problems.append(f"unknown shape key {k!r}")
        for k in ("num_gpus", "num_experts", "d"):
            if k not in shape:
                problems.append(f"shape missing {k!r}")
    else:
        problems.append("shape must be an object")
    strategies = cfg.get("strategies", [])
    if not isinstance(strategies, list) or not strategies:
        problems.append("strategies must be a non-empty list")
    else:
        for s in strategies:
            if s not in STRATEGIES:
                problems.append(f"unknown strategy {s!r}")
    placement = cfg.get("placement", {"kind": "cayley"})
    if isinstance(placement, dict):
        for k in placement:
            if k not in _PLACEMENT_KEYS:
                problems.append(f"unknown placement key {k!r}")
        if placement.get("kind") not in ("cayley", "random", "asymmetric", "file"):
            problems.append(f"unknown placement kind {placement.get('kind')!r}")
        if placement.get("kind") == "file" and "path" not in placement:
            problems.append("placement kind 'file' requires 'path'")
    else:
        problems.append("placement must be an object")
    workload = cfg.get("workload", {})
    if isinstance(workload, dict):
        for k in workload:
            if k not in _WORKLOAD_KEYS:
                problems.append(f"unknown workload key {k!r}")
        kind = workload.get("kind")
        if kind == "zipf":
            for k in ("s", "tokens_per_gpu", "microbatches", "seeds"):
                if k not in workload:
                    problems.append(f"zipf workload missing {k!r}")
        elif kind == "trace":
            if "path" not in workload:
                problems.append("trace workload requires 'path'")
        else:
            problems.append(f"unknown workload kind {kind!r}")
    else:
        problems.append("workload must be an object")
    for section, keys in (("cost", _COST_KEYS), ("adaptive", _ADAPTIVE_KEYS)):
        sub = cfg.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            problems.append(f"{section} must be an object")
            continue
        for k in sub:
            if k not in keys:
                problems.append(f"unknown {section} key {k!r}")
    return problems


def _resolve_placement(cfg: dict, shape: ClusterShape, workload_cfg: dict) -> Placement:
    kind = cfg.get("kind", "cayley")
    seed = int(cfg.get("seed", 0))
    if kind == "cayley":
        return cayley_symmetric(shape)
    if kind == "random":
        return random_placement(shape, seed)
    if kind == "file":
        with open(cfg["path"]) as f:
            return Placement.from_json_dict(json.load(f))
    # asymmetric: size replicas from a one-micro-batch probe of the workload
    samples = int(cfg.get("samples", 200))
    s_values = workload_cfg.get("s", [1.0])
    s0 = float(s_values[0]) if isinstance(s_values, list) else float(s_values)
    probe = gen_zipf_workload(
        shape, s0, int(workload_cfg.get("tokens_per_gpu", 2048)), 1, seed
    )
    totals = probe.micro_batches[0].expert_totals()
    counts = greedy_replica_counts(
        totals, shape.num_experts * shape.d, max_count=shape.num_gpus
    )
    return monte_carlo_placement(totals, counts, shape, samples, seed)


def cmd_sweep(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    problems = _validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    shape = ClusterShape(
        num_gpus=int(cfg["shape"]["num_gpus"]),
        num_experts=int(cfg["shape"]["num_experts"]),
        d=int(cfg["shape"]["d"]),
        gpus_per_node=int(cfg["shape"].get("gpus_per_node", 0)),
    )
    strategies = args.strategies.split(",") if args.strategies else cfg["strategies"]
    cost = CostModel(**cfg.get("cost", {}))
    policy = None
    adaptive_cfg = cfg.get("adaptive")
    if adaptive_cfg and adaptive_cfg.get("enabled", True):
        policy = ReplacementPolicy(
            **{k: v for k, v in adaptive_cfg.items() if k != "enabled"}
        )
    placement = _resolve_placement(
        cfg.get("placement", {"kind": "cayley"}), shape, cfg["workload"]
    )
    out_dir = args.output_dir or cfg.get("output_dir", "out")
    os.makedirs(out_dir, exist_ok=True)

    workload_cfg = cfg["workload"]
    if workload_cfg["kind"] == "zipf":
        s_values = workload_cfg["s"]
        if not isinstance(s_values, list):
            s_values = [s_values]
        seeds = args.seeds or workload_cfg["seeds"]
        result = run_skew_sweep(
            shape,
            s_values,
            strategies,
            seeds,
            placement=placement,
            tokens_per_gpu=int(workload_cfg["tokens_per_gpu"]),
            n_microbatches=int(workload_cfg["microbatches"]),
            cost=cost,
            policy=policy,
            workers=default_workers(),
        )
    else:
        workload = load_trace(workload_cfg["path"], shape)
        from .placement import identical_placement
        from .simulator import SweepRow

        rows = []
        lp_solves: dict[str, int] = {}
        events: list[dict] = []
        for strategy in strategies:
            pl = identical_placement(shape) if strategy in ("vanilla_ep", "merged_ep") else placement
            res = run_strategy(workload, strategy, pl, cost, policy, seed=0)
            lp_solves[strategy] = res.lp_solves
            for ev in res.events:
                events.append({"strategy": strategy, "s": -1.0, "seed": 0, **ev})
            for m in res.metrics:
                rows.append(
                    SweepRow(
                        strategy=strategy,
                        s=-1.0,
                        seed=0,
                        microbatch=m.index,
                        max_load=m.max_gpu_load,
                        balance_ratio=m.balance_ratio,
                        a2a_intra=m.a2a_intra,
                        a2a_inter=m.a2a_inter,
                        local=m.local_volume,
                        layer_time=m.layer_time,
                    )
                )
        result = SweepResult(rows, lp_solves, events)

    with open(os.path.join(out_dir, "metrics.csv"), "w") as f:
        f.write(result.to_csv())
    summary = {"summary": result.summary(), "lp_solves": result.lp_solves}
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    if result.events:
        with open(os.path.join(out_dir, "events.jsonl"), "w") as f:
            for ev in result.events:
                f.write(json.dumps(ev, sort_keys=True) + "\n")
    print(f"wrote {out_dir}/metrics.csv and {out_dir}/summary.json")
    return 0


def cmd_trace_convert(args) -> int:
    shape = ClusterShape(
        num_gpus=args.gpus,
        num_experts=args.experts,
        d=args.d,
        gpus_per_node=args.gpus_per_node or 0,
    )
    if args.check:
        workload = load_trace(args.check, shape)
        totals = [mb.total() for mb in workload.micro_batches]
        print(
            f"trace ok: {len(workload.micro_batches)} micro-batches, "
            f"{sum(totals)} tokens"
        )
        return 0
    workload = gen_zipf_workload(
        shape, args.zipf, args.tokens, args.microbatches, args.seed
    )
    save_trace(workload, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harmonyep",
        description="Fine-grained MoE load balancing: placements, per-micro-batch "
        "scheduling, and skew sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("placement", help="construct a placement and write it as JSON")
    p.add_argument("--cayley", action="store_true", help="catalogued symmetric construction")
    p.add_argument("--random", action="store_true", help="uniform random balanced placement")
    p.add_argument("--asymmetric", action="store_true", help="greedy counts + Monte-Carlo layout")
    p.add_argument("-p", type=int, default=None, help="log2(num_gpus) for --cayley")
    p.add_argument("-q", type=int, default=None, help="log2(experts per GPU) for --cayley")
    p.add_argument("--gpus", type=int, default=None)
    p.add_argument("--experts", type=int, default=None)
    p.add_argument("-d", type=int, default=2, help="replicas per expert")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200, help="Monte-Carlo samples")
    p.add_argument("--loads", default=None, help="loads CSV (expert,gpu,tokens)")
    p.add_argument("-o", "--output", default=None, help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_placement)

    p = sub.add_parser("solve", help="solve one micro-batch and write the routing CSV")
    p.add_argument("--placement", required=True, help="placement JSON")
    p.add_argument("--loads", required=True, help="loads CSV (expert,gpu,tokens)")
    p.add_argument(
        "--mode",
        choices=["balance", "comm-aware", "topology-aware"],
        default="balance",
    )
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--alpha-intra", type=float, default=0.1)
    p.add_argument("--alpha-inter", type=float, default=1.0)
    p.add_argument("--gpus-per-node", type=int, default=None)
    p.add_argument("-o", "--output", default=None, help="routing CSV path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a skew sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None, help="overrides config output_dir")
    p.add_argument("--strategies", default=None, help="comma list, overrides config")
    p.add_argument("--seeds", type=int, nargs="*", default=None, help="overrides config seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace-convert", help="generate or validate a workload trace CSV")
    p.add_argument("--zipf", type=float, default=1.0, help="skew for generation")
    p.add_argument("--tokens", type=int, default=2048, help="tokens per source GPU")
    p.add_argument("--microbatches", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("-d", type=int, default=2)
    p.add_argument("--gpus-per-node", type=int, default=None)
    p.add_argument("--check", default=None, help="validate this trace instead of generating")
    p.add_argument("-o", "--output", default="trace.csv")
    p.set_defaults(func=cmd_trace_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        if isinstance(exc, ConfigError) and len(exc.problems) > 1:
            for p in exc.problems:
                print(f"config error: {p}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    except HarmonyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
