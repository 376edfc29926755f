#!/usr/bin/env python3
"""Compare placement strategies by their predicted balance ratio.

For each skew level, draws workloads and scores identical, random,
catalogued-symmetric, and asymmetric (greedy + Monte-Carlo) placements
with the exact density oracle: ratio = max induced density / mean GPU
load. 1.0 means token scheduling can balance the micro-batch perfectly
on that placement.

Usage: python scripts/compare_placements.py [--gpus 8 --experts 32]
"""

import argparse
import os
import sys
from fractions import Fraction

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from harmonyep import (  # noqa: E402
    ClusterShape,
    PlacementGraph,
    density_oracle,
    gen_zipf_workload,
    greedy_replica_counts,
    identical_placement,
    monte_carlo_placement,
    random_placement,
    symmetric_placement,
)


def predicted_ratio(placement, loads, num_gpus):
    total = sum(loads)
    if total == 0:
        return 1.0
    graph = PlacementGraph.from_placement(placement, loads)
    density = density_oracle(graph).density
    return float(density / (Fraction(total) / num_gpus))


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--gpus", type=int, default=8)
    parser.add_argument("--experts", type=int, default=32)
    parser.add_argument("--tokens", type=int, default=2048)
    parser.add_argument("--microbatches", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--mc-samples", type=int, default=200)
    args = parser.parse_args()

    shape = ClusterShape(args.gpus, args.experts, 2)
    static = {
        "identical": identical_placement(shape),
        "random": random_placement(shape, args.seed),
        "symmetric": symmetric_placement(shape, args.seed),
    }

    s_values = [0.2, 0.4, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0]
    names = list(static) + ["asymmetric"]
    print(f"{'s':>5}  " + "  ".join(f"{n:>10}" for n in names))
    for s in s_values:
        workload = gen_zipf_workload(
            shape, s, args.tokens, args.microbatches, args.seed
        )
        sums = {n: 0.0 for n in names}
        for mb in workload.micro_batches:
            loads = mb.expert_totals()
            for name, pl in static.items():
                sums[name] += predicted_ratio(pl, loads, shape.num_gpus)
            counts = greedy_replica_counts(
                loads, shape.num_experts * shape.d, max_count=shape.num_gpus
            )
            asym = monte_carlo_placement(
                loads, counts, shape, args.mc_samples, args.seed
            )
            sums["asymmetric"] += predicted_ratio(asym, loads, shape.num_gpus)
        n = len(workload.micro_batches)
        print(f"{s:>5.2f}  " + "  ".join(f"{sums[name] / n:>10.4f}" for name in names))
    return 0


if __name__ == "__main__":
    sys.exit(main())
