"""Compare the optimizers and baselines on the shipped 24-service fixture.

Run with ``python demos/optimizer_tour.py [seconds]``; the GA phase gets the
given time budget (default 30).
"""

import sys
import time

from migplan import io
from migplan.bench import baseline, cost_report, lower_bound
from migplan.fixtures import data_path, fixture_profiles
from migplan.ga import GaParams, two_phase
from migplan.greedy import fast_algo
from migplan.mcts import mcts_solve
from migplan.model import Workload
from migplan.rules import ConfigSpace


def main(budget: float = 30.0):
    wl = Workload(io.slos_from(io.read(data_path("mixed24_slos.json"), "slos")), fixture_profiles())
    space = ConfigSpace(wl)
    counts = {"A100-7/7": len(baseline("7of7", wl)), "A100-7x1/7": len(baseline("7x1", wl)),
              "A100-MIX": len(baseline("mix", wl))}
    print(f"{len(wl.services)} services, {len(space)} candidate GPU configurations, lower bound {lower_bound(wl)}")

    t = time.perf_counter()
    fast = fast_algo(wl.zeros(), space)
    print(f"fast_algo   {len(fast):3d} GPUs in {time.perf_counter() - t:.2f}s")
    t = time.perf_counter()
    slow = mcts_solve(wl.zeros(), space, iterations=100, rng=1)
    print(f"mcts_solve  {len(slow):3d} GPUs in {time.perf_counter() - t:.2f}s")
    t = time.perf_counter()
    ga = two_phase(wl, GaParams(time_budget=budget, stall_rounds=10**6, seed=1))
    print(f"two_phase   {ga.best.gpu_count:3d} GPUs in {time.perf_counter() - t:.0f}s "
          f"({len(ga.history) - 1} GA rounds)")

    counts["MIG-optimized"] = ga.best.gpu_count
    prices = io.read(data_path("prices.json"), "prices")
    for row in cost_report(counts, prices):
        print(f"  {row['configuration']:14s} {row['gpus']:3d} GPUs  normalized cost {row['normalized']:.2f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 30.0)
