"""Command-line entry point.

Exit status: 0 on success, 1 on planning or validation errors, 2 on usage,
malformed JSON or schema errors. Data goes to files (or stdout without -o);
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _stdio
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .bench import BaselineError, OracleBudgetError, baseline, brute_force_optimum, cost_report, gen_workload, lower_bound
from .cluster import ActionCostModel, ExecutionError, Guard, run_plan
from .ga import GaParams, two_phase
from .greedy import PlanningError, fast_algo
from .mcts import EstimationError, mcts_solve
from .model import ConfigurationError, Deployment, Workload
from .rules import DEFAULT_RULES, ConfigSpace, PartitionRuleSet, enumerate_maximal_partitions, is_legal_partition
from .transition import plan_transition

FORMATS = """\
file formats (JSON, unknown fields rejected):
  profiles    {"models":[{"name","entries":[{"size","batch","throughput_rps","p90_ms"}]}]}
  slos        {"services":[{"id","model","required_rps","max_p90_ms"}]}
  deployment  {"gpus":[{"id","instances":[{"size","slot","service","batch"}]}]}
  plan        {"extra_gpu_budget","stages":[[{"kind","gpu","size","slot","service","batch",
               "target_gpu","target_slot","remove","add"}]]}
  cluster     {"machines":[{"id","gpus":[{"id","instances":[...],"idle":[{"size","slot"}]}]}]}
  costs       {"create","delete","migrate_local","migrate_remote","repartition"} in ms
  rules       {"slot_positions","memory_weight","hard_exclusions","memory_budget"}
  prices      {"<configuration>": usd_per_gpu_hour}   counts {"<configuration>": gpus}
"""


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------


def _rules(args) -> PartitionRuleSet:
    if getattr(args, "rules", None):
        return PartitionRuleSet.from_dict(io.read(args.rules, "rules"))
    return DEFAULT_RULES


def _workload(slos_path, profiles) -> Workload:
    return Workload(io.slos_from(io.read(slos_path, "slos")), profiles)


def _profiles(args):
    return io.profiles_from(io.read(args.profiles, "profiles"))


def _deployment(path, rules) -> Deployment:
    dep = io.deployment_from(io.read(path, "deployment"))
    for gid, g in zip(dep.gpu_ids, dep.gpus):
        if len(g.partition) != len(g.instances) or not is_legal_partition(g.partition, rules):
            raise ConfigurationError(f"{path}: GPU {gid} holds an illegal partition {g}")
    return dep


def _inputs(args) -> list[str]:
    keys = ("slos", "profiles", "rules", "old", "new", "old_slos", "new_slos", "state", "plan", "costs",
            "prices", "counts")
    return [getattr(args, k) for k in keys if getattr(args, k, None)]


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _emit(args, doc, started: float, extra_outputs=()):
    text = io.dumps(doc)
    if not args.out:
        sys.stdout.write(text)
        return
    Path(args.out).write_text(text)
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "inputs": {p: _digest(p) for p in _inputs(args)},
        "outputs": [args.out, *extra_outputs],
        "tool_version": __version__,
        "wall_time": time.monotonic() - started,
    }
    Path(f"{args.out}.manifest.json").write_text(io.dumps(manifest))


def _write_lines(path, rows):
    if path:
        Path(path).write_text(io.dump_lines(rows))


def _need_seed(args):
    if args.seed is None:
        raise UsageError(f"--seed is required for {args.command} in this mode")


# -- subcommands --------------------------------------------------------------


def cmd_optimize(args, started):
    rules = _rules(args)
    wl = _workload(args.slos, _profiles(args))
    space = ConfigSpace(wl, rules)
    trace: list = []
    if args.mode == "fast":
        gpus = fast_algo(wl.zeros(), space, trace=trace)
    elif args.mode == "mcts":
        _need_seed(args)
        gpus = mcts_solve(wl.zeros(), space, iterations=args.budget_iters, top_k_children=args.topk,
                          rng=np.random.default_rng(args.seed), trace=trace)
    else:
        _need_seed(args)
        params = GaParams(population=args.population, erase_fraction=args.erase_fraction, max_rounds=args.ga_rounds,
                          time_budget=args.time_budget, mcts_iterations=args.budget_iters, top_k=args.topk,
                          seed=args.seed, workers=args.workers)
        result = two_phase(wl, params, space, progress=trace.append)
        gpus = list(result.best.gpus)
    _write_lines(args.trace, trace)
    _emit(args, io.deployment_doc(Deployment(tuple(gpus))), started, [args.trace] if args.trace else [])


def cmd_baseline(args, started):
    wl = _workload(args.slos, _profiles(args))
    _emit(args, io.deployment_doc(baseline(args.kind, wl)), started)


def cmd_lowerbound(args, started):
    wl = _workload(args.slos, _profiles(args))
    _emit(args, {"lower_bound_gpus": lower_bound(wl)}, started)


def cmd_oracle(args, started):
    rules = _rules(args)
    wl = _workload(args.slos, _profiles(args))
    dep = brute_force_optimum(wl, rules, cap=args.cap, node_budget=args.node_budget)
    doc = {"cap": args.cap, "optimum_gpus": None if dep is None else len(dep),
           "deployment": None if dep is None else io.deployment_doc(dep)}
    _emit(args, doc, started)


def cmd_enumerate(args, started):
    parts = enumerate_maximal_partitions(_rules(args))
    doc = {"count": len(parts), "partitions": [
        {"sizes": list(p.sizes), "placements": [{"size": q.size, "slot": q.start} for q in sorted(p.placements)]}
        for p in parts]}
    _emit(args, doc, started)


def cmd_gen_workload(args, started):
    _need_seed(args)
    if args.profiles:
        models = sorted(_profiles(args))
    else:
        from .fixtures import MODEL_FAMILIES
        models = sorted(MODEL_FAMILIES)
    if args.models:
        unknown = sorted(set(args.models) - set(models))
        if unknown:
            raise ConfigurationError(f"unknown models {unknown}")
        models = args.models
    spec = gen_workload(args.n, args.dist, models=models, latency_ms=args.latency_ms, seed=args.seed)
    _emit(args, io.slos_doc(spec.services), started)


def cmd_transition(args, started):
    rules = _rules(args)
    profiles = _profiles(args)
    old_wl = _workload(args.old_slos, profiles)
    new_wl = _workload(args.new_slos, profiles)
    old, new = _deployment(args.old, rules), _deployment(args.new, rules)
    plan = plan_transition(old, new, args.extra_gpus, old_workload=old_wl, new_workload=new_wl,
                           gpus_per_machine=args.gpus_per_machine, rules=rules)
    extra = []
    if args.state_out:
        io.write(args.state_out, io.cluster_doc(plan.initial))
        extra.append(args.state_out)
    _emit(args, io.plan_doc(plan), started, extra)


def cmd_simulate(args, started):
    rules = _rules(args)
    profiles = _profiles(args)
    state = io.cluster_from(io.read(args.state, "cluster"))
    for g in state.gpus.values():
        if not is_legal_partition(g.partition, rules):
            raise ConfigurationError(f"{args.state}: GPU {g.gpu_id} starts in an illegal partition")
    plan = io.plan_from(io.read(args.plan, "plan"))
    costs = io.costs_from(io.read(args.costs, "costs")) if args.costs else ActionCostModel()
    guard = Guard.from_workloads(_workload(args.old_slos, profiles), _workload(args.new_slos, profiles))
    report = run_plan(state, plan, costs, guard, rules)
    _emit(args, report.to_dict(), started)
    if not report.safe:
        print(f"simulate: plan is unsafe: {report.violations[0]}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args, started):
    prices = io.read(args.prices, "prices")
    counts = io.read(args.counts, "counts")
    rows = cost_report(counts, prices)
    if args.csv:
        buf = _stdio.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
        Path(args.csv).write_text(buf.getvalue())
    _emit(args, {"rows": rows}, started, [args.csv] if args.csv else [])


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="migplan", description="MIG-aware deployment optimizer and transition planner.",
                                epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=func)
        sp.add_argument("-o", "--out", help="output file (default: stdout)")
        return sp

    def workload_args(sp, rules=True):
        sp.add_argument("--slos", required=True)
        sp.add_argument("--profiles", required=True)
        if rules:
            sp.add_argument("--rules")

    sp = add("optimize", cmd_optimize, "compute a deployment")
    workload_args(sp)
    sp.add_argument("--mode", choices=("fast", "mcts", "full"), default="fast")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--budget-iters", type=int, default=200, help="MCTS iterations (per crossover in full mode)")
    sp.add_argument("--topk", type=int, default=10)
    sp.add_argument("--time-budget", type=float, help="seconds for the GA phase")
    sp.add_argument("--ga-rounds", type=int, help="maximum GA rounds")
    sp.add_argument("--population", type=int, default=16)
    sp.add_argument("--erase-fraction", type=float, default=0.10)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--trace", help="JSON-lines trace / progress log")

    sp = add("baseline", cmd_baseline, "deployment under a fixed-partition baseline")
    workload_args(sp, rules=False)
    sp.add_argument("--kind", required=True, choices=("7of7", "7x1", "mix"))

    sp = add("lowerbound", cmd_lowerbound, "GPU lower bound ignoring placement rules")
    workload_args(sp, rules=False)

    sp = add("oracle", cmd_oracle, "exhaustive minimum-GPU deployment for tiny workloads")
    workload_args(sp)
    sp.add_argument("--cap", type=int, default=3)
    sp.add_argument("--node-budget", type=int, default=2_000_000)

    sp = add("enumerate-partitions", cmd_enumerate, "print the maximal legal partitions")
    sp.add_argument("--rules")

    sp = add("gen-workload", cmd_gen_workload, "draw a random SLO file")
    sp.add_argument("--dist", choices=("normal", "lognormal"), default="lognormal")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--models", nargs="+")
    sp.add_argument("--profiles", help="take model names from this profile file")
    sp.add_argument("--latency-ms", type=float, default=100.0)

    sp = add("transition", cmd_transition, "plan the move between two deployments")
    sp.add_argument("--from", dest="old", required=True)
    sp.add_argument("--to", dest="new", required=True)
    sp.add_argument("--old-slos", required=True)
    sp.add_argument("--new-slos", required=True)
    sp.add_argument("--profiles", required=True)
    sp.add_argument("--extra-gpus", type=int, default=0)
    sp.add_argument("--gpus-per-machine", type=int, default=8)
    sp.add_argument("--state-out", help="write the starting cluster state (old GPUs plus spares)")
    sp.add_argument("--rules")

    sp = add("simulate", cmd_simulate, "execute a plan on a simulated cluster")
    sp.add_argument("--state", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--costs")
    sp.add_argument("--old-slos", required=True)
    sp.add_argument("--new-slos", required=True)
    sp.add_argument("--profiles", required=True)
    sp.add_argument("--rules")

    sp = add("report", cmd_report, "normalized cost table")
    sp.add_argument("--prices", required=True)
    sp.add_argument("--counts", required=True, help="configuration -> GPU count")
    sp.add_argument("--csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.monotonic()
    try:
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args, started) or 0
    except (UsageError, io.SchemaError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, PlanningError, ExecutionError, BaselineError, OracleBudgetError, EstimationError,
            ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
