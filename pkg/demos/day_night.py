"""Day/night walkthrough: size both deployments, then move between them safely.

Run with ``python demos/day_night.py``. Everything is simulated; no GPUs needed.
"""

from migplan.bench import baseline, lower_bound
from migplan.cluster import Guard, reaches, run_plan
from migplan.fixtures import day_services, fixture_profiles, night_services
from migplan.greedy import fast_algo
from migplan.model import Deployment, Workload
from migplan.rules import ConfigSpace
from migplan.transition import plan_transition


def size(name, wl):
    dep = Deployment(tuple(fast_algo(wl.zeros(), ConfigSpace(wl))))
    whole = len(baseline("7of7", wl))
    print(f"{name:5s} {len(wl.services)} services: {len(dep)} MIG GPUs, {whole} whole GPUs, lower bound {lower_bound(wl)}")
    return dep


def move(label, old, new, old_wl, new_wl):
    plan = plan_transition(old, new, 0, old_workload=old_wl, new_workload=new_wl)
    rep = run_plan(plan.initial, plan, guard=Guard.from_workloads(old_wl, new_wl))
    kinds = ", ".join(f"{k} {n}" for k, n in sorted(plan.kinds().items()))
    print(f"{label}: {len(plan.stages)} stages ({kinds}), {rep.wall_ms / 1000:.0f}s simulated, "
          f"safe={rep.safe}, reached target={reaches(rep.final_state, new)}, peak {rep.peak_gpus} GPUs")


def main():
    profiles = fixture_profiles()
    day = Workload(day_services(), profiles)
    night = Workload(night_services(), profiles)
    d, n = size("day", day), size("night", night)
    move("day -> night", d, n, day, night)
    move("night -> day", n, d, night, day)


if __name__ == "__main__":
    main()
