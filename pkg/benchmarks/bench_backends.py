"""Wall-clock comparison of the numba and numpy backends.

Each backend runs in its own interpreter because the choice is fixed at
import time.  Usage::

    python benchmarks/bench_backends.py [--replicas 2000] [--n 200]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
from ssmc import backend
from ssmc.montecarlo import ExperimentPlan, run_absorption, run_marginals

n, R = int(sys.argv[1]), int(sys.argv[2])
plan = ExperimentPlan(kernel={"family": "bessel", "d": 3}, scaling={"gamma": 2}, starts=[n],
                      replicas=R, seed=1, t_list=[0.05, 0.2])
small = ExperimentPlan(kernel=plan.kernel, scaling=plan.scaling, starts=[10], replicas=4, seed=0, t_list=[0.1])
run_absorption(small); run_marginals(small)  # compile / warm caches
out = {"backend": backend()}
t = time.perf_counter(); s = run_absorption(plan); out["absorption_s"] = time.perf_counter() - t
out["steps"] = int(s.absorption.sum())
t = time.perf_counter(); run_marginals(plan); out["marginals_s"] = time.perf_counter() - t
print(json.dumps(out))
"""


def run(backend, n, replicas):
    env = dict(os.environ, SSMC_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(n), str(replicas)], capture_output=True, text=True, env=env)
    if res.returncode:
        raise SystemExit(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100, help="start state of the Bessel d=3 walk")
    ap.add_argument("--replicas", type=int, default=500)
    args = ap.parse_args()
    rows = [run(b, args.n, args.replicas) for b in ("numba", "numpy")]
    print(f"Bessel d=3, n={args.n}, R={args.replicas}, {rows[0]['steps']} chain steps in the absorption run")
    print(f"{'backend':<8}{'absorption [s]':>16}{'marginals [s]':>16}{'steps/s':>14}")
    for r in rows:
        print(f"{r['backend']:<8}{r['absorption_s']:>16.3f}{r['marginals_s']:>16.3f}{r['steps'] / r['absorption_s']:>14.3g}")
    print(f"speed-up (absorption): {rows[1]['absorption_s'] / rows[0]['absorption_s']:.1f}x")


if __name__ == "__main__":
    main()
