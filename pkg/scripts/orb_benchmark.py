"""Plain tabu search on the Orb (and optionally Taillard) benchmarks against the reference optima.

    python3 scripts/orb_benchmark.py --out runs/orb
    python3 scripts/orb_benchmark.py --taillard --max-iter 300
    python3 scripts/orb_benchmark.py --prove orb07

``--prove NAME`` seeds the exact solver with the best tabu result and tries
to prove optimality within ``--prove-limit`` seconds.
"""
import argparse

from jsporacle.bench import BenchSpec, ParamSpec, emit_table, run_bench
from jsporacle.exact import ExactConfig, solve_optimal
from jsporacle.instances import load_benchmark
from jsporacle.tabu import SearchConfig, search


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/orb")
    ap.add_argument("--max-iter", type=int, default=800)
    ap.add_argument("--restarts", type=int, default=2)
    ap.add_argument("--tenure", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--time-limit", type=float, default=60.0, help="per search run")
    ap.add_argument("--taillard", action="store_true", help="also run ta01-ta10")
    ap.add_argument("--prove", metavar="NAME")
    ap.add_argument("--prove-limit", type=float, default=600.0)
    args = ap.parse_args()

    if args.prove:
        inst = load_benchmark(args.prove)
        runs = [search(inst, None, SearchConfig(args.max_iter, args.restarts, args.tenure, seed=s))
                for s in range(args.seeds)]
        seed = min(runs, key=lambda r: r.makespan)
        print(f"{inst.id}: tabu incumbent {seed.makespan}")
        res = solve_optimal(inst, ExactConfig(time_limit=args.prove_limit, node_limit=10**12, incumbent=seed.best))
        print(f"{inst.id}: {res.status.value} {res.makespan} (lower bound {res.lower_bound}, "
              f"{res.nodes} nodes, {res.elapsed:.0f}s)")
        return

    names = [f"orb{k:02d}" for k in range(1, 10)]
    if args.taillard:
        names += [f"ta{k:02d}" for k in range(1, 11)]
    spec = BenchSpec(names, params=[ParamSpec(args.max_iter, args.restarts, args.tenure)],
                     seeds=args.seeds, time_limit=args.time_limit, output=args.out, timing=True)
    res = run_bench(spec)
    print(emit_table(res.per_instance), end="")
    within = sum(r["gap_sTS"] <= 5.0 for r in res.per_instance if r["instance"].startswith("orb"))
    print(f"\norb instances within 5% of the optimum: {within}/9")


if __name__ == "__main__":
    main()
