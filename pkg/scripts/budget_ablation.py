"""sTS vs oTS across search budgets on the desk suite.

    python3 scripts/budget_ablation.py --dataset runs/desk/dataset.jsonl --weights runs/desk/weights.bin

For each ``max_nonimproving`` value, prints optima counts, the paired
worse/better counts and the fraction of filtered iterations in which the
oracle removed at least one move.
"""
import argparse

from jsporacle.features import compute_features
from jsporacle.instances import dispatch
from jsporacle.labeling import load_dataset
from jsporacle.oracle import OracleModel
from jsporacle.tabu import OracleSpec, SearchConfig, search


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--weights", required=True)
    ap.add_argument("--budgets", type=int, nargs="+", default=[20, 60, 150, 500])
    ap.add_argument("--restarts", type=int, default=1)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scope", choices=["trajectory", "nonimproving"], default="trajectory")
    args = ap.parse_args()

    samples, insts = load_dataset(args.dataset)
    optima = {s.instance_id: s.c_max_opt for s in samples}
    model = OracleModel.load(args.weights)
    tables = {k: compute_features(v) for k, v in insts.items()}
    print(f"{'budget':>6} {'sTS':>5} {'oTS':>5} {'worse':>6} {'better':>6} {'filter':>7}")
    for budget in args.budgets:
        n_s = n_o = worse = better = calls = filtered = 0
        for key, inst in insts.items():
            for seed in range(args.seeds):
                init = dispatch(inst, "random", seed=seed)
                plain = search(inst, init, SearchConfig(budget, args.restarts, seed=seed)).makespan
                rep = search(inst, init, SearchConfig(budget, args.restarts, seed=seed, filter_scope=args.scope,
                                                      oracle=OracleSpec(model, tables[key])))
                n_s += plain == optima[key]
                n_o += rep.makespan == optima[key]
                worse += rep.makespan > plain
                better += rep.makespan < plain
                calls += rep.oracle_calls
                filtered += rep.filtered_iterations
        print(f"{budget:6d} {n_s:5d} {n_o:5d} {worse:6d} {better:6d} {filtered / max(calls, 1):7.2f}", flush=True)


if __name__ == "__main__":
    main()
