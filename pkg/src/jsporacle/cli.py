"""Command-line entry point: ``python3 -m jsporacle <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("jsporacle")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _fraction(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _instance(entry):
    from .instances import BENCHMARKS, load_benchmark, load_instance

    return load_benchmark(entry) if entry.lower() in BENCHMARKS else load_instance(entry)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    from .instances import GenSpec, generate, save_instance

    out = _out(args)
    for k in range(args.count):
        inst = generate(GenSpec(args.jobs, args.machines, args.p_min, args.p_max, seed=args.seed + k))
        path = out / f"{inst.id}.txt"
        save_instance(inst, path)
        print(path)


def cmd_solve(args):
    from .exact import ExactConfig, brute_force_optimal, solve_optimal

    for entry in args.instances:
        inst = _instance(entry)
        prefix = f"{inst.id} " if len(args.instances) > 1 else ""
        if args.brute_force:
            print(f"{prefix}optimal {brute_force_optimal(inst)}")
        else:
            res = solve_optimal(inst, ExactConfig(time_limit=args.time_limit))
            bound = "" if res.optimal else f" (lower bound {res.lower_bound})"
            print(f"{prefix}{res.status.value} {res.makespan}{bound}")


def cmd_label(args):
    from .exact import ExactConfig
    from .labeling import build_dataset

    insts = [_instance(e) for e in args.instances]
    path = _out(args) / args.name
    man = build_dataset(insts, path, per_machine_random=args.random, seed=args.seed,
                       cfg=ExactConfig(time_limit=args.time_limit), threads=args.threads)
    print(f"{path}: {man['n_samples']} samples from {len(man['instances'])} instances; "
          f"dropped {sum(man['dropped'].values())}, failed {len(man['failed'])}")


def cmd_features(args):
    from .features import compute_features, dump_features

    inst = _instance(args.instance)
    text = dump_features(compute_features(inst), inst)
    if args.file:
        path = _out(args) / args.file
        path.write_text(text)
        print(path)
    else:
        sys.stdout.write(text)


def _split_dataset(args):
    from .features import sequence_inputs
    from .labeling import load_dataset, stratified_split

    samples, insts = load_dataset(args.dataset)
    if not samples:
        from .oracle import EmptyInput

        raise EmptyInput(f"{args.dataset} holds no samples")
    seqs, y = sequence_inputs(samples, insts)
    tr, te = stratified_split(y, args.test_fraction, seed=args.seed)
    return seqs, y, tr, te


def cmd_train(args):
    from .oracle import OracleModel, TrainConfig, binary_report, predict_sequences, scaled_schedule, train, \
        write_history, wta

    seqs, y, tr, te = _split_dataset(args)
    cfg = TrainConfig(batch_size=args.batch_size, schedule=scaled_schedule(args.epochs), seed=args.seed)
    model = OracleModel.init(seed=args.seed)
    model, history = train(model, [seqs[i] for i in tr], y[tr], cfg, [seqs[i] for i in te], y[te])
    out = _out(args)
    model.save(out / args.weights)
    write_history(history, out / "history.tsv")
    yh, logits = predict_sequences(model, [seqs[i] for i in te])
    metrics = {"n_train": len(tr), "n_test": len(te),
               "wta": {str(t): wta(yh, y[te], t) for t in (0.05, 0.07)},
               "binary": binary_report(logits, y[te])}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    print(f"weights: {out / args.weights}")
    print(f"test WTA(0.05) {metrics['wta']['0.05']:.4f}  WTA(0.07) {metrics['wta']['0.07']:.4f}  "
          f"accuracy@0.5 {metrics['binary'][0]['accuracy']:.4f}")


def cmd_eval(args):
    from .oracle import OracleModel, binary_report, format_report, predict_sequences, wta

    model = OracleModel.load(args.weights)
    seqs, y, tr, te = _split_dataset(args)
    idx = te if args.split == "test" else np.arange(len(y))
    yh, logits = predict_sequences(model, [seqs[i] for i in idx])
    print(f"{'tol':>6} {'WTA':>8}")
    for tol in args.tol or [0.05, 0.07]:
        print(f"{tol:6.3f} {wta(yh, y[idx], tol):8.4f}")
    print()
    print(format_report(binary_report(logits, y[idx])))


def cmd_search(args):
    from .instances import dispatch, reference_optima
    from .oracle import OracleModel
    from .tabu import OracleSpec, SearchConfig, search

    if args.algo == "ots" and not args.oracle:
        raise ValueError("--algo ots needs --oracle weights")
    model = OracleModel.load(args.oracle) if args.algo == "ots" else None
    optima = reference_optima()
    reports = {}
    for entry in args.instances:
        inst = _instance(entry)
        oracle = OracleSpec(model, strict=args.strict) if model is not None else None
        cfg = SearchConfig(args.max_iter, args.restarts, args.tenure, seed=args.seed, oracle=oracle,
                           time_limit=args.time_limit)
        rep = search(inst, dispatch(inst, "random", seed=args.seed), cfg, args.optimum or optima.get(inst.id))
        gap = "n/a" if rep.gap is None else f"{100 * rep.gap:.2f}%"
        print(f"{inst.id} makespan {rep.makespan} gap {gap} iterations {rep.iterations} "
              f"restarts {rep.restarts_used} oracle_calls {rep.oracle_calls} fallbacks {rep.fallbacks}")
        reports[inst.id] = rep.to_dict()
    if args.report:
        path = _out(args) / args.report
        path.write_text(json.dumps(reports, indent=1))


def cmd_bench(args):
    from .bench import BenchSpec, emit_table, run_bench

    spec = BenchSpec.load(args.spec)
    spec.output = str(_out(args))
    if args.threads > 1:
        spec.threads = args.threads
    res = run_bench(spec)
    print(emit_table(res.summary), end="")
    print()
    print(emit_table(res.per_instance), end="")


def cmd_pipeline(args):
    from .bench import AlgoSpec, BenchSpec, ParamSpec, emit_table, run_bench
    from .exact import ExactConfig
    from .features import sequence_inputs
    from .instances import GenSpec, generate
    from .labeling import build_dataset, load_dataset, stratified_split
    from .oracle import OracleModel, TrainConfig, predict_sequences, scaled_schedule, train, write_history, wta

    out = _out(args)
    insts = [generate(GenSpec(args.size, args.size, seed=args.seed + k)) for k in range(args.count)]
    data = out / "dataset.jsonl"
    man = build_dataset(insts, data, per_machine_random=args.random, seed=args.seed,
                        cfg=ExactConfig(time_limit=args.time_limit), threads=args.threads)
    log.info("labelled %d samples", man["n_samples"])
    samples, loaded = load_dataset(data)
    seqs, y = sequence_inputs(samples, loaded)
    tr, te = stratified_split(y, 0.25, seed=args.seed)
    model, history = train(OracleModel.init(seed=args.seed), [seqs[i] for i in tr], y[tr],
                           TrainConfig(schedule=scaled_schedule(args.epochs), seed=args.seed),
                           [seqs[i] for i in te], y[te])
    model.save(out / "weights.bin")
    write_history(history, out / "history.tsv")
    yh, _ = predict_sequences(model, [seqs[i] for i in te])
    print(f"oracle test WTA(0.07) {wta(yh, y[te], 0.07):.4f}")
    optima = {s.instance_id: s.c_max_opt for s in samples}
    spec = BenchSpec(instances=[str(out / e["path"]) for e in man["instances"]],
                     algorithms=[AlgoSpec("sTS"), AlgoSpec("oTS", str(out / "weights.bin"))],
                     params=[ParamSpec(args.max_iter, args.restarts, args.tenure)],
                     seeds=list(range(args.seeds)), optima=optima, output=str(out / "bench"),
                     threads=args.threads)
    res = run_bench(spec)
    print(emit_table(res.summary), end="")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=_nonneg_int, default=0, help="master seed (default 0)")
    g.add_argument("--threads", type=_positive_int, default=1, help="worker processes for label/bench")
    g.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    g.add_argument("--out", default="out", help="output directory (default ./out)")

    p = argparse.ArgumentParser(prog="jsporacle", description="Job-shop permutation-quality oracle toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        sp = sub.add_parser(name, parents=[common], help=help, description=help)
        sp.set_defaults(func=func)
        return sp

    sp = add("generate", cmd_generate, "write random instances in the standard text format")
    sp.add_argument("--jobs", type=_positive_int, required=True)
    sp.add_argument("--machines", type=_positive_int, required=True)
    sp.add_argument("--count", type=_positive_int, default=1)
    sp.add_argument("--p-min", type=_positive_int, default=1)
    sp.add_argument("--p-max", type=_positive_int, default=99)

    sp = add("solve", cmd_solve, "solve instances to optimality")
    sp.add_argument("instances", nargs="+", help="instance files or benchmark names (orb01, ta01, ...)")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="branch and bound (default)")
    mode.add_argument("--brute-force", action="store_true", help="enumerate every permutation combination")
    sp.add_argument("--time-limit", type=_positive_float, default=60.0)

    sp = add("label", cmd_label, "build a labelled permutation dataset")
    sp.add_argument("instances", nargs="+")
    sp.add_argument("--random", type=_positive_int, default=128, help="random permutations per machine")
    sp.add_argument("--time-limit", type=_positive_float, default=60.0, help="per exact solve")
    sp.add_argument("--name", default="dataset.jsonl")

    sp = add("features", cmd_features, "dump the per-operation feature table")
    sp.add_argument("instance")
    sp.add_argument("--file", help="write to this file under --out instead of stdout")

    for name, func, help in (("train", cmd_train, "train the oracle on a dataset"),
                             ("eval", cmd_eval, "evaluate oracle weights on a dataset")):
        sp = add(name, func, help)
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--test-fraction", type=_fraction, default=0.25)
        if name == "train":
            sp.add_argument("--epochs", type=_positive_int, default=100, help="scaled four-phase schedule length")
            sp.add_argument("--batch-size", type=_positive_int, default=128)
            sp.add_argument("--weights", default="weights.bin", help="file name under --out")
        else:
            sp.add_argument("--weights", required=True)
            sp.add_argument("--tol", type=_positive_float, action="append", help="WTA tolerance (repeatable)")
            sp.add_argument("--split", choices=["test", "all"], default="test")

    sp = add("search", cmd_search, "run tabu search from a random dispatch")
    sp.add_argument("instances", nargs="+")
    sp.add_argument("--algo", choices=["sts", "ots"], default="sts")
    sp.add_argument("--max-iter", type=_positive_int, default=500, help="non-improving iterations per trajectory")
    sp.add_argument("--restarts", type=_nonneg_int, default=0)
    sp.add_argument("--tenure", type=_positive_int, default=10)
    sp.add_argument("--oracle", help="weights for --algo ots")
    sp.add_argument("--strict", action="store_true", help="filter keeps strictly better predictions only")
    sp.add_argument("--time-limit", type=_positive_float)
    sp.add_argument("--optimum", type=_positive_int, help="reference makespan for the gap")
    sp.add_argument("--report", help="also write the reports as JSON under --out")

    sp = add("bench", cmd_bench, "run a benchmark spec (JSON) and print the tables")
    sp.add_argument("spec")

    sp = add("pipeline", cmd_pipeline, "generate, label, train and bench at desk scale")
    sp.add_argument("--count", type=_positive_int, default=20)
    sp.add_argument("--size", type=_positive_int, default=6)
    sp.add_argument("--random", type=_positive_int, default=32)
    sp.add_argument("--time-limit", type=_positive_float, default=60.0)
    sp.add_argument("--epochs", type=_positive_int, default=25)
    sp.add_argument("--max-iter", type=_positive_int, default=500)
    sp.add_argument("--restarts", type=_nonneg_int, default=1)
    sp.add_argument("--tenure", type=_positive_int, default=10)
    sp.add_argument("--seeds", type=_positive_int, default=5)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"jsporacle {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
