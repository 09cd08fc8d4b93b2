"""Desk-scale run: label 20 random 6x6 instances, train the oracle, compare sTS and oTS.

    python3 scripts/desk_pipeline.py --out runs/desk

Writes the dataset, weights, training history, held-out metrics and the
paired bench tables under ``--out``.
"""
import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from jsporacle.bench import AlgoSpec, BenchSpec, ParamSpec, emit_table, run_bench
from jsporacle.features import sequence_inputs
from jsporacle.instances import GenSpec, generate
from jsporacle.labeling import build_dataset, load_dataset, stratified_split
from jsporacle.oracle import (OracleModel, TrainConfig, binary_report, format_report, predict_sequences,
                              scaled_schedule, train, write_history, wta)


@dataclass
class DeskConfig:
    instances: int = 20
    size: int = 6
    random_per_machine: int = 32
    epochs: int = 25
    seed: int = 0
    max_nonimproving: int = 500
    restarts: int = 1
    tenure: int = 10
    search_seeds: int = 5


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    for name, value in asdict(DeskConfig()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", type=type(value), default=value)
    args = ap.parse_args()
    cfg = DeskConfig(**{k: getattr(args, k) for k in asdict(DeskConfig())})
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    insts = [generate(GenSpec(cfg.size, cfg.size, seed=cfg.seed + k)) for k in range(cfg.instances)]
    man = build_dataset(insts, out / "dataset.jsonl", per_machine_random=cfg.random_per_machine, seed=cfg.seed)
    logging.info("labelled %d samples in %.1fs", man["n_samples"], time.monotonic() - t0)

    samples, loaded = load_dataset(out / "dataset.jsonl")
    seqs, y = sequence_inputs(samples, loaded)
    tr, te = stratified_split(y, 0.25, seed=cfg.seed)
    model, history = train(OracleModel.init(seed=cfg.seed), [seqs[i] for i in tr], y[tr],
                           TrainConfig(schedule=scaled_schedule(cfg.epochs), seed=cfg.seed),
                           [seqs[i] for i in te], y[te], on_epoch=lambda r: logging.info("epoch %s", r))
    model.save(out / "weights.bin")
    write_history(history, out / "history.tsv")
    yh, logits = predict_sequences(model, [seqs[i] for i in te])
    report = binary_report(logits, y[te])
    metrics = {"wta05": wta(yh, y[te], 0.05), "wta07": wta(yh, y[te], 0.07), "binary": report}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    print(f"held-out WTA(0.05) {metrics['wta05']:.4f}  WTA(0.07) {metrics['wta07']:.4f}")
    print(format_report(report))

    optima = {s.instance_id: s.c_max_opt for s in samples}
    spec = BenchSpec(instances=list(loaded.values()),
                     algorithms=[AlgoSpec("sTS"), AlgoSpec("oTS", str(out / "weights.bin"))],
                     params=[ParamSpec(cfg.max_nonimproving, cfg.restarts, cfg.tenure)],
                     seeds=cfg.search_seeds, optima=optima, output=str(out / "bench"), timing=True)
    res = run_bench(spec)
    print()
    print(emit_table(res.summary), end="")


if __name__ == "__main__":
    main()
