"""Permutation sampling, quality labels and dataset files."""
from __future__ import annotations

import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import Instance, Solution, evaluate, makespan
from .exact import ExactConfig, Status, solve_optimal, solve_with_fixed_permutation
from .instances import dispatch, load_instance, save_instance

log = logging.getLogger(__name__)

KINDS = ("optimal", "suboptimal", "random")


class CapExceeded(ValueError):
    pass


class LabelingError(RuntimeError):
    pass


def quality(c_max_pi: float, c_max_opt: float) -> float:
    return 1.0 - math.tanh(c_max_pi / c_max_opt - 1.0)


@dataclass(frozen=True)
class SequenceSample:
    instance_id: str
    machine: int
    perm: tuple  # flat operation indices
    kind: str
    y: float
    c_max_pi: int
    c_max_opt: int

    def to_record(self, inst: Instance) -> dict:
        d = asdict(self)
        d["perm"] = [list(inst.op_id(o)) for o in self.perm]
        return d

    @classmethod
    def from_record(cls, rec: dict, inst: Instance) -> "SequenceSample":
        perm = tuple(inst.op_index(tuple(op)) for op in rec["perm"])
        return cls(rec["instance_id"], int(rec["machine"]), perm, rec["kind"], float(rec["y"]),
                   int(rec["c_max_pi"]), int(rec["c_max_opt"]))


def _generate_once(base, s, rng):
    seqs = [[] for _ in range(s)]
    w = list(base)
    for _ in range(len(base)):
        idx = 0
        for seq in seqs:
            while w[idx] in seq:
                idx = (idx + 1) % len(w)
            seq.append(w[idx])
            idx = (idx + 1) % len(w)
        # lengthen the pool by one more period, then reshuffle
        w = w + list(base)
        rng.shuffle(w)
    return seqs


def sequence_generator(base, s: int, seed=None, exclude=(), max_rounds: int = 10_000) -> list[tuple]:
    """``s`` distinct permutations of ``base`` that try every operation in every position.

    Duplicates, and anything in ``exclude``, are dropped and the generator is
    re-run with fresh random draws until ``s`` sequences are collected.
    """
    base = list(base)
    exclude = {tuple(e) for e in exclude}
    available = math.factorial(len(base)) - sum(1 for e in exclude if sorted(e) == sorted(base))
    if s > available:
        raise CapExceeded(f"cannot draw {s} distinct permutations of {len(base)} operations")
    rng = np.random.default_rng(seed)
    out: list[tuple] = []
    seen = set(exclude)
    for _ in range(max_rounds):
        for seq in _generate_once(base, s, rng):
            t = tuple(seq)
            if t not in seen:
                seen.add(t)
                out.append(t)
                if len(out) == s:
                    return out
    raise LabelingError(f"only {len(out)} of {s} distinct sequences after {max_rounds} rounds")


def suboptimal_sequences(perm) -> list[tuple]:
    """Every adjacent transposition of ``perm`` (positions h, h+1)."""
    perm = list(perm)
    if len(perm) < 2:
        raise ValueError("need at least two operations")
    out = []
    for h in range(len(perm) - 1):
        q = perm.copy()
        q[h], q[h + 1] = q[h + 1], q[h]
        out.append(tuple(q))
    return out


class _Pool:
    """Recently solved schedules of one instance, used to seed constrained solves.

    Substituting the imposed order into a known schedule often yields a
    feasible solution far better than a dispatch rule, which shortens the
    branch-and-bound proof without changing its result.
    """

    def __init__(self, inst: Instance, size: int = 24):
        self.inst = inst
        self.items: list[tuple] = []
        self.size = size

    def add(self, perms) -> None:
        perms = tuple(tuple(p) for p in perms)
        if perms not in self.items:
            self.items.insert(0, perms)
            del self.items[self.size:]

    def incumbent(self, machine: int, perm) -> Solution | None:
        best = None
        for perms in self.items:
            trial = list(perms)
            trial[machine] = tuple(perm)
            c = makespan(self.inst, trial)
            if c is not None and (best is None or c < best[0]):
                best = (c, trial)
        return None if best is None else evaluate(self.inst, best[1])


def label_sequence(inst: Instance, machine: int, perm, c_max_opt: int, cfg: ExactConfig | None = None,
                   kind: str = "random", pool: _Pool | None = None) -> SequenceSample | None:
    """Quality label of ``perm`` on ``machine``; ``None`` when the solve did not finish."""
    cfg = cfg or ExactConfig()
    if pool is not None and cfg.incumbent is None:
        seed = pool.incumbent(machine, perm)
        spt = dispatch(inst, "spt", fixed={machine: list(perm)})
        if seed is None or spt.makespan < seed.makespan:
            seed = spt
        cfg = replace(cfg, incumbent=seed)
    res = solve_with_fixed_permutation(inst, machine, perm, cfg)
    if pool is not None and res.solution is not None:
        pool.add(res.solution.perms)
    if res.status is not Status.OPTIMAL:
        return None
    if res.makespan < c_max_opt:
        raise LabelingError(f"constrained makespan {res.makespan} below optimum {c_max_opt}")
    y = quality(res.makespan, c_max_opt)
    return SequenceSample(inst.id, machine, tuple(perm), kind, y, res.makespan, c_max_opt)


def label_instance(inst: Instance, per_machine_random: int = 128, seed: int = 0,
                   cfg: ExactConfig | None = None) -> tuple[list[SequenceSample], int]:
    """Samples for one instance and the number dropped on solver limits."""
    cfg = cfg or ExactConfig()
    opt = solve_optimal(inst, cfg)
    if opt.status is not Status.OPTIMAL:
        raise LabelingError(f"{inst.id}: exact solve ended with {opt.status.value}")
    samples = []
    dropped = 0
    pool = _Pool(inst)
    pool.add(opt.solution.perms)
    for m in range(inst.n_machines):
        best = tuple(opt.solution.perms[m])
        if len(best) < 2:
            continue
        subs = suboptimal_sequences(best)
        rng_seed = [seed, m, zlib.crc32(inst.id.encode())]
        rand = sequence_generator(best, per_machine_random, seed=rng_seed, exclude=[best, *subs])
        jobs = [(best, "optimal")] + [(q, "suboptimal") for q in subs] + [(q, "random") for q in rand]
        for perm, kind in jobs:
            if kind == "optimal":
                s = SequenceSample(inst.id, m, perm, kind, 1.0, opt.makespan, opt.makespan)
            else:
                s = label_sequence(inst, m, perm, opt.makespan, cfg, kind, pool)
            if s is None:
                dropped += 1
            else:
                samples.append(s)
    return samples, dropped


def _label_job(args):
    inst, per_machine_random, seed, cfg = args
    try:
        samples, dropped = label_instance(inst, per_machine_random, seed, cfg)
        return inst.id, samples, dropped, None
    except LabelingError as exc:
        return inst.id, [], 0, str(exc)


def build_dataset(instances, out_path, per_machine_random: int = 128, seed: int = 0,
                  cfg: ExactConfig | None = None, threads: int = 1) -> dict:
    """Label every instance and write ``out_path`` (JSONL) plus a manifest.

    Instances are copied next to the dataset in standard format so that the
    manifest can refer to them by relative path. Returns the manifest.
    """
    cfg = cfg or ExactConfig()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    inst_dir = out_path.parent / "instances"
    inst_dir.mkdir(exist_ok=True)
    instances = list(instances)
    ids = [inst.id for inst in instances]
    if len(set(ids)) != len(ids):
        raise ValueError("instance ids must be unique")
    jobs = [(inst, per_machine_random, seed, cfg) for inst in instances]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_label_job, jobs))
    else:
        results = [_label_job(j) for j in jobs]
    by_id = {inst.id: inst for inst in instances}
    manifest = {
        "format": "jsporacle-dataset/1",
        "seed": seed,
        "per_machine_random": per_machine_random,
        "solver": {"time_limit": cfg.time_limit, "node_limit": cfg.node_limit},
        "instances": [],
        "dropped": {},
        "failed": {},
        "n_samples": 0,
    }
    with out_path.open("w", encoding="utf-8") as fh:
        for inst_id, samples, dropped, err in results:
            if err is not None:
                log.warning("skipping %s: %s", inst_id, err)
                manifest["failed"][inst_id] = err
                continue
            inst = by_id[inst_id]
            rel = Path("instances") / f"{inst_id}.txt"
            save_instance(inst, out_path.parent / rel)
            manifest["instances"].append({"id": inst_id, "path": str(rel)})
            manifest["dropped"][inst_id] = dropped
            for s in samples:
                fh.write(json.dumps(s.to_record(inst)) + "\n")
            manifest["n_samples"] += len(samples)
    manifest_path(out_path).write_text(json.dumps(manifest, indent=1))
    return manifest


def manifest_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + ".manifest.json")


def load_dataset(path) -> tuple[list[SequenceSample], dict[str, Instance]]:
    path = Path(path)
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as exc:
        raise OSError(f"cannot read dataset manifest {mpath}: {exc.strerror}") from exc
    instances = {}
    for entry in manifest["instances"]:
        inst = load_instance(path.parent / entry["path"])
        instances[entry["id"]] = Instance(inst.routes, inst.n_machines, entry["id"])
    samples = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                samples.append(SequenceSample.from_record(rec, instances[rec["instance_id"]]))
    return samples, instances


def stratified_split(labels, test_fraction: float = 0.25, seed: int = 0, bins: int = 10):
    """Index arrays (train, test), stratified by label decile."""
    labels = np.asarray(labels, dtype=float)
    rng = np.random.default_rng(seed)
    strata = np.minimum((labels * bins).astype(int), bins - 1)
    train, test = [], []
    for b in range(bins):
        idx = np.flatnonzero(strata == b)
        rng.shuffle(idx)
        k = int(round(len(idx) * test_fraction))
        test.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)
