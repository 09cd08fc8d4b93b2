"""Experiment harness: paired tabu-search runs and comparison tables."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core import Instance
from .exact import ExactConfig, Status, solve_optimal
from .instances import BENCHMARKS, GenSpec, dispatch, generate, load_benchmark, load_instance, reference_optima
from .tabu import OracleSpec, SearchConfig, search

log = logging.getLogger(__name__)


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class AlgoSpec:
    name: str
    oracle: str | None = None  # weight file; None runs the plain search
    strict: bool = False


@dataclass(frozen=True)
class ParamSpec:
    max_nonimproving: int
    restarts: int = 0
    tenure: int = 10


@dataclass
class BenchSpec:
    """What to run.

    ``instances`` entries are benchmark names (``"orb01"``), instance file
    paths, or dicts of :class:`GenSpec` fields. ``optima`` is ``"reference"``
    (shipped table), ``"exact"`` (solved here), a JSON file path, or a dict.
    """

    instances: list
    algorithms: list = field(default_factory=lambda: [AlgoSpec("sTS")])
    params: list = field(default_factory=lambda: [ParamSpec(500)])
    seeds: list = field(default_factory=lambda: list(range(5)))
    optima: object = "reference"
    output: str | None = None
    time_limit: float | None = None
    exact_time_limit: float = 60.0
    timing: bool = False
    threads: int = 1

    def __post_init__(self):
        self.algorithms = [a if isinstance(a, AlgoSpec) else AlgoSpec(**a) for a in self.algorithms]
        self.params = [p if isinstance(p, ParamSpec) else ParamSpec(**p) for p in self.params]
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.params:
            raise ValueError("at least one parameter set is required")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ValueError("algorithm names must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        gen = d.pop("generate", None)
        if gen is not None:
            gen = dict(gen)
            count = gen.pop("count", 1)
            base = gen.pop("seed", 0)
            d.setdefault("instances", [])
            d["instances"] = list(d["instances"]) + [dict(gen, seed=base + k) for k in range(count)]
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise OSError(f"cannot read bench spec {path}: {exc.strerror}") from exc
        spec = cls.from_dict(data)
        # relative paths are resolved against the bench file
        spec.instances = [str(path.parent / e) if isinstance(e, str) and e not in BENCHMARKS
                          and not Path(e).is_absolute() else e for e in spec.instances]
        spec.algorithms = [AlgoSpec(a.name, str(path.parent / a.oracle) if a.oracle and not Path(a.oracle).is_absolute()
                                    else a.oracle, a.strict) for a in spec.algorithms]
        if isinstance(spec.optima, str) and spec.optima not in ("reference", "exact") and not Path(spec.optima).is_absolute():
            spec.optima = str(path.parent / spec.optima)
        return spec


@dataclass(frozen=True)
class RunRecord:
    instance: str
    seed: int
    param: int  # index into BenchSpec.params
    algo: str
    makespan: int
    initial: int
    optimum: int | None
    iterations: int
    elapsed: float

    @property
    def gap(self) -> float | None:
        return self.makespan / self.optimum - 1.0 if self.optimum else None


@dataclass
class BenchResults:
    spec: BenchSpec
    runs: list
    summary: list  # per parameter set, paired comparison columns
    per_instance: list  # best makespan per instance and algorithm


def _resolve_instance(entry) -> Instance:
    if isinstance(entry, Instance):
        return entry
    if isinstance(entry, dict):
        return generate(GenSpec(**entry))
    if entry in BENCHMARKS:
        return load_benchmark(entry)
    return load_instance(entry)


def _resolve_optima(spec: BenchSpec, instances) -> dict:
    src = spec.optima
    if src == "reference":
        table = reference_optima()
    elif src == "exact":
        table = {}
        for inst in instances:
            res = solve_optimal(inst, ExactConfig(time_limit=spec.exact_time_limit))
            table[inst.id] = res.makespan if res.status is Status.OPTIMAL else None
    elif isinstance(src, dict):
        table = src
    else:
        table = json.loads(Path(src).read_text())
    return {inst.id: table.get(inst.id) for inst in instances}


_MODELS: dict = {}


def _load_model(path):
    from .oracle import OracleModel

    if path not in _MODELS:
        _MODELS[path] = OracleModel.load(path)
    return _MODELS[path]


def _run_one(task):
    inst, seed, k, param, algo, optimum, time_limit = task
    oracle = OracleSpec(_load_model(algo.oracle), strict=algo.strict) if algo.oracle else None
    cfg = SearchConfig(param.max_nonimproving, param.restarts, param.tenure, seed=seed, oracle=oracle,
                       time_limit=time_limit)
    # every algorithm starts from the same random dispatch for a given seed
    init = dispatch(inst, "random", seed=seed)
    rep = search(inst, init, cfg, optimum)
    return RunRecord(inst.id, seed, k, algo.name, rep.makespan, rep.initial_makespan, optimum,
                     rep.iterations, rep.elapsed)


def run_bench(spec: BenchSpec) -> BenchResults:
    instances = [_resolve_instance(e) for e in spec.instances]
    if not instances:
        raise EmptyInput("bench spec lists no instances")
    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        raise ValueError("instance ids must be unique")
    optima = _resolve_optima(spec, instances)
    tasks = [(inst, seed, k, param, algo, optima[inst.id], spec.time_limit)
             for inst in instances for seed in spec.seeds
             for k, param in enumerate(spec.params) for algo in spec.algorithms]
    if spec.threads > 1:
        with ProcessPoolExecutor(spec.threads) as pool:
            runs = list(pool.map(_run_one, tasks, chunksize=4))
    else:
        runs = [_run_one(t) for t in tasks]
    order = {inst.id: n for n, inst in enumerate(instances)}
    algo_order = {a.name: n for n, a in enumerate(spec.algorithms)}
    runs.sort(key=lambda r: (r.param, order[r.instance], r.seed, algo_order[r.algo]))
    results = BenchResults(spec, runs, summarize(spec, runs), per_instance_table(spec, instances, runs, optima))
    if spec.output:
        write_results(results, spec.output)
    return results


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def summarize(spec: BenchSpec, runs) -> list[dict]:
    """One row per parameter set.

    Per algorithm: number of optimal runs, mean gap (%) of the suboptimal ones
    and, with ``spec.timing``, mean time in ms. Every algorithm after the first
    is compared with the first on identical (instance, seed) pairs: how often
    it is worse or better and the mean of ``|diff|`` in percent, where
    ``diff = (C_other - C_first) / C_opt``.
    """
    names = [a.name for a in spec.algorithms]
    rows = []
    for k, param in enumerate(spec.params):
        mine = [r for r in runs if r.param == k]
        row = {"id": k, "max_iter": param.max_nonimproving, "restarts": param.restarts, "tenure": param.tenure}
        for a in names:
            ra = [r for r in mine if r.algo == a]
            known = [r for r in ra if r.optimum]
            row[f"num_opt_{a}"] = sum(r.makespan == r.optimum for r in known) if known else None
            gaps = [100.0 * r.gap for r in known if r.makespan != r.optimum]
            row[f"avg_gap_{a}"] = _mean(gaps)
        base = {(r.instance, r.seed): r for r in mine if r.algo == names[0]}
        for a in names[1:]:
            worse, better = [], []
            for r in mine:
                if r.algo != a:
                    continue
                b = base[(r.instance, r.seed)]
                if r.makespan == b.makespan:
                    continue
                diff = 100.0 * abs(r.makespan - b.makespan) / r.optimum if r.optimum else None
                (worse if r.makespan > b.makespan else better).append(diff)
            row[f"worse_{a}"] = len(worse)
            row[f"worse_diff_{a}"] = _mean([d for d in worse if d is not None])
            row[f"better_{a}"] = len(better)
            row[f"better_diff_{a}"] = _mean([d for d in better if d is not None])
        if spec.timing:
            for a in names:
                row[f"avg_ms_{a}"] = _mean([1000.0 * r.elapsed for r in mine if r.algo == a])
        rows.append(row)
    return rows


def per_instance_table(spec: BenchSpec, instances, runs, optima) -> list[dict]:
    """Best makespan over seeds per instance, parameter set and algorithm, next to OPT and SPT."""
    rows = []
    for k in range(len(spec.params)):
        for inst in instances:
            opt = optima[inst.id]
            row = {"instance": inst.id, "param": k, "opt": opt, "spt": dispatch(inst, "spt").makespan}
            row["spt_gap"] = 100.0 * (row["spt"] / opt - 1.0) if opt else None
            for a in spec.algorithms:
                best = min(r.makespan for r in runs if r.param == k and r.instance == inst.id and r.algo == a.name)
                row[f"best_{a.name}"] = best
                row[f"gap_{a.name}"] = 100.0 * (best / opt - 1.0) if opt else None
            rows.append(row)
    return rows


def _cell_text(v, digits=2):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _cell_delim(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_table(rows, fmt: str = "text", path=None, digits: int = 2) -> str:
    """Render ``rows`` (dicts sharing one column order) as aligned text or TSV."""
    rows = list(rows)
    if not rows:
        raise EmptyInput("no result rows")
    cols = list(rows[0])
    if fmt == "text":
        cells = [cols] + [[_cell_text(r.get(c), digits) for c in cols] for r in rows]
        widths = [max(len(line[n]) for line in cells) for n in range(len(cols))]
        out = "\n".join("  ".join(v.rjust(w) for v, w in zip(line, widths)) for line in cells) + "\n"
    elif fmt in ("tsv", "delimited"):
        out = "\n".join(["\t".join(cols)] + ["\t".join(_cell_delim(r.get(c)) for c in cols) for r in rows]) + "\n"
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    if path is not None:
        Path(path).write_text(out)
    return out


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        v = float(s)
    except ValueError:
        return s
    return v if math.isfinite(v) else s


def parse_table(text: str) -> list[dict]:
    """Inverse of ``emit_table(..., fmt="tsv")``."""
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise EmptyInput("empty table")
    cols = lines[0].split("\t")
    return [dict(zip(cols, map(_parse_cell, ln.split("\t")))) for ln in lines[1:]]


def write_results(results: BenchResults, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keep_time = results.spec.timing
    runs = []
    for r in results.runs:
        d = asdict(r)
        if not keep_time:
            d.pop("elapsed")
        runs.append(d)
    emit_table(runs, "tsv", out / "runs.tsv")
    for name, rows in (("summary", results.summary), ("instances", results.per_instance)):
        emit_table(rows, "tsv", out / f"{name}.tsv")
        emit_table(rows, "text", out / f"{name}.txt")
