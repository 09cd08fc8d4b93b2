"""Instance generation, the standard text format, and dispatching rules."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Instance, Solution, evaluate

BENCHMARKS = tuple([f"orb{i:02d}" for i in range(1, 10)] + [f"ta{i:02d}" for i in range(1, 11)])


class MalformedFormat(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateMachineInRoute(MalformedFormat):
    pass


@dataclass(frozen=True)
class GenSpec:
    n_jobs: int
    n_machines: int
    p_min: int = 1
    p_max: int = 99
    seed: int = 0

    def __post_init__(self):
        if self.n_jobs < 1 or self.n_machines < 1:
            raise ValueError("counts must be >= 1")
        if not 1 <= self.p_min <= self.p_max:
            raise ValueError("need 1 <= p_min <= p_max")


def generate(spec: GenSpec, id: str | None = None) -> Instance:
    """Taillard-style random instance: uniform routes, uniform integer times."""
    rng = np.random.default_rng(spec.seed)
    routes = []
    for _ in range(spec.n_jobs):
        machines = rng.permutation(spec.n_machines)
        times = rng.integers(spec.p_min, spec.p_max + 1, size=spec.n_machines)
        routes.append(tuple(zip(machines.tolist(), times.tolist())))
    if id is None:
        id = f"rand{spec.n_jobs}x{spec.n_machines}_s{spec.seed}"
    return Instance(tuple(routes), spec.n_machines, id)


def parse_standard(text: str, id: str = "") -> Instance:
    """Parse ``n m`` followed by one line of ``machine ptime`` pairs per job.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            rows.append((lineno, line.split()))
    if not rows:
        raise MalformedFormat(1, "empty input")
    lineno, head = rows[0]
    try:
        n, m = (int(x) for x in head)
    except ValueError:
        raise MalformedFormat(lineno, "header must be two integers 'n m'") from None
    if n < 1 or m < 1:
        raise MalformedFormat(lineno, "job and machine counts must be positive")
    if len(rows) - 1 != n:
        raise MalformedFormat(lineno, f"header announces {n} jobs but {len(rows) - 1} job lines follow")
    routes = []
    for lineno, tokens in rows[1:]:
        if not tokens or len(tokens) % 2:
            raise MalformedFormat(lineno, "expected machine/time pairs")
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise MalformedFormat(lineno, "non-integer token") from None
        route = list(zip(values[::2], values[1::2]))
        machines = [mm for mm, _ in route]
        if len(set(machines)) != len(machines):
            raise DuplicateMachineInRoute(lineno, "job visits a machine twice")
        for mm, p in route:
            if not 0 <= mm < m:
                raise MalformedFormat(lineno, f"machine {mm} outside [0, {m})")
            if p < 0:
                raise MalformedFormat(lineno, "negative processing time")
        routes.append(tuple(route))
    return Instance(tuple(routes), m, id)


def write_standard(inst: Instance) -> str:
    lines = [f"{inst.n_jobs} {inst.n_machines}"]
    for route in inst.routes:
        lines.append(" ".join(f"{m} {p}" for m, p in route))
    return "\n".join(lines) + "\n"


def load_instance(path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read instance file {path}: {exc.strerror}") from exc
    return parse_standard(text, id=path.stem)


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(write_standard(inst))


def load_benchmark(name: str) -> Instance:
    """One of the bundled Orb01-09 / Ta01-10 instances."""
    name = name.lower()
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}")
    text = resources.files("jsporacle").joinpath("data", "benchmarks", f"{name}.txt").read_text()
    return parse_standard(text, id=name)


def reference_optima() -> dict[str, int]:
    text = resources.files("jsporacle").joinpath("data", "optima.json").read_text()
    return json.loads(text)


def dispatch(inst: Instance, rule: str = "spt", seed=None, fixed: dict | None = None) -> Solution:
    """Non-delay schedule built with a priority dispatching rule.

    ``rule`` is ``"spt"`` (shortest processing time, ties to the lowest job)
    or ``"random"`` (a fresh uniform key per job at every decision, seeded).
    ``fixed`` maps a machine to an operation order that must be respected.
    """
    if rule not in ("spt", "random"):
        raise ValueError(f"unknown dispatching rule {rule!r}")
    rng = np.random.default_rng(seed) if rule == "random" else None
    chain = {}
    for m, perm in (fixed or {}).items():
        chain[m] = list(perm)
    ptr = dict.fromkeys(chain, 0)
    p, machine = inst.op_p, inst.op_machine
    nxt = list(inst.job_first)
    job_ready = [0] * inst.n_jobs
    mach_ready = [0] * inst.n_machines
    start = [0] * inst.n_ops
    remaining = inst.n_ops
    while remaining:
        ready = []
        for j in range(inst.n_jobs):
            o = nxt[j]
            if o < 0:
                continue
            m = machine[o]
            if m in chain and chain[m][ptr[m]] != o:
                continue
            ready.append((max(job_ready[j], mach_ready[m]), j, o))
        t = min(r[0] for r in ready)
        cands = [r for r in ready if r[0] == t]
        if rule == "spt":
            _, j, o = min(cands, key=lambda r: (p[r[2]], r[1]))
        else:
            keys = rng.random(inst.n_jobs)
            _, j, o = min(cands, key=lambda r: (keys[r[1]], r[1]))
        m = machine[o]
        start[o] = t
        job_ready[j] = mach_ready[m] = t + p[o]
        if m in chain:
            ptr[m] += 1
        nxt[j] = inst.job_succ[o]
        remaining -= 1
    perms = [sorted(ops, key=lambda o: start[o]) for ops in inst.machine_ops]
    return evaluate(inst, perms)
