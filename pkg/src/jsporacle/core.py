"""Job-shop problem representation and disjunctive-graph evaluation.

Operations are addressed by a flat index ``o`` laid out job-major, so that
ordering flat indices is the same as ordering ``(job, step)`` pairs.
:meth:`Instance.op_id` and :meth:`Instance.op_index` convert between the two.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

Perms = Sequence[Sequence[int]]


class OpId(NamedTuple):
    job: int
    step: int


class Infeasible(Exception):
    """Raised when machine permutations induce a cyclic digraph."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__(f"machine permutations induce a cycle: {self.cycle}")


@dataclass(frozen=True)
class Instance:
    """Immutable job-shop instance.

    ``routes[j]`` is the ordered list of ``(machine, processing_time)`` pairs
    of job ``j``.
    """

    routes: tuple
    n_machines: int
    id: str = ""

    op_machine: tuple = field(init=False, repr=False, compare=False)
    op_p: tuple = field(init=False, repr=False, compare=False)
    op_job: tuple = field(init=False, repr=False, compare=False)
    op_step: tuple = field(init=False, repr=False, compare=False)
    job_first: tuple = field(init=False, repr=False, compare=False)
    job_pred: tuple = field(init=False, repr=False, compare=False)
    job_succ: tuple = field(init=False, repr=False, compare=False)
    machine_ops: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        routes = tuple(tuple((int(m), int(p)) for m, p in r) for r in self.routes)
        object.__setattr__(self, "routes", routes)
        if not routes:
            raise ValueError("instance has no jobs")
        if self.n_machines < 1:
            raise ValueError("instance needs at least one machine")
        machine, ptime, job, step, first, pred, succ = [], [], [], [], [], [], []
        per_machine = [[] for _ in range(self.n_machines)]
        for j, route in enumerate(routes):
            if not route:
                raise ValueError(f"job {j} has an empty route")
            seen = set()
            first.append(len(machine))
            for s, (m, p) in enumerate(route):
                if not 0 <= m < self.n_machines:
                    raise ValueError(f"job {j} step {s}: machine {m} out of range")
                if m in seen:
                    raise ValueError(f"job {j} visits machine {m} twice")
                if p < 0:
                    raise ValueError(f"job {j} step {s}: negative processing time")
                seen.add(m)
                o = len(machine)
                per_machine[m].append(o)
                machine.append(m)
                ptime.append(p)
                job.append(j)
                step.append(s)
                pred.append(o - 1 if s > 0 else -1)
                succ.append(o + 1 if s < len(route) - 1 else -1)
        object.__setattr__(self, "op_machine", tuple(machine))
        object.__setattr__(self, "op_p", tuple(ptime))
        object.__setattr__(self, "op_job", tuple(job))
        object.__setattr__(self, "op_step", tuple(step))
        object.__setattr__(self, "job_first", tuple(first))
        object.__setattr__(self, "job_pred", tuple(pred))
        object.__setattr__(self, "job_succ", tuple(succ))
        object.__setattr__(self, "machine_ops", tuple(tuple(ops) for ops in per_machine))

    @property
    def n_jobs(self) -> int:
        return len(self.routes)

    @property
    def n_ops(self) -> int:
        return len(self.op_p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_jobs, self.n_machines

    def op_id(self, o: int) -> OpId:
        return OpId(self.op_job[o], self.op_step[o])

    def op_index(self, op) -> int:
        job, step = op
        if not 0 <= step < len(self.routes[job]):
            raise IndexError(f"job {job} has no step {step}")
        return self.job_first[job] + step

    def job_loads(self) -> list[int]:
        return [sum(p for _, p in r) for r in self.routes]

    def machine_loads(self) -> list[int]:
        return [sum(self.op_p[o] for o in ops) for ops in self.machine_ops]

    def trivial_lower_bound(self) -> int:
        return max(max(self.job_loads()), max(self.machine_loads()))

    def check_perms(self, perms: Perms) -> None:
        """Raise ``ValueError`` unless ``perms[i]`` permutes machine ``i``'s operations."""
        if len(perms) != self.n_machines:
            raise ValueError(f"expected {self.n_machines} machine permutations, got {len(perms)}")
        for i, perm in enumerate(perms):
            if sorted(perm) != sorted(self.machine_ops[i]):
                raise ValueError(f"permutation for machine {i} does not match its operations")


@dataclass(frozen=True)
class DisjGraph:
    """Disjunctive graph. Nodes ``0..n_ops-1`` are operations; then source, sink."""

    n_ops: int
    weights: tuple
    job_arcs: tuple
    machine_edges: tuple

    @property
    def source(self) -> int:
        return self.n_ops

    @property
    def sink(self) -> int:
        return self.n_ops + 1

    @property
    def n_nodes(self) -> int:
        return self.n_ops + 2


def build_disjunctive_graph(inst: Instance) -> DisjGraph:
    job_arcs = tuple((o, s) for o, s in enumerate(inst.job_succ) if s >= 0)
    edges = []
    for ops in inst.machine_ops:
        for a in range(len(ops)):
            for b in range(a + 1, len(ops)):
                edges.append((ops[a], ops[b]))
    return DisjGraph(inst.n_ops, inst.op_p + (0, 0), job_arcs, tuple(edges))


@dataclass(frozen=True)
class Solution:
    """A feasible semi-active schedule derived from machine permutations."""

    inst: Instance = field(repr=False)
    perms: tuple
    start: tuple = field(repr=False)
    makespan: int
    critical_path: tuple = field(repr=False)

    @property
    def end(self) -> list[int]:
        p = self.inst.op_p
        return [s + p[o] for o, s in enumerate(self.start)]

    @property
    def critical_arcs(self) -> list[tuple[int, int]]:
        return critical_machine_arcs(self)


def machine_links(inst: Instance, perms: Perms) -> tuple[list[int], list[int]]:
    n = inst.n_ops
    mpred = [-1] * n
    msucc = [-1] * n
    for perm in perms:
        for a, b in zip(perm, perm[1:]):
            mpred[b] = a
            msucc[a] = b
    return mpred, msucc


def _heads(inst: Instance, mpred, msucc):
    """Earliest start times via Kahn's algorithm; ``None`` on a cycle."""
    n = inst.n_ops
    jpred, jsucc, p = inst.job_pred, inst.job_succ, inst.op_p
    indeg = [(jpred[o] >= 0) + (mpred[o] >= 0) for o in range(n)]
    start = [0] * n
    stack = [o for o in range(n) if indeg[o] == 0]
    done = 0
    while stack:
        o = stack.pop()
        done += 1
        e = start[o] + p[o]
        s = jsucc[o]
        if s >= 0:
            if e > start[s]:
                start[s] = e
            indeg[s] -= 1
            if not indeg[s]:
                stack.append(s)
        s = msucc[o]
        if s >= 0:
            if e > start[s]:
                start[s] = e
            indeg[s] -= 1
            if not indeg[s]:
                stack.append(s)
    if done < n:
        return None, indeg
    return start, indeg


def makespan(inst: Instance, perms: Perms) -> int | None:
    """Makespan of ``perms`` or ``None`` if they induce a cycle. No validation."""
    start, _ = _heads(inst, *machine_links(inst, perms))
    if start is None:
        return None
    p = inst.op_p
    return max(start[o] + p[o] for o in range(inst.n_ops))


def _cycle_witness(inst: Instance, mpred, indeg) -> list[int]:
    # every unprocessed node keeps an unprocessed predecessor; walk back until a repeat
    o = next(v for v in range(inst.n_ops) if indeg[v] > 0)
    seen: dict[int, int] = {}
    path = []
    while o not in seen:
        seen[o] = len(path)
        path.append(o)
        jp = inst.job_pred[o]
        o = jp if jp >= 0 and indeg[jp] > 0 else mpred[o]
    cycle = path[seen[o]:]
    cycle.reverse()
    return cycle


def evaluate(inst: Instance, perms: Perms) -> Solution:
    """Earliest-start schedule for ``perms``; raises :class:`Infeasible` on a cycle."""
    inst.check_perms(perms)
    mpred, msucc = machine_links(inst, perms)
    start, indeg = _heads(inst, mpred, msucc)
    if start is None:
        raise Infeasible([inst.op_id(o) for o in _cycle_witness(inst, mpred, indeg)])
    p, jpred = inst.op_p, inst.job_pred
    end = [start[o] + p[o] for o in range(inst.n_ops)]
    cmax = max(end)
    # backtrack from the sink, preferring the smallest (job, step) predecessor
    v = end.index(cmax)
    path = [v]
    while True:
        cands = [u for u in (jpred[v], mpred[v]) if u >= 0 and end[u] == start[v]]
        if not cands:
            break
        v = min(cands)
        path.append(v)
    path.reverse()
    return Solution(inst, tuple(tuple(x) for x in perms), tuple(start), cmax, tuple(path))


def critical_machine_arcs(sol: Solution) -> list[tuple[int, int]]:
    m = sol.inst.op_machine
    path = sol.critical_path
    return [(u, v) for u, v in zip(path, path[1:]) if m[u] == m[v]]


def schedule_from_starts(inst: Instance, start: Sequence[int]) -> Solution:
    """Rebuild a :class:`Solution` from start times by sorting each machine."""
    perms = [sorted(ops, key=lambda o: (start[o], o)) for ops in inst.machine_ops]
    return evaluate(inst, perms)
