"""Exact minimum-makespan search.

Depth-first branch-and-bound over the Giffler-Thompson active-schedule
generator. A fixed machine order is modelled as extra precedence arcs
between consecutive operations of that machine, so the same search solves
the constrained problem. The lower bound combines, for every open
operation, head + processing + tail, and for every machine the optimal
preemptive one-machine schedule with heads and tails (Jackson's rule).
"""
from __future__ import annotations

import enum
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import Infeasible, Instance, Solution, evaluate
from .instances import dispatch


class TooLarge(ValueError):
    pass


class Status(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    TIMED_OUT = "timed_out"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class ExactConfig:
    time_limit: float = 60.0
    node_limit: int = 50_000_000
    incumbent: Solution | None = None  # feasible seed solution; overrides SPT

    def __post_init__(self):
        if self.time_limit <= 0 or self.node_limit <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class ExactResult:
    status: Status
    makespan: int | None
    solution: Solution | None
    lower_bound: int
    nodes: int
    elapsed: float

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@njit(cache=True)
def _jackson_preemptive(r, p, q, c, left):
    """Optimal preemptive one-machine value max(C_k + q_k) with heads ``r`` and tails ``q``."""
    done = 0
    best = 0
    for k in range(c):
        left[k] = p[k]
        if p[k] == 0:
            done += 1
            if r[k] + q[k] > best:
                best = r[k] + q[k]
    t = r[0]
    for k in range(1, c):
        if r[k] < t:
            t = r[k]
    while done < c:
        # highest tail among released unfinished operations
        pick = -1
        for k in range(c):
            if left[k] > 0 and r[k] <= t and (pick < 0 or q[k] > q[pick]):
                pick = k
        if pick < 0:
            nxt = -1
            for k in range(c):
                if left[k] > 0 and (nxt < 0 or r[k] < nxt):
                    nxt = r[k]
            t = nxt
            continue
        # run until it finishes or a release with a larger tail arrives
        until = t + left[pick]
        for k in range(c):
            if left[k] > 0 and t < r[k] < until and q[k] > q[pick]:
                until = r[k]
        left[pick] -= until - t
        t = until
        if left[pick] == 0:
            done += 1
            if t + q[pick] > best:
                best = t + q[pick]
    return best


@njit(cache=True)
def _lower_bound(n, n_machines, p, mach, job_of, jpred, cpred, order, tail,
                 scheduled, job_ready, mach_ready, cmax, ub, head, buf_h, buf_p, buf_q, buf_r, mcount):
    lb = cmax
    for m in range(n_machines):
        mcount[m] = 0
    for k in range(n):
        o = order[k]
        if scheduled[o]:
            continue
        m = mach[o]
        h = mach_ready[m]
        u = jpred[o]
        if u < 0 or scheduled[u]:
            r = job_ready[job_of[o]]
        else:
            r = head[u] + p[u]
        if r > h:
            h = r
        u = cpred[o]
        if u >= 0 and not scheduled[u]:
            r = head[u] + p[u]
            if r > h:
                h = r
        head[o] = h
        v = h + p[o] + tail[o]
        if v > lb:
            lb = v
            if lb >= ub:
                return lb
        c = mcount[m]
        buf_h[m, c] = h
        buf_p[m, c] = p[o]
        buf_q[m, c] = tail[o]
        mcount[m] = c + 1
    for m in range(n_machines):
        c = mcount[m]
        if c < 2:
            continue
        v = _jackson_preemptive(buf_h[m], buf_p[m], buf_q[m], c, buf_r[m])
        if v > lb:
            lb = v
            if lb >= ub:
                return lb
    return lb
    return lb


@njit(cache=True)
def _expand(d, n_jobs, p, mach, cpred, scheduled, nxt, job_ready, mach_ready, cands, cnt, pos, applied):
    # Giffler-Thompson conflict set on the machine of the earliest completion
    best_ect = -1
    best_m = -1
    best_o = -1
    for j in range(n_jobs):
        o = nxt[j]
        if o < 0:
            continue
        u = cpred[o]
        if u >= 0 and not scheduled[u]:
            continue
        m = mach[o]
        est = max(job_ready[j], mach_ready[m])
        if best_ect < 0 or est + p[o] < best_ect:
            best_ect = est + p[o]
            best_m = m
            best_o = o
    c = 0
    for j in range(n_jobs):
        o = nxt[j]
        if o < 0 or mach[o] != best_m:
            continue
        u = cpred[o]
        if u >= 0 and not scheduled[u]:
            continue
        # the defining operation always branches, even when it has zero length
        if o == best_o or max(job_ready[j], mach_ready[best_m]) < best_ect:
            cands[d, c] = o
            c += 1
    cnt[d] = c
    pos[d] = 0
    applied[d] = -1


@njit(cache=True)
def _bnb(budget, node_limit, st, n_jobs, n_machines, p, mach, job_of, jpred, jsucc, cpred, order, tail,
         scheduled, start, nxt, job_ready, mach_ready, cands, cnt, pos, applied, save_j, save_m, cmax_d,
         rank, best_rank, head, buf_h, buf_p, buf_q, buf_r, mcount):
    """Resumable depth-first search. ``st`` = [depth, nodes, ub, improved]."""
    n = p.shape[0]
    while budget > 0:
        d = st[0]
        if d < 0:
            return
        if st[1] >= node_limit:
            return
        o = applied[d]
        if o >= 0:
            j = job_of[o]
            scheduled[o] = 0
            job_ready[j] = save_j[d]
            mach_ready[mach[o]] = save_m[d]
            nxt[j] = o
            applied[d] = -1
        if pos[d] >= cnt[d]:
            st[0] = d - 1
            continue
        o = cands[d, pos[d]]
        pos[d] += 1
        j = job_of[o]
        m = mach[o]
        save_j[d] = job_ready[j]
        save_m[d] = mach_ready[m]
        est = max(job_ready[j], mach_ready[m])
        end = est + p[o]
        scheduled[o] = 1
        start[o] = est
        rank[o] = d
        job_ready[j] = end
        mach_ready[m] = end
        nxt[j] = jsucc[o]
        applied[d] = o
        cm = max(cmax_d[d], end)
        st[1] += 1
        budget -= 1
        if d + 1 == n:
            if cm < st[2]:
                st[2] = cm
                st[3] += 1
                best_rank[:] = rank
            continue
        lb = _lower_bound(n, n_machines, p, mach, job_of, jpred, cpred, order, tail,
                          scheduled, job_ready, mach_ready, cm, st[2], head, buf_h, buf_p, buf_q, buf_r, mcount)
        if lb >= st[2]:
            continue
        cmax_d[d + 1] = cm
        _expand(d + 1, n_jobs, p, mach, cpred, scheduled, nxt, job_ready, mach_ready, cands, cnt, pos, applied)
        st[0] = d + 1


class _Search:
    def __init__(self, inst: Instance, machine=None, perm=None):
        self.inst = inst
        n = inst.n_ops
        cpred = np.full(n, -1, dtype=np.int64)
        csucc = np.full(n, -1, dtype=np.int64)
        if machine is not None:
            for a, b in zip(perm, perm[1:]):
                cpred[b] = a
                csucc[a] = b
        self.cpred = cpred
        self.p = np.array(inst.op_p, dtype=np.int64)
        self.mach = np.array(inst.op_machine, dtype=np.int64)
        self.job_of = np.array(inst.op_job, dtype=np.int64)
        self.jpred = np.array(inst.job_pred, dtype=np.int64)
        self.jsucc = np.array(inst.job_succ, dtype=np.int64)
        self.order = self._topological_order(csucc)
        tail = np.zeros(n, dtype=np.int64)
        for o in self.order[::-1]:
            for s in (self.jsucc[o], csucc[o]):
                if s >= 0:
                    tail[o] = max(tail[o], tail[s] + self.p[s])
        self.tail = tail

    def _topological_order(self, csucc):
        inst = self.inst
        n = inst.n_ops
        indeg = [int(inst.job_pred[o] >= 0) + int(self.cpred[o] >= 0) for o in range(n)]
        queue = [o for o in range(n) if indeg[o] == 0]
        order = []
        while queue:
            o = queue.pop(0)
            order.append(o)
            for s in (inst.job_succ[o], csucc[o]):
                if s >= 0:
                    indeg[s] -= 1
                    if indeg[s] == 0:
                        queue.append(s)
        if len(order) != n:  # pragma: no cover - a single machine chain cannot close a cycle
            raise AssertionError("fixed permutation creates a cycle")
        return np.array(order, dtype=np.int64)

    def run(self, ub: int, cfg: ExactConfig, slice_nodes: int = 1 << 17):
        inst = self.inst
        n, nj, nm = inst.n_ops, inst.n_jobs, inst.n_machines
        i64 = np.int64
        scheduled = np.zeros(n, dtype=np.uint8)
        start = np.zeros(n, dtype=i64)
        nxt = np.array(inst.job_first, dtype=i64)
        job_ready = np.zeros(nj, dtype=i64)
        mach_ready = np.zeros(nm, dtype=i64)
        cands = np.zeros((n + 1, nj), dtype=i64)
        cnt = np.zeros(n + 1, dtype=i64)
        pos = np.zeros(n + 1, dtype=i64)
        applied = np.full(n + 1, -1, dtype=i64)
        save_j = np.zeros(n + 1, dtype=i64)
        save_m = np.zeros(n + 1, dtype=i64)
        cmax_d = np.zeros(n + 1, dtype=i64)
        rank = np.zeros(n, dtype=i64)
        self.best_rank = np.zeros(n, dtype=i64)
        head = np.zeros(n, dtype=i64)
        buf_h = np.zeros((nm, nj), dtype=i64)
        buf_p = np.zeros((nm, nj), dtype=i64)
        buf_q = np.zeros((nm, nj), dtype=i64)
        buf_r = np.zeros((nm, nj), dtype=i64)
        mcount = np.zeros(nm, dtype=i64)
        st = np.array([0, 0, ub, 0], dtype=i64)
        self.st = st
        self.root_lb = int(_lower_bound(n, nm, self.p, self.mach, self.job_of, self.jpred, self.cpred, self.order,
                                        self.tail, scheduled, job_ready, mach_ready, 0, 1 << 62, head,
                                        buf_h, buf_p, buf_q, buf_r, mcount))
        self.limit_hit = None
        if self.root_lb >= ub:
            return
        _expand(0, nj, self.p, self.mach, self.cpred, scheduled, nxt, job_ready, mach_ready, cands, cnt, pos, applied)
        deadline = time.monotonic() + cfg.time_limit
        while True:
            _bnb(slice_nodes, cfg.node_limit, st, nj, nm, self.p, self.mach, self.job_of, self.jpred, self.jsucc,
                 self.cpred, self.order, self.tail, scheduled, start, nxt, job_ready, mach_ready, cands, cnt, pos,
                 applied, save_j, save_m, cmax_d, rank, self.best_rank, head, buf_h, buf_p, buf_q, buf_r, mcount)
            if st[0] < 0:
                return
            if st[1] >= cfg.node_limit:
                self.limit_hit = Status.FEASIBLE
                return
            if time.monotonic() > deadline:
                self.limit_hit = Status.TIMED_OUT
                return

    @property
    def nodes(self) -> int:
        return int(self.st[1]) if hasattr(self, "st") else 0

    @property
    def improved(self) -> bool:
        return hasattr(self, "st") and self.st[3] > 0


def _solve(inst: Instance, cfg: ExactConfig, machine=None, perm=None) -> ExactResult:
    t0 = time.monotonic()
    search = _Search(inst, machine, perm)
    seed = cfg.incumbent
    if seed is None:
        fixed = None if machine is None else {machine: perm}
        seed = dispatch(inst, "spt", fixed=fixed)
    search.run(seed.makespan, cfg)
    if search.improved:
        rank = search.best_rank.tolist()
        perms = [sorted(ops, key=rank.__getitem__) for ops in inst.machine_ops]
        sol = evaluate(inst, perms)
    else:
        sol = seed
    elapsed = time.monotonic() - t0
    if search.limit_hit is None:
        return ExactResult(Status.OPTIMAL, sol.makespan, sol, sol.makespan, search.nodes, elapsed)
    lb = min(search.root_lb, sol.makespan)
    return ExactResult(search.limit_hit, sol.makespan, sol, lb, search.nodes, elapsed)


def solve_optimal(inst: Instance, cfg: ExactConfig | None = None) -> ExactResult:
    return _solve(inst, cfg or ExactConfig())


def solve_with_fixed_permutation(inst: Instance, machine: int, perm, cfg: ExactConfig | None = None) -> ExactResult:
    """Minimum makespan over solutions whose order on ``machine`` is ``perm``."""
    perm = [int(o) for o in perm]
    if sorted(perm) != sorted(inst.machine_ops[machine]):
        raise ValueError(f"perm is not a permutation of machine {machine}'s operations")
    cfg = cfg or ExactConfig()
    if cfg.incumbent is not None and list(cfg.incumbent.perms[machine]) != perm:
        raise ValueError("incumbent does not respect the fixed permutation")
    return _solve(inst, cfg, machine, perm)


def brute_force_optimal(inst: Instance, cap: int = 10**6, chunk: int = 1 << 15) -> int:
    """Minimum makespan by enumerating every machine-permutation combination.

    Longest paths are computed for all combinations at once by repeated
    relaxation. Arc weights are scaled to ``p * (n + 1) + 1`` so that every
    cycle has positive length and shows up as values that keep growing.
    """
    n = inst.n_ops
    count = math.prod(math.factorial(len(ops)) for ops in inst.machine_ops)
    if count > cap:
        raise TooLarge(f"{count} combinations exceed the cap of {cap}")
    scale = n + 1
    w = np.array([p * scale + 1 for p in inst.op_p] + [0], dtype=np.int64)
    jpred = np.array([u if u >= 0 else n for u in inst.job_pred])
    tables = []
    for ops in inst.machine_ops:
        rows = []
        for perm in itertools.permutations(ops):
            pred = np.full(len(ops), n)
            pos = {o: k for k, o in enumerate(ops)}
            for a, b in zip(perm, perm[1:]):
                pred[pos[b]] = a
            rows.append(pred)
        tables.append((list(ops), np.array(rows, dtype=np.int64).reshape(len(rows), len(ops))))
    sizes = [len(t[1]) for t in tables]
    best = None
    for lo in range(0, count, chunk):
        idx = np.arange(lo, min(lo + chunk, count))
        mpred = np.full((len(idx), n), n)
        for (ops, table), digits in zip(tables, np.unravel_index(idx, sizes)):
            if ops:
                mpred[:, ops] = table[digits]
        start = np.zeros((len(idx), n + 1), dtype=np.int64)
        rows = np.arange(len(idx))[:, None]
        def relax(s):
            end = s + w
            new = np.maximum(end[:, jpred], end[rows, mpred])
            out = np.zeros_like(s)
            out[:, :n] = new
            return out
        for _ in range(n):
            start = relax(start)
        settled = start
        for _ in range(n):
            start = relax(start)
        acyclic = (start == settled).all(axis=1)
        if acyclic.any():
            length = (settled[acyclic, :n] + w[:n]).max(axis=1)
            value = int(length.min()) // scale
            best = value if best is None else min(best, value)
    if best is None:  # pragma: no cover - a semi-active schedule always exists
        raise AssertionError("no acyclic combination")
    return best


def brute_force_count(inst: Instance) -> tuple[int, int]:
    """(candidates, acyclic) combination counts; small instances only."""
    total = feasible = 0
    for combo in itertools.product(*(itertools.permutations(ops) for ops in inst.machine_ops)):
        total += 1
        try:
            evaluate(inst, combo)
            feasible += 1
        except Infeasible:
            pass
    return total, feasible
