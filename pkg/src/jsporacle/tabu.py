"""Tabu search over the N1 neighborhood, with an optional oracle filter.

``search`` runs the plain variant (sTS) when ``SearchConfig.oracle`` is
``None`` and the oracle-filtered variant (oTS) otherwise.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from .core import Instance, Solution, critical_machine_arcs, evaluate, machine_links
from .instances import dispatch

log = logging.getLogger(__name__)


class Move(NamedTuple):
    """Reverse the machine arc ``v -> w`` (flat operation indices) on ``machine``."""

    machine: int
    v: int
    w: int


@dataclass
class OracleSpec:
    """Oracle handle for the filtered variant."""

    model: object  # oracle.OracleModel
    features: object = None  # features.FeatureTable; computed on demand when None
    strict: bool = False  # keep a move only if its prediction is strictly higher


@dataclass
class SearchConfig:
    max_nonimproving: int = 500
    restarts: int = 0
    tenure: int = 10
    seed: int = 0
    oracle: OracleSpec | None = None
    time_limit: float | None = None
    # "nonimproving": filter while the non-improving counter is inside the window;
    # "trajectory": filter during the first ``filter_window`` iterations of each trajectory
    filter_scope: str = "trajectory"

    def __post_init__(self):
        if self.max_nonimproving < 1:
            raise ValueError("max_nonimproving must be >= 1")
        if self.tenure < 1:
            raise ValueError("tenure must be >= 1")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.filter_scope not in ("nonimproving", "trajectory"):
            raise ValueError(f"unknown filter_scope {self.filter_scope!r}")

    @property
    def filter_window(self) -> int:
        return self.max_nonimproving // 4 if self.oracle is not None else 0


@dataclass
class SearchReport:
    makespan: int
    best: Solution = field(repr=False)
    initial_makespan: int
    gap: float | None
    iterations: int
    restarts_used: int
    oracle_calls: int = 0
    oracle_predictions: int = 0
    fallbacks: int = 0
    filtered_iterations: int = 0  # filter calls that removed at least one move
    cyclic_neighbors: int = 0
    timed_out: bool = False
    elapsed: float = field(default=0.0, compare=False)

    @property
    def filter_rate(self) -> float:
        return self.filtered_iterations / self.oracle_calls if self.oracle_calls else 0.0

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan, "initial_makespan": self.initial_makespan, "gap": self.gap,
            "iterations": self.iterations, "restarts_used": self.restarts_used,
            "oracle_calls": self.oracle_calls, "oracle_predictions": self.oracle_predictions,
            "fallbacks": self.fallbacks, "filtered_iterations": self.filtered_iterations,
            "cyclic_neighbors": self.cyclic_neighbors, "timed_out": self.timed_out,
            "elapsed": self.elapsed, "perms": [list(p) for p in self.best.perms],
        }


def n1_neighborhood(sol: Solution) -> list[Move]:
    """One move per critical machine arc, sorted by (machine, position)."""
    m = sol.inst.op_machine
    pos = {o: k for perm in sol.perms for k, o in enumerate(perm)}
    moves = [Move(m[v], v, w) for v, w in critical_machine_arcs(sol)]
    return sorted(moves, key=lambda mv: (mv.machine, pos[mv.v]))


def apply_move(perms, move: Move) -> tuple:
    perm = list(perms[move.machine])
    k = perm.index(move.v)
    if k + 1 >= len(perm) or perm[k + 1] != move.w:
        raise ValueError(f"{move} is not an adjacent pair")
    perm[k], perm[k + 1] = perm[k + 1], perm[k]
    out = list(perms)
    out[move.machine] = tuple(perm)
    return tuple(out)


@njit(cache=True)
def _cmax(p, jpred, jsucc, mpred, msucc, indeg, stack, start):
    n = p.shape[0]
    top = 0
    for o in range(n):
        d = 0
        if jpred[o] >= 0:
            d += 1
        if mpred[o] >= 0:
            d += 1
        indeg[o] = d
        start[o] = 0
        if d == 0:
            stack[top] = o
            top += 1
    done = 0
    cmax = 0
    while top > 0:
        top -= 1
        o = stack[top]
        done += 1
        e = start[o] + p[o]
        if e > cmax:
            cmax = e
        s = jsucc[o]
        if s >= 0:
            if e > start[s]:
                start[s] = e
            indeg[s] -= 1
            if indeg[s] == 0:
                stack[top] = s
                top += 1
        s = msucc[o]
        if s >= 0:
            if e > start[s]:
                start[s] = e
            indeg[s] -= 1
            if indeg[s] == 0:
                stack[top] = s
                top += 1
    return cmax if done == n else -1


@njit(cache=True)
def _swap_makespans(vs, ws, p, jpred, jsucc, mpred, msucc, out):
    """Makespan after reversing each adjacent pair ``vs[k] -> ws[k]``; -1 on a cycle."""
    n = p.shape[0]
    indeg = np.empty(n, np.int64)
    stack = np.empty(n, np.int64)
    start = np.empty(n, np.int64)
    for k in range(vs.shape[0]):
        v = vs[k]
        w = ws[k]
        a = mpred[v]
        b = msucc[w]
        # a -> v -> w -> b  becomes  a -> w -> v -> b
        if a >= 0:
            msucc[a] = w
        if b >= 0:
            mpred[b] = v
        mpred[w] = a
        msucc[w] = v
        mpred[v] = w
        msucc[v] = b
        out[k] = _cmax(p, jpred, jsucc, mpred, msucc, indeg, stack, start)
        if a >= 0:
            msucc[a] = v
        if b >= 0:
            mpred[b] = w
        mpred[v] = a
        msucc[v] = w
        mpred[w] = v
        msucc[w] = b


class _Evaluator:
    def __init__(self, inst: Instance):
        self.p = np.array(inst.op_p, dtype=np.int64)
        self.jpred = np.array(inst.job_pred, dtype=np.int64)
        self.jsucc = np.array(inst.job_succ, dtype=np.int64)
        self.inst = inst

    def neighbor_makespans(self, perms, moves) -> np.ndarray:
        mpred, msucc = machine_links(self.inst, perms)
        out = np.empty(len(moves), dtype=np.int64)
        if moves:
            vs = np.array([mv.v for mv in moves], dtype=np.int64)
            ws = np.array([mv.w for mv in moves], dtype=np.int64)
            _swap_makespans(vs, ws, self.p, self.jpred, self.jsucc,
                            np.array(mpred, dtype=np.int64), np.array(msucc, dtype=np.int64), out)
        return out


class _Predictor:
    """Memoised eval-mode oracle predictions keyed by (machine, permutation)."""

    def __init__(self, inst: Instance, spec: OracleSpec):
        from .features import compute_features

        self.spec = spec
        self.table = spec.features if spec.features is not None else compute_features(inst)
        if len(self.table) != inst.n_ops:
            raise ValueError("feature table does not match the instance")
        self.cache: dict[tuple, float] = {}
        self.predictions = 0

    def __call__(self, perms: list[tuple]) -> list[float]:
        from .oracle import predict_sequences

        todo = [q for q in dict.fromkeys(perms) if q not in self.cache]
        if todo:
            seqs = [self.table.values[np.asarray(q)] for q in todo]
            yh, _ = predict_sequences(self.spec.model, seqs)
            self.cache.update(zip(todo, yh.tolist()))
            self.predictions += len(todo)
        return [self.cache[q] for q in perms]


def oracle_filter(current: Solution, moves, model, features=None, strict: bool = False,
                  predictor=None) -> tuple[list[Move], bool]:
    """Moves whose new machine permutation scores at least as high as the current one.

    Returns ``(kept, fell_back)``; when nothing survives the full list is
    returned with ``fell_back`` set.
    """
    moves = list(moves)
    if not moves:
        return moves, False
    if predictor is None:
        predictor = _Predictor(current.inst, OracleSpec(model, features, strict))
    cur = [current.perms[mv.machine] for mv in moves]
    new = [apply_move(current.perms, mv)[mv.machine] for mv in moves]
    scores = predictor(cur + new)
    before, after = scores[:len(moves)], scores[len(moves):]
    kept = [mv for mv, b, a in zip(moves, before, after) if (a > b if strict else a >= b)]
    if not kept:
        return moves, True
    return kept, False


@dataclass
class _Snapshot:
    perms: tuple
    banned: Move | None = None  # move first taken from here, skipped on resume


def search(inst: Instance, init: Solution | None, cfg: SearchConfig, optimum: int | None = None) -> SearchReport:
    """Tabu search from ``init`` (a random dispatch seeded by ``cfg.seed`` when ``None``).

    ``optimum`` is an optional reference makespan used for the reported gap.
    """
    t0 = time.monotonic()
    if init is None:
        init = dispatch(inst, "random", seed=cfg.seed)
    cur = evaluate(inst, init.perms)
    best = cur
    ev = _Evaluator(inst)
    predictor = _Predictor(inst, cfg.oracle) if cfg.oracle is not None else None
    window = cfg.filter_window
    rep = dict(iterations=0, restarts_used=0, oracle_calls=0, fallbacks=0, filtered_iterations=0,
               cyclic_neighbors=0, timed_out=False)

    stack: deque[_Snapshot] = deque(maxlen=cfg.restarts or None)
    banned: Move | None = None
    pending: _Snapshot | None = None

    while True:
        tabu: deque[Move] = deque(maxlen=cfg.tenure)
        nonimproving = 0
        steps = 0
        while nonimproving < cfg.max_nonimproving:
            if cfg.time_limit is not None and time.monotonic() - t0 > cfg.time_limit:
                rep["timed_out"] = True
                break
            moves = n1_neighborhood(cur)
            if banned is not None and len(moves) > 1:
                moves = [mv for mv in moves if mv != banned]
            banned = None
            if not moves:
                break  # a single job is critical: the schedule is optimal
            clock = nonimproving if cfg.filter_scope == "nonimproving" else steps
            if predictor is not None and clock < window:
                rep["oracle_calls"] += 1
                kept, fell_back = oracle_filter(cur, moves, None, predictor=predictor,
                                                strict=cfg.oracle.strict)
                rep["fallbacks"] += fell_back
                rep["filtered_iterations"] += len(kept) < len(moves)
                moves = kept
            values = ev.neighbor_makespans(cur.perms, moves)
            choice = None
            for mv, c in zip(moves, values.tolist()):
                if c < 0:
                    rep["cyclic_neighbors"] += 1
                    continue
                if (mv in tabu and c >= best.makespan) or (choice is not None and c >= choice[1]):
                    continue
                choice = (mv, c)
            if choice is None:
                # every feasible move is tabu: take the one whose entry is oldest
                feasible = {mv for mv, c in zip(moves, values.tolist()) if c >= 0}
                oldest = next((t for t in tabu if t in feasible), None)
                if oldest is None:
                    break
                choice = (oldest, None)
            mv = choice[0]
            if pending is not None:
                pending.banned = mv
                pending = None
            cur = evaluate(inst, apply_move(cur.perms, mv))
            tabu.append(Move(mv.machine, mv.w, mv.v))
            rep["iterations"] += 1
            steps += 1
            if cur.makespan < best.makespan:
                best = cur
                nonimproving = 0
                if cfg.restarts:
                    pending = _Snapshot(cur.perms)
                    stack.append(pending)
            else:
                nonimproving += 1
        if rep["timed_out"] or not stack or rep["restarts_used"] >= cfg.restarts:
            break
        snap = stack.pop()
        rep["restarts_used"] += 1
        cur = evaluate(inst, snap.perms)
        banned = snap.banned
        pending = None

    gap = best.makespan / optimum - 1.0 if optimum else None
    return SearchReport(
        makespan=best.makespan, best=best, initial_makespan=init.makespan, gap=gap,
        oracle_predictions=predictor.predictions if predictor is not None else 0,
        elapsed=time.monotonic() - t0, **rep,
    )
