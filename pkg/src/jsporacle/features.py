"""Per-operation descriptors (18 columns) and sequence input matrices."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .core import Instance

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "proc_time", "job_completion", "job_mean", "job_median", "job_std_mean", "job_std_median",
    "job_min", "job_max", "source_dist", "sink_dist", "eigenvector", "eigenvector_w",
    "closeness", "closeness_w", "betweenness", "betweenness_w", "pagerank", "pagerank_w",
)
N_FEATURES = len(FEATURE_NAMES)

EIG_TOL = 1e-8
EIG_MAX_ITER = 1000
PAGERANK_ALPHA = 0.85
PAGERANK_TOL = 1e-9


@dataclass(frozen=True)
class FeatureTable:
    instance_id: str
    values: np.ndarray  # (n_ops, 18), rows in flat (job, step) order

    def __getitem__(self, o):
        return self.values[o]

    def __len__(self):
        return len(self.values)


def feature_graph(inst: Instance, both_directions: bool = True) -> nx.DiGraph:
    """Directed graph on operations plus source ``n`` and sink ``n + 1``.

    Machine pairs get an arc each way (no orientation has been chosen yet).
    Every arc weighs the processing time of its tail node; source arcs weigh 0.
    """
    n = inst.n_ops
    src, dst = n, n + 1
    p = inst.op_p
    g = nx.DiGraph()
    g.add_nodes_from(range(n + 2))
    for j in range(inst.n_jobs):
        first = inst.job_first[j]
        g.add_edge(src, first, weight=0)
        o = first
        while inst.job_succ[o] >= 0:
            g.add_edge(o, inst.job_succ[o], weight=p[o])
            o = inst.job_succ[o]
        g.add_edge(o, dst, weight=p[o])
    for ops in inst.machine_ops:
        for a in ops:
            for b in ops:
                if a < b or (both_directions and a != b):
                    g.add_edge(a, b, weight=p[a])
    return g


def _eigenvector(g, weight):
    try:
        c = nx.eigenvector_centrality(g, max_iter=EIG_MAX_ITER, tol=EIG_TOL, weight=weight)
    except nx.PowerIterationFailedConvergence:
        warnings.warn("eigenvector centrality did not converge; using a uniform vector", RuntimeWarning)
        k = g.number_of_nodes()
        c = dict.fromkeys(g, 1.0 / np.sqrt(k))
    return c


def compute_features(inst: Instance) -> FeatureTable:
    n = inst.n_ops
    p = np.array(inst.op_p, dtype=float)
    pmax = p.max()
    avg = p.mean()
    out = np.zeros((n, N_FEATURES))
    for j, route in enumerate(inst.routes):
        times = np.array([t for _, t in route], dtype=float)
        total = times.sum()
        mean = times.mean()
        median = np.median(times)
        std = times.std()
        done = np.cumsum(times)
        for s in range(len(route)):
            o = inst.job_first[j] + s
            out[o, 0] = p[o] / pmax
            out[o, 1] = done[s] / total
            out[o, 2] = total / (avg * len(route))
            out[o, 3] = median / avg
            out[o, 4] = std * len(route) / total
            out[o, 5] = std / median if median else 0.0
            out[o, 6] = times.min() / pmax
            out[o, 7] = times.max() / pmax

    g = feature_graph(inst)
    src, dst = n, n + 1
    from_src = nx.single_source_dijkstra_path_length(g, src, weight="weight")
    to_dst = nx.single_source_dijkstra_path_length(g.reverse(copy=False), dst, weight="weight")
    cols = [
        _eigenvector(g, None),
        _eigenvector(g, "weight"),
        nx.closeness_centrality(g),
        nx.closeness_centrality(g, distance="weight"),
        nx.betweenness_centrality(g),
        nx.betweenness_centrality(g, weight="weight"),
        nx.pagerank(g, alpha=PAGERANK_ALPHA, tol=PAGERANK_TOL, max_iter=1000, weight=None),
        nx.pagerank(g, alpha=PAGERANK_ALPHA, tol=PAGERANK_TOL, max_iter=1000, weight="weight"),
    ]
    for o in range(n):
        out[o, 8] = from_src[o]
        out[o, 9] = to_dst[o]
        for k, c in enumerate(cols):
            out[o, 10 + k] = c[o]
    return FeatureTable(inst.id, out)


def build_input(table: FeatureTable, perm) -> np.ndarray:
    """Feature rows of ``perm``'s operations, in permutation order."""
    return table.values[np.asarray(perm, dtype=int)]


def dump_features(table: FeatureTable, inst: Instance) -> str:
    """Delimited text: one row per operation in (job, step) order."""
    lines = ["job,step," + ",".join(f"f{k}" for k in range(N_FEATURES))]
    for o, row in enumerate(table.values):
        j, s = inst.op_id(o)
        lines.append(f"{j},{s}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def sequence_inputs(samples, instances, tables=None):
    """Input matrices and labels for labeled samples.

    ``instances`` maps instance id to :class:`Instance`; feature tables are
    computed once per instance unless supplied in ``tables``.
    """
    tables = dict(tables or {})
    seqs = []
    for s in samples:
        if s.instance_id not in tables:
            tables[s.instance_id] = compute_features(instances[s.instance_id])
        seqs.append(build_input(tables[s.instance_id], s.perm))
    return seqs, np.array([s.y for s in samples], dtype=float)
