"""
Posterior summaries, ground-truth comparison and graph topology.

Graphs are boolean ``(N, N)`` arrays with ``g[m, n]`` meaning an edge
m -> n. Clustering and path length are taken on the undirected simple graph
obtained by symmetrising ``g`` and dropping self-loops.
"""
import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import DataError

__all__ = [
    "GraphMetrics",
    "ChainSummary",
    "DetectionReport",
    "cosine_similarity",
    "threshold_network",
    "graph_metrics",
    "posterior_metric_distribution",
    "degree_profile",
    "compare_to_reference",
    "summarize_chain",
    "write_metrics_csv",
    "read_metrics_csv",
]

DEFAULT_THETA_W = 0.05
DEFAULT_THETA_A = 0.5


@dataclass(frozen=True)
class GraphMetrics:
    n_connections: int
    avg_clustering: float
    avg_path_length: float
    reachable_fraction: float


@dataclass
class ChainSummary:
    """Elementwise posterior summaries of a chain.

    ``edge_prob`` is the mean of A, ``mean_weight`` the mean of A * W, and
    ``weight_lower``/``weight_upper`` the central interval of A * W.
    """

    edge_prob: np.ndarray
    mean_weight: np.ndarray
    weight_lower: np.ndarray
    weight_upper: np.ndarray
    n_samples: int


@dataclass
class DetectionReport:
    fraction_detected: float
    detected: list
    missed: list
    n_extra: int


def cosine_similarity(m1, m2):
    """Cosine of the angle between two matrices flattened to vectors.

    Raises
    ------
    DataError
        For mismatched shapes or an all-zero argument, where the similarity
        is undefined.
    """
    a = np.asarray(m1, dtype=float).ravel()
    b = np.asarray(m2, dtype=float).ravel()
    if np.shape(m1) != np.shape(m2):
        raise DataError(f"shape mismatch {np.shape(m1)} vs {np.shape(m2)}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("cosine similarity is undefined for an all-zero matrix")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def threshold_network(w_mean, a_mean, theta_w=DEFAULT_THETA_W, theta_a=DEFAULT_THETA_A):
    """Keep edge m -> n iff ``|w_mean| >= theta_w`` and ``a_mean >= theta_a``."""
    if theta_w < 0 or not 0 <= theta_a <= 1:
        raise DataError(f"bad thresholds theta_w={theta_w}, theta_a={theta_a}")
    w = np.asarray(w_mean, dtype=float)
    a = np.asarray(a_mean, dtype=float)
    return (np.abs(w) >= theta_w) & (a >= theta_a)


def _undirected(g):
    g = np.asarray(g, dtype=bool)
    u = g | g.T
    np.fill_diagonal(u, False)
    return u


def _bfs_distances(u):
    """All-pairs hop counts of an undirected graph; -1 marks unreachable."""
    n = u.shape[0]
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        frontier = np.zeros(n, dtype=bool)
        frontier[s] = True
        seen = frontier.copy()
        d = 0
        while frontier.any():
            d += 1
            frontier = u[frontier].any(axis=0) & ~seen
            dist[s, frontier] = d
            seen |= frontier
    return dist


def graph_metrics(g):
    """Connection count, average clustering and average path length.

    ``n_connections`` counts directed edges, self-loops excluded. The local
    clustering coefficient of a node of degree < 2 is 0. The average path
    length runs over ordered pairs that are connected; the share of such
    pairs is ``reachable_fraction``. With no connected pair the average path
    length is NaN.
    """
    g = np.asarray(g, dtype=bool)
    n = g.shape[0]
    if g.ndim != 2 or g.shape != (n, n) or n < 1:
        raise DataError(f"graph must be a non-empty square matrix, got {g.shape}")
    n_conn = int(g.sum() - np.trace(g))
    u = _undirected(g)
    ui = u.astype(np.int64)
    deg = ui.sum(axis=1)
    tri = np.diag(ui @ ui @ ui) // 2
    possible = deg * (deg - 1) // 2
    local = np.where(possible > 0, tri / np.maximum(possible, 1), 0.0)
    clustering = float(local.mean())

    dist = _bfs_distances(u)
    off = ~np.eye(n, dtype=bool)
    reach = (dist > 0) & off
    n_pairs = n * (n - 1)
    n_reach = int(reach.sum())
    apl = float(dist[reach].mean()) if n_reach else math.nan
    frac = n_reach / n_pairs if n_pairs else 0.0
    return GraphMetrics(n_conn, clustering, apl, frac)


def posterior_metric_distribution(chain, theta_w=DEFAULT_THETA_W, theta_a=DEFAULT_THETA_A):
    """Graph metrics of every retained sample of ``chain``.

    Each sample's graph keeps edges with ``A = 1`` and ``|W| >= theta_w``.
    """
    if len(chain) == 0:
        raise DataError("empty chain")
    return [graph_metrics(threshold_network(s.effective_weights, s.adjacency, theta_w, theta_a))
            for s in chain.samples]


def degree_profile(g):
    """In- and out-degree of every node, self-loops excluded."""
    g = np.array(g, dtype=bool)
    np.fill_diagonal(g, False)
    return g.sum(axis=0), g.sum(axis=1)


def compare_to_reference(g, reference_edges):
    """How many reference edges ``(m, n)`` the graph ``g`` contains.

    ``n_extra`` counts edges of ``g`` (self-loops excluded) absent from the
    reference.
    """
    g = np.asarray(g, dtype=bool)
    ref = sorted({(int(m), int(n)) for m, n in reference_edges})
    if not ref:
        raise DataError("detection fraction is undefined for an empty reference")
    n = g.shape[0]
    for m, k in ref:
        if not (0 <= m < n and 0 <= k < n):
            raise DataError(f"reference edge {(m, k)} outside a {n}-node graph")
    detected = [e for e in ref if g[e]]
    missed = [e for e in ref if not g[e]]
    ref_set = set(ref)
    src, dst = np.nonzero(g)
    extra = sum(1 for e in zip(src.tolist(), dst.tolist()) if e[0] != e[1] and e not in ref_set)
    return DetectionReport(len(detected) / len(ref), detected, missed, extra)


def summarize_chain(chain, interval=0.95):
    """Posterior edge probabilities, mean effective weights and intervals."""
    if len(chain) == 0:
        raise DataError("empty chain")
    a = chain.adjacency_stack()
    w = chain.weight_stack()
    tail = (1.0 - interval) / 2.0
    lo, hi = np.quantile(w, [tail, 1.0 - tail], axis=0)
    return ChainSummary(a.mean(axis=0), w.mean(axis=0), lo, hi, len(chain))


METRIC_COLUMNS = ["sample"] + [f.name for f in fields(GraphMetrics)]


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRIC_COLUMNS)
        for i, m in enumerate(metrics):
            wr.writerow([i, *(repr(v) if isinstance(v, float) else v for v in astuple(m))])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [GraphMetrics(int(r["n_connections"]), float(r["avg_clustering"]),
                         float(r["avg_path_length"]), float(r["reachable_fraction"])) for r in rows]
