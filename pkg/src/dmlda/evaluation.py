"""Retrieval and clustering metrics: Recall@K, k-means, NMI, density report."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .density import avg_intra_distance, group_by_class
from .errors import LengthMismatch, TooFewPoints
from .linalg import pairwise_sq_euclidean

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 4, 8)


def recall_at_k(embeddings, labels, ks=DEFAULT_KS):
    """Fraction of queries with a same-class item among their K nearest neighbours.

    The query itself is excluded and distance ties go to the lower row index.
    Queries whose class has no other member fail at every K.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(e)
    if n < 2:
        raise TooFewPoints("Recall@K needs at least 2 rows")
    ks = sorted(int(k) for k in ks)
    kmax = min(max(ks), n - 1)

    dist = pairwise_sq_euclidean(e)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kmax]
    hit = labels[order] == labels[:, None]
    # index of the first same-class neighbour, or kmax if none within reach
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), kmax)
    return {k: float(np.mean(first < min(k, kmax))) if k > 0 else 0.0 for k in ks}


def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        np.minimum(closest, np.sum((x - centers[c]) ** 2, axis=1), out=closest)
    return centers


def _lloyd(x, centers, max_iter, history=None):
    k = len(centers)
    for _ in range(max_iter):
        dist = pairwise_sq_euclidean(x, centers)
        assign = dist.argmin(axis=1)
        inertia = float(dist[np.arange(len(x)), assign].sum())
        if history is not None:
            history.append(inertia)
        new = np.empty_like(centers)
        point_cost = dist[np.arange(len(x)), assign].copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the currently worst-served point
                far = int(point_cost.argmax())
                new[c] = x[far]
                point_cost[far] = 0.0
        if np.array_equal(new, centers):
            break
        centers = new
    dist = pairwise_sq_euclidean(x, centers)
    assign = dist.argmin(axis=1)
    inertia = float(dist[np.arange(len(x)), assign].sum())
    if history is not None:
        history.append(inertia)
    return assign, centers, inertia


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list)


def kmeans(embeddings, num_clusters, seed=0, n_init=8, max_iter=100):
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts."""
    x = np.asarray(embeddings, dtype=np.float64)
    if num_clusters < 1 or num_clusters > len(x):
        raise TooFewPoints(f"cannot form {num_clusters} clusters from {len(x)} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        hist = []
        assign, centers, inertia = _lloyd(x, _kmeans_pp(x, num_clusters, rng), max_iter, hist)
        # strict < keeps the earliest restart on ties
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign, centers, inertia, hist)
    return best


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(assignments, labels):
    """Mutual information over the arithmetic mean of the two entropies."""
    a = np.asarray(assignments)
    b = np.asarray(labels)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} assignments vs {len(b)} labels")
    if len(a) == 0:
        raise LengthMismatch("empty input")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    h_a = _entropy(table.sum(axis=1))
    h_b = _entropy(table.sum(axis=0))
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    n = len(a)
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(np.clip(mi / ((h_a + h_b) / 2.0), 0.0, 1.0))


def density_report(embeddings, labels):
    """Per-class mean squared distance to the centroid; singleton classes are left out."""
    out = {}
    skipped = []
    for c, rows in sorted(group_by_class(embeddings, labels).items(), key=lambda kv: str(kv[0])):
        if len(rows) < 2:
            skipped.append(c)
            continue
        out[c] = avg_intra_distance(rows, c).d_avg
    if skipped:
        log.warning("density report skips %d singleton classes", len(skipped))
    return out


@dataclass
class EvalReport:
    recall_at: dict
    nmi: float
    per_class_density: dict
    num_queries: int

    @property
    def mean_density(self):
        vals = list(self.per_class_density.values())
        return float(np.mean(vals)) if vals else float("nan")

    def to_table(self):
        lines = [f"{'metric':<16}{'value':>10}", "-" * 26]
        lines.append(f"{'NMI':<16}{100 * self.nmi:>10.2f}")
        for k, v in sorted(self.recall_at.items()):
            lines.append(f"{'R@' + str(k):<16}{100 * v:>10.2f}")
        lines.append(f"{'mean density':<16}{self.mean_density:>10.4f}")
        lines.append(f"{'queries':<16}{self.num_queries:>10d}")
        return "\n".join(lines) + "\n"

    def to_records(self):
        """``key=value`` lines, one metric per line."""
        lines = [f"num_queries={self.num_queries}", f"nmi={self.nmi!r}"]
        lines += [f"recall@{k}={v!r}" for k, v in sorted(self.recall_at.items())]
        lines.append(f"mean_density={self.mean_density!r}")
        lines += [f"density[{c}]={v!r}" for c, v in self.per_class_density.items()]
        return "\n".join(lines) + "\n"


def evaluate(embeddings, labels, ks=DEFAULT_KS, seed=0, n_init=8):
    labels = np.asarray(labels)
    num_classes = len(np.unique(labels))
    clusters = kmeans(embeddings, num_classes, seed=seed, n_init=n_init)
    return EvalReport(recall_at_k(embeddings, labels, ks),
                      nmi(clusters.assignments, labels),
                      density_report(embeddings, labels),
                      len(labels))
