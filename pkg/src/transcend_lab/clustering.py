"""Edge-expertise clustering.

Facts are partitioned into K expertise clusters by spectral clustering of
the *nodes* on the symmetrized adjacency (unnormalized Laplacian, smallest-k
eigenvectors, k-means with k-means++ seeding); each edge then inherits its
head node's cluster, keeping an entity's outgoing facts in one expertise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ClusteringError, SchemaError
from .kg_core import KnowledgeGraph, TwoHopFact, enumerate_two_hop
from .seeding import rng_for

DENSE_NODE_LIMIT = 2000
EIG_TOL = 1e-8
EIG_MAX_ITER = 5000


@dataclass(slots=True)
class EdgePartition:
    """Assignment of every fact (by canonical index) to one of k clusters."""

    k: int
    labels: list[int]
    sizes: list[int]

    @property
    def n_facts(self) -> int:
        return len(self.labels)

    def cluster_of_index(self, fact_index: int) -> int:
        return self.labels[fact_index]

    def members(self) -> list[list[int]]:
        """Fact indices per cluster."""
        out: list[list[int]] = [[] for _ in range(self.k)]
        for idx, label in enumerate(self.labels):
            out[label].append(idx)
        return out

    def validate_for(self, graph: KnowledgeGraph) -> None:
        if len(self.labels) != graph.n_facts:
            raise ClusteringError(
                f"partition covers {len(self.labels)} facts, graph has {graph.n_facts}"
            )
        if any(not (0 <= lab < self.k) for lab in self.labels):
            raise ClusteringError("cluster label out of range")
        recount = [0] * self.k
        for lab in self.labels:
            recount[lab] += 1
        if recount != self.sizes:
            raise ClusteringError("reported sizes do not match recount")

    def to_json(self) -> bytes:
        doc = {"k": self.k, "assignment": self.labels}
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, data: bytes) -> "EdgePartition":
        try:
            doc = json.loads(data.decode("utf-8"))
            k, labels = int(doc["k"]), [int(x) for x in doc["assignment"]]
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise SchemaError(f"bad partition JSON: {exc}") from exc
        sizes = [0] * k
        for lab in labels:
            if not (0 <= lab < k):
                raise SchemaError(f"cluster label {lab} out of range for k={k}")
            sizes[lab] += 1
        return cls(k=k, labels=labels, sizes=sizes)


@dataclass(slots=True)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float]


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    dist_sq = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist_sq.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=dist_sq / total))
        centers[j] = points[idx]
        dist_sq = np.minimum(dist_sq, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # argmin ties resolve to the lowest cluster index
    d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(points.shape[0]), labels]


def _repair_empty(points: np.ndarray, centers: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the farthest point of the currently largest cluster."""
    for cluster in range(k):
        if np.any(labels == cluster):
            continue
        counts = np.bincount(labels, minlength=k)
        donor = int(np.argmax(counts))
        members = np.flatnonzero(labels == donor)
        dists = ((points[members] - centers[donor]) ** 2).sum(axis=1)
        labels[members[int(np.argmax(dists))]] = cluster
    return labels


def kmeans_single(points: np.ndarray, k: int, rng: np.random.Generator,
                  max_iter: int = 300) -> KMeansResult:
    centers = _plus_plus_init(points, k, rng)
    labels = np.full(points.shape[0], -1)
    history: list[float] = []
    for iteration in range(1, max_iter + 1):
        new_labels, _ = _assign(points, centers)
        new_labels = _repair_empty(points, centers, new_labels, k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(k):
            centers[cluster] = points[labels == cluster].mean(axis=0)
        _, sq = _assign(points, centers)
        history.append(float(sq.sum()))
    return KMeansResult(labels=labels, centers=centers, inertia=history[-1],
                        n_iter=len(history), inertia_history=history)


def kmeans(points: np.ndarray, k: int, seed: int, n_restarts: int = 50,
           max_iter: int = 300) -> KMeansResult:
    """Best of up to 50 restarts; ties go to the lowest restart index."""
    if k > points.shape[0]:
        raise ClusteringError(f"k={k} exceeds {points.shape[0]} points")
    n_restarts = min(n_restarts, 50)
    best: KMeansResult | None = None
    for restart in range(n_restarts):
        result = kmeans_single(points, k, rng_for(seed, "kmeans", restart), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


def symmetric_adjacency(graph: KnowledgeGraph) -> scipy.sparse.csr_matrix:
    """Undirected weighted adjacency; parallel/antiparallel edges accumulate."""
    n = graph.n_entities
    rows, cols = [], []
    for fact in graph.facts:
        rows.append(fact.head)
        cols.append(fact.tail)
    data = np.ones(len(rows))
    a = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(n, n))
    return (a + a.T).tocsr()


def laplacian(adjacency: scipy.sparse.csr_matrix) -> scipy.sparse.csr_matrix:
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    return scipy.sparse.diags(degrees) - adjacency


def spectral_embedding(graph: KnowledgeGraph, k: int, seed: int) -> np.ndarray:
    """Rows of the smallest-k eigenvectors of the unnormalized Laplacian."""
    lap = laplacian(symmetric_adjacency(graph))
    n = lap.shape[0]
    if k > n:
        raise ClusteringError(f"k={k} exceeds {n} nodes")
    if n <= DENSE_NODE_LIMIT:
        _, vectors = scipy.linalg.eigh(lap.toarray(), subset_by_index=[0, k - 1])
        return vectors
    v0 = rng_for(seed, "eigs").standard_normal(n)
    try:
        _, vectors = scipy.sparse.linalg.eigsh(
            lap.tocsc(), k=k, sigma=-1e-3, which="LM", tol=EIG_TOL,
            maxiter=EIG_MAX_ITER, v0=v0,
        )
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise ClusteringError(
            f"eigensolver did not converge within {EIG_MAX_ITER} iterations: "
            f"{len(exc.eigenvalues)} of {k} eigenpairs found"
        ) from exc
    return vectors


def cluster_edges(graph: KnowledgeGraph, k: int, seed: int,
                  n_restarts: int = 50) -> EdgePartition:
    """Partition facts into at most k expertise clusters."""
    if not (1 <= k <= graph.n_facts):
        raise ClusteringError(f"need 1 <= k <= |E|={graph.n_facts}, got k={k}")
    if k == 1:
        return EdgePartition(k=1, labels=[0] * graph.n_facts, sizes=[graph.n_facts])
    embedding = spectral_embedding(graph, k, seed)
    node_labels = kmeans(embedding, k, seed, n_restarts=n_restarts).labels
    labels = [int(node_labels[fact.head]) for fact in graph.facts]
    sizes = [0] * k
    for lab in labels:
        sizes[lab] += 1
    return EdgePartition(k=k, labels=labels, sizes=sizes)


def within_cluster_two_hops(
    graph: KnowledgeGraph, partition: EdgePartition
) -> tuple[list[TwoHopFact], list[TwoHopFact]]:
    """Split all two-hop facts into same-cluster and cross-cluster groups."""
    partition.validate_for(graph)
    within: list[TwoHopFact] = []
    across: list[TwoHopFact] = []
    for hop in enumerate_two_hop(graph):
        first, second = hop.hops
        c1 = partition.labels[graph.fact_index[first]]
        c2 = partition.labels[graph.fact_index[second]]
        (within if c1 == c2 else across).append(hop)
    return within, across
