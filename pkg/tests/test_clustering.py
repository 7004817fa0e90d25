import collections

import numpy as np
import pytest

from conftest import make_graph
from transcend_lab import graph_gen
from transcend_lab.clustering import (
    EdgePartition,
    cluster_edges,
    kmeans,
    kmeans_single,
    laplacian,
    spectral_embedding,
    symmetric_adjacency,
    within_cluster_two_hops,
)
from transcend_lab.errors import ClusteringError
from transcend_lab.kg_core import enumerate_two_hop
from transcend_lab.seeding import rng_for


def test_k1_identity(small_random_graph):
    part = cluster_edges(small_random_graph, 1, 0)
    assert part.labels == [0] * small_random_graph.n_facts
    assert part.sizes == [small_random_graph.n_facts]


def test_disjoint_components_split():
    # two triangles with no connection between them
    g = make_graph(
        [(f"N{i}", "t") for i in range(6)],
        ["r"],
        [(0, 0, 1), (1, 0, 2), (2, 0, 0), (3, 0, 4), (4, 0, 5), (5, 0, 3)],
    )
    part = cluster_edges(g, 2, 0)
    by_component = collections.defaultdict(set)
    for fact, label in zip(g.facts, part.labels):
        by_component[fact.head < 3].add(label)
    assert all(len(labels) == 1 for labels in by_component.values())
    assert by_component[True] != by_component[False]


def test_partition_totals_and_determinism(small_random_graph):
    part1 = cluster_edges(small_random_graph, 7, 42)
    part2 = cluster_edges(small_random_graph, 7, 42)
    assert part1.labels == part2.labels
    assert sum(part1.sizes) == small_random_graph.n_facts
    assert sum(1 for s in part1.sizes if s) <= 7
    part1.validate_for(small_random_graph)


def test_k_out_of_range(small_random_graph):
    with pytest.raises(ClusteringError):
        cluster_edges(small_random_graph, small_random_graph.n_facts + 1, 0)
    with pytest.raises(ClusteringError):
        cluster_edges(small_random_graph, 0, 0)


def test_laplacian_row_sums_zero(small_random_graph):
    lap = laplacian(symmetric_adjacency(small_random_graph))
    sums = np.asarray(lap.sum(axis=1)).ravel()
    assert np.abs(sums).max() <= 1e-9


def test_eigenvectors_orthonormal(small_random_graph):
    vectors = spectral_embedding(small_random_graph, 6, 0)
    gram = vectors.T @ vectors
    assert np.abs(gram - np.eye(6)).max() <= 1e-6


def test_kmeans_inertia_strictly_decreases():
    rng = rng_for(0, "blobs")
    points = np.concatenate([
        rng.normal(0, 1, size=(40, 3)),
        rng.normal(6, 1, size=(40, 3)),
        rng.normal(-6, 1, size=(40, 3)),
    ])
    result = kmeans_single(points, 3, rng_for(1, "km"))
    history = result.inertia_history
    assert all(a > b for a, b in zip(history, history[1:]))


def test_kmeans_fills_every_cluster():
    rng = rng_for(2, "pairs")
    points = rng.normal(0, 1, size=(30, 2))
    result = kmeans(points, 5, seed=3, n_restarts=5)
    assert len(set(result.labels.tolist())) == 5


def test_kmeans_restart_selection_deterministic():
    rng = rng_for(4, "pts")
    points = rng.normal(0, 1, size=(50, 4))
    r1 = kmeans(points, 4, seed=9, n_restarts=8)
    r2 = kmeans(points, 4, seed=9, n_restarts=8)
    assert np.array_equal(r1.labels, r2.labels)
    assert r1.inertia == r2.inertia


def _modularity(graph, node_labels):
    m = graph.n_facts
    intra = collections.Counter()
    degc = collections.Counter()
    for fact in graph.facts:
        if node_labels[fact.head] == node_labels[fact.tail]:
            intra[node_labels[fact.head]] += 1
        degc[node_labels[fact.head]] += 1
        degc[node_labels[fact.tail]] += 1
    return sum(intra[c] / m - (degc[c] / (2 * m)) ** 2 for c in degc)


def test_modularity_beats_random_partitions(desk_functional_graph):
    g = desk_functional_graph
    part = cluster_edges(g, 50, 0)
    node_labels = [0] * g.n_entities
    for fact, label in zip(g.facts, part.labels):
        node_labels[fact.head] = label
    spectral_q = _modularity(g, node_labels)
    rng = rng_for(123, "random-partitions")
    random_qs = [
        _modularity(g, rng.integers(50, size=g.n_entities)) for _ in range(100)
    ]
    assert spectral_q > max(random_qs)


def test_within_across_partition_of_two_hops(small_random_graph):
    g = small_random_graph
    part = cluster_edges(g, 5, 1)
    within, across = within_cluster_two_hops(g, part)
    all_hops = enumerate_two_hop(g)
    assert len(within) + len(across) == len(all_hops)
    as_set = {tuple((h.head, h.r1, h.r2, h.bridge, h.tail)) for h in within + across}
    assert len(as_set) == len(all_hops)
    # brute-force cover check
    for hop in all_hops:
        first, second = hop.hops
        same = part.labels[g.fact_index[first]] == part.labels[g.fact_index[second]]
        assert (hop in within) == same
        assert (hop in across) == (not same)


def test_within_across_trivial_cases(chain_graph):
    same = EdgePartition(k=2, labels=[1, 1], sizes=[0, 2])
    within, across = within_cluster_two_hops(chain_graph, same)
    assert len(within) == 1 and across == []
    differ = EdgePartition(k=2, labels=[0, 1], sizes=[1, 1])
    within, across = within_cluster_two_hops(chain_graph, differ)
    assert within == [] and len(across) == 1


def test_partition_graph_mismatch(chain_graph, small_random_graph):
    part = cluster_edges(small_random_graph, 3, 0)
    with pytest.raises(ClusteringError, match="covers"):
        within_cluster_two_hops(chain_graph, part)


def test_partition_json_round_trip(small_random_graph):
    part = cluster_edges(small_random_graph, 4, 5)
    again = EdgePartition.from_json(part.to_json())
    assert again.k == part.k and again.labels == part.labels and again.sizes == part.sizes


def test_iterative_eigensolver_path():
    # above the dense cutoff the pipeline switches to the shift-invert solver
    cfg = graph_gen.desk_config(1, n_entities=2400, n_relations=20, target_edges=4000,
                                n_communities=12)
    g = graph_gen.generate_graph(cfg)
    vectors = spectral_embedding(g, 6, 0)
    gram = vectors.T @ vectors
    assert np.abs(gram - np.eye(6)).max() <= 1e-6
    part = cluster_edges(g, 6, 0, n_restarts=5)
    assert sum(part.sizes) == g.n_facts
