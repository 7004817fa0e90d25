import numpy as np
import pytest
import scipy.stats

from conftest import make_graph
from transcend_lab.clustering import EdgePartition, cluster_edges
from transcend_lab.errors import ExpertError
from transcend_lab.experts import (
    ExpertProfile,
    build_denoising_experts,
    build_generalization_experts,
    build_selection_experts,
    corrupt_fact,
    coverage_budget,
    experts_from_json,
    experts_to_json,
    greedy_coverage_vector,
)
from transcend_lab.kg_core import Fact, enumerate_two_hop


def pool_graph():
    # head pool {Hed, Alt}, tail pool {Tal, Tol, Tul}
    return make_graph(
        [("Hed", "left"), ("Alt", "left"), ("Tal", "right"), ("Tol", "right"), ("Tul", "right")],
        ["r"],
        [(0, 0, 2)],
    )


def test_single_candidate_head_side():
    g = pool_graph()
    fact = g.facts[0]
    corrupted = corrupt_fact(g, fact, seed=0, side="head")
    assert corrupted == Fact(1, 0, 2)


def test_relation_always_preserved():
    g = pool_graph()
    fact = g.facts[0]
    for seed in range(10_000):
        corrupted = corrupt_fact(g, fact, seed)
        assert corrupted.relation == fact.relation
        assert corrupted != fact
        assert (corrupted.head != fact.head) != (corrupted.tail != fact.tail)


def test_substitute_uniform_chi_square():
    g = pool_graph()
    fact = g.facts[0]
    counts = {3: 0, 4: 0}  # tail-side candidates: Tol, Tul (Tal is the original)
    n = 100_000
    for seed in range(n):
        corrupted = corrupt_fact(g, fact, seed, side="tail")
        counts[corrupted.tail] += 1
    observed = np.array([counts[3], counts[4]])
    stat = ((observed - n / 2) ** 2 / (n / 2)).sum()
    assert stat < scipy.stats.chi2.ppf(0.999, 1)


def test_corruption_type_preserved(small_random_graph):
    g = small_random_graph
    for seed in range(200):
        fact = g.facts[seed % g.n_facts]
        corrupted = corrupt_fact(g, fact, seed)
        if corrupted.head != fact.head:
            assert g.entities[corrupted.head].semantic_type == g.entities[fact.head].semantic_type
        else:
            assert g.entities[corrupted.tail].semantic_type == g.entities[fact.tail].semantic_type
        assert corrupted.head != corrupted.tail


def test_uncorruptible_fact_errors():
    g = make_graph([("Solo", "a"), ("Only", "b")], ["r"], [(0, 0, 1)])
    with pytest.raises(ExpertError, match="uncorruptible"):
        corrupt_fact(g, g.facts[0], seed=0)
    with pytest.raises(ExpertError):
        build_denoising_experts(g, 1, 0.0, 0)
    kept = build_denoising_experts(g, 1, 0.0, 0, on_uncorruptible="keep_correct")
    assert kept[0].personal_facts[0].fact == g.facts[0]


def test_denoising_extremes(small_random_graph):
    g = small_random_graph
    perfect = build_denoising_experts(g, 2, 1.0, 3)
    for expert in perfect:
        assert all(not pf.corrupted and pf.fact == g.facts[pf.source_index]
                   for pf in expert.personal_facts)
    hopeless = build_denoising_experts(g, 2, 0.0, 3)
    for expert in hopeless:
        assert all(pf.corrupted and pf.fact != g.facts[pf.source_index]
                   for pf in expert.personal_facts)
        assert len(expert.personal_facts) == g.n_facts


def test_denoising_binomial_bounds(desk_functional_graph):
    g = desk_functional_graph
    expert = build_denoising_experts(g, 1, 0.2, 5)[0]
    correct = sum(1 for pf in expert.personal_facts if not pf.corrupted)
    mean, sigma = 0.2 * g.n_facts, (0.2 * 0.8 * g.n_facts) ** 0.5
    assert abs(correct - mean) <= 4 * sigma


def test_expert_stability_under_population_size(small_random_graph):
    g = small_random_graph
    ten = build_denoising_experts(g, 10, 0.5, 9)
    hundred = build_denoising_experts(g, 30, 0.5, 9)
    for a, b in zip(ten, hundred[:10]):
        assert a.personal_facts == b.personal_facts


def test_denoising_error_overlap_rate():
    # facts wrong in both of two experts ~ (1-c)^2; identical corruption adds
    # the side/candidate collision term sum_side (1/2 / m_side)^2 summed over
    # candidates = 0.25/m_head + 0.25/m_tail
    g = make_graph(
        [("H", "left"), ("H2", "left"), ("H3", "left"), ("H4", "left"),
         ("T", "right"), ("T2", "right"), ("T3", "right"), ("T4", "right"), ("T5", "right")],
        ["r"],
        [(0, 0, 4)],
    )
    m_head, m_tail = 3, 4
    c = 0.5
    trials = 4000
    both_wrong = identical = 0
    for seed in range(trials):
        a, b = build_denoising_experts(g, 2, c, seed)
        pa, pb = a.personal_facts[0], b.personal_facts[0]
        if pa.corrupted and pb.corrupted:
            both_wrong += 1
            if pa.fact == pb.fact:
                identical += 1
    p_both = (1 - c) ** 2
    p_same = p_both * (0.25 / m_head + 0.25 / m_tail)
    assert abs(both_wrong / trials - p_both) <= 4 * (p_both * (1 - p_both) / trials) ** 0.5
    assert abs(identical / trials - p_same) <= 4 * (p_same * (1 - p_same) / trials) ** 0.5


class _FixedOrderRng:
    def __init__(self, order):
        self._order = order

    def permutation(self, k):
        assert k == len(self._order)
        return list(self._order)


def test_greedy_vector_spec_example():
    partition = EdgePartition(k=2, labels=[0] * 60 + [1] * 40, sizes=[60, 40])
    vector = greedy_coverage_vector(partition, 0.5, _FixedOrderRng([0, 1]))
    assert vector[0] == pytest.approx(50 / 60)
    assert 1 not in vector
    assert 60 * vector[0] == pytest.approx(0.5 * 100)


def test_greedy_vector_full_coverage():
    partition = EdgePartition(k=3, labels=[0] * 5 + [1] * 5 + [2] * 5, sizes=[5, 5, 5])
    vector = greedy_coverage_vector(partition, 1.0, _FixedOrderRng([2, 0, 1]))
    assert vector == {0: 1.0, 1: 1.0, 2: 1.0}


def test_selection_budget_within_one_fact(desk_functional_graph):
    g = desk_functional_graph
    partition = cluster_edges(g, 50, 0)
    population = build_selection_experts(g, partition, 100, 0.1, 2)
    for expert in population:
        assert abs(coverage_budget(expert, partition) - 0.1 * g.n_facts) <= 1.0
        assert len(expert.personal_facts) == g.n_facts


def test_selection_shared_misconceptions(small_random_graph):
    g = small_random_graph
    partition = cluster_edges(g, 5, 1)
    population = build_selection_experts(g, partition, 20, 0.3, 7)
    # all experts that corrupt a given fact corrupt it the same way
    for idx in range(g.n_facts):
        versions = {
            e.personal_facts[idx].fact for e in population if e.personal_facts[idx].corrupted
        }
        assert len(versions) <= 1


def test_generalization_partition_of_facts(small_random_graph):
    g = small_random_graph
    partition = cluster_edges(g, 4, 3)
    population = build_generalization_experts(g, partition)
    nonempty = sum(1 for s in partition.sizes if s)
    assert len(population) == nonempty
    seen = []
    for expert in population:
        assert all(not pf.corrupted for pf in expert.personal_facts)
        seen.extend(pf.source_index for pf in expert.personal_facts)
    assert sorted(seen) == list(range(g.n_facts))


def test_generalization_expert_answers_only_internal_two_hops(small_random_graph):
    g = small_random_graph
    partition = cluster_edges(g, 4, 3)
    population = build_generalization_experts(g, partition)
    for expert in population:
        owned = {pf.fact for pf in expert.personal_facts}
        for hop in enumerate_two_hop(g):
            first, second = hop.hops
            internal = (
                partition.labels[g.fact_index[first]]
                == partition.labels[g.fact_index[second]]
                == next(iter(expert.cluster_coverage))
            )
            can_answer = first in owned and second in owned
            assert can_answer == internal


def test_expert_json_round_trip(small_random_graph):
    g = small_random_graph
    partition = cluster_edges(g, 5, 1)
    population = build_selection_experts(g, partition, 3, 0.4, 11)
    again = experts_from_json(experts_to_json(population))
    for a, b in zip(population, again):
        assert a.personal_facts == b.personal_facts
        assert a.cluster_coverage == b.cluster_coverage
        assert a.setting == b.setting and a.expert_id == b.expert_id
