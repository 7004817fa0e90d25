import time

import numpy as np
import pytest
import scipy.stats

from transcend_lab import graph_gen
from transcend_lab.errors import ConfigError, ProviderError
from transcend_lab.gen_learner import functional_check
from transcend_lab.graph_gen import (
    GraphGenConfig,
    IdentityNames,
    PseudowordNames,
    RelationSpec,
    RemoteNames,
    generate_graph,
    pseudoword_name,
    rename_entities,
)
from transcend_lab.kg_core import serialize


def tiny_config(seed=7, **kwargs):
    defaults = dict(
        n_entities=10,
        type_spec=(("thing", 1.0),),
        relation_spec=(RelationSpec("linked", "thing", "thing"),),
        target_edges=5,
        seed=seed,
    )
    defaults.update(kwargs)
    return GraphGenConfig(**defaults)


def test_generation_reproducible():
    g1 = generate_graph(tiny_config())
    g2 = generate_graph(tiny_config())
    assert serialize(g1) == serialize(g2)
    assert g1.n_facts == 5


def test_desk_default_scale_and_speed():
    start = time.monotonic()
    g = generate_graph(graph_gen.desk_config(0))
    elapsed = time.monotonic() - start
    assert g.n_entities == 1000
    assert len(g.relations) == 20
    assert g.n_facts == 5000
    assert elapsed < 1.0


def test_type_fractions_must_sum_to_one():
    with pytest.raises(ConfigError, match="sum to 1"):
        tiny_config(type_spec=(("a", 0.5), ("b", 0.4))).validate()


def test_infeasible_target_rejected():
    with pytest.raises(ConfigError, match="capacity"):
        generate_graph(tiny_config(target_edges=10_000))


def test_every_type_gets_two_entities():
    with pytest.raises(ConfigError, match=">= 2"):
        generate_graph(tiny_config(
            n_entities=40,
            type_spec=(("a", 0.99), ("b", 0.01)),
            relation_spec=(RelationSpec("linked", "a", "b"),),
        ))


def test_facts_type_check():
    cfg = graph_gen.desk_config(1, n_entities=200, n_relations=10, target_edges=400)
    g = generate_graph(cfg)
    by_name = {spec.name: spec for spec in cfg.relation_spec}
    for fact in g.facts:
        spec = by_name[g.relations[fact.relation].name]
        assert g.entities[fact.head].semantic_type == spec.head_type
        assert g.entities[fact.tail].semantic_type == spec.tail_type


def test_functional_flag_gives_functional_graph():
    g = generate_graph(graph_gen.desk_config(2, n_relations=40, target_edges=5000,
                                             functional=True))
    assert functional_check(g) == []


def test_uniform_degrees_without_skew():
    # pooled over seeds, head out-degrees should be uniform per chi-square
    counts = np.zeros(50)
    for seed in range(5):
        cfg = tiny_config(seed=seed, n_entities=50, target_edges=400)
        g = generate_graph(cfg)
        for fact in g.facts:
            counts[fact.head] += 1
    expected = counts.sum() / len(counts)
    stat = ((counts - expected) ** 2 / expected).sum()
    assert stat < scipy.stats.chi2.ppf(0.999, len(counts) - 1)


def test_zipf_skew_concentrates_heads():
    cfg = tiny_config(n_entities=100, target_edges=500, degree_skew=1.5)
    g = generate_graph(cfg)
    counts = np.zeros(100)
    for fact in g.facts:
        counts[fact.head] += 1
    # a strongly skewed draw puts far more than the uniform share on the top head
    assert counts.max() >= 3 * 500 / 100


def test_community_bias_keeps_tails_local():
    cfg = graph_gen.desk_config(3, n_entities=400, n_relations=16, target_edges=1200,
                                n_communities=10, community_bias=0.9)
    g = generate_graph(cfg)
    sampler = graph_gen._TailSampler(cfg, {t: list(ids) for t, ids in g.type_index.items()})
    local = sum(
        1 for f in g.facts if sampler.block_of[f.head] == sampler.block_of[f.tail]
    )
    assert local / g.n_facts > 0.7


def test_pseudoword_deterministic():
    assert pseudoword_name(9, "city", 4) == pseudoword_name(9, "city", 4)
    assert pseudoword_name(9, "city", 4) != pseudoword_name(9, "city", 5)


def test_pseudoword_no_collisions_at_reference_scale():
    names = {pseudoword_name(0, "entity", i) for i in range(25_000)}
    assert len(names) == 25_000


def test_distinct_seeds_distinct_name_multisets():
    a = sorted(pseudoword_name(1, "t", i) for i in range(500))
    b = sorted(pseudoword_name(2, "t", i) for i in range(500))
    assert a != b


def test_rename_deterministic_provider_stable():
    g = generate_graph(tiny_config())
    r1 = rename_entities(g, PseudowordNames(99))
    r2 = rename_entities(g, PseudowordNames(99))
    assert serialize(r1) == serialize(r2)
    assert [e.name for e in r1.entities] != [e.name for e in g.entities]


def test_rename_identity_provider_is_identity():
    g = generate_graph(tiny_config())
    renamed = rename_entities(g, IdentityNames(g))
    assert serialize(renamed) == serialize(g)


def test_rename_remote_stub_preserves_structure():
    g = generate_graph(tiny_config(n_entities=12, target_edges=8))
    calls = []

    def transport(payload):
        calls.append(payload)
        return {"name": f"Stub{len(calls)}"}

    provider = RemoteNames("http://example.invalid/name", api_key="k", transport=transport)
    renamed = rename_entities(g, provider)
    # isomorphism: ids, types, and the fact set are untouched
    assert [(f.head, f.relation, f.tail) for f in renamed.facts] == [
        (f.head, f.relation, f.tail) for f in g.facts
    ]
    assert [e.semantic_type for e in renamed.entities] == [e.semantic_type for e in g.entities]
    assert {e.name for e in renamed.entities} == {f"Stub{i+1}" for i in range(12)}
    # BFS context only ever contains already-assigned names
    for payload in calls:
        for name in payload["neighbor_names"]:
            assert name.startswith("Stub")


def test_remote_provider_retries_then_fails(monkeypatch):
    attempts = []

    def transport(payload):
        attempts.append(1)
        raise OSError("boom")

    monkeypatch.setattr("transcend_lab.graph_gen.time.sleep", lambda s: None)
    provider = RemoteNames("http://example.invalid", api_key="k", transport=transport)
    with pytest.raises(ProviderError, match="after 3 attempts"):
        provider.name_entity("city", 0, [])
    assert len(attempts) == 3


def test_remote_provider_recovers_after_transient_failures(monkeypatch):
    state = {"n": 0}

    def transport(payload):
        state["n"] += 1
        if state["n"] < 3:
            raise OSError("flaky")
        return {"name": "Recovered"}

    monkeypatch.setattr("transcend_lab.graph_gen.time.sleep", lambda s: None)
    provider = RemoteNames("http://example.invalid", api_key="k", transport=transport)
    assert provider.name_entity("city", 0, []) == "Recovered"


def test_rename_collision_redraw():
    g = generate_graph(tiny_config(n_entities=4, target_edges=2))

    class Colliding:
        def name_entity(self, semantic_type, index, neighbors, salt=0):
            # same name for everyone until the salt forces a re-draw
            return "Same" if salt == 0 else f"Salted{index}_{salt}"

    renamed = rename_entities(g, Colliding())
    names = [e.name for e in renamed.entities]
    assert len(set(names)) == len(names)
    assert "Same" in names
