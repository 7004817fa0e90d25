import pytest

from transcend_lab import graph_gen
from transcend_lab.kg_core import Entity, Fact, Relation, build_graph


def make_graph(entity_specs, relation_names, fact_rows):
    """Small-graph helper: entity_specs = [(name, type), ...], facts by index."""
    entities = [Entity(i, name, etype) for i, (name, etype) in enumerate(entity_specs)]
    relations = [Relation(i, name) for i, name in enumerate(relation_names)]
    facts = [Fact(*row) for row in fact_rows]
    return build_graph(entities, relations, facts)


@pytest.fixture
def chain_graph():
    # a -> b -> c, two relations
    return make_graph(
        [("Ava", "person"), ("Brin", "person"), ("Cor", "city")],
        ["mentor", "home"],
        [(0, 0, 1), (1, 1, 2)],
    )


@pytest.fixture(scope="session")
def small_random_graph():
    cfg = graph_gen.desk_config(3, n_entities=80, n_relations=8, target_edges=200)
    return graph_gen.generate_graph(cfg)


@pytest.fixture(scope="session")
def desk_functional_graph():
    return graph_gen.generate_graph(graph_gen.desk_functional_config(7))
