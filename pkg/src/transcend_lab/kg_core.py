"""Core knowledge-graph data model.

Typed entities, directed relational facts, multi-tail answer sets, two-hop
enumeration, degree statistics, and canonical JSON serialization. Graphs
are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import GraphValidationError, SchemaError

Prefix = tuple[int, int]  # (head entity id, relation id)


@dataclass(frozen=True, slots=True)
class Entity:
    """A node: dense integer id, unique name, non-empty semantic type."""

    id: int
    name: str
    semantic_type: str


@dataclass(frozen=True, slots=True)
class Relation:
    id: int
    name: str


@dataclass(frozen=True, slots=True, order=True)
class Fact:
    """A directed relational fact (head, relation, tail). No self-loops."""

    head: int
    relation: int
    tail: int

    @property
    def prefix(self) -> Prefix:
        return (self.head, self.relation)


@dataclass(frozen=True, slots=True, order=True)
class TwoHopFact:
    """A bridge-witnessed composition: (head, r1, bridge) and (bridge, r2, tail)."""

    head: int
    r1: int
    r2: int
    bridge: int
    tail: int

    @property
    def query(self) -> tuple[int, int, int]:
        """The two-hop input (head, r1, r2); the label is ``tail``."""
        return (self.head, self.r1, self.r2)

    @property
    def hops(self) -> tuple[Fact, Fact]:
        return (Fact(self.head, self.r1, self.bridge), Fact(self.bridge, self.r2, self.tail))


@dataclass(slots=True)
class DegreeProfile:
    """Per-entity in/out degree counts. Both totals equal |E|."""

    in_degree: list[int]
    out_degree: list[int]

    @property
    def total_in(self) -> int:
        return sum(self.in_degree)

    @property
    def total_out(self) -> int:
        return sum(self.out_degree)


@dataclass(slots=True)
class KnowledgeGraph:
    """The ground truth: entity/relation tables plus an ordered fact set.

    Facts are stored in canonical (head, relation, tail) order, which makes
    every enumeration and the serialized form deterministic. ``answer_index``
    exactly mirrors the fact set; ``fact_index`` maps a fact to its position
    in the canonical order.
    """

    entities: list[Entity]
    relations: list[Relation]
    facts: list[Fact]
    type_index: dict[str, list[int]] = field(default_factory=dict)
    answer_index: dict[Prefix, set[int]] = field(default_factory=dict)
    fact_index: dict[Fact, int] = field(default_factory=dict)
    name_to_id: dict[str, int] = field(default_factory=dict)
    out_edges: dict[int, list[Fact]] = field(default_factory=dict)
    in_edges: dict[int, list[Fact]] = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_facts(self) -> int:
        return len(self.facts)

    def entity(self, entity_id: int) -> Entity:
        return self.entities[entity_id]

    def same_type_pool(self, entity_id: int) -> list[int]:
        """Ids sharing the entity's semantic type (including itself)."""
        return self.type_index[self.entities[entity_id].semantic_type]

    def has_fact(self, fact: Fact) -> bool:
        return fact in self.fact_index


def build_graph(
    entities: list[Entity], relations: list[Relation], facts: list[Fact]
) -> KnowledgeGraph:
    """Validate and index a graph.

    Raises GraphValidationError naming the offending record on duplicate
    names, non-dense ids, dangling references, duplicate facts, self-loops,
    or empty semantic types.
    """
    for i, ent in enumerate(entities):
        if ent.id != i:
            raise GraphValidationError("entity ids must be dense and ordered", ent)
        if not ent.semantic_type:
            raise GraphValidationError("empty semantic type", ent)
    for i, rel in enumerate(relations):
        if rel.id != i:
            raise GraphValidationError("relation ids must be dense and ordered", rel)

    name_to_id: dict[str, int] = {}
    for ent in entities:
        if ent.name in name_to_id:
            raise GraphValidationError("duplicate entity name", ent)
        name_to_id[ent.name] = ent.id
    rel_names = set()
    for rel in relations:
        if rel.name in rel_names:
            raise GraphValidationError("duplicate relation name", rel)
        rel_names.add(rel.name)

    n_ent, n_rel = len(entities), len(relations)
    seen: set[Fact] = set()
    for fact in facts:
        if not (0 <= fact.head < n_ent and 0 <= fact.tail < n_ent):
            raise GraphValidationError("dangling reference", fact)
        if not (0 <= fact.relation < n_rel):
            raise GraphValidationError("dangling reference", fact)
        if fact.head == fact.tail:
            raise GraphValidationError("self-loop forbidden", fact)
        if fact in seen:
            raise GraphValidationError("duplicate fact", fact)
        seen.add(fact)

    ordered = sorted(seen)
    type_index: dict[str, list[int]] = {}
    for ent in entities:
        type_index.setdefault(ent.semantic_type, []).append(ent.id)

    answer_index: dict[Prefix, set[int]] = {}
    out_edges: dict[int, list[Fact]] = {}
    in_edges: dict[int, list[Fact]] = {}
    fact_index: dict[Fact, int] = {}
    for idx, fact in enumerate(ordered):
        fact_index[fact] = idx
        answer_index.setdefault(fact.prefix, set()).add(fact.tail)
        out_edges.setdefault(fact.head, []).append(fact)
        in_edges.setdefault(fact.tail, []).append(fact)

    return KnowledgeGraph(
        entities=list(entities),
        relations=list(relations),
        facts=ordered,
        type_index=type_index,
        answer_index=answer_index,
        fact_index=fact_index,
        name_to_id=name_to_id,
        out_edges=out_edges,
        in_edges=in_edges,
    )


def answers(graph: KnowledgeGraph, head: int, relation: int) -> set[int]:
    """All tails t with (head, relation, t) in the graph; may be empty."""
    if not (0 <= head < graph.n_entities):
        raise GraphValidationError("unknown head entity", head)
    if not (0 <= relation < len(graph.relations)):
        raise GraphValidationError("unknown relation", relation)
    return set(graph.answer_index.get((head, relation), set()))


def enumerate_two_hop(graph: KnowledgeGraph) -> list[TwoHopFact]:
    """All bridge-witnessed two-hop tuples, deduplicated, in sorted order.

    The tuple set keys on (head, r1, r2, bridge, tail), so distinct bridges
    for the same (head, r1, r2, tail) yield distinct entries.
    """
    out: list[TwoHopFact] = []
    for first in graph.facts:
        for second in graph.out_edges.get(first.tail, ()):
            out.append(
                TwoHopFact(first.head, first.relation, second.relation, first.tail, second.tail)
            )
    return sorted(out)


def degree_profile(graph: KnowledgeGraph) -> DegreeProfile:
    ins = [0] * graph.n_entities
    outs = [0] * graph.n_entities
    for fact in graph.facts:
        outs[fact.head] += 1
        ins[fact.tail] += 1
    return DegreeProfile(in_degree=ins, out_degree=outs)


def serialize(graph: KnowledgeGraph) -> bytes:
    """Canonical JSON bytes: arrays sorted by id / canonical fact order."""
    doc = {
        "entities": [
            {"id": e.id, "name": e.name, "type": e.semantic_type} for e in graph.entities
        ],
        "relations": [{"id": r.id, "name": r.name} for r in graph.relations],
        "facts": [[f.head, f.relation, f.tail] for f in graph.facts],
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def deserialize(data: bytes) -> KnowledgeGraph:
    """Parse canonical graph JSON; raises SchemaError with a location."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"malformed graph JSON: {exc}", location=getattr(exc, "pos", None) and f"offset {exc.pos}") from exc

    if not isinstance(doc, dict):
        raise SchemaError("top-level value must be an object", location="$")
    for key in ("entities", "relations", "facts"):
        if key not in doc:
            raise SchemaError(f"missing key {key!r}", location="$")

    try:
        entities = [
            Entity(id=e["id"], name=e["name"], semantic_type=e["type"]) for e in doc["entities"]
        ]
    except (TypeError, KeyError) as exc:
        raise SchemaError(f"bad entity record: {exc}", location="$.entities") from exc
    try:
        relations = [Relation(id=r["id"], name=r["name"]) for r in doc["relations"]]
    except (TypeError, KeyError) as exc:
        raise SchemaError(f"bad relation record: {exc}", location="$.relations") from exc
    facts = []
    for i, row in enumerate(doc["facts"]):
        if not (isinstance(row, list) and len(row) == 3 and all(isinstance(v, int) for v in row)):
            raise SchemaError("fact rows must be [head_id, relation_id, tail_id]", location=f"$.facts[{i}]")
        facts.append(Fact(*row))

    return build_graph(entities, relations, facts)
