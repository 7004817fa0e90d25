"""Two-hop generalization learner with a simplicity bias.

Two lookup-table hypothesis families fit the within-expertise two-hop
training set: a memorizer mapping whole two-hop inputs to answers, and a
compositional learner that stores one-hop facts and chains two lookups.
Complexity is the non-null entry count (plus a fixed composition overhead),
and the ERM step picks the simpler zero-training-error hypothesis, which
flips from memorizing to composing exactly when the training set outgrows
the one-hop table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .clustering import EdgePartition, within_cluster_two_hops
from .errors import TestbedError
from .kg_core import Fact, KnowledgeGraph, TwoHopFact

MEMORIZER = "memorizer"
COMPOSITIONAL = "compositional"
DEFAULT_KAPPA_COMP = 64

TwoHopInput = tuple[int, int, int]  # (head, r1, r2)


@dataclass(frozen=True, slots=True)
class TwoHopExample:
    """A labeled two-hop input, with the bridge kept as provenance."""

    head: int
    r1: int
    r2: int
    label: int
    bridge: int
    expert_id: int  # cluster index owning both hops; -1 for test queries

    @property
    def query(self) -> TwoHopInput:
        return (self.head, self.r1, self.r2)


@dataclass(slots=True)
class Hypothesis:
    kind: str
    two_hop_table: dict[TwoHopInput, int] | None = None
    one_hop_table: dict[tuple[int, int], int] | None = None
    kappa_comp: int = DEFAULT_KAPPA_COMP

    @property
    def kappa(self) -> int:
        """Non-null table entries, plus the composition overhead if composed."""
        if self.kind == MEMORIZER:
            assert self.two_hop_table is not None
            return len(self.two_hop_table)
        assert self.one_hop_table is not None
        return len(self.one_hop_table) + self.kappa_comp

    def predict(self, query: TwoHopInput) -> int | None:
        if self.kind == MEMORIZER:
            assert self.two_hop_table is not None
            return self.two_hop_table.get(query)
        assert self.one_hop_table is not None
        head, r1, r2 = query
        bridge = self.one_hop_table.get((head, r1))
        if bridge is None:
            return None  # null propagates
        return self.one_hop_table.get((bridge, r2))

    def to_json(self) -> bytes:
        doc: dict = {"kind": self.kind, "kappa": self.kappa, "kappa_comp": self.kappa_comp}
        if self.two_hop_table is not None:
            doc["two_hop_table"] = sorted([h, r1, r2, t] for (h, r1, r2), t in self.two_hop_table.items())
        if self.one_hop_table is not None:
            doc["one_hop_table"] = sorted([e, r, t] for (e, r), t in self.one_hop_table.items())
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def functional_check(graph: KnowledgeGraph) -> list[tuple[int, int]]:
    """Prefixes with more than one tail; the learner needs none."""
    return sorted(p for p, tails in graph.answer_index.items() if len(tails) > 1)


def build_training_set(graph: KnowledgeGraph, partition: EdgePartition) -> list[TwoHopExample]:
    """All within-expertise two-hop inputs with ground-truth labels.

    Inputs are deduplicated across bridges; on a functional graph each input
    has exactly one bridge anyway.
    """
    violations = functional_check(graph)
    if violations:
        raise TestbedError(
            f"graph is not functional: {len(violations)} multi-tail prefixes, first {violations[0]}"
        )
    within, _ = within_cluster_two_hops(graph, partition)
    seen: dict[TwoHopInput, TwoHopExample] = {}
    for hop in within:
        if hop.query in seen:
            continue
        first, _ = hop.hops
        cluster = partition.labels[graph.fact_index[first]]
        seen[hop.query] = TwoHopExample(
            head=hop.head, r1=hop.r1, r2=hop.r2, label=hop.tail,
            bridge=hop.bridge, expert_id=cluster,
        )
    return [seen[q] for q in sorted(seen)]


def examples_from_hops(hops: list[TwoHopFact], expert_id: int = -1) -> list[TwoHopExample]:
    """Evaluation queries from two-hop facts (deduplicated on the input)."""
    seen: dict[TwoHopInput, TwoHopExample] = {}
    for hop in hops:
        seen.setdefault(hop.query, TwoHopExample(
            head=hop.head, r1=hop.r1, r2=hop.r2, label=hop.tail,
            bridge=hop.bridge, expert_id=expert_id,
        ))
    return [seen[q] for q in sorted(seen)]


def fit_memorizer(examples: list[TwoHopExample]) -> Hypothesis:
    table: dict[TwoHopInput, int] = {}
    for ex in examples:
        existing = table.get(ex.query)
        if existing is not None and existing != ex.label:
            raise TestbedError(f"inconsistent labels for {ex.query}: {existing} vs {ex.label}")
        table[ex.query] = ex.label
    return Hypothesis(kind=MEMORIZER, two_hop_table=table)


def fit_compositional(
    examples: list[TwoHopExample], kappa_comp: int = DEFAULT_KAPPA_COMP,
    one_hop_store: list[Fact] | None = None,
) -> Hypothesis:
    """One-hop table covering the training derivations.

    By default stores exactly the one-hop facts participating in the
    examples' derivations; ``one_hop_store`` substitutes a larger table
    (e.g. all of F1) at the corresponding complexity.
    """
    table: dict[tuple[int, int], int] = {}
    if one_hop_store is not None:
        for fact in one_hop_store:
            existing = table.get(fact.prefix)
            if existing is not None and existing != fact.tail:
                raise TestbedError(f"one-hop store is not functional at {fact.prefix}")
            table[fact.prefix] = fact.tail
    for ex in examples:
        for key, value in (((ex.head, ex.r1), ex.bridge), ((ex.bridge, ex.r2), ex.label)):
            existing = table.get(key)
            if existing is not None and existing != value:
                raise TestbedError(f"inconsistent one-hop mapping at {key}: {existing} vs {value}")
            table[key] = value
    return Hypothesis(kind=COMPOSITIONAL, one_hop_table=table, kappa_comp=kappa_comp)


def erm_select(
    examples: list[TwoHopExample], kappa_comp: int = DEFAULT_KAPPA_COMP,
    one_hop_store: list[Fact] | None = None,
) -> Hypothesis:
    """The zero-training-error hypothesis of minimal complexity.

    Both candidates fit the data exactly, so selection reduces to comparing
    their table sizes; ties go to the compositional solution.
    """
    memorizer = fit_memorizer(examples)
    compositional = fit_compositional(examples, kappa_comp, one_hop_store)
    return compositional if compositional.kappa <= memorizer.kappa else memorizer


@dataclass(slots=True)
class ConditionReport:
    """The degree-form sufficient condition for preferring composition.

    lhs = |F1| + kappa_comp; rhs = within-expertise two-hop path count
    (bridge multiplicity retained); holds = lhs < rhs. ``d_unique`` reports
    the deduplicated training-set size alongside.
    """

    lhs: int
    rhs: int
    holds: bool
    d_unique: int
    f1_size: int
    kappa_comp: int

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds,
            "d_unique": self.d_unique, "f1_size": self.f1_size,
            "kappa_comp": self.kappa_comp,
        }


def sufficient_condition(
    graph: KnowledgeGraph, partition: EdgePartition, kappa_comp: int = DEFAULT_KAPPA_COMP
) -> ConditionReport:
    """Evaluate sum_v d_in(v) + kappa_comp < sum_i sum_v d_in_i(v) * d_out_i(v)."""
    partition.validate_for(graph)
    ins: dict[tuple[int, int], int] = {}
    outs: dict[tuple[int, int], int] = {}
    for idx, fact in enumerate(graph.facts):
        cluster = partition.labels[idx]
        ins[(cluster, fact.tail)] = ins.get((cluster, fact.tail), 0) + 1
        outs[(cluster, fact.head)] = outs.get((cluster, fact.head), 0) + 1
    rhs = sum(count * outs.get(key, 0) for key, count in ins.items())
    within, _ = within_cluster_two_hops(graph, partition)
    d_unique = len({hop.query for hop in within})
    lhs = graph.n_facts + kappa_comp
    return ConditionReport(
        lhs=lhs, rhs=rhs, holds=lhs < rhs, d_unique=d_unique,
        f1_size=graph.n_facts, kappa_comp=kappa_comp,
    )


def evaluate_two_hop(hypothesis: Hypothesis, queries: list[TwoHopExample]) -> float:
    """Exact-match accuracy; null predictions count as wrong."""
    if not queries:
        return 0.0
    correct = sum(1 for q in queries if hypothesis.predict(q.query) == q.label)
    return correct / len(queries)
