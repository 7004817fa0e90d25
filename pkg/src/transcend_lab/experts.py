"""Simulated expert construction for the three settings.

Denoising experts share one global coverage level and corrupt facts
*independently*, so their errors decorrelate as the population grows.
Selection experts concentrate a fact budget on a few expertise clusters and
share a single canonical corrupted version per fact (a common misconception):
outside anyone's expertise the errors are biased, not averaged away, which is
exactly the regime where emission routing has to do the work.
Generalization experts know a single cluster perfectly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .clustering import EdgePartition
from .errors import ExpertError, SchemaError
from .kg_core import Fact, KnowledgeGraph
from .seeding import rng_for, seed_for

DENOISING = "denoising"
SELECTION = "selection"
GENERALIZATION = "generalization"


@dataclass(frozen=True, slots=True)
class PersonalFact:
    """One believed fact, tied to the ground-truth fact it stands in for."""

    source_index: int
    fact: Fact
    corrupted: bool


@dataclass(slots=True)
class ExpertProfile:
    expert_id: int
    setting: str
    personal_facts: list[PersonalFact]
    seed: int
    global_coverage: float | None = None
    cluster_coverage: dict[int, float] | None = None
    _incident: dict[int, list[int]] | None = field(default=None, repr=False)

    def coverage_for(self, cluster: int) -> float:
        if self.global_coverage is not None:
            return self.global_coverage
        assert self.cluster_coverage is not None
        return self.cluster_coverage.get(cluster, 0.0)

    def incident_index(self) -> dict[int, list[int]]:
        """Entity id -> positions of incident personal facts (in- and out-edges)."""
        if self._incident is None:
            incident: dict[int, list[int]] = {}
            for pos, pf in enumerate(self.personal_facts):
                incident.setdefault(pf.fact.head, []).append(pos)
                incident.setdefault(pf.fact.tail, []).append(pos)
            self._incident = incident
        return self._incident

    def eligible_entities(self) -> list[int]:
        """Entities with at least one incident personal fact, ascending."""
        return sorted(self.incident_index().keys())

    def n_nodes(self) -> int:
        return len(self.incident_index())


def _corruption_candidates(graph: KnowledgeGraph, fact: Fact, side: str) -> tuple[list[int], int, int]:
    original = fact.head if side == "head" else fact.tail
    other = fact.tail if side == "head" else fact.head
    pool = graph.same_type_pool(original)
    allowed = len(pool) - 1  # the original is always in its own pool
    if graph.entities[other].semantic_type == graph.entities[original].semantic_type:
        allowed -= 1  # exclude the opposite endpoint: substitutions never create self-loops
    return pool, original, allowed


def _corrupt_with_rng(graph: KnowledgeGraph, fact: Fact, rng, side: str | None = None) -> Fact:
    sides = ["head", "tail"] if side is None else [side]
    if side is None:
        first = int(rng.integers(2))
        sides = [sides[first], sides[1 - first]]
    chosen = None
    for s in sides:
        pool, original, allowed = _corruption_candidates(graph, fact, s)
        if allowed > 0:
            chosen = (s, pool, original)
            break
    if chosen is None:
        raise ExpertError(f"uncorruptible fact: {fact!r} (singleton type pool)")
    s, pool, original = chosen
    other = fact.tail if s == "head" else fact.head
    while True:
        candidate = pool[int(rng.integers(len(pool)))]
        if candidate != original and candidate != other:
            break
    if s == "head":
        return Fact(candidate, fact.relation, fact.tail)
    return Fact(fact.head, fact.relation, candidate)


def corrupt_fact(graph: KnowledgeGraph, fact: Fact, seed: int, side: str | None = None) -> Fact:
    """Replace one endpoint with a uniformly chosen same-type entity.

    The relation never changes, the substitute differs from the original and
    from the opposite endpoint (no self-loops), and the draw is deterministic
    per seed. ``side`` forces which endpoint is replaced.
    """
    return _corrupt_with_rng(graph, fact, rng_for(seed, "corrupt"), side)


def _expert_seed(master_seed: int, expert_id: int) -> int:
    # stable under n_e changes: expert i is the same in a 10- or 100-expert set
    return seed_for(master_seed, "expert", expert_id)


def build_denoising_experts(
    graph: KnowledgeGraph, n_e: int, c: float, seed: int,
    on_uncorruptible: str = "error",
) -> list[ExpertProfile]:
    """n_e experts that each keep every fact with probability c, else corrupt it.

    Corruption randomness is independent across experts, the error
    decorrelation that low-temperature sampling of the pool exploits.
    """
    if not (0.0 <= c <= 1.0):
        raise ExpertError(f"coverage must be in [0,1], got {c}")
    if n_e < 1:
        raise ExpertError("need at least one expert")
    experts = []
    for expert_id in range(n_e):
        sub_seed = _expert_seed(seed, expert_id)
        rng = rng_for(sub_seed, DENOISING)
        keep = rng.random(graph.n_facts) < c
        personal: list[PersonalFact] = []
        for idx, fact in enumerate(graph.facts):
            if keep[idx]:
                personal.append(PersonalFact(idx, fact, False))
            else:
                personal.append(PersonalFact(idx, _personal_corruption(graph, fact, rng, on_uncorruptible), True))
        experts.append(ExpertProfile(
            expert_id=expert_id, setting=DENOISING, personal_facts=personal,
            seed=sub_seed, global_coverage=c,
        ))
    return experts


def _personal_corruption(graph: KnowledgeGraph, fact: Fact, rng, on_uncorruptible: str) -> Fact:
    try:
        return _corrupt_with_rng(graph, fact, rng)
    except ExpertError:
        if on_uncorruptible == "keep_correct":
            return fact
        raise


def greedy_coverage_vector(
    partition: EdgePartition, c: float, rng
) -> dict[int, float]:
    """Concentrated per-cluster coverage meeting the budget c * |E|.

    Visits clusters in a shuffled order, assigns full coverage until the
    remaining budget is smaller than the next cluster, puts the fractional
    remainder there, and leaves the rest at zero.
    """
    budget = c * partition.n_facts
    vector: dict[int, float] = {}
    for j in rng.permutation(partition.k):
        j = int(j)
        size = partition.sizes[j]
        if size == 0 or budget <= 1e-12:
            continue
        if budget >= size - 1e-9:
            vector[j] = 1.0
            budget -= size
        else:
            vector[j] = budget / size
            budget = 0.0
    return vector


def build_selection_experts(
    graph: KnowledgeGraph, partition: EdgePartition, n_e: int, c: float, seed: int,
    on_uncorruptible: str = "error",
) -> list[ExpertProfile]:
    """Cluster-specialized experts under a shared coverage budget.

    Every expert that is wrong about a fact is wrong the same way: the
    corrupted stand-in is drawn once per fact from the master seed, shared
    by the whole population.
    """
    if not (0.0 < c <= 1.0):
        raise ExpertError(f"coverage must be in (0,1], got {c}")
    partition.validate_for(graph)
    misconceptions: dict[int, Fact] = {}

    def shared_corruption(idx: int, fact: Fact) -> Fact:
        if idx not in misconceptions:
            misconceptions[idx] = _personal_corruption(
                graph, fact, rng_for(seed, "misconception", idx), on_uncorruptible
            )
        return misconceptions[idx]

    experts = []
    for expert_id in range(n_e):
        sub_seed = _expert_seed(seed, expert_id)
        rng = rng_for(sub_seed, SELECTION)
        vector = greedy_coverage_vector(partition, c, rng)
        draws = rng.random(graph.n_facts)
        personal: list[PersonalFact] = []
        for idx, fact in enumerate(graph.facts):
            s = vector.get(partition.labels[idx], 0.0)
            if draws[idx] < s:
                personal.append(PersonalFact(idx, fact, False))
            else:
                personal.append(PersonalFact(idx, shared_corruption(idx, fact), True))
        experts.append(ExpertProfile(
            expert_id=expert_id, setting=SELECTION, personal_facts=personal,
            seed=sub_seed, cluster_coverage=vector,
        ))
    return experts


def build_generalization_experts(
    graph: KnowledgeGraph, partition: EdgePartition
) -> list[ExpertProfile]:
    """One perfect expert per non-empty cluster; no corruption anywhere."""
    partition.validate_for(graph)
    members = partition.members()
    experts = []
    for cluster in range(partition.k):
        if not members[cluster]:
            continue
        personal = [PersonalFact(idx, graph.facts[idx], False) for idx in members[cluster]]
        experts.append(ExpertProfile(
            expert_id=len(experts), setting=GENERALIZATION, personal_facts=personal,
            seed=0, cluster_coverage={cluster: 1.0},
        ))
    return experts


def coverage_budget(expert: ExpertProfile, partition: EdgePartition) -> float:
    """Sum of s_j * |C_j|, the number of facts the expert is budgeted to know."""
    assert expert.cluster_coverage is not None
    return sum(s * partition.sizes[j] for j, s in expert.cluster_coverage.items())


def experts_to_json(experts: list[ExpertProfile]) -> bytes:
    rows = []
    for e in experts:
        if e.global_coverage is not None:
            coverage = e.global_coverage
        else:
            coverage = {str(j): s for j, s in sorted((e.cluster_coverage or {}).items())}
        rows.append({
            "expert_id": e.expert_id,
            "setting": e.setting,
            "coverage_vector": coverage,
            "facts": [[pf.fact.head, pf.fact.relation, pf.fact.tail] for pf in e.personal_facts],
            "corrupted_flags": [pf.corrupted for pf in e.personal_facts],
            "source_indices": [pf.source_index for pf in e.personal_facts],
            "seed": e.seed,
        })
    return json.dumps(rows, separators=(",", ":")).encode("utf-8")


def experts_from_json(data: bytes) -> list[ExpertProfile]:
    try:
        rows = json.loads(data.decode("utf-8"))
        experts = []
        for row in rows:
            coverage = row["coverage_vector"]
            global_cov = coverage if isinstance(coverage, (int, float)) else None
            cluster_cov = (
                {int(j): float(s) for j, s in coverage.items()}
                if isinstance(coverage, dict) else None
            )
            personal = [
                PersonalFact(src, Fact(*fact), bool(flag))
                for src, fact, flag in zip(
                    row["source_indices"], row["facts"], row["corrupted_flags"]
                )
            ]
            experts.append(ExpertProfile(
                expert_id=int(row["expert_id"]), setting=row["setting"],
                personal_facts=personal, seed=int(row["seed"]),
                global_coverage=global_cov, cluster_coverage=cluster_cov,
            ))
        return experts
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"bad expert-set JSON: {exc}") from exc
