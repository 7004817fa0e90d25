"""Fictional knowledge-graph generation.

A deterministic synthetic generator (typed entities, typed relations,
optional Zipf head skew, optional functional constraint), a pseudoword
naming scheme, and a pluggable entity-renaming provider with a
deterministic default and an optional remote-LLM client.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, GraphValidationError, ProviderError
from .kg_core import Entity, Fact, KnowledgeGraph, Relation, build_graph
from .seeding import rng_for, seed_for

LLM_KEY_ENV = "TRANSCEND_LAB_LLM_KEY"

_ONSETS = [
    "b", "br", "c", "cr", "d", "dr", "f", "fl", "g", "gl", "gr", "k", "kr",
    "l", "m", "n", "p", "pr", "qu", "r", "s", "st", "t", "tr", "v", "x", "z", "th",
]
_VOWELS = ["a", "e", "i", "o", "u", "y", "au", "ea", "io", "ou"]
_CODAS = ["", "", "n", "r", "s", "l", "th", "x", "m", "nd"]
_SYLLABLE_SPACE = len(_ONSETS) * len(_VOWELS) * len(_CODAS)


@dataclass(frozen=True, slots=True)
class RelationSpec:
    name: str
    head_type: str
    tail_type: str


@dataclass(frozen=True, slots=True)
class GraphGenConfig:
    """Parameters for the synthetic generator.

    type_spec fractions must sum to 1; every type must receive at least two
    entities (so every fact stays corruptible). With ``functional=True`` each
    (head, relation) prefix gets at most one tail, which the two-hop learner
    requires of its input subgraph. ``n_communities > 0`` plants topical
    blocks spanning all types: tails are drawn from the head's own block with
    probability ``community_bias``, giving the graph the kind of community
    structure edge clustering is meant to recover.
    """

    n_entities: int
    type_spec: tuple[tuple[str, float], ...]
    relation_spec: tuple[RelationSpec, ...]
    target_edges: int
    degree_skew: float = 0.0
    seed: int = 0
    functional: bool = False
    n_communities: int = 0
    community_bias: float = 0.9

    def validate(self) -> None:
        if self.n_entities <= 0 or self.target_edges <= 0:
            raise ConfigError("n_entities and target_edges must be positive")
        if self.degree_skew < 0:
            raise ConfigError("degree_skew must be non-negative")
        if self.n_communities < 0:
            raise ConfigError("n_communities must be non-negative")
        if not (0.0 <= self.community_bias <= 1.0):
            raise ConfigError("community_bias must be in [0,1]")
        total = sum(frac for _, frac in self.type_spec)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"type fractions must sum to 1, got {total}")
        names = [name for name, _ in self.type_spec]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate semantic type in type_spec")
        rel_names = [spec.name for spec in self.relation_spec]
        if len(set(rel_names)) != len(rel_names):
            raise ConfigError("duplicate relation name in relation_spec")
        known = set(names)
        for spec in self.relation_spec:
            if spec.head_type not in known or spec.tail_type not in known:
                raise ConfigError(f"relation {spec.name!r} references unknown type")


def pseudoword_name(seed: int, semantic_type: str, index: int, salt: int = 0) -> str:
    """Deterministic pronounceable pseudoword for one (type, index) slot.

    Syllables are decoded from a keyed hash, so the same inputs always give
    the same name while distinct inputs collide with negligible probability;
    ``salt`` lets callers re-draw on the rare per-graph collision.
    """
    payload = f"{seed}|{semantic_type}|{index}|{salt}".encode("utf-8")
    value = int.from_bytes(hashlib.blake2b(payload, digest_size=10).digest(), "big")
    n_syllables = 3 + value % 2
    value //= 2
    parts = []
    for _ in range(n_syllables):
        value, code = divmod(value, _SYLLABLE_SPACE)
        code, onset = divmod(code, len(_ONSETS))
        code, vowel = divmod(code, len(_VOWELS))
        coda = code % len(_CODAS)
        parts.append(_ONSETS[onset] + _VOWELS[vowel] + _CODAS[coda])
    word = "".join(parts)
    return word[0].upper() + word[1:]


class PseudowordNames:
    """Default deterministic provider: seeded pseudowords, no network."""

    kind = "deterministic"

    def __init__(self, seed: int):
        self.seed = seed

    def name_entity(self, semantic_type: str, index: int, neighbor_names: list[str], salt: int = 0) -> str:
        return pseudoword_name(self.seed, semantic_type, index, salt)


class IdentityNames:
    """Keeps existing names; renaming with it is the identity map."""

    kind = "identity"

    def __init__(self, graph: KnowledgeGraph):
        self._names = [e.name for e in graph.entities]

    def name_entity(self, semantic_type: str, index: int, neighbor_names: list[str], salt: int = 0) -> str:
        return self._names[index]


class RemoteNames:
    """Renaming client for an external LLM endpoint.

    POSTs ``{semantic_type, starting_letter, neighbor_names}`` and expects
    ``{"name": ...}`` back. Three attempts with exponential backoff, then a
    structured ProviderError. The API key is read from the
    ``TRANSCEND_LAB_LLM_KEY`` environment variable unless given explicitly.
    Never required by any test or pipeline: the deterministic provider is
    the default.
    """

    kind = "remote"
    max_attempts = 3

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0,
                 transport=None, seed: int = 0):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_KEY_ENV)
        self.timeout = timeout
        self.seed = seed
        self._transport = transport if transport is not None else self._http_post

    def _http_post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers)
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def name_entity(self, semantic_type: str, index: int, neighbor_names: list[str], salt: int = 0) -> str:
        letters = "abcdefghijklmnopqrstuvwxyz"
        start = letters[seed_for(self.seed, "letter", semantic_type, index, salt) % 26]
        payload = {
            "semantic_type": semantic_type,
            "starting_letter": start,
            "neighbor_names": neighbor_names,
        }
        delay = 0.5
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                reply = self._transport(payload)
                name = reply.get("name") if isinstance(reply, dict) else None
                if not name or not isinstance(name, str):
                    raise ProviderError(f"remote provider returned no name: {reply!r}")
                return name
            except ProviderError:
                raise
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(delay)
                    delay *= 2
        raise ProviderError(f"remote naming failed after {self.max_attempts} attempts: {last}")


def apportion(total: int, weights: list[float], caps: list[int] | None = None) -> list[int]:
    """Largest-remainder apportionment of ``total`` over ``weights``.

    Respects per-slot caps by redistributing the clipped surplus.
    """
    weights = [max(w, 0.0) for w in weights]
    wsum = sum(weights)
    if wsum <= 0:
        raise ConfigError("apportionment needs positive total weight")
    quotas = [total * w / wsum for w in weights]
    alloc = [int(q) for q in quotas]
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i)
    )
    short = total - sum(alloc)
    for i in remainders[:short]:
        alloc[i] += 1
    if caps is not None:
        surplus = 0
        for i, cap in enumerate(caps):
            if alloc[i] > cap:
                surplus += alloc[i] - cap
                alloc[i] = cap
        i = 0
        order = sorted(range(len(weights)), key=lambda j: (alloc[j] - caps[j], j))
        while surplus > 0 and i < len(order):
            j = order[i]
            room = caps[j] - alloc[j]
            take = min(room, surplus)
            alloc[j] += take
            surplus -= take
            i += 1
        if surplus > 0:
            raise ConfigError("target_edges exceeds typed capacity")
    return alloc


def _zipf_weights(n: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    """Zipf-like head weights; rank order is itself seeded so hubs vary."""
    if skew == 0.0:
        return np.full(n, 1.0 / n)
    ranks = rng.permutation(n) + 1.0
    w = ranks ** (-skew)
    return w / w.sum()


def _allocate_entities(config: GraphGenConfig) -> tuple[list[Entity], dict[str, list[int]]]:
    counts = apportion(config.n_entities, [frac for _, frac in config.type_spec])
    for (tname, _), count in zip(config.type_spec, counts):
        if count < 2:
            raise ConfigError(f"type {tname!r} would get {count} entities; need >= 2")
    provider = PseudowordNames(config.seed)
    entities: list[Entity] = []
    pools: dict[str, list[int]] = {}
    used: set[str] = set()
    next_id = 0
    for (tname, _), count in zip(config.type_spec, counts):
        pools[tname] = []
        for i in range(count):
            name = None
            for salt in range(16):
                cand = provider.name_entity(tname, next_id, [], salt)
                if cand not in used:
                    name = cand
                    break
            if name is None:
                raise ProviderError(f"could not draw a unique name for {tname}[{i}]")
            used.add(name)
            entities.append(Entity(id=next_id, name=name, semantic_type=tname))
            pools[tname].append(next_id)
            next_id += 1
    return entities, pools


def _relation_capacity(spec: RelationSpec, pools: dict[str, list[int]], functional: bool) -> int:
    heads, tails = len(pools[spec.head_type]), len(pools[spec.tail_type])
    if heads == 0 or tails == 0:
        raise ConfigError(f"relation {spec.name!r} has an empty type pool")
    if functional:
        return heads if (spec.head_type != spec.tail_type or tails > 1) else 0
    pairs = heads * tails
    if spec.head_type == spec.tail_type:
        pairs -= heads  # no self-loops
    return pairs


class _TailSampler:
    """Draws tails, preferring the head's community block when configured."""

    def __init__(self, config: GraphGenConfig, pools: dict[str, list[int]]):
        self.bias = config.community_bias if config.n_communities > 0 else 0.0
        self.pools = pools
        self.block_of: dict[int, int] = {}
        self.block_pools: dict[tuple[str, int], list[int]] = {}
        if config.n_communities > 0:
            for tname, members in pools.items():
                for i, ent in enumerate(members):
                    block = i % config.n_communities
                    self.block_of[ent] = block
                    self.block_pools.setdefault((tname, block), []).append(ent)

    def draw(self, rng: np.random.Generator, tail_type: str, head: int) -> int | None:
        pool = self.pools[tail_type]
        if self.bias > 0.0 and rng.random() < self.bias:
            local = self.block_pools.get((tail_type, self.block_of[head]), [])
            candidates = [e for e in local if e != head]
            if candidates:
                return int(candidates[int(rng.integers(len(candidates)))])
        tail = int(pool[int(rng.integers(len(pool)))])
        return None if tail == head else tail


def generate_graph(config: GraphGenConfig) -> KnowledgeGraph:
    """Generate a typed random graph, a pure function of the config."""
    config.validate()
    entities, pools = _allocate_entities(config)
    relations = [Relation(id=i, name=spec.name) for i, spec in enumerate(config.relation_spec)]

    caps = [_relation_capacity(s, pools, config.functional) for s in config.relation_spec]
    if config.target_edges > sum(caps):
        raise ConfigError(
            f"target_edges={config.target_edges} exceeds typed capacity {sum(caps)}"
        )
    tails = _TailSampler(config, pools)

    facts: list[Fact] = []
    if config.functional:
        quotas = apportion(config.target_edges, [float(c) for c in caps], caps)
        for rel_id, (spec, quota) in enumerate(zip(config.relation_spec, quotas)):
            if quota == 0:
                continue
            rng = rng_for(config.seed, "edges", spec.name)
            head_pool = np.array(pools[spec.head_type])
            weights = _zipf_weights(len(head_pool), config.degree_skew, rng)
            heads = rng.choice(head_pool, size=quota, replace=False,
                               p=weights if config.degree_skew else None)
            for head in np.sort(heads):
                tail = None
                while tail is None:
                    tail = tails.draw(rng, spec.tail_type, int(head))
                facts.append(Fact(int(head), rel_id, tail))
    else:
        rng = rng_for(config.seed, "edges")
        seen: set[Fact] = set()
        head_weights = {
            spec.name: _zipf_weights(len(pools[spec.head_type]), config.degree_skew,
                                     rng_for(config.seed, "skew", spec.name))
            for spec in config.relation_spec
        }
        attempts, max_attempts = 0, 60 * config.target_edges + 1000
        while len(seen) < config.target_edges and attempts < max_attempts:
            attempts += 1
            rel_id = int(rng.integers(len(config.relation_spec)))
            spec = config.relation_spec[rel_id]
            head_pool = pools[spec.head_type]
            head = int(head_pool[rng.choice(len(head_pool), p=head_weights[spec.name] if config.degree_skew else None)])
            tail = tails.draw(rng, spec.tail_type, head)
            if tail is None:
                continue
            fact = Fact(head, rel_id, tail)
            if fact not in seen:
                seen.add(fact)
        if len(seen) < int(np.ceil(0.99 * config.target_edges)):
            raise GraphValidationError(
                f"could only place {len(seen)} of {config.target_edges} edges"
            )
        facts = sorted(seen)

    return build_graph(entities, relations, facts)


def rename_entities(graph: KnowledgeGraph, provider, seed_type: str = "country") -> KnowledgeGraph:
    """Replace entity names via the provider, preserving structure exactly.

    Entities are visited in BFS order over the undirected adjacency starting
    from ``seed_type`` entities (all entities when the type is absent), so a
    remote provider always sees already-renamed neighbors as context.
    """
    order = _bfs_order(graph, seed_type)
    adjacency = _undirected_adjacency(graph)
    new_names: dict[int, str] = {}
    used: set[str] = set()
    for ent_id in order:
        ent = graph.entities[ent_id]
        context = [new_names[n] for n in adjacency.get(ent_id, ()) if n in new_names]
        name = None
        for salt in range(16):
            cand = provider.name_entity(ent.semantic_type, ent_id, context, salt)
            if cand not in used:
                name = cand
                break
        if name is None:
            raise ProviderError(f"name collision unresolved for entity {ent_id}")
        used.add(name)
        new_names[ent_id] = name

    entities = [
        Entity(id=e.id, name=new_names[e.id], semantic_type=e.semantic_type)
        for e in graph.entities
    ]
    return build_graph(entities, list(graph.relations), list(graph.facts))


def _undirected_adjacency(graph: KnowledgeGraph) -> dict[int, list[int]]:
    adj: dict[int, set[int]] = {}
    for fact in graph.facts:
        adj.setdefault(fact.head, set()).add(fact.tail)
        adj.setdefault(fact.tail, set()).add(fact.head)
    return {k: sorted(v) for k, v in adj.items()}


def _bfs_order(graph: KnowledgeGraph, seed_type: str) -> list[int]:
    adjacency = _undirected_adjacency(graph)
    seeds = sorted(graph.type_index.get(seed_type, [])) or list(range(graph.n_entities))
    seen: set[int] = set()
    order: list[int] = []
    queue: deque[int] = deque()
    for s in seeds:
        if s not in seen:
            seen.add(s)
            queue.append(s)
    while queue:
        node = queue.popleft()
        order.append(node)
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    for ent_id in range(graph.n_entities):
        if ent_id not in seen:
            order.append(ent_id)
            seen.add(ent_id)
    return order


_TYPE_NAMES = [
    "country", "person", "city", "occupation",
    "organization", "artifact", "creature", "language",
]

_RELATION_NOUNS = [
    "capital", "ruler", "anthem", "emblem", "currency", "patron", "founder",
    "guardian", "rival", "ally", "export", "dialect", "festival", "monument",
    "mentor", "steward", "herald", "archive", "relic", "stronghold", "port",
    "custodian", "envoy", "chronicler", "banner", "beacon", "sanctuary",
    "oracle", "regent", "warden", "treasury", "garrison", "academy", "shrine",
    "league", "charter", "crest", "vanguard", "citadel", "haven", "forge",
    "lodge", "spire", "bastion", "annal", "covenant", "sigil", "pylon",
]


def desk_config(seed: int = 0, *, n_entities: int = 1000, n_relations: int = 20,
                target_edges: int = 5000, degree_skew: float = 0.0,
                functional: bool = False, n_communities: int = 0,
                community_bias: float = 0.9) -> GraphGenConfig:
    """Desk-scale generator defaults: 8 types, pools well above 20 entities."""
    if n_relations > len(_RELATION_NOUNS):
        raise ConfigError(f"at most {len(_RELATION_NOUNS)} built-in relation names")
    fractions = [1.0 / len(_TYPE_NAMES)] * len(_TYPE_NAMES)
    fractions[-1] = 1.0 - sum(fractions[:-1])
    type_spec = tuple(zip(_TYPE_NAMES, fractions))
    relation_spec = tuple(
        RelationSpec(
            name=_RELATION_NOUNS[i],
            head_type=_TYPE_NAMES[i % len(_TYPE_NAMES)],
            tail_type=_TYPE_NAMES[(i * 3 + 1) % len(_TYPE_NAMES)],
        )
        for i in range(n_relations)
    )
    return GraphGenConfig(
        n_entities=n_entities,
        type_spec=type_spec,
        relation_spec=relation_spec,
        target_edges=target_edges,
        degree_skew=degree_skew,
        seed=seed,
        functional=functional,
        n_communities=n_communities,
        community_bias=community_bias,
    )


def desk_functional_config(seed: int = 0, n_communities: int = 50) -> GraphGenConfig:
    """Desk graph where every relation is functional and covers its head pool.

    40 relations over 8 types of 125 entities give exactly 5,000 facts with
    one tail per (head, relation) prefix, the regime where sampling the pooled
    expert distribution at temperature 1 tracks the expert coverage level.
    Tails stay inside 50 planted topical blocks most of the time, so edge
    clustering recovers communities of roughly 100 facts each.
    """
    return desk_config(seed, n_relations=40, target_edges=5000, functional=True,
                       n_communities=n_communities)
