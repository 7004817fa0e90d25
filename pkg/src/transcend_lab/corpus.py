"""Training-text emission with full provenance.

Per-entity paragraphs from personal graphs (with expertise-weighted sentence
inclusion), two-hop sentences in plain and chain-of-thought QA formats,
phrasing-diversity levels, split carve-outs, and byte-deterministic JSONL
output. Sample generation is a pure function of (graph, experts, config,
sample index), so serial and parallel runs emit identical bytes.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .clustering import EdgePartition
from .errors import CorpusError, ParseError, ProviderError, TestbedError
from .experts import SELECTION, ExpertProfile
from .graph_gen import LLM_KEY_ENV, apportion
from .kg_core import KnowledgeGraph, TwoHopFact
from .seeding import rng_for, seed_for

ONE_HOP_KIND = "one_hop_paragraph"
TWO_HOP_PLAIN = "two_hop_plain"
TWO_HOP_COT = "two_hop_cot"

MAX_EMPTY_RETRIES = 100

log = logging.getLogger(__name__)

# Four fixed phrasings per relation; level 1 always uses the first.
_TEMPLATES = (
    "The {relation} of {head} is {tail}.",
    "{head}'s {relation} is {tail}.",
    "{tail} is the {relation} of {head}.",
    "The {relation} of {head} is known to be {tail}.",
)

# Parse order matters: the "known to be" form would otherwise be eaten by
# the plain "The ... of ... is ..." pattern.
_PATTERNS = (
    re.compile(r"^The (?P<rel>.+) of (?P<head>\S+) is known to be (?P<tail>\S+)\.$"),
    re.compile(r"^The (?P<rel>.+) of (?P<head>\S+) is (?P<tail>\S+)\.$"),
    re.compile(r"^(?P<head>\S+)'s (?P<rel>.+) is (?P<tail>\S+)\.$"),
    re.compile(r"^(?P<tail>\S+) is the (?P<rel>.+) of (?P<head>\S+)\.$"),
)

_TWO_HOP_PLAIN_TEMPLATE = "The {r2} of the {r1} of {head} is {tail}."
_TWO_HOP_COT_TEMPLATE = "What is the {r2} of the {r1} of {head}? {bridge}; {tail}."


@dataclass(frozen=True, slots=True)
class TwoHopCorpusConfig:
    include: bool = False
    validation_size: int = 0
    train_repeat: int = 20
    format: str = TWO_HOP_PLAIN  # or TWO_HOP_COT


@dataclass(frozen=True, slots=True)
class CorpusConfig:
    total_samples: int
    quota_mode: str = "equal"  # "equal" | "proportional"
    alpha: float = 0.0
    diversity_level: int = 1
    two_hop: TwoHopCorpusConfig = TwoHopCorpusConfig()
    seed: int = 0

    def validate(self) -> None:
        if self.total_samples < 0:
            raise TestbedError("total_samples must be >= 0")
        if self.quota_mode not in ("equal", "proportional"):
            raise TestbedError(f"unknown quota_mode {self.quota_mode!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise TestbedError(f"alpha must be in [0,1], got {self.alpha}")
        if self.diversity_level not in (1, 2, 3, 4):
            raise TestbedError(f"unknown diversity level {self.diversity_level}")
        if self.two_hop.format not in (TWO_HOP_PLAIN, TWO_HOP_COT):
            raise TestbedError(f"unknown two-hop format {self.two_hop.format!r}")


@dataclass(slots=True)
class Sample:
    idx: int
    text: str
    expert_id: int
    entity_id: int
    kind: str
    split: str  # train | validation | test
    diversity_level: int
    fact_ids: list[int]
    corrupted: list[bool]
    seed: int = 0  # per-sample sub-seed; not serialized
    rephrase_fallback: bool = field(default=False)  # not serialized

    def to_json_line(self) -> str:
        # field order is the wire contract; keep it byte-stable
        row = {
            "idx": self.idx,
            "text": self.text,
            "expert_id": self.expert_id,
            "entity_id": self.entity_id,
            "kind": self.kind,
            "split": self.split,
            "diversity": self.diversity_level,
            "fact_ids": self.fact_ids,
            "corrupted": self.corrupted,
        }
        return json.dumps(row, ensure_ascii=False, separators=(",", ":"))


def render_sentence(fact, graph: KnowledgeGraph, diversity_level: int, seed: int,
                    rephrase_provider=None) -> str:
    """One templated sentence for a fact, always head-first for levels 1-2.

    Level 1 is the single canonical template; level 2 samples one of four
    fixed templates; levels 3-4 delegate to the rephrase provider and fall
    back to level 2 when none is configured.
    """
    head = graph.entities[fact.head].name
    tail = graph.entities[fact.tail].name
    relation = graph.relations[fact.relation].name
    if diversity_level == 1:
        return _TEMPLATES[0].format(relation=relation, head=head, tail=tail)
    if diversity_level == 2 or rephrase_provider is None:
        if diversity_level not in (2, 3, 4):
            raise TestbedError(f"unknown diversity level {diversity_level}")
        choice = int(rng_for(seed, "template").integers(len(_TEMPLATES)))
        return _TEMPLATES[choice].format(relation=relation, head=head, tail=tail)
    base_level = 1 if diversity_level == 3 else 2
    base = render_sentence(fact, graph, base_level, seed)
    rewritten = rephrase_provider.rephrase(base, [head, tail], diversity_level, seed)
    if head in rewritten and tail in rewritten:
        return rewritten
    return render_sentence(fact, graph, 2, seed)


def two_hop_sentence(hop: TwoHopFact, fmt: str, graph: KnowledgeGraph) -> str:
    """Plain: states head and final tail only. CoT: QA form naming the bridge
    entity before the final answer."""
    names = dict(
        head=graph.entities[hop.head].name,
        bridge=graph.entities[hop.bridge].name,
        tail=graph.entities[hop.tail].name,
        r1=graph.relations[hop.r1].name,
        r2=graph.relations[hop.r2].name,
    )
    if fmt == TWO_HOP_PLAIN:
        return _TWO_HOP_PLAIN_TEMPLATE.format(**names)
    if fmt == TWO_HOP_COT:
        return _TWO_HOP_COT_TEMPLATE.format(**names)
    raise TestbedError(f"unknown two-hop format {fmt!r}")


def _split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in text.split(". ")]
    out = []
    for part in parts:
        if not part:
            continue
        out.append(part if part.endswith(".") else part + ".")
    return out


def parse_one_hop_sentence(sentence: str, graph: KnowledgeGraph) -> tuple[int, int, int]:
    """Recover (head, relation, tail) ids from a level-1/2 sentence."""
    rel_ids = {r.name: r.id for r in graph.relations}
    for pattern in _PATTERNS:
        match = pattern.match(sentence)
        if not match:
            continue
        gd = match.groupdict()
        head = graph.name_to_id.get(gd["head"])
        tail = graph.name_to_id.get(gd["tail"])
        rel = rel_ids.get(gd["rel"])
        if head is None or tail is None or rel is None:
            continue
        return (head, rel, tail)
    raise ParseError(f"unparseable sentence: {sentence!r}")


def parse_one_hop_text(text: str, graph: KnowledgeGraph) -> list[tuple[int, int, int]]:
    return [parse_one_hop_sentence(s, graph) for s in _split_sentences(text)]


def parse_two_hop_plain(sentence: str, graph: KnowledgeGraph) -> tuple[int, int, int, int]:
    """Recover (head, r1, r2, tail) from a plain two-hop sentence."""
    rel_ids = {r.name: r.id for r in graph.relations}
    m = re.match(r"^The (?P<mid>.+) of (?P<head>\S+) is (?P<tail>\S+)\.$", sentence)
    if m:
        mid, head_name, tail_name = m.group("mid"), m.group("head"), m.group("tail")
        head = graph.name_to_id.get(head_name)
        tail = graph.name_to_id.get(tail_name)
        if head is not None and tail is not None:
            pos = 0
            while True:
                pos = mid.find(" of the ", pos)
                if pos < 0:
                    break
                r2_name, r1_name = mid[:pos], mid[pos + len(" of the "):]
                if r2_name in rel_ids and r1_name in rel_ids:
                    return (head, rel_ids[r1_name], rel_ids[r2_name], tail)
                pos += 1
    raise ParseError(f"unparseable two-hop sentence: {sentence!r}")


@dataclass(slots=True)
class TwoHopSplits:
    train_within: list[TwoHopFact]
    validation_within: list[TwoHopFact]
    test_across: list[TwoHopFact]

    def to_json(self) -> bytes:
        def rows(hops):
            return [[h.head, h.r1, h.r2, h.bridge, h.tail] for h in hops]

        doc = {
            "train_within": rows(self.train_within),
            "validation_within": rows(self.validation_within),
            "test_across": rows(self.test_across),
        }
        return json.dumps(doc, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, data: bytes) -> "TwoHopSplits":
        doc = json.loads(data.decode("utf-8"))
        return cls(
            train_within=[TwoHopFact(*row) for row in doc["train_within"]],
            validation_within=[TwoHopFact(*row) for row in doc["validation_within"]],
            test_across=[TwoHopFact(*row) for row in doc["test_across"]],
        )


def split_two_hops(graph: KnowledgeGraph, partition: EdgePartition,
                   validation_size: int, seed: int) -> TwoHopSplits:
    """Carve a uniform validation set out of the within-expertise two-hops.

    The across-expertise set is never trained on; it is the test set.
    """
    from .clustering import within_cluster_two_hops

    within, across = within_cluster_two_hops(graph, partition)
    if validation_size > len(within):
        raise CorpusError(
            f"validation_size={validation_size} exceeds {len(within)} within-expertise two-hops"
        )
    rng = rng_for(seed, "two_hop_validation")
    chosen = set(map(int, rng.choice(len(within), size=validation_size, replace=False)))
    validation = [hop for i, hop in enumerate(within) if i in chosen]
    train = [hop for i, hop in enumerate(within) if i not in chosen]
    return TwoHopSplits(train_within=train, validation_within=validation, test_across=across)


def expert_quotas(experts: list[ExpertProfile], config: CorpusConfig) -> list[int]:
    """Per-expert sample quotas summing exactly to total_samples.

    equal: floor division with the remainder going to the lowest ids;
    proportional: largest-remainder apportionment on personal-graph sizes.
    """
    n = len(experts)
    if config.quota_mode == "equal":
        base, extra = divmod(config.total_samples, n)
        return [base + (1 if i < extra else 0) for i in range(n)]
    return apportion(config.total_samples, [float(len(e.personal_facts)) for e in experts])


def emit_paragraph(
    expert: ExpertProfile, entity_id: int, alpha: float, diversity_level: int,
    seed: int, graph: KnowledgeGraph, partition: EdgePartition | None = None,
    rephrase_provider=None,
) -> Sample | None:
    """A paragraph about one entity from one expert's personal graph.

    Each incident personal fact (either direction) is written with
    probability alpha*s + (1-alpha) for selection experts and always
    otherwise; sentence order is uniformly shuffled. Returns None when the
    filter empties the paragraph (the caller resamples the entity); raises
    on an entity with no incident facts at all.
    """
    positions = expert.incident_index().get(entity_id)
    if not positions:
        raise CorpusError(f"entity {entity_id} has no incident facts for expert {expert.expert_id}")
    rng = rng_for(seed, "paragraph")
    chosen: list[int] = []
    use_alpha = expert.setting == SELECTION
    for pos in positions:
        if use_alpha:
            if partition is None:
                raise CorpusError("selection emission needs the edge partition")
            s = expert.coverage_for(partition.labels[expert.personal_facts[pos].source_index])
            p = alpha * s + (1.0 - alpha)
        else:
            p = 1.0
        if rng.random() < p:
            chosen.append(pos)
    if not chosen:
        return None
    order = rng.permutation(len(chosen))
    emitted = [chosen[int(i)] for i in order]
    sentences = []
    for k, pos in enumerate(emitted):
        sentences.append(render_sentence(
            expert.personal_facts[pos].fact, graph, diversity_level,
            seed_for(seed, "sentence", k), rephrase_provider,
        ))
    return Sample(
        idx=-1,
        text=" ".join(sentences),
        expert_id=expert.expert_id,
        entity_id=entity_id,
        kind=ONE_HOP_KIND,
        split="train",
        diversity_level=diversity_level,
        fact_ids=emitted,
        corrupted=[expert.personal_facts[p].corrupted for p in emitted],
        seed=seed,
    )


def _paragraph_sample(
    idx: int, expert: ExpertProfile, graph: KnowledgeGraph, config: CorpusConfig,
    partition: EdgePartition | None, rephrase_provider=None,
) -> Sample:
    sample_seed = seed_for(config.seed, "sample", idx)
    eligible = expert.eligible_entities()
    rng = rng_for(sample_seed, "entity")
    for _ in range(MAX_EMPTY_RETRIES):
        entity_id = eligible[int(rng.integers(len(eligible)))]
        sample = emit_paragraph(
            expert, entity_id, config.alpha, config.diversity_level,
            sample_seed, graph, partition, rephrase_provider,
        )
        if sample is not None:
            sample.idx = idx
            return sample
        sample_seed = seed_for(sample_seed, "retry")
    raise CorpusError(
        f"expert {expert.expert_id} produced {MAX_EMPTY_RETRIES} empty paragraphs in a row"
    )


_WORKER_STATE: dict | None = None


def _init_worker(graph, experts, config, partition, owners):
    global _WORKER_STATE
    _WORKER_STATE = {
        "graph": graph, "experts": experts, "config": config,
        "partition": partition, "owners": owners,
    }


def _worker_range(bounds: tuple[int, int]) -> list[Sample]:
    state = _WORKER_STATE
    assert state is not None
    lo, hi = bounds
    out = []
    for idx in range(lo, hi):
        expert = state["experts"][state["owners"][idx]]
        out.append(_paragraph_sample(
            idx, expert, state["graph"], state["config"], state["partition"],
        ))
    return out


def generate_corpus(
    graph: KnowledgeGraph, experts: list[ExpertProfile], config: CorpusConfig,
    partition: EdgePartition | None = None, workers: int = 1,
    rephrase_provider=None,
) -> tuple[list[Sample], TwoHopSplits | None]:
    """Emit the full corpus: quota'd one-hop paragraphs, then two-hop text.

    Two-hop training sentences are literally duplicated ``train_repeat``
    times; held-out validation and across-expertise test rows follow with
    their split labels so consumers can filter on them. Output is a pure
    function of the inputs; ``workers`` only changes wall time.
    """
    config.validate()
    if not experts:
        raise CorpusError("no experts")
    for expert in experts:
        if not expert.personal_facts:
            raise CorpusError(f"expert {expert.expert_id} has an empty personal graph")
    quotas = expert_quotas(experts, config)
    owners: list[int] = []
    for expert_pos, quota in enumerate(quotas):
        owners.extend([expert_pos] * quota)

    n = len(owners)
    if workers <= 1 or n == 0 or rephrase_provider is not None:
        samples = [
            _paragraph_sample(idx, experts[owners[idx]], graph, config, partition,
                              rephrase_provider)
            for idx in range(n)
        ]
    else:
        chunk = max(1, (n + workers - 1) // workers)
        bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker,
            initargs=(graph, experts, config, partition, owners),
        ) as pool:
            samples = [s for block in pool.map(_worker_range, bounds) for s in block]

    splits: TwoHopSplits | None = None
    if config.two_hop.include:
        if partition is None:
            raise CorpusError("two-hop emission needs the edge partition")
        splits = split_two_hops(
            graph, partition, config.two_hop.validation_size,
            seed_for(config.seed, "two_hop"),
        )
        fmt = config.two_hop.format
        kind = TWO_HOP_COT if fmt == TWO_HOP_COT else TWO_HOP_PLAIN
        idx = n
        for _ in range(config.two_hop.train_repeat):
            for hop in splits.train_within:
                samples.append(_two_hop_sample(idx, hop, kind, "train", graph))
                idx += 1
        for hop in splits.validation_within:
            samples.append(_two_hop_sample(idx, hop, kind, "validation", graph))
            idx += 1
        for hop in splits.test_across:
            samples.append(_two_hop_sample(idx, hop, kind, "test", graph))
            idx += 1
    return samples, splits


def _two_hop_sample(idx: int, hop: TwoHopFact, kind: str, split: str,
                    graph: KnowledgeGraph) -> Sample:
    first, second = hop.hops
    return Sample(
        idx=idx,
        text=two_hop_sentence(hop, kind, graph),
        expert_id=-1,
        entity_id=hop.head,
        kind=kind,
        split=split,
        diversity_level=1,
        fact_ids=[graph.fact_index[first], graph.fact_index[second]],
        corrupted=[False, False],
    )


def corpus_to_jsonl(samples: list[Sample]) -> bytes:
    return ("".join(s.to_json_line() + "\n" for s in samples)).encode("utf-8")


class IdentityRephrase:
    """Returns text unchanged; useful as a no-op provider in tests."""

    def rephrase(self, text: str, required_names: list[str], level: int, seed: int) -> str:
        return text


class RemoteRephrase:
    """Rewriting client for an external LLM endpoint.

    POSTs ``{text, required_names, level}`` and expects ``{"text": ...}``.
    Three attempts with exponential backoff; failures surface as
    ProviderError, which rephrase_sample turns into the level-2 fallback
    (never data loss). Reads its API key from ``TRANSCEND_LAB_LLM_KEY``
    unless given one. Never required by any test or pipeline.
    """

    max_attempts = 3

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0,
                 transport=None):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_KEY_ENV)
        self.timeout = timeout
        self._transport = transport if transport is not None else self._http_post

    def _http_post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers)
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def rephrase(self, text: str, required_names: list[str], level: int, seed: int) -> str:
        payload = {"text": text, "required_names": required_names, "level": level}
        delay = 0.5
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                reply = self._transport(payload)
                new_text = reply.get("text") if isinstance(reply, dict) else None
                if not new_text or not isinstance(new_text, str):
                    raise ProviderError(f"remote rephrase returned no text: {reply!r}")
                return new_text
            except ProviderError:
                raise
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(delay)
                    delay *= 2
        raise ProviderError(f"remote rephrase failed after {self.max_attempts} attempts: {last}")


def rephrase_sample(sample: Sample, provider, graph: KnowledgeGraph,
                    expert: ExpertProfile) -> Sample:
    """Replace a sample's text via the provider, keeping metadata intact.

    Every entity name from the sample's facts must survive verbatim in the
    rewritten text; otherwise the sample falls back to a level-2 rendering
    and is flagged. Provider failure also falls back: no data loss.
    """
    required: list[str] = []
    facts = [expert.personal_facts[pos].fact for pos in sample.fact_ids]
    for fact in facts:
        required.append(graph.entities[fact.head].name)
        required.append(graph.entities[fact.tail].name)
    try:
        rewritten = provider.rephrase(sample.text, required, sample.diversity_level, sample.seed)
        ok = all(name in rewritten for name in required)
        if not ok:
            log.warning("rephrase dropped an entity name on sample %d; falling back to level 2",
                        sample.idx)
    except Exception as exc:
        log.warning("rephrase provider failed on sample %d (%s); falling back to level 2",
                    sample.idx, exc)
        rewritten, ok = "", False
    if ok:
        return replace(sample, text=rewritten)
    sentences = [
        render_sentence(fact, graph, 2, seed_for(sample.seed, "fallback", k))
        for k, fact in enumerate(facts)
    ]
    return replace(sample, text=" ".join(sentences), diversity_level=2,
                   rephrase_fallback=True)
