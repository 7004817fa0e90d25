"""Tabular mixture-of-experts learner, rewards, and the transcendence check.

The learner is tabular at fact granularity: the only uncertain content of a
templated sentence is the tail entity, so the pooled training distribution
is fully described by conditional tables f(tail | head, relation). The exact
mixture is assembled from per-expert emission tables; the empirical model is
the count-normalized fit of an emitted corpus, which is the cross-entropy
minimizer over the unconstrained tabular class.

All arithmetic here is plain Python so callers may pass ``fractions.Fraction``
rates and weights and get exact results (used by the two-expert theorem
check, which tolerates no rounding).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ExpertError, ParseError, TestbedError
from .experts import GENERALIZATION, SELECTION, ExpertProfile
from .kg_core import KnowledgeGraph, Prefix
from .seeding import rng_for

NORM_TOL = 1e-9


@dataclass(slots=True)
class EmissionTable:
    """Unnormalized per-expert emission rates: prefix -> tail -> rate.

    ``rate`` is the expected number of times the expert writes that exact
    personal fact per emitted sample.
    """

    rates: dict[Prefix, dict[int, object]]

    def input_rate(self, prefix: Prefix):
        tails = self.rates.get(prefix)
        return sum(tails.values()) if tails else 0

    def conditional(self, prefix: Prefix) -> dict[int, object]:
        tails = self.rates.get(prefix)
        if not tails:
            return {}
        total = sum(tails.values())
        return {y: r / total for y, r in tails.items()}


def emission_table(
    expert: ExpertProfile, alpha: float = 0.0, partition=None
) -> EmissionTable:
    """Exact emission rates implied by uniform entity sampling.

    A paragraph picks a non-isolated node of the personal graph uniformly;
    a fact is incident to both its endpoints, so its per-sample rate is
    (2/|V_i|) times its inclusion probability alpha*s + (1-alpha)
    (1 in the denoising and generalization settings). Corrupted-head facts
    contribute to the corrupted prefix, not their source's.
    """
    n_nodes = expert.n_nodes()
    if n_nodes == 0 or not expert.personal_facts:
        raise ExpertError(f"expert {expert.expert_id} has no emissions")
    base = 2.0 / n_nodes
    use_alpha = expert.setting == SELECTION
    rates: dict[Prefix, dict[int, object]] = {}
    for pf in expert.personal_facts:
        if use_alpha:
            if partition is None:
                raise ExpertError("selection emission rates need the edge partition")
            s = expert.coverage_for(partition.labels[pf.source_index])
            weight = alpha * s + (1.0 - alpha)
        else:
            weight = 1.0
        if weight == 0.0:
            continue
        tails = rates.setdefault(pf.fact.prefix, {})
        tails[pf.fact.tail] = tails.get(pf.fact.tail, 0) + base * weight
    if not rates:
        raise ExpertError(f"expert {expert.expert_id} has no emissions at alpha={alpha}")
    return EmissionTable(rates=rates)


@dataclass(slots=True)
class RewardSpec:
    """Test distribution over query prefixes plus the correct-answer sets.

    The reward is 1 when the emitted tail is any correct tail, else 0. The
    default distribution is uniform over ground-truth one-hop facts, so a
    multi-tail prefix carries weight proportional to its tail count.
    """

    weights: dict[Prefix, object]
    answers: dict[Prefix, set[int]]

    def __post_init__(self) -> None:
        total = sum(self.weights.values())
        if abs(total - 1) > NORM_TOL:
            raise TestbedError(f"p_test must sum to 1, got {float(total)}")

    @classmethod
    def uniform_over_facts(cls, graph: KnowledgeGraph) -> "RewardSpec":
        n = graph.n_facts
        weights: dict[Prefix, float] = {}
        for fact in graph.facts:
            weights[fact.prefix] = weights.get(fact.prefix, 0.0) + 1.0 / n
        answers = {p: set(t) for p, t in graph.answer_index.items()}
        return cls(weights=weights, answers=answers)


@dataclass(slots=True)
class MixtureModel:
    kind: str  # "exact" | "empirical"
    table: dict[Prefix, dict[int, object]]
    components: list[EmissionTable] | None = None
    expert_weights: list[object] | None = None

    def posterior(self, prefix: Prefix) -> list[object]:
        """g(i | x) under the corpus-share prior; uniform when no expert emits x."""
        if self.components is None or self.expert_weights is None:
            raise TestbedError("posterior requires an exact mixture")
        masses = [u * t.input_rate(prefix) for u, t in zip(self.expert_weights, self.components)]
        total = sum(masses)
        if total == 0:
            k = len(masses)
            from fractions import Fraction

            return [Fraction(1, k) for _ in masses]
        return [m / total for m in masses]


def default_expert_weights(experts: list[ExpertProfile]) -> list[object]:
    """Corpus-quota mixture weights: equal shares, except proportional to
    personal-graph size in the generalization setting."""
    from fractions import Fraction

    if experts and experts[0].setting == GENERALIZATION:
        total = sum(len(e.personal_facts) for e in experts)
        return [Fraction(len(e.personal_facts), total) for e in experts]
    return [Fraction(1, len(experts)) for _ in experts]


def assemble_mixture(
    components: list[EmissionTable], weights: list[object]
) -> MixtureModel:
    """f_bar(y|x) = sum_i g(i|x) f_i(y|x) with g(i|x) = u_i p_i(x) / sum_j u_j p_j(x)."""
    if len(components) != len(weights):
        raise TestbedError("one weight per component required")
    numerator: dict[Prefix, dict[int, object]] = {}
    denominator: dict[Prefix, object] = {}
    for table, u in zip(components, weights):
        for prefix, tails in table.rates.items():
            num = numerator.setdefault(prefix, {})
            for tail, rate in tails.items():
                num[tail] = num.get(tail, 0) + u * rate
            denominator[prefix] = denominator.get(prefix, 0) + u * sum(tails.values())
    table = {
        prefix: {tail: mass / denominator[prefix] for tail, mass in tails.items()}
        for prefix, tails in numerator.items()
    }
    return MixtureModel(kind="exact", table=table, components=components, expert_weights=weights)


def exact_mixture(
    experts: list[ExpertProfile],
    alpha: float = 0.0,
    partition=None,
    weights: list[object] | None = None,
) -> MixtureModel:
    """Exact pooled conditional distribution for a set of experts."""
    if not experts:
        raise ExpertError("no experts")
    components = [emission_table(e, alpha=alpha, partition=partition) for e in experts]
    if weights is None:
        weights = default_expert_weights(experts)
    return assemble_mixture(components, weights)


def fit_empirical(lines, graph: KnowledgeGraph) -> MixtureModel:
    """Count-normalized tabular fit of corpus JSONL lines.

    Only one-hop paragraph samples contribute; their text is parsed back
    through the sentence templates. Raises ParseError with the line number
    on anything unparseable.
    """
    from .corpus import parse_one_hop_text

    counts: dict[Prefix, dict[int, int]] = {}
    for line_number, line in enumerate(lines, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON: {exc}", line_number) from exc
        if row.get("kind") != "one_hop_paragraph":
            continue
        try:
            triples = parse_one_hop_text(row["text"], graph)
        except ParseError as exc:
            raise ParseError(str(exc), line_number) from exc
        for head, relation, tail in triples:
            tails = counts.setdefault((head, relation), {})
            tails[tail] = tails.get(tail, 0) + 1
    table = {
        prefix: {t: c / sum(tails.values()) for t, c in tails.items()}
        for prefix, tails in counts.items()
    }
    return MixtureModel(kind="empirical", table=table)


def predict(model: MixtureModel, query: Prefix, temperature: float = 0.0,
            seed: int = 0) -> int | None:
    """Tail prediction for one query; None on an unseen prefix.

    Temperature 0 returns the argmax (ties to the lowest tail id); tau > 0
    samples from the distribution raised to 1/tau and renormalized.
    """
    if temperature < 0:
        raise TestbedError(f"temperature must be >= 0, got {temperature}")
    dist = model.table.get(query)
    if not dist:
        return None
    if temperature == 0:
        return _argmax(dist)
    items = sorted(dist.items())
    if temperature == 1:
        probs = [float(p) for _, p in items]
    else:
        probs = [float(p) ** (1.0 / temperature) for _, p in items]
    total = sum(probs)
    rng = rng_for(seed, "predict", query[0], query[1])
    r = rng.random() * total
    acc = 0.0
    for (tail, _), p in zip(items, probs):
        acc += p
        if r <= acc:
            return tail
    return items[-1][0]


def _argmax(dist: dict[int, object]) -> int:
    best_tail, best_p = None, None
    for tail in sorted(dist):
        p = dist[tail]
        if best_p is None or p > best_p:
            best_tail, best_p = tail, p
    return best_tail


def query_accuracy(
    model: MixtureModel, graph: KnowledgeGraph, reward_spec: RewardSpec | None = None,
    temperature: float = 0.0, seed: int = 0,
) -> float:
    """Fraction of ground-truth facts whose query prediction is any correct tail.

    Null predictions (unseen prefixes) count as wrong. Deterministic at
    temperature 0; at tau > 0 each fact's query is sampled independently.
    """
    if reward_spec is None:
        reward_spec = RewardSpec.uniform_over_facts(graph)
    correct = 0
    if temperature == 0:
        cache: dict[Prefix, int | None] = {}
        for fact in graph.facts:
            prefix = fact.prefix
            if prefix not in cache:
                cache[prefix] = predict(model, prefix, 0.0)
            if cache[prefix] in reward_spec.answers.get(prefix, ()):
                correct += 1
    else:
        for idx, fact in enumerate(graph.facts):
            prefix = fact.prefix
            pred = predict(model, prefix, temperature, seed=hash((seed, idx)) & 0x7FFFFFFF)
            if pred in reward_spec.answers.get(prefix, ()):
                correct += 1
    return correct / graph.n_facts


def prefix_reward(table: EmissionTable, prefix: Prefix, reward_spec: RewardSpec):
    """r_x(f): the probability the expert's answer to x is correct; 0 when the
    expert never emits prefix x."""
    tails = table.rates.get(prefix)
    if not tails:
        return 0
    total = sum(tails.values())
    good = sum(rate for tail, rate in tails.items()
               if tail in reward_spec.answers.get(prefix, ()))
    return good / total


def table_reward(table: EmissionTable, reward_spec: RewardSpec):
    """R_{p_test}(f) computed exactly from an emission table."""
    return sum(w * prefix_reward(table, prefix, reward_spec)
               for prefix, w in reward_spec.weights.items())


def expert_reward(expert: ExpertProfile, reward_spec: RewardSpec,
                  alpha: float = 0.0, partition=None):
    return table_reward(emission_table(expert, alpha=alpha, partition=partition), reward_spec)


def mixture_reward(model: MixtureModel, reward_spec: RewardSpec,
                   temperature: float = 1.0):
    """Closed-form expected reward of the mixture at a given temperature.

    tau = 0 scores the deterministic argmax; tau > 0 uses the power-scaled
    conditional, which at tau = 1 is the mixture itself (kept exact so
    Fraction-valued models stay exact).
    """
    total = 0
    for prefix, w in reward_spec.weights.items():
        dist = model.table.get(prefix)
        if not dist:
            continue
        good = reward_spec.answers.get(prefix, set())
        if temperature == 0:
            total += w * (1 if _argmax(dist) in good else 0)
        elif temperature == 1:
            total += w * sum(p for tail, p in dist.items() if tail in good)
        else:
            powered = {t: float(p) ** (1.0 / temperature) for t, p in dist.items()}
            z = sum(powered.values())
            total += w * sum(p / z for tail, p in powered.items() if tail in good)
    return total


def theorem1_statistic(
    table_a: EmissionTable, table_b: EmissionTable, reward_spec: RewardSpec,
    posterior: dict[Prefix, tuple[object, object]],
):
    """E_x[(r_x(f_a) - r_x(f_b)) (g(a|x) - g(b|x))], computed exactly.

    ``posterior`` maps each prefix in the test support to (g(a|x), g(b|x)),
    which must sum to 1.
    """
    for prefix, (ga, gb) in posterior.items():
        if abs(ga + gb - 1) > NORM_TOL:
            raise TestbedError(f"posterior not normalized at {prefix}: {ga}+{gb}")
    total = 0
    for prefix, w in reward_spec.weights.items():
        if prefix not in posterior:
            raise TestbedError(f"posterior missing test prefix {prefix}")
        ga, gb = posterior[prefix]
        ra = prefix_reward(table_a, prefix, reward_spec)
        rb = prefix_reward(table_b, prefix, reward_spec)
        total += w * (ra - rb) * (ga - gb)
    return total


@dataclass(slots=True)
class TranscendenceReport:
    model_reward: object
    expert_rewards: list[object]
    max_expert_reward: object
    transcendent: bool
    statistic: object | None  # two-expert case only

    def as_dict(self) -> dict:
        return {
            "model_reward": float(self.model_reward),
            "expert_rewards": [float(r) for r in self.expert_rewards],
            "max_expert_reward": float(self.max_expert_reward),
            "transcendent": self.transcendent,
            "statistic": None if self.statistic is None else float(self.statistic),
        }


def transcendence_report(
    model: MixtureModel, reward_spec: RewardSpec, temperature: float = 1.0,
    components: list[EmissionTable] | None = None,
) -> TranscendenceReport:
    """Mixture reward vs. every component reward, with the strict-inequality flag.

    For two experts the report also carries the selection statistic
    E[(r_a - r_b)(g_a - g_b)] under the mixture posterior.
    """
    if components is None:
        components = model.components
    if components is None:
        raise TestbedError("no components available for expert rewards")
    model_r = mixture_reward(model, reward_spec, temperature)
    expert_rs = [table_reward(t, reward_spec) for t in components]
    best = max(expert_rs)
    statistic = None
    if len(components) == 2 and model.expert_weights is not None:
        posterior = {}
        for prefix in reward_spec.weights:
            ga, gb = model.posterior(prefix)
            posterior[prefix] = (ga, gb)
        statistic = theorem1_statistic(components[0], components[1], reward_spec, posterior)
    return TranscendenceReport(
        model_reward=model_r,
        expert_rewards=expert_rs,
        max_expert_reward=best,
        transcendent=bool(model_r > best),
        statistic=statistic,
    )


def model_to_json(model: MixtureModel) -> bytes:
    """Inspection dump: per prefix, tails with probabilities, all sorted."""
    doc = {
        "kind": model.kind,
        "table": {
            f"{h}:{r}": [[t, float(p)] for t, p in sorted(tails.items())]
            for (h, r), tails in sorted(model.table.items())
        },
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")
