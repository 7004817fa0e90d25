"""Built-in verification battery.

Runs fast invariant and oracle checks over a fresh desk-scale pipeline and
produces the figure-analog report CSV. The heavyweight acceptance suite
lives in the test tree; this battery is the `verify` subcommand's quick
everything-still-holds pass.
"""

from __future__ import annotations

import random as _random
from dataclasses import dataclass
from fractions import Fraction

from . import clustering, corpus, evaluation, experts, gen_learner, graph_gen, mixture
from .kg_core import Fact, build_graph, degree_profile, deserialize, enumerate_two_hop, serialize
from .mixture import EmissionTable, RewardSpec
from .seeding import seed_for


@dataclass(slots=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def random_two_expert_config(rng: _random.Random):
    """A random exact-arithmetic two-expert configuration.

    Emission rates, rewards, priors, and the test distribution are all small
    Fractions, so every derived quantity (mixture, posterior, rewards,
    statistic) is exact.
    """
    n_x = rng.randint(2, 5)
    n_y = rng.randint(2, 4)
    xs = [(0, i) for i in range(n_x)]

    def frac() -> Fraction:
        return Fraction(rng.randint(1, 12), rng.randint(1, 12))

    tables = []
    for _ in range(2):
        rates = {}
        for x in xs:
            if rng.random() < 0.85:
                tails = {y: frac() for y in range(n_y) if rng.random() < 0.7}
                if not tails:
                    tails = {rng.randrange(n_y): frac()}
                rates[x] = tails
        if not rates:
            rates = {xs[0]: {0: frac()}}
        tables.append(EmissionTable(rates=rates))

    answers = {x: {y for y in range(n_y) if rng.random() < 0.4} for x in xs}
    weights_raw = [rng.randint(1, 9) for _ in xs]
    total = sum(weights_raw)
    p_test = {x: Fraction(w, total) for x, w in zip(xs, weights_raw)}
    spec = RewardSpec(weights=p_test, answers=answers)
    u = Fraction(rng.randint(1, 9), 10)
    return tables, [u, 1 - u], spec


def theorem_necessity_check(n_configs: int, seed: int) -> tuple[int, int]:
    """(violations, transcendent_count) over random two-expert configs.

    A violation is a configuration whose exact mixture transcends both
    experts at temperature 1 while the selection statistic is not positive.
    """
    rng = _random.Random(seed)
    violations = 0
    transcendent = 0
    for _ in range(n_configs):
        tables, weights, spec = random_two_expert_config(rng)
        model = mixture.assemble_mixture(tables, weights)
        report = mixture.transcendence_report(model, spec, temperature=1)
        if report.transcendent:
            transcendent += 1
            assert report.statistic is not None
            if not (report.statistic > 0):
                violations += 1
    return violations, transcendent


def _check(name: str, ok: bool, detail: str = "") -> CheckResult:
    return CheckResult(name=name, ok=bool(ok), detail=detail)


def run_checks(seed: int = 0) -> list[CheckResult]:
    results: list[CheckResult] = []

    # --- graph generation and serialization ---
    cfg = graph_gen.desk_config(seed, n_entities=400, n_relations=20, target_edges=1500)
    graph = graph_gen.generate_graph(cfg)
    again = graph_gen.generate_graph(cfg)
    results.append(_check("graph_determinism", serialize(graph) == serialize(again)))
    results.append(_check("graph_roundtrip", serialize(deserialize(serialize(graph))) == serialize(graph)))

    profile = degree_profile(graph)
    results.append(_check(
        "degree_identity",
        profile.total_in == graph.n_facts and profile.total_out == graph.n_facts,
    ))

    # --- clustering ---
    partition = clustering.cluster_edges(graph, 20, seed)
    results.append(_check("partition_totals", sum(partition.sizes) == graph.n_facts))
    within, across = clustering.within_cluster_two_hops(graph, partition)
    results.append(_check(
        "two_hop_split_cover", len(within) + len(across) == len(enumerate_two_hop(graph))
    ))

    # --- experts ---
    population = experts.build_denoising_experts(graph, 8, 0.4, seed)
    flagged_ok = True
    for expert in population:
        for pf in expert.personal_facts:
            src = graph.facts[pf.source_index]
            if pf.fact.relation != src.relation:
                flagged_ok = False
            if pf.corrupted == (pf.fact == src):
                flagged_ok = False
            changed_head = pf.fact.head != src.head
            changed_tail = pf.fact.tail != src.tail
            if pf.corrupted and changed_head and changed_tail:
                flagged_ok = False
            if changed_head and (
                graph.entities[pf.fact.head].semantic_type != graph.entities[src.head].semantic_type
            ):
                flagged_ok = False
            if changed_tail and (
                graph.entities[pf.fact.tail].semantic_type != graph.entities[src.tail].semantic_type
            ):
                flagged_ok = False
    results.append(_check("corruption_contract", flagged_ok))

    selection = experts.build_selection_experts(graph, partition, 6, 0.2, seed)
    budget_ok = all(
        abs(experts.coverage_budget(e, partition) - 0.2 * graph.n_facts) <= 1.0
        for e in selection
    )
    results.append(_check("selection_budget", budget_ok))

    # --- corpus ---
    ccfg = corpus.CorpusConfig(total_samples=150, seed=seed)
    serial, _ = corpus.generate_corpus(graph, population, ccfg)
    parallel, _ = corpus.generate_corpus(graph, population, ccfg, workers=2)
    results.append(_check(
        "corpus_worker_determinism",
        corpus.corpus_to_jsonl(serial) == corpus.corpus_to_jsonl(parallel),
    ))
    provenance_ok = True
    for sample in serial[:50]:
        expert = population[sample.expert_id]
        parsed = corpus.parse_one_hop_text(sample.text, graph)
        stated = [
            (expert.personal_facts[p].fact.head,
             expert.personal_facts[p].fact.relation,
             expert.personal_facts[p].fact.tail)
            for p in sample.fact_ids
        ]
        if parsed != stated:
            provenance_ok = False
            break
    results.append(_check("corpus_provenance", provenance_ok))

    splits = corpus.split_two_hops(graph, partition, min(20, len(within)), seed)
    train_set = {(h.head, h.r1, h.r2, h.bridge, h.tail) for h in splits.train_within}
    val_set = {(h.head, h.r1, h.r2, h.bridge, h.tail) for h in splits.validation_within}
    test_set = {(h.head, h.r1, h.r2, h.bridge, h.tail) for h in splits.test_across}
    all_hops = {(h.head, h.r1, h.r2, h.bridge, h.tail) for h in enumerate_two_hop(graph)}
    results.append(_check(
        "two_hop_split_disjoint",
        not (train_set & val_set) and not (train_set & test_set)
        and not (val_set & test_set) and (train_set | val_set | test_set) == all_hops,
    ))

    # --- mixture ---
    model = mixture.exact_mixture(population)
    norm_ok = all(abs(sum(d.values()) - 1.0) <= 1e-9 for d in model.table.values())
    results.append(_check("mixture_normalization", norm_ok))
    spec = RewardSpec.uniform_over_facts(graph)
    acc = mixture.query_accuracy(model, graph, spec, temperature=0.0)
    best = max(mixture.table_reward(t, spec) for t in model.components)
    results.append(_check(
        "denoising_transcendence", acc > float(best),
        f"argmax accuracy {acc:.3f} vs best expert {float(best):.3f}",
    ))

    violations, transcendent = theorem_necessity_check(200, seed)
    results.append(_check(
        "theorem_necessity", violations == 0 and transcendent > 0,
        f"{transcendent} transcendent configs, {violations} violations",
    ))

    # --- generalization phase transition on the parametric family ---
    results.append(_check("phase_transition", _phase_transition_ok()))

    # --- baselines vs brute force on small random graphs ---
    results.append(_check("baseline_oracles", _baselines_match_bruteforce(seed)))

    return results


def _phase_transition_ok() -> bool:
    flips = []
    for m in range(2, 9):
        graph, partition = fan_family_graph(m)
        examples = gen_learner.build_training_set(graph, partition)
        t1 = len(fit_table_facts(examples))
        kappa_comp = 8
        chosen = gen_learner.erm_select(examples, kappa_comp)
        expected = (
            gen_learner.COMPOSITIONAL
            if len(examples) >= t1 + kappa_comp else gen_learner.MEMORIZER
        )
        if chosen.kind != expected:
            return False
        flips.append(chosen.kind)
    return gen_learner.MEMORIZER in flips and gen_learner.COMPOSITIONAL in flips


def fit_table_facts(examples) -> set[tuple[int, int, int]]:
    hops = set()
    for ex in examples:
        hops.add((ex.head, ex.r1, ex.bridge))
        hops.add((ex.bridge, ex.r2, ex.label))
    return hops


def fan_family_graph(m: int, q: int = 3, p: int = 2):
    """Parametric two-cluster-plus-twins family for the |D| sweep.

    Cluster 0 is a fan: m heads feed a hub which fans out over q distinct
    relations; two of the fan-out tails bridge into twin clusters 1 and 2,
    whose hubs fan out over shared relation names. m controls the training
    set size while the one-hop table grows only linearly.
    """
    from .kg_core import Entity, Relation

    entities: list[Entity] = []
    relations: list[Relation] = []

    def add_entity(name: str, semantic_type: str) -> int:
        entities.append(Entity(len(entities), name, semantic_type))
        return entities[-1].id

    def add_relation(name: str) -> int:
        relations.append(Relation(len(relations), name))
        return relations[-1].id

    r_in = add_relation("feeds")
    r_out = [add_relation(f"yields{j}") for j in range(q)]
    r_cross = add_relation("links")
    r_in2 = add_relation("supplies")
    r_out2 = [add_relation(f"grants{j}") for j in range(q)]

    hub0 = add_entity("Hub0", "hub")
    heads = [add_entity(f"Head{i}", "head") for i in range(m)]
    fan = [add_entity(f"Fan{j}", "fanout") for j in range(q)]
    facts: list[Fact] = []
    labels: list[int] = []

    def add_fact(head: int, rel: int, tail: int, cluster: int) -> None:
        facts.append(Fact(head, rel, tail))
        labels.append(cluster)

    for head in heads:
        add_fact(head, r_in, hub0, 0)
    for j in range(q):
        add_fact(hub0, r_out[j], fan[j], 0)

    for twin in (1, 2):
        hub = add_entity(f"Hub{twin}", "hub")
        twin_heads = [add_entity(f"Head{twin}_{i}", "head") for i in range(p)]
        tails = [add_entity(f"Prize{twin}_{j}", "prize") for j in range(q)]
        add_fact(fan[twin - 1], r_cross, hub, 0)
        for head in twin_heads:
            add_fact(head, r_in2, hub, twin)
        for j in range(q):
            add_fact(hub, r_out2[j], tails[j], twin)

    order = sorted(range(len(facts)), key=lambda i: facts[i])
    graph = build_graph(entities, relations, [facts[i] for i in order])
    ordered_labels = [labels[i] for i in order]
    sizes = [0, 0, 0]
    for lab in ordered_labels:
        sizes[lab] += 1
    partition = clustering.EdgePartition(k=3, labels=ordered_labels, sizes=sizes)
    return graph, partition


def _baselines_match_bruteforce(seed: int) -> bool:
    for trial in range(5):
        cfg = graph_gen.desk_config(
            seed_for(seed, "bl", trial), n_entities=60, n_relations=8, target_edges=150
        )
        graph = graph_gen.generate_graph(cfg)
        partition = clustering.cluster_edges(graph, 5, seed)
        _, across = clustering.within_cluster_two_hops(graph, partition)
        queries = gen_learner.examples_from_hops(across)
        if not queries:
            continue
        got = evaluation.direct_connection_baseline(graph, queries)
        hits = 0
        for qy in queries:
            if any(f.head == qy.head and f.tail == qy.label for f in graph.facts):
                hits += 1
        if abs(got - hits / len(queries)) > 1e-12:
            return False
        got = evaluation.majority_relation_baseline(graph, queries)
        hits = 0
        for qy in queries:
            target_type = graph.entities[qy.label].semantic_type
            counts: dict[int, int] = {}
            for f in graph.facts:
                if f.relation == qy.r2 and graph.entities[f.tail].semantic_type == target_type:
                    counts[f.tail] = counts.get(f.tail, 0) + 1
            pred = min(counts, key=lambda t: (-counts[t], t)) if counts else None
            hits += 1 if pred == qy.label else 0
        if abs(got - hits / len(queries)) > 1e-12:
            return False
    return True


def figure_report_rows(seed: int = 0) -> list[evaluation.ReportRow]:
    """Small sweeps covering all four figure analogs for the plot component."""
    cfg = graph_gen.desk_config(seed, n_entities=400, n_relations=40,
                                target_edges=2000, functional=True)
    graph = graph_gen.generate_graph(cfg)
    rows: list[evaluation.ReportRow] = []
    rows += evaluation.run_denoising_grid(
        graph, n_experts_grid=[5, 25], coverages=[0.2, 0.5, 0.8],
        temperatures=[0.0], seeds=[seed], experiment="fig3_coverage",
    )
    rows += evaluation.run_denoising_grid(
        graph, n_experts_grid=[25], coverages=[0.2, 0.5],
        temperatures=[0.0, 0.5, 1.0], seeds=[seed], experiment="fig4_temperature",
    )
    rows += evaluation.run_selection_grid(
        graph, k_clusters=20, n_experts_grid=[10, 50], coverages=[0.1],
        alphas=[0.8, 0.9, 1.0], seeds=[seed], experiment="fig5_alpha",
    )
    rows += evaluation.run_generalization_sweep(
        graph, k_clusters=8, d_fractions=[0.1, 0.3, 0.5, 1.0],
        validation_fraction=0.1, kappa_comp=gen_learner.DEFAULT_KAPPA_COMP,
        seeds=[seed], experiment="fig6_twohop",
    )
    return rows
