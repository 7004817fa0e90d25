"""Command-line pipelines.

Every subcommand is a pure function of (config, master seed) to output
bytes: sub-seeds are derived from the master seed with purpose strings, so
partial pipelines stay stable. The effective configuration is echoed into
the output directory and can be re-run as-is.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import clustering, corpus, evaluation, experts, gen_learner, graph_gen, mixture, verify
from .errors import ConfigError, TestbedError
from .kg_core import deserialize, serialize
from .seeding import seed_for

GRAPH_FILE = "graph.json"
PARTITION_FILE = "partition.json"
EXPERTS_FILE = "experts.json"
CORPUS_FILE = "corpus.jsonl"
SPLITS_FILE = "two_hop_splits.json"
REPORT_FILE = "report.csv"
CONDITION_FILE = "condition_report.csv"
CONFIG_ECHO_FILE = "config_echo.toml"
LOCK_FILE = ".transcend-lab.lock"

DEFAULT_CONFIG: dict = {
    "master_seed": 0,
    "output_dir": "out",
    "workers": 1,
    "graph": {
        "preset": "desk",
        "n_entities": 1000,
        "n_relations": 20,
        "target_edges": 5000,
        "degree_skew": 0.0,
        "functional": False,
        "types": [],
        "relations": [],
    },
    "clustering": {"k": 50},
    "experts": {"setting": "denoising", "n_experts": 10, "coverage": 0.2},
    "corpus": {
        "total_samples": 1000,
        "quota_mode": "equal",
        "alpha": 0.0,
        "diversity_level": 1,
        "two_hop": {
            "include": False,
            "validation_size": 0,
            "train_repeat": 20,
            "format": "two_hop_plain",
        },
    },
    "simulate": {
        "settings": ["denoising"],
        "n_experts": [1, 10],
        "coverages": [0.2, 0.5, 0.8],
        "alphas": [0.8, 0.9, 1.0],
        "temperatures": [0.0, 1.0],
        "seeds": [0],
        "k": 50,
    },
    "generalize": {
        "k": 50,
        "kappa_comp": gen_learner.DEFAULT_KAPPA_COMP,
        "d_fractions": [0.25, 0.5, 1.0],
        "validation_fraction": 0.1,
        "seeds": [0],
    },
}


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    merged = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"expected a table at {where}")
            merged[key] = _merge_config(base[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    config = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path, "rb") as handle:
                loaded = tomllib.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML in {path}: {exc}") from exc
        config = _merge_config(config, loaded)
    if overrides:
        config = _merge_config(config, overrides)
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot echo config value {value!r}")


def dump_toml(config: dict, prefix: str = "") -> str:
    scalars = []
    tables = []
    for key, value in config.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for item in value:
                body = "".join(f"{k} = {_toml_value(v)}\n" for k, v in item.items())
                tables.append((None, (key, body)))
        else:
            scalars.append(f"{key} = {_toml_value(value)}\n")
    out = "".join(scalars)
    for key, value in tables:
        if key is None:
            arr_key, body = value
            full = f"{prefix}{arr_key}" if prefix else arr_key
            out += f"\n[[{full}]]\n{body}"
        else:
            full = f"{prefix}{key}" if prefix else key
            out += f"\n[{full}]\n" + dump_toml(value, full + ".")
    return out


class OutputLock:
    """Single CLI instance per output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / LOCK_FILE

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run (remove {self.path} if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def _echo_config(out_dir: Path, config: dict) -> None:
    (out_dir / CONFIG_ECHO_FILE).write_text(dump_toml(config), encoding="utf-8")


def _graph_config(config: dict) -> graph_gen.GraphGenConfig:
    section = config["graph"]
    seed = seed_for(config["master_seed"], "graph")
    if section["types"] or section["relations"]:
        if not (section["types"] and section["relations"]):
            raise ConfigError("custom graphs need both graph.types and graph.relations")
        type_spec = tuple((t["name"], float(t["fraction"])) for t in section["types"])
        relation_spec = tuple(
            graph_gen.RelationSpec(r["name"], r["head"], r["tail"])
            for r in section["relations"]
        )
        return graph_gen.GraphGenConfig(
            n_entities=section["n_entities"],
            type_spec=type_spec,
            relation_spec=relation_spec,
            target_edges=section["target_edges"],
            degree_skew=section["degree_skew"],
            seed=seed,
            functional=section["functional"],
        )
    if section["preset"] == "desk":
        return graph_gen.desk_config(
            seed,
            n_entities=section["n_entities"],
            n_relations=section["n_relations"],
            target_edges=section["target_edges"],
            degree_skew=section["degree_skew"],
            functional=section["functional"],
        )
    if section["preset"] == "desk-functional":
        return graph_gen.desk_functional_config(seed)
    raise ConfigError(f"unknown graph preset {section['preset']!r}")


def _load_graph(out_dir: Path):
    path = out_dir / GRAPH_FILE
    if not path.exists():
        raise ConfigError(f"no graph at {path}; run gen-graph first")
    return deserialize(path.read_bytes())


def _load_partition(out_dir: Path):
    path = out_dir / PARTITION_FILE
    if not path.exists():
        raise ConfigError(f"no partition at {path}; run cluster first")
    return clustering.EdgePartition.from_json(path.read_bytes())


def _run(ctx: click.Context, body) -> None:
    """Shared error envelope: exit 1 on validation errors, 2 on runtime ones."""
    error_json = ctx.obj.get("error_json", False)
    try:
        body()
    except (TestbedError, ConfigError) as exc:
        _report_error(exc, error_json)
        ctx.exit(1)
    except Exception as exc:  # anything unexpected
        _report_error(exc, error_json)
        ctx.exit(2)


def _report_error(exc: Exception, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
    else:
        click.echo(f"error: {exc}", err=True)


def _prepare(ctx) -> tuple[dict, Path]:
    overrides: dict = {}
    if ctx.obj.get("seed") is not None:
        overrides["master_seed"] = ctx.obj["seed"]
    if ctx.obj.get("out") is not None:
        overrides["output_dir"] = ctx.obj["out"]
    if ctx.obj.get("workers") is not None:
        overrides["workers"] = ctx.obj["workers"]
    config = load_config(ctx.obj.get("config_path"), overrides)
    out_dir = Path(config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    return config, out_dir


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML run configuration; flags override file keys.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--out", type=click.Path(), default=None, help="Output directory override.")
@click.option("--workers", type=int, default=None, help="Worker processes for corpus emission.")
@click.option("--error-json", is_flag=True, help="Machine-readable errors on stderr.")
@click.pass_context
def main(ctx, config_path, seed, out, workers, error_json):
    """Knowledge-graph transcendence testbed pipelines."""
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, seed=seed, out=out, workers=workers,
                   error_json=error_json)


@main.command("gen-graph")
@click.pass_context
def gen_graph_cmd(ctx):
    """Generate the ground-truth graph and write graph.json."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = graph_gen.generate_graph(_graph_config(config))
            (out_dir / GRAPH_FILE).write_bytes(serialize(graph))
            _echo_config(out_dir, config)
            click.echo(f"graph: {graph.n_entities} entities, {len(graph.relations)} relations, "
                       f"{graph.n_facts} facts -> {out_dir / GRAPH_FILE}")

    _run(ctx, body)


@main.command("cluster")
@click.option("--k", type=int, default=None, help="Cluster count override.")
@click.pass_context
def cluster_cmd(ctx, k):
    """Partition the graph's facts into expertise clusters."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = _load_graph(out_dir)
            k_eff = k if k is not None else config["clustering"]["k"]
            partition = clustering.cluster_edges(
                graph, k_eff, seed_for(config["master_seed"], "cluster")
            )
            (out_dir / PARTITION_FILE).write_bytes(partition.to_json())
            _echo_config(out_dir, config)
            nonempty = sum(1 for s in partition.sizes if s)
            click.echo(f"partition: k={k_eff}, {nonempty} non-empty clusters "
                       f"-> {out_dir / PARTITION_FILE}")

    _run(ctx, body)


@main.command("make-experts")
@click.option("--setting", type=click.Choice(["denoising", "selection", "generalization"]),
              default=None)
@click.option("--n-experts", type=int, default=None)
@click.option("--coverage", type=float, default=None)
@click.pass_context
def make_experts_cmd(ctx, setting, n_experts, coverage):
    """Construct the simulated expert population and write experts.json."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            section = dict(config["experts"])
            if setting is not None:
                section["setting"] = setting
            if n_experts is not None:
                section["n_experts"] = n_experts
            if coverage is not None:
                section["coverage"] = coverage
            config["experts"] = section
            graph = _load_graph(out_dir)
            seed = seed_for(config["master_seed"], "experts")
            if section["setting"] == "denoising":
                population = experts.build_denoising_experts(
                    graph, section["n_experts"], section["coverage"], seed
                )
            elif section["setting"] == "selection":
                population = experts.build_selection_experts(
                    graph, _load_partition(out_dir), section["n_experts"],
                    section["coverage"], seed,
                )
            else:
                population = experts.build_generalization_experts(graph, _load_partition(out_dir))
            (out_dir / EXPERTS_FILE).write_bytes(experts.experts_to_json(population))
            _echo_config(out_dir, config)
            click.echo(f"experts: {len(population)} ({section['setting']}) "
                       f"-> {out_dir / EXPERTS_FILE}")

    _run(ctx, body)


@main.command("gen-corpus")
@click.pass_context
def gen_corpus_cmd(ctx):
    """Emit the training corpus JSONL (plus two-hop split manifests)."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = _load_graph(out_dir)
            population = experts.experts_from_json((out_dir / EXPERTS_FILE).read_bytes())
            section = config["corpus"]
            two_hop = corpus.TwoHopCorpusConfig(
                include=section["two_hop"]["include"],
                validation_size=section["two_hop"]["validation_size"],
                train_repeat=section["two_hop"]["train_repeat"],
                format=section["two_hop"]["format"],
            )
            ccfg = corpus.CorpusConfig(
                total_samples=section["total_samples"],
                quota_mode=section["quota_mode"],
                alpha=section["alpha"],
                diversity_level=section["diversity_level"],
                two_hop=two_hop,
                seed=seed_for(config["master_seed"], "corpus"),
            )
            partition = None
            needs_partition = two_hop.include or (population and population[0].setting == "selection")
            if needs_partition:
                partition = _load_partition(out_dir)
            samples, splits = corpus.generate_corpus(
                graph, population, ccfg, partition=partition, workers=config["workers"]
            )
            (out_dir / CORPUS_FILE).write_bytes(corpus.corpus_to_jsonl(samples))
            if splits is not None:
                (out_dir / SPLITS_FILE).write_bytes(splits.to_json())
            _echo_config(out_dir, config)
            click.echo(f"corpus: {len(samples)} samples -> {out_dir / CORPUS_FILE}")

    _run(ctx, body)


@main.command("simulate")
@click.pass_context
def simulate_cmd(ctx):
    """Run exact-mixture sweeps and write the report CSV."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = _load_graph(out_dir)
            section = config["simulate"]
            rows: list[evaluation.ReportRow] = []
            for setting in section["settings"]:
                if setting == "denoising":
                    rows += evaluation.run_denoising_grid(
                        graph, section["n_experts"], section["coverages"],
                        section["temperatures"], section["seeds"],
                    )
                elif setting == "selection":
                    rows += evaluation.run_selection_grid(
                        graph, section["k"], section["n_experts"], section["coverages"],
                        section["alphas"], section["seeds"],
                    )
                else:
                    raise ConfigError(f"simulate cannot run setting {setting!r}")
            (out_dir / REPORT_FILE).write_bytes(evaluation.rows_to_csv(rows))
            _echo_config(out_dir, config)
            click.echo(f"report: {len(rows)} rows -> {out_dir / REPORT_FILE}")

    _run(ctx, body)


@main.command("generalize")
@click.pass_context
def generalize_cmd(ctx):
    """Run the two-hop generalization pipeline: condition report and sweeps."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = _load_graph(out_dir)
            section = config["generalize"]
            seed = section["seeds"][0]
            partition = clustering.cluster_edges(
                graph, section["k"], seed_for(seed, "cluster")
            )
            condition = gen_learner.sufficient_condition(graph, partition, section["kappa_comp"])
            examples = gen_learner.build_training_set(graph, partition)
            rng = np.random.default_rng(seed_for(seed, "d_order"))
            order = rng.permutation(len(examples))
            n_val = int(section["validation_fraction"] * len(examples))
            validation = [examples[int(i)] for i in order[:n_val]]
            training = [examples[int(i)] for i in order[n_val:]]
            hypothesis = gen_learner.erm_select(training, section["kappa_comp"])
            _, across = clustering.within_cluster_two_hops(graph, partition)
            across_queries = gen_learner.examples_from_hops(across)
            acc_val = gen_learner.evaluate_two_hop(hypothesis, validation)
            acc_across = gen_learner.evaluate_two_hop(hypothesis, across_queries)
            header = "lhs,rhs,holds,kind_selected,acc_within_val,acc_across"
            row = (f"{condition.lhs},{condition.rhs},{condition.holds},"
                   f"{hypothesis.kind},{acc_val},{acc_across}")
            (out_dir / CONDITION_FILE).write_text(header + "\n" + row + "\n",
                                                  encoding="utf-8")
            rows = evaluation.run_generalization_sweep(
                graph, section["k"], section["d_fractions"],
                section["validation_fraction"], section["kappa_comp"], section["seeds"],
            )
            (out_dir / REPORT_FILE).write_bytes(evaluation.rows_to_csv(rows))
            _echo_config(out_dir, config)
            click.echo(f"generalize: condition holds={condition.holds}, "
                       f"selected={hypothesis.kind} -> {out_dir / CONDITION_FILE}")

    _run(ctx, body)


@main.command("baselines")
@click.pass_context
def baselines_cmd(ctx):
    """Score the shortcut baselines on the across-expertise two-hop queries."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            graph = _load_graph(out_dir)
            partition = _load_partition(out_dir)
            _, across = clustering.within_cluster_two_hops(graph, partition)
            queries = gen_learner.examples_from_hops(across)
            seed = config["master_seed"]
            rows = [
                evaluation.ReportRow(
                    "baselines", "generalization", partition.k, 1.0, 1.0, 0.0, 0,
                    "baseline_direct_connection",
                    evaluation.direct_connection_baseline(graph, queries), seed,
                ),
                evaluation.ReportRow(
                    "baselines", "generalization", partition.k, 1.0, 1.0, 0.0, 0,
                    "baseline_majority_relation",
                    evaluation.majority_relation_baseline(graph, queries), seed,
                ),
            ]
            (out_dir / REPORT_FILE).write_bytes(evaluation.rows_to_csv(rows))
            _echo_config(out_dir, config)
            for row in rows:
                click.echo(f"{row.metric}: {row.value:.4f}")

    _run(ctx, body)


@main.command("verify")
@click.pass_context
def verify_cmd(ctx):
    """Run the invariant/oracle battery and write the figure-analog CSV."""

    def body():
        config, out_dir = _prepare(ctx)
        with OutputLock(out_dir):
            seed = config["master_seed"]
            results = verify.run_checks(seed)
            rows = verify.figure_report_rows(seed)
            (out_dir / REPORT_FILE).write_bytes(evaluation.rows_to_csv(rows))
            _echo_config(out_dir, config)
            failures = 0
            for result in results:
                mark = "ok" if result.ok else "FAIL"
                suffix = f" ({result.detail})" if result.detail else ""
                click.echo(f"{mark:4s} - {result.name}{suffix}")
                failures += 0 if result.ok else 1
            click.echo(f"report: {len(rows)} rows -> {out_dir / REPORT_FILE}")
            if failures:
                raise TestbedError(f"{failures} verification check(s) failed")

    _run(ctx, body)


if __name__ == "__main__":
    main()
