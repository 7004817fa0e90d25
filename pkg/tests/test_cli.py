import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from transcend_lab.cli import DEFAULT_CONFIG, dump_toml, load_config, main
from transcend_lab.errors import ConfigError

SMALL_CONFIG = """
master_seed = 7

[graph]
n_entities = 150
n_relations = 16
target_edges = 280
functional = true

[clustering]
k = 6

[experts]
setting = "denoising"
n_experts = 4
coverage = 0.5

[corpus]
total_samples = 60

[simulate]
n_experts = [1, 3]
coverages = [0.4, 0.9]
temperatures = [0.0]
seeds = [0]
"""


def write_config(tmp_path: Path) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


def invoke(args, tmp_path):
    runner = CliRunner()
    return runner.invoke(main, args, catch_exceptions=False, obj={},
                         env={"COLUMNS": "200"})


def test_gen_graph_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        result = invoke(["--config", str(cfg), "--out", str(out), "gen-graph"], tmp_path)
        assert result.exit_code == 0, result.output
    assert (out1 / "graph.json").read_bytes() == (out2 / "graph.json").read_bytes()


def test_full_desk_pipeline(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    for command in ("gen-graph", "cluster", "make-experts", "gen-corpus", "simulate"):
        result = invoke(["--config", str(cfg), "--out", str(out), command], tmp_path)
        assert result.exit_code == 0, f"{command}: {result.output}"
    for name in ("graph.json", "partition.json", "experts.json", "corpus.jsonl",
                 "report.csv", "config_echo.toml"):
        assert (out / name).exists(), name
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1].startswith("experiment,")


def test_config_echo_reproduces_outputs(tmp_path):
    cfg = write_config(tmp_path)
    out1 = tmp_path / "first"
    invoke(["--config", str(cfg), "--out", str(out1), "gen-graph"], tmp_path)
    echo = out1 / "config_echo.toml"
    out2 = tmp_path / "second"
    result = invoke(["--config", str(echo), "--out", str(out2), "gen-graph"], tmp_path)
    assert result.exit_code == 0, result.output
    assert (out1 / "graph.json").read_bytes() == (out2 / "graph.json").read_bytes()


def test_unknown_config_key_rejected(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("master_seed = 1\nmystery_knob = true\n", encoding="utf-8")
    result = invoke(["--config", str(bad), "--out", str(tmp_path / "o"), "gen-graph"], tmp_path)
    assert result.exit_code == 1
    assert "unknown configuration key" in result.output


def test_missing_graph_is_validation_error(tmp_path):
    result = invoke(["--out", str(tmp_path / "empty"), "cluster"], tmp_path)
    assert result.exit_code == 1
    assert "gen-graph first" in result.output


def test_error_json_flag(tmp_path):
    result = invoke(["--error-json", "--out", str(tmp_path / "empty"), "cluster"], tmp_path)
    assert result.exit_code == 1
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"
    assert "gen-graph" in payload["message"]


def test_lock_file_blocks_second_instance(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".transcend-lab.lock").write_text("123")
    result = invoke(["--config", str(cfg), "--out", str(out), "gen-graph"], tmp_path)
    assert result.exit_code == 1
    assert "locked" in result.output
    # and the stale lock is left for the operator to inspect
    assert (out / ".transcend-lab.lock").exists()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    invoke(["--config", str(cfg), "--out", str(out1), "--seed", "99", "gen-graph"], tmp_path)
    invoke(["--config", str(cfg), "--out", str(out2), "gen-graph"], tmp_path)
    assert (out1 / "graph.json").read_bytes() != (out2 / "graph.json").read_bytes()


def test_generalize_and_baselines(tmp_path):
    cfg = tmp_path / "gen.toml"
    cfg.write_text(SMALL_CONFIG + "\n[generalize]\nk = 4\nd_fractions = [0.5, 1.0]\n",
                   encoding="utf-8")
    out = tmp_path / "gen"
    for command in ("gen-graph", "cluster"):
        invoke(["--config", str(cfg), "--out", str(out), command], tmp_path)
    result = invoke(["--config", str(cfg), "--out", str(out), "generalize"], tmp_path)
    assert result.exit_code == 0, result.output
    lines = (out / "condition_report.csv").read_text().splitlines()
    assert lines[0] == "lhs,rhs,holds,kind_selected,acc_within_val,acc_across"
    assert len(lines) == 2 and len(lines[1].split(",")) == 6
    result = invoke(["--config", str(cfg), "--out", str(out), "baselines"], tmp_path)
    assert result.exit_code == 0, result.output
    assert "baseline_direct_connection" in result.output


def test_toml_round_trip_of_defaults():
    text = dump_toml(DEFAULT_CONFIG)
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    parsed = tomllib.loads(text)
    merged = load_config(None, parsed)
    assert merged == DEFAULT_CONFIG


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.toml")
