"""Scenario runner: strict config validation, artifacts, reruns, compare."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from tempeq.artifacts import read_manifest
from tempeq.cli import (
    ScenarioError,
    load_config,
    main,
    resolve_out,
    resolved_config,
    run_scenario,
)

MUTH_TINY = """\
kind = "muth"
seed = 3

[cobweb]
T = 500
"""


def write_cfg(tmp_path, text, name="scenario.toml") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_config_materializes_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MUTH_TINY))
    assert cfg.kind == "muth"
    assert cfg.seed == 3
    assert cfg.cobweb is not None
    assert cfg.cobweb.T == 500
    assert cfg.cobweb.b_d == 1.0  # default filled in
    assert cfg.economy is None and cfg.well is None

    bare = load_config(write_cfg(tmp_path, 'kind = "bistable"\n', "bare.toml"))
    assert bare.well is not None and bare.well.sigma == 0.7


def test_unknown_key_is_named(tmp_path):
    text = MUTH_TINY + 'TT = 9\n'
    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, text))
    assert err.value.code == 2
    report = err.value.report
    assert report["error"] == "validation"
    assert "cobweb.TT" in report["offending_keys"]
    assert any(d["key"] == "cobweb.TT" for d in report["details"])


@pytest.mark.parametrize("key", ["kind", "seed", "b_d", "gamma", "rho", "sigma_eps", "T", "belief"])
def test_single_key_corruption_is_caught(tmp_path, key):
    full = (
        'kind = "muth"\nseed = 3\n\n[cobweb]\n'
        'b_d = 1.0\ngamma = 1.0\nrho = 0.5\nsigma_eps = 0.1\nT = 500\nbelief = "rls"\n'
    )
    corrupted = full.replace(f"{key} =", f"{key}x =", 1)
    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, corrupted, f"bad_{key}.toml"))
    assert err.value.code == 2
    assert any(key in k for k in err.value.report["offending_keys"])


def test_foreign_block_rejected(tmp_path):
    text = MUTH_TINY + "\n[economy]\ndelta = 0.03\n"
    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, text))
    assert err.value.report["offending_keys"] == ["economy"]


def test_unparseable_toml(tmp_path):
    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, "kind = \n"))
    assert err.value.code == 2
    assert err.value.report["message"].startswith("cannot parse")


def test_constraint_violations_named(tmp_path):
    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, 'kind = "sorcery"\n'))
    assert "kind" in err.value.report["offending_keys"]

    with pytest.raises(ScenarioError) as err:
        load_config(write_cfg(tmp_path, MUTH_TINY + "gain = 1.5\n"))
    assert "cobweb.gain" in err.value.report["offending_keys"]


def test_resolved_config_identity_excludes_out(tmp_path):
    cfg_a = load_config(write_cfg(tmp_path, MUTH_TINY, "a.toml"))
    with_out = MUTH_TINY.replace("seed = 3", 'seed = 3\nout = "elsewhere"')
    cfg_b = load_config(write_cfg(tmp_path, with_out, "b.toml"))
    assert resolved_config(cfg_a, 3) == resolved_config(cfg_b, 3)
    assert "out" not in resolved_config(cfg_a, 3)
    assert resolved_config(cfg_a, 3) != resolved_config(cfg_a, 4)


def test_resolve_out_precedence(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MUTH_TINY.replace("seed = 3", 'seed = 3\nout = "cfg_dir"')))
    assert resolve_out(cfg, "x/scenario.toml", None, False) == Path("cfg_dir")
    assert resolve_out(cfg, "x/scenario.toml", "cli_dir", False) == Path("cli_dir")
    assert resolve_out(cfg, "x/scenario.toml", "cli_dir", True) == Path("cli_dir/scenario")
    plain = load_config(write_cfg(tmp_path, MUTH_TINY, "plain.toml"))
    assert resolve_out(plain, "y/plain.toml", None, False) == Path("runs/plain")


def test_run_scenario_writes_verifiable_artifacts(tmp_path):
    cfg_path = write_cfg(tmp_path, MUTH_TINY)
    manifest_path = run_scenario(cfg_path, out=tmp_path / "run1")
    m = read_manifest(manifest_path)
    assert m["kind"] == "muth"
    assert m["seed"] == 3
    assert set(m["outputs"]) == {"cobweb.csv"}
    assert {"terminal_coefficients", "ree_fixed_point"} <= set(m["headline"])

    csv_text = (tmp_path / "run1" / "cobweb.csv").read_text()
    assert csv_text.splitlines()[0] == f"# config_hash={m['config_hash']}"

    # identical rerun elsewhere: identical bytes, identical digests
    run_scenario(cfg_path, out=tmp_path / "run2")
    assert (tmp_path / "run2" / "cobweb.csv").read_bytes() == \
        (tmp_path / "run1" / "cobweb.csv").read_bytes()

    # a different seed is a different run
    other = read_manifest(run_scenario(cfg_path, seed=4, out=tmp_path / "run3"))
    assert other["config_hash"] != m["config_hash"]
    assert other["outputs"]["cobweb.csv"] != m["outputs"]["cobweb.csv"]


def test_run_scenario_wraps_runtime_errors(tmp_path):
    cfg_path = write_cfg(tmp_path, 'kind = "muth"\n[cobweb]\nsigma_eps = -0.5\n')
    with pytest.raises(ScenarioError) as err:
        run_scenario(cfg_path, out=tmp_path / "boom")
    assert err.value.code == 1
    report = err.value.report
    assert report["error"] == "runtime"
    assert report["exception"] == "ValueError"


def test_rl_mdp_scenario(tmp_path):
    text = (
        'kind = "rl-mdp"\nseed = 5\n\n[mdp]\n'
        "n_states = 3\nn_actions = 2\nsteps = 3000\n"
    )
    manifest_path = run_scenario(write_cfg(tmp_path, text), out=tmp_path / "mdp")
    m = read_manifest(manifest_path)
    assert set(m["outputs"]) == {"qtable.csv", "values.csv"}
    assert isinstance(m["headline"]["policy_match"], bool)


def test_bistable_scenario(tmp_path):
    text = (
        'kind = "bistable"\nseed = 2\n\n[well]\n'
        "steps = 20000\nthin = 100\n"
    )
    manifest_path = run_scenario(write_cfg(tmp_path, text), out=tmp_path / "well")
    m = read_manifest(manifest_path)
    assert set(m["outputs"]) == {"path.csv", "density.csv", "hopping.json"}
    assert m["headline"]["l1_density_distance"] < 0.5
    lines = (tmp_path / "well" / "path.csv").read_text().splitlines()
    assert len(lines) == 2 + 201  # hash line, header, thinned samples


def test_cli_run_and_compare_round_trip(tmp_path):
    runner = CliRunner()
    cfg = write_cfg(tmp_path, MUTH_TINY)

    res = runner.invoke(main, ["run", str(cfg), "--out", str(tmp_path / "a")])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.stdout.strip())
    assert payload["status"] == "ok"

    res2 = runner.invoke(main, ["run", str(cfg), "--seed", "9", "--out", str(tmp_path / "b")])
    assert res2.exit_code == 0

    cmp_res = runner.invoke(main, [
        "compare", str(tmp_path / "a" / "manifest.json"), str(tmp_path / "b" / "manifest.json"),
    ])
    assert cmp_res.exit_code == 0
    diff = json.loads(cmp_res.stdout)
    assert diff["config"]["seed"] == {"a": 3, "b": 9}
    assert diff["headline"]  # different shocks move the headline numbers


def test_cli_validation_failure_reports_to_stderr(tmp_path):
    runner = CliRunner()
    bad = write_cfg(tmp_path, MUTH_TINY + "TT = 1\n")
    res = runner.invoke(main, ["run", str(bad)])
    assert res.exit_code == 2
    report = json.loads(res.stderr.strip())
    assert "cobweb.TT" in report["offending_keys"]


def test_cli_output_collision_detected(tmp_path):
    runner = CliRunner()
    cfg = write_cfg(tmp_path, MUTH_TINY)
    res = runner.invoke(main, ["run", str(cfg), str(cfg)])
    assert res.exit_code == 2
    assert "collision" in res.stderr


def test_cli_compare_rejects_different_kinds(tmp_path):
    runner = CliRunner()
    run_scenario(write_cfg(tmp_path, MUTH_TINY, "m.toml"), out=tmp_path / "m")
    well = 'kind = "bistable"\n[well]\nsteps = 5000\n'
    run_scenario(write_cfg(tmp_path, well, "w.toml"), out=tmp_path / "w")
    res = runner.invoke(main, [
        "compare", str(tmp_path / "m" / "manifest.json"), str(tmp_path / "w" / "manifest.json"),
    ])
    assert res.exit_code == 2
    assert "incomparable" in res.stderr
