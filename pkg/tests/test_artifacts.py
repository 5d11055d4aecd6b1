"""Run artifacts: canonical hashing, CSV layout, manifests, diffs."""

import json

import numpy as np
import pytest

from tempeq.artifacts import (
    canonical_json,
    config_hash,
    diff_manifests,
    file_sha256,
    read_manifest,
    write_csv,
    write_manifest,
)


def test_canonical_json_is_order_free_and_strict():
    a = canonical_json({"b": 1, "a": [1.5, "x"]})
    b = canonical_json({"a": [1.5, "x"], "b": 1})
    assert a == b == '{"a":[1.5,"x"],"b":1}'
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})
    with pytest.raises(ValueError):
        canonical_json({"x": float("inf")})


def test_config_hash_sensitivity():
    base = {"kind": "muth", "seed": 7, "cobweb": {"rho": 0.5}}
    assert config_hash(base) == config_hash(json.loads(json.dumps(base)))
    assert config_hash(base) != config_hash({**base, "seed": 8})
    nested = {**base, "cobweb": {"rho": 0.5000001}}
    assert config_hash(base) != config_hash(nested)


def test_write_csv_cells_round_trip_floats(tmp_path):
    out = tmp_path / "t.csv"
    rows = [
        {"t": 0, "x": 0.1, "name": "a", "flag": True},
        {"t": 1, "x": 1.0 / 3.0, "name": "b", "flag": False},
    ]
    write_csv(out, ["t", "x", "name", "flag"], rows, cfg_hash="deadbeef")
    lines = out.read_text().splitlines()
    assert lines[0] == "# config_hash=deadbeef"
    assert lines[1] == "t,x,name,flag"
    assert lines[2] == "0,0.1,a,True"
    # repr round-trips the float exactly
    assert float(lines[3].split(",")[1]) == 1.0 / 3.0

    # sequence rows and numpy scalars are accepted too
    out2 = tmp_path / "s.csv"
    write_csv(out2, ["a", "b"], [(np.float64(0.25), 2)])
    assert out2.read_text().splitlines()[1] == "0.25,2"


def test_manifest_round_trip(tmp_path):
    (tmp_path / "x.csv").write_text("t\n1\n")
    cfg = {"kind": "muth", "seed": 3}
    path = write_manifest(tmp_path, "muth", cfg, 3, ["x.csv"], 0.5, {"ok": True})
    m = read_manifest(path)
    assert m["kind"] == "muth"
    assert m["config_hash"] == config_hash(cfg)
    assert m["outputs"]["x.csv"] == file_sha256(tmp_path / "x.csv")
    assert m["headline"] == {"ok": True}
    assert m["schema"] == 1
    assert "numpy" in m["versions"]


def test_read_manifest_rejects_other_schema(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps({"schema": 99, "kind": "muth"}))
    with pytest.raises(ValueError):
        read_manifest(p)


def test_diff_manifests():
    a = {"kind": "muth", "seed": 1,
         "config": {"cobweb": {"rho": 0.5, "T": 10}},
         "headline": {"theta": [0.0, -0.25]}}
    b = {"kind": "muth", "seed": 2,
         "config": {"cobweb": {"rho": 0.6, "T": 10}},
         "headline": {"theta": [0.0, -0.30]}}
    d = diff_manifests(a, b)
    assert d["config"]["cobweb.rho"] == {"a": 0.5, "b": 0.6}
    assert d["config"]["seed"] == {"a": 1, "b": 2}
    assert d["headline"]["theta[1]"] == {"a": -0.25, "b": -0.30}
    assert "cobweb.T" not in d["config"]

    same = diff_manifests(a, a)
    assert same["config"] == {} and same["headline"] == {}

    with pytest.raises(ValueError):
        diff_manifests(a, {**b, "kind": "ks"})
