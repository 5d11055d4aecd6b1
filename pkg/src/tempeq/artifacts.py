"""Deterministic artifact plumbing: canonical JSON, config hashing,
headered CSV, and run manifests.

Every output file carries the config hash of the run that produced it,
either as a leading `# config_hash=` comment (CSV) or as a field (JSON),
and the manifest records enough (resolved config, seed, versions, file
digests) to reproduce and audit the run. Floats are written with repr,
the shortest round-trip form, so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

MANIFEST_SCHEMA = 1


def canonical_json(obj) -> str:
    """Key-sorted, whitespace-free JSON; rejects NaN/inf (not valid JSON)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: dict) -> str:
    """sha256 over the canonical JSON form of a resolved config."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        # plain float() first: numpy scalars subclass float but repr differently
        return repr(float(value))
    if isinstance(value, (int, str)):
        return value if isinstance(value, str) else str(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path, columns, rows, cfg_hash: str | None = None) -> None:
    """Rows of dicts (or sequences) to CSV in the given column order."""
    with open(path, "w", newline="") as fh:
        if cfg_hash is not None:
            fh.write(f"# config_hash={cfg_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(list(columns))
        for row in rows:
            if isinstance(row, dict):
                writer.writerow([_cell(row[c]) for c in columns])
            else:
                writer.writerow([_cell(v) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def package_versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "tempeq": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(
    out_dir,
    kind: str,
    config: dict,
    seed: int,
    outputs: list[str],
    wall_time_s: float,
    headline: dict,
) -> Path:
    """Manifest JSON tying a run's outputs to its resolved config.

    outputs are file names inside out_dir; each is digested so a reader
    can verify nothing was touched since the run.
    """
    out_dir = Path(out_dir)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "outputs": {name: file_sha256(out_dir / name) for name in sorted(outputs)},
        "wall_time_s": wall_time_s,
        "versions": package_versions(),
        "headline": headline,
        "argv": sys.argv[1:],
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


def read_manifest(path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(
            f"manifest schema {manifest.get('schema')!r} does not match "
            f"this build's schema {MANIFEST_SCHEMA}"
        )
    return manifest


def _flatten(prefix: str, obj, out: dict) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out[prefix] = obj


def diff_manifests(a: dict, b: dict) -> dict:
    """Config and headline-statistic differences between two runs.

    Raises on different scenario kinds (incomparable runs).
    """
    if a["kind"] != b["kind"]:
        raise ValueError(f"incomparable runs: kind {a['kind']!r} vs {b['kind']!r}")
    diff: dict = {"kind": a["kind"], "config": {}, "headline": {}}
    for section in ("config", "headline"):
        fa: dict = {}
        fb: dict = {}
        _flatten("", a.get(section, {}), fa)
        _flatten("", b.get(section, {}), fb)
        for key in sorted(set(fa) | set(fb)):
            va = fa.get(key)
            vb = fb.get(key)
            if va != vb:
                diff[section][key] = {"a": va, "b": vb}
    if a.get("seed") != b.get("seed"):
        diff["config"]["seed"] = {"a": a.get("seed"), "b": b.get("seed")}
    return diff
