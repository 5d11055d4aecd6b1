"""Scenario runner: TOML configs in, seeded CSV/JSON artifacts plus a manifest out.

One `run` entry point dispatches on the config's scenario kind; each kind
validates exactly the parameter blocks it uses (strict keys everywhere, so a
misspelled option is an error, not a silent default). Every CSV opens with
the resolved-config hash and every run directory gets a manifest that is
enough to reproduce the run bit for bit.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import click
import numpy as np
import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .artifacts import config_hash, diff_manifests, read_manifest, write_csv, write_json, write_manifest
from .beliefs import ConstantPriceBelief, MomentBelief, PricePlmBelief
from .bistable import (
    DoubleWellSpec,
    density_to_csv,
    hopping_stats,
    hopping_to_json,
    linearized_comparison,
    path_to_csv,
    simulate_em,
    stationary_density,
)
from .cobweb import (
    AdaptiveCobwebBelief,
    CobwebParams,
    RationalCobwebBelief,
    RlsCobwebBelief,
    SampleAverageCobwebBelief,
    run_cobweb,
    t_map_fixed_point,
)
from .economy import EconomyParams, GridSpec, aiyagari_steady_state
from .learning import StepSizeSchedule
from .rl import q_learn, random_mdp, solve_mdp_exact, values_to_csv
from .simulate import (
    SIM_CSV_COLUMNS,
    criterion3a_distance,
    ks_fixed_point,
    records_rows,
    run_temporary_equilibrium,
)
from .stoch import RngStream


class ScenarioError(Exception):
    """Carries the machine-readable error report and the exit code."""

    def __init__(self, code: int, report: dict):
        super().__init__(report.get("message", "scenario error"))
        self.code = code
        self.report = report


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CobwebBlock(_Strict):
    b_d: float = 1.0
    gamma: float = 1.0
    rho: float = 0.5
    sigma_eps: float = 0.1
    T: int = Field(50_000, ge=1)
    belief: Literal["rls", "sample-average", "adaptive", "rational"] = "rls"
    gain: float = Field(0.75, gt=0.0, le=1.0)


class EconomyBlock(_Strict):
    beta_disc: float = 0.99
    sigma_c: float = 2.0
    alpha_k: float = 0.36
    delta: float = 0.025
    grid_hi: float = 150.0
    grid_n: int = Field(100, ge=2)
    grid_curvature: float = 3.0

    def build(self) -> EconomyParams:
        return EconomyParams(
            beta_disc=self.beta_disc,
            sigma_c=self.sigma_c,
            alpha_k=self.alpha_k,
            delta=self.delta,
            asset_grid=GridSpec(0.0, self.grid_hi, self.grid_n, self.grid_curvature),
        )


class FixedPointBlock(_Strict):
    plm: Literal["moment", "price"] = "price"
    t_periods: int = Field(4000, ge=3)
    burn_in: int = Field(500, ge=0)
    outer_tol: float = Field(1e-4, gt=0.0)
    damping: float = Field(0.5, gt=0.0, le=1.0)
    max_outer: int = Field(60, ge=1)


class SimulationBlock(_Strict):
    T: int = Field(10_000, ge=2)
    plm: Literal["constant", "moment", "price"] = "price"
    learn: bool = True
    cadence: float = Field(1e-3, gt=0.0)
    quad_nodes: int = Field(0, ge=0)
    window: int = Field(1000, ge=30)


class MdpBlock(_Strict):
    n_states: int = Field(5, ge=2)
    n_actions: int = Field(3, ge=2)
    beta: float = Field(0.9, ge=0.0, lt=1.0)
    steps: int = Field(100_000, ge=1)
    epsilon: float = Field(0.3, gt=0.0, le=1.0)
    schedule_c: float = Field(1.0, gt=0.0)
    schedule_a: float = Field(0.7, gt=0.5, le=1.0)
    min_gap: float = Field(0.05, ge=0.0)


class WellBlock(_Strict):
    c4: float = 1.0
    c2: float = 1.0
    sigma: float = 0.7
    dt: float = 0.01
    steps: int = Field(1_000_000, ge=1)
    x0: float = -1.0
    thin: int = Field(100, ge=1)
    grid_lo: float = -3.0
    grid_hi: float = 3.0
    grid_n: int = Field(1200, ge=2)
    threshold: float = Field(0.5, gt=0.0)
    kind: Literal["diffusion", "discrete"] = "diffusion"


_BLOCK_TYPES = {
    "cobweb": CobwebBlock,
    "economy": EconomyBlock,
    "fixed_point": FixedPointBlock,
    "simulation": SimulationBlock,
    "mdp": MdpBlock,
    "well": WellBlock,
}

_KIND_BLOCKS = {
    "muth": ("cobweb",),
    "aiyagari": ("economy",),
    "ks": ("economy", "fixed_point"),
    "temporary-eq": ("economy", "simulation"),
    "rl-mdp": ("mdp",),
    "bistable": ("well",),
}


class ScenarioConfig(_Strict):
    kind: Literal["muth", "aiyagari", "ks", "temporary-eq", "rl-mdp", "bistable"]
    seed: int = 0
    out: Optional[str] = None
    cobweb: Optional[CobwebBlock] = None
    economy: Optional[EconomyBlock] = None
    fixed_point: Optional[FixedPointBlock] = None
    simulation: Optional[SimulationBlock] = None
    mdp: Optional[MdpBlock] = None
    well: Optional[WellBlock] = None


def load_config(path) -> ScenarioConfig:
    """Parse and strictly validate one scenario config.

    Raises ScenarioError with a report listing every offending key; blocks
    the scenario kind does not use are offenses too.
    """
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except (OSError, tomli.TOMLDecodeError) as e:
        raise ScenarioError(2, {
            "error": "config",
            "config": str(path),
            "message": f"cannot parse config: {e}",
        }) from e
    try:
        cfg = ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        keys = sorted({".".join(str(p) for p in err["loc"]) for err in e.errors()})
        details = [
            {"key": ".".join(str(p) for p in err["loc"]), "problem": err["msg"]}
            for err in e.errors()
        ]
        raise ScenarioError(2, {
            "error": "validation",
            "config": str(path),
            "offending_keys": keys,
            "message": "invalid configuration: " + ", ".join(keys),
            "details": details,
        }) from e
    foreign = [
        name for name in _BLOCK_TYPES
        if getattr(cfg, name) is not None and name not in _KIND_BLOCKS[cfg.kind]
    ]
    if foreign:
        raise ScenarioError(2, {
            "error": "validation",
            "config": str(path),
            "offending_keys": foreign,
            "message": f"blocks not used by scenario kind {cfg.kind!r}: " + ", ".join(foreign),
        })
    # materialize defaults for the blocks the kind does use
    fills = {
        name: _BLOCK_TYPES[name]()
        for name in _KIND_BLOCKS[cfg.kind]
        if getattr(cfg, name) is None
    }
    return cfg.model_copy(update=fills) if fills else cfg


def resolved_config(cfg: ScenarioConfig, seed: int) -> dict:
    """Fully resolved parameters that define the run's identity.

    The output location is deliberately excluded: the same scenario written
    elsewhere is the same run and must hash (and reproduce) identically.
    """
    out = {"kind": cfg.kind, "seed": seed}
    for name in _KIND_BLOCKS[cfg.kind]:
        out[name] = getattr(cfg, name).model_dump()
    return out


# ---------------------------------------------------------------------------
# Scenario pipelines


def _run_muth(cfg, seed, out, chash):
    blk = cfg.cobweb
    params = CobwebParams(blk.b_d, blk.gamma, blk.rho, blk.sigma_eps)
    if blk.belief == "rls":
        belief = RlsCobwebBelief()
    elif blk.belief == "sample-average":
        belief = SampleAverageCobwebBelief()
    elif blk.belief == "adaptive":
        belief = AdaptiveCobwebBelief(blk.gain)
    else:
        belief = RationalCobwebBelief(params)
    path = run_cobweb(params, belief, blk.T, RngStream(seed, 0))
    path.to_csv(out / "cobweb.csv", config_hash=chash)
    tail = slice(-min(1000, blk.T), None)
    fp = t_map_fixed_point(params)
    headline = {
        "terminal_coefficients": [float(v) for v in path.theta[-1]],
        "ree_fixed_point": [float(fp[0]), float(fp[1])],
        "tail_mean_abs_forecast_error": float(
            np.mean(np.abs(path.p_realized[tail] - path.p_expected[tail]))
        ),
    }
    return ["cobweb.csv"], headline


def _run_aiyagari(cfg, seed, out, chash):
    params = cfg.economy.build()
    ss = aiyagari_steady_state(params)
    mass = ss.g.g.sum(axis=1)
    rows = zip(params.asset_nodes(), mass)
    write_csv(out / "wealth.csv", ["asset", "mass"], rows, cfg_hash=chash)
    headline = {
        "r": ss.r,
        "w": ss.w,
        "k": ss.k,
        "l": ss.l,
        "market_residual": ss.residual,
    }
    return ["wealth.csv"], headline


def _run_ks(cfg, seed, out, chash):
    params = cfg.economy.build()
    blk = cfg.fixed_point
    rep = ks_fixed_point(
        params,
        blk.plm,
        outer_tol=blk.outer_tol,
        max_outer=blk.max_outer,
        t_periods=blk.t_periods,
        rng=RngStream(seed, 0),
        damping=blk.damping,
        burn_in=blk.burn_in,
    )
    write_json(out / "fixed_point.json", {"config_hash": chash, **rep.to_dict()})
    ncoef = rep.coef_path.shape[1]
    cols = ["iteration"] + [f"coef{j}" for j in range(ncoef)]
    rows = ([i, *map(float, row)] for i, row in enumerate(rep.coef_path))
    write_csv(out / "coef_path.csv", cols, rows, cfg_hash=chash)
    headline = {
        "converged": rep.converged,
        "iterations": rep.iterations,
        "terminal_coefficients": [float(v) for v in rep.coefficients],
        "orthogonality": rep.orthogonality,
        "r2": rep.r2,
    }
    return ["fixed_point.json", "coef_path.csv"], headline


def _run_temporary_eq(cfg, seed, out, chash):
    params = cfg.economy.build()
    blk = cfg.simulation
    ss = aiyagari_steady_state(params)
    if blk.plm == "constant":
        belief = ConstantPriceBelief.from_steady_state(ss)
    elif blk.plm == "moment":
        belief = MomentBelief(params, l_star=ss.l, quad_nodes=blk.quad_nodes)
    else:
        belief = PricePlmBelief(params, quad_nodes=blk.quad_nodes)
    res = run_temporary_equilibrium(
        params, belief, ss.g, blk.T,
        rng=RngStream(seed, 0), cadence=blk.cadence, learn=blk.learn,
    )
    write_csv(out / "simulation.csv", SIM_CSV_COLUMNS, records_rows(res.records), cfg_hash=chash)
    distances = {}
    for norm in ("mean-error", "rmse"):
        try:
            distances[norm] = criterion3a_distance(res.records, blk.window, norm)
        except ValueError:
            distances[norm] = None
    headline = {
        "terminal_coefficients": [float(v) for v in belief.coefficients()],
        "criterion3a": distances,
        "walras_max": res.walras_max,
        "clamp_count": res.clamp_count,
        "n_resolves": res.n_resolves,
    }
    return ["simulation.csv"], headline


def _run_rl_mdp(cfg, seed, out, chash):
    blk = cfg.mdp
    mdp = random_mdp(
        blk.n_states, blk.n_actions, blk.beta, RngStream(seed, 0), min_gap=blk.min_gap
    )
    schedule = StepSizeSchedule("power", c=blk.schedule_c, a=blk.schedule_a)
    qt = q_learn(mdp, blk.epsilon, schedule, blk.steps, RngStream(seed, 1))
    v_star, pol_star = solve_mdp_exact(mdp)
    qt.to_csv(out / "qtable.csv", config_hash=chash)
    values_to_csv(v_star, qt.visits.sum(axis=1), out / "values.csv", config_hash=chash)
    greedy = qt.greedy_policy()
    headline = {
        "policy_match": bool(np.array_equal(greedy, pol_star)),
        "matched_states": int(np.sum(greedy == pol_star)),
        "sup_value_gap": float(np.max(np.abs(qt.q.max(axis=1) - v_star))),
    }
    return ["qtable.csv", "values.csv"], headline


def _run_bistable(cfg, seed, out, chash):
    blk = cfg.well
    spec = DoubleWellSpec(blk.c4, blk.c2, blk.sigma, blk.dt, blk.kind)
    path = simulate_em(spec, blk.x0, blk.steps, RngStream(seed, 0))
    grid = np.linspace(blk.grid_lo, blk.grid_hi, blk.grid_n)
    dens = stationary_density(spec, grid)
    stats = hopping_stats(path, blk.threshold)
    lin = linearized_comparison(spec)
    path_to_csv(path, out / "path.csv", thin=blk.thin, config_hash=chash)
    density_to_csv(grid, dens, out / "density.csv", config_hash=chash)
    hist, edges = np.histogram(path, bins=20, range=(blk.grid_lo, blk.grid_hi), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    l1 = float(np.sum(np.abs(hist - stationary_density(spec, centers))) * width)
    hopping_to_json({"config_hash": chash, **stats, "linearized": lin}, out / "hopping.json")
    headline = {
        "occupancy": [float(v) for v in stats["occupancy"]],
        "crossings": stats["crossings"],
        "l1_density_distance": l1,
    }
    return ["path.csv", "density.csv", "hopping.json"], headline


_RUNNERS = {
    "muth": _run_muth,
    "aiyagari": _run_aiyagari,
    "ks": _run_ks,
    "temporary-eq": _run_temporary_eq,
    "rl-mdp": _run_rl_mdp,
    "bistable": _run_bistable,
}


def resolve_out(cfg: ScenarioConfig, config_path, out_override, in_batch: bool) -> Path:
    """Output directory precedence: --out, then the config, then runs/<stem>.

    In a batch, --out names a parent and each run gets its own stem-named
    subdirectory so parallel runs cannot collide.
    """
    stem = Path(config_path).stem
    if out_override is not None:
        base = Path(out_override)
        return base / stem if in_batch else base
    if cfg.out is not None:
        return Path(cfg.out)
    return Path("runs") / stem


def run_scenario(config_path, seed=None, out=None, in_batch: bool = False) -> Path:
    """Execute one scenario config; returns the manifest path.

    seed/out override the config. Raises ScenarioError with a
    machine-readable report on any failure.
    """
    cfg = load_config(config_path)
    use_seed = cfg.seed if seed is None else int(seed)
    out_dir = resolve_out(cfg, config_path, out, in_batch)
    resolved = resolved_config(cfg, use_seed)
    chash = config_hash(resolved)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        outputs, headline = _RUNNERS[cfg.kind](cfg, use_seed, out_dir, chash)
    except ScenarioError:
        raise
    except Exception as e:
        raise ScenarioError(1, {
            "error": "runtime",
            "config": str(config_path),
            "kind": cfg.kind,
            "exception": type(e).__name__,
            "message": str(e),
        }) from e
    wall = time.perf_counter() - t0
    return write_manifest(out_dir, cfg.kind, resolved, use_seed, outputs, wall, headline)


def _worker(args) -> dict:
    config_path, seed, out, in_batch = args
    try:
        manifest = run_scenario(config_path, seed, out, in_batch)
        return {"config": str(config_path), "status": "ok", "manifest": str(manifest)}
    except ScenarioError as e:
        return {"config": str(config_path), "status": "error", "code": e.code, "report": e.report}


@click.group()
@click.version_option(version=__version__, prog_name="tempeq")
def main():
    """Seeded scenario runner; every run leaves CSV artifacts and a manifest."""


@main.command(name="run")
@click.argument("configs", nargs=-1, required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default=None,
              help="Output directory (parent of per-config directories in a batch).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Independent configs to run in parallel processes.")
def run_command(configs, seed, out, jobs):
    """Run scenario CONFIGS (TOML files)."""
    in_batch = len(configs) > 1
    # validate everything up front: a batch fails before any work starts
    failures = []
    planned = {}
    for path in configs:
        try:
            cfg = load_config(path)
        except ScenarioError as e:
            failures.append(e.report)
            continue
        dest = resolve_out(cfg, path, out, in_batch).resolve()
        planned.setdefault(dest, []).append(str(path))
    for dest, owners in planned.items():
        if len(owners) > 1:
            failures.append({
                "error": "validation",
                "config": ", ".join(owners),
                "message": f"output directory collision at {dest}",
            })
    if failures:
        for report in failures:
            click.echo(json.dumps(report, sort_keys=True), err=True)
        raise SystemExit(2)

    items = [(path, seed, out, in_batch) for path in configs]
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, items))
    else:
        results = [_worker(item) for item in items]

    exit_code = 0
    for res in results:
        if res["status"] == "ok":
            click.echo(json.dumps(res, sort_keys=True))
        else:
            click.echo(json.dumps(res["report"], sort_keys=True), err=True)
            exit_code = max(exit_code, res["code"])
    if exit_code:
        raise SystemExit(exit_code)


@main.command(name="compare")
@click.argument("manifest_a", type=click.Path())
@click.argument("manifest_b", type=click.Path())
def compare_command(manifest_a, manifest_b):
    """Diff two run manifests: config changes and headline statistics."""
    try:
        a = read_manifest(manifest_a)
        b = read_manifest(manifest_b)
        diff = diff_manifests(a, b)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        click.echo(json.dumps({"error": "compare", "message": str(e)}, sort_keys=True), err=True)
        raise SystemExit(2)
    click.echo(json.dumps(diff, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
