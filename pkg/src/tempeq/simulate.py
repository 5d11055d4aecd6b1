"""Temporary-equilibrium simulation and the learning fixed point.

One period = markets clear given today's distribution and beliefs:
aggregate the histogram, price capital and labor off the firm conditions,
let households save according to the value table solved under the current
belief coefficients, push the distribution forward, then fold the realized
prices back into the belief. Learning and equilibrium run in one sweep;
the Bellman table is only re-solved when coefficients have drifted.

The batch driver ks_fixed_point alternates long simulations under frozen
coefficients with per-transition least squares until the perceived law of
motion reproduces itself. Consistency diagnostics compare recorded
forecasts against realized prices.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .beliefs import (
    MomentBelief,
    Observation,
    PricePlmBelief,
    build_forecast_grid,
    plm_prior,
)
from .economy import (
    EconomyParams,
    ForecastGrid,
    Histogram,
    TransitionOperator,
    ValueTable,
    aiyagari_steady_state,
    firm_prices,
    policy_at,
    solve_bellman,
)
from .learning import CoefficientMonitor
from .stoch import RngStream, simulate_chain

SIM_CSV_COLUMNS = (
    "t", "z_index", "k", "l", "w", "r",
    "forecast_w", "forecast_r", "realized_w", "realized_r", "coef_hash",
)


@dataclass(frozen=True, slots=True)
class SimRecord:
    """One period of a temporary-equilibrium path.

    forecast_* hold the belief's prediction of next period's prices on
    the branch of the z state that then realized; realized_* hold the
    prices that actually obtained next period. Both are NaN on the final
    period, where no next period exists. coef_hash fingerprints the
    belief snapshot the forecast was made under.
    """

    t: int
    z_index: int
    k: float
    l: float
    w: float
    r: float
    forecast_w: float
    forecast_r: float
    realized_w: float
    realized_r: float
    coef_hash: str


class ClampRateError(RuntimeError):
    """Too many policy reads fell off the forecast lattice; the grid does
    not cover the realized aggregate dynamics."""


class OscillationError(RuntimeError):
    """Fixed-point driver is cycling instead of settling; carries the
    report accumulated so far."""

    def __init__(self, report):
        self.report = report
        super().__init__(
            "coefficient changes stopped decreasing over the oscillation window: "
            + ", ".join(f"{c:.3e}" for c in report.changes[-5:])
        )


@dataclass
class SimResult:
    """SimRecord series plus the terminal state needed to continue a run."""

    records: list
    g: Histogram
    table: ValueTable
    fgrid: ForecastGrid
    n_resolves: int
    clamp_count: int
    walras_max: float

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _default_fgrid(params, belief, k0, l0, n_nodes, span):
    kind = getattr(belief, "model_kind", "")
    if kind == "moment-plm":
        return build_forecast_grid(params, "moment", k0, l0, n_nodes, span)
    if kind == "price-plm":
        return build_forecast_grid(params, "price", k0, l0, n_nodes, span)
    if kind == "constant-price":
        return ForecastGrid(np.log(belief.w)[:, None], belief.w[:, None], belief.r[:, None])
    raise ValueError(f"no default forecast grid for belief kind {kind!r}; pass fgrid")


def _coef_hash(belief) -> str:
    return hashlib.sha256(belief.snapshot_json().encode()).hexdigest()[:12]


def run_temporary_equilibrium(
    params: EconomyParams,
    belief,
    g0: Histogram,
    T: int,
    rng: RngStream | None = None,
    cadence: float = 1e-3,
    fgrid: ForecastGrid | None = None,
    z_path: np.ndarray | None = None,
    learn: bool = True,
    table: ValueTable | None = None,
    v_init: np.ndarray | None = None,
    clamp_ceiling: float = 0.05,
    walras_tol: float = 1e-8,
    bellman_tol: float = 1e-7,
    n_nodes: int = 9,
    span: float = 0.25,
) -> SimResult:
    """Simulate T periods of temporary equilibrium under a belief model.

    Per period: aggregate the histogram, set (w, r) from the firm
    conditions at the realized z, read the savings policy from the value
    table at the belief's forecast-state coordinate, push the
    distribution forward, then (when learning) update the belief with
    the realized prices and re-solve the Bellman once the coefficient
    sup-norm drift since the last solve exceeds `cadence`.

    The z path comes from `rng` unless an index path is passed
    explicitly; the batch driver passes one to hold randomness fixed
    across outer iterations. Raises ClampRateError when the share of
    policy reads falling off the forecast lattice exceeds
    `clamp_ceiling`, and RuntimeError if the per-period goods-market
    residual ever exceeds `walras_tol`.
    """
    if T < 1:
        raise ValueError("need at least one period")
    if z_path is None:
        if rng is None:
            raise ValueError("pass rng or an explicit z_path")
        z_path = simulate_chain(params.z_chain, T, rng)
    else:
        z_path = np.asarray(z_path, dtype=np.int64)
        if z_path.size != T:
            raise ValueError("z_path length must equal T")

    grid = params.asset_nodes()
    ylev = params.income_chain.states
    z_states = params.z_chain.states
    alpha = params.alpha_k
    delta = params.delta

    g = np.array(g0.g, dtype=float)
    k0 = float(grid @ g.sum(axis=1))
    l0 = float(g.sum(axis=0) @ ylev)
    if fgrid is None:
        fgrid = _default_fgrid(params, belief, k0, l0, n_nodes, span)
    if table is None:
        table = solve_bellman(params, belief, fgrid, v_init=v_init, tol=bellman_tol)
    monitor = CoefficientMonitor()
    monitor.rebase(belief.coefficients())

    nz = z_states.size
    k_s = np.empty(T)
    l_s = np.empty(T)
    w_s = np.empty(T)
    r_s = np.empty(T)
    fw_s = np.full(T, np.nan)
    fr_s = np.full(T, np.nan)
    hashes: list[str] = []

    prev_obs = None
    n_resolves = 0
    clamp_count = 0
    walras_max = 0.0

    for t in range(T):
        iz = int(z_path[t])
        z = float(z_states[iz])
        k = float(grid @ g.sum(axis=1))
        l = float(g.sum(axis=0) @ ylev)
        w, r = firm_prices(params, k, l, z)
        obs = Observation(iz, k, l, w, r)

        pol, clamped = policy_at(table, fgrid, iz, belief.coordinate(obs))
        clamp_count += bool(clamped)

        # goods market from the histogram and policies, not from the identity
        cons = w * ylev[None, :] + (1.0 + r) * grid[:, None] - pol
        c_agg = float((g * cons).sum())
        k_next = float((g * pol).sum())
        walras = abs(c_agg + k_next - (1.0 - delta) * k - z * k**alpha * l ** (1.0 - alpha))
        walras_max = max(walras_max, walras)
        if walras > walras_tol:
            raise RuntimeError(f"goods-market residual {walras:.3e} at t={t} exceeds {walras_tol:.1e}")

        op = TransitionOperator.from_policy(pol, grid, params.income_chain)
        g_next = op.push_forward(g)

        if learn and prev_obs is not None:
            belief.update(obs, prev_obs)
            if monitor.drift(belief.coefficients()) > cadence:
                table = solve_bellman(params, belief, fgrid, v_init=table.v, tol=bellman_tol)
                monitor.rebase(belief.coefficients())
                n_resolves += 1

        k_s[t], l_s[t], w_s[t], r_s[t] = k, l, w, r
        hashes.append(_coef_hash(belief))
        if t + 1 < T:
            fc = belief.forecast(obs)
            fw_s[t], fr_s[t] = fc[int(z_path[t + 1])]

        prev_obs = obs
        g = g_next
        if t + 1 >= 200 and clamp_count / (t + 1) > clamp_ceiling:
            raise ClampRateError(
                f"{clamp_count} of {t + 1} policy reads fell off the forecast lattice"
            )

    if clamp_count / T > clamp_ceiling:
        raise ClampRateError(f"{clamp_count} of {T} policy reads fell off the forecast lattice")

    rw = np.full(T, np.nan)
    rr = np.full(T, np.nan)
    rw[:-1] = w_s[1:]
    rr[:-1] = r_s[1:]
    records = [
        SimRecord(
            t=t, z_index=int(z_path[t]), k=float(k_s[t]), l=float(l_s[t]),
            w=float(w_s[t]), r=float(r_s[t]),
            forecast_w=float(fw_s[t]), forecast_r=float(fr_s[t]),
            realized_w=float(rw[t]), realized_r=float(rr[t]),
            coef_hash=hashes[t],
        )
        for t in range(T)
    ]
    return SimResult(records, Histogram(g), table, fgrid, n_resolves, clamp_count, walras_max)


def records_rows(records) -> list[dict]:
    """SimRecord series as one dict per period in stable column order."""
    return [{c: getattr(rec, c) for c in SIM_CSV_COLUMNS} for rec in records]


# ---------------------------------------------------------------------------
# Fixed-point driver


@dataclass
class FixedPointReport:
    """Outcome of the batch learning fixed point.

    changes[i] is the sup-norm coefficient movement applied at outer
    iteration i; orthogonality and r2 are measured per regression target
    on a fresh validation path under the terminal coefficients.
    """

    plm_kind: str
    converged: bool
    iterations: int
    coefficients: np.ndarray
    coef_path: np.ndarray
    changes: np.ndarray
    orthogonality: dict
    r2: dict

    def to_dict(self) -> dict:
        return {
            "plm_kind": self.plm_kind,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "coefficients": [float(c) for c in self.coefficients],
            "coef_path": [[float(c) for c in row] for row in self.coef_path],
            "changes": [float(c) for c in self.changes],
            "orthogonality": {k: float(v) for k, v in self.orthogonality.items()},
            "r2": {k: (None if v is None else float(v)) for k, v in self.r2.items()},
        }


def _record_arrays(records) -> dict:
    return {
        "iz": np.array([rec.z_index for rec in records], dtype=np.int64),
        "k": np.array([rec.k for rec in records]),
        "w": np.array([rec.w for rec in records]),
        "r": np.array([rec.r for rec in records]),
    }


def plm_regression_samples(records, plm_kind: str, burn_in: int, nz: int):
    """Per z-transition regression blocks from a simulated path.

    Returns {(iz, jz): (X, Y)} where Y has one column per target: log k'
    for the moment law, (log w', r') for the price law. Transitions with
    t < burn_in are dropped.
    """
    arr = _record_arrays(records)
    T = arr["iz"].size
    t_idx = np.arange(T - 1)
    t_idx = t_idx[t_idx >= burn_in]
    out = {}
    for a in range(nz):
        for b in range(nz):
            sel = t_idx[(arr["iz"][t_idx] == a) & (arr["iz"][t_idx + 1] == b)]
            if plm_kind == "moment":
                X = np.column_stack([np.ones(sel.size), np.log(arr["k"][sel])])
                Y = np.log(arr["k"][sel + 1])[:, None]
            elif plm_kind == "price":
                X = np.column_stack([np.ones(sel.size), np.log(arr["w"][sel]), arr["r"][sel]])
                Y = np.column_stack([np.log(arr["w"][sel + 1]), arr["r"][sel + 1]])
            else:
                raise ValueError(f"unknown PLM kind {plm_kind!r}")
            out[(a, b)] = (X, Y)
    return out


def _ridge_dropping_flats(X, y, prior, ridge) -> np.ndarray | None:
    """Anchored least squares on one cell: solve
    (X'X + ridge*I) beta = X'y + ridge*prior after dropping non-intercept
    columns with no variation (their coefficient is set to 0). None when
    the cell is too thin.

    The anchor matches the recursive estimator's initialization, so batch
    re-estimation and online updating resolve a nearly collinear regressor
    pair the same way instead of scattering along the unidentified ridge.

    The flatness cutoff sits far above solver-tolerance wobble (~1e-7 in
    the regressors, which would otherwise be fit as a spurious slow
    transient) and far below the variation of any genuinely moving
    aggregate path (~1e-3 or more)."""
    n, p = X.shape
    keep = [0]
    for j in range(1, p):
        col = X[:, j]
        if col.std() > 1e-6 * (1.0 + abs(col.mean())):
            keep.append(j)
    if n < len(keep) + 1:
        return None
    beta = np.zeros(p)
    Xk = X[:, keep]
    lhs = Xk.T @ Xk + ridge * np.eye(len(keep))
    rhs = Xk.T @ y + ridge * prior[keep]
    beta[keep] = np.linalg.solve(lhs, rhs)
    return beta


def _plm_targets(plm_kind: str) -> list[str]:
    return ["log_k"] if plm_kind == "moment" else ["log_w", "r"]


def _estimate_plm(records, plm_kind, burn_in, nz, fallback_flat, ridge=1e-4):
    """Stacked per-cell anchored-regression estimates in coefficient layout
    order; cells without enough data keep their fallback block."""
    samples = plm_regression_samples(records, plm_kind, burn_in, nz)
    targets = _plm_targets(plm_kind)
    priors = plm_prior(plm_kind)
    dim = 2 if plm_kind == "moment" else 3
    block = nz * nz * dim
    flat = np.array(fallback_flat, dtype=float).copy()
    for m, name in enumerate(targets):
        prior = priors[name]
        for a in range(nz):
            for b in range(nz):
                X, Y = samples[(a, b)]
                beta = _ridge_dropping_flats(X, Y[:, m], prior, ridge) if X.shape[0] else None
                if beta is not None:
                    lo = m * block + (a * nz + b) * dim
                    flat[lo: lo + dim] = beta
    return flat


def _plm_validation(records, plm_kind, burn_in, nz, flat):
    """Orthogonality sup-norm and pooled R^2 per target under frozen
    coefficients on an independent path."""
    samples = plm_regression_samples(records, plm_kind, burn_in, nz)
    targets = _plm_targets(plm_kind)
    dim = 2 if plm_kind == "moment" else 3
    block = nz * nz * dim
    orth = {}
    r2 = {}
    for m, name in enumerate(targets):
        worst = 0.0
        ssr = 0.0
        sst = 0.0
        for a in range(nz):
            for b in range(nz):
                X, Y = samples[(a, b)]
                if X.shape[0] == 0:
                    continue
                lo = m * block + (a * nz + b) * dim
                resid = Y[:, m] - X @ flat[lo: lo + dim]
                worst = max(worst, float(np.max(np.abs(resid @ X / X.shape[0]))))
                ssr += float(resid @ resid)
                sst += float(np.sum((Y[:, m] - Y[:, m].mean()) ** 2))
        orth[name] = worst
        # a target with no real variation has no meaningful R^2
        r2[name] = 1.0 - ssr / sst if sst > 1e-12 else None
    return orth, r2


def ks_fixed_point(
    params: EconomyParams,
    plm_kind: str,
    outer_tol: float = 1e-4,
    max_outer: int = 60,
    t_periods: int = 4000,
    rng: RngStream | None = None,
    damping: float = 0.5,
    burn_in: int = 500,
    n_nodes: int = 9,
    span: float = 0.25,
    validation_periods: int | None = None,
    oscillation_window: int = 10,
    bellman_tol: float = 1e-7,
    ridge: float = 1e-4,
    steady=None,
) -> FixedPointReport:
    """Batch learning: simulate under frozen coefficients, re-estimate the
    perceived law per z-transition, relax by `damping`, repeat.

    The same z path and initial distribution are reused every outer
    iteration, so each iteration applies a deterministic map to the
    coefficients. Stops once the applied sup-norm change falls below
    outer_tol; raises OscillationError when the change sequence has not
    decreased over `oscillation_window` iterations. Orthogonality and
    R^2 are then measured on a freshly drawn path of
    `validation_periods` (defaults to t_periods) under the terminal
    coefficients.
    """
    if plm_kind not in ("moment", "price"):
        raise ValueError(f"unknown PLM kind {plm_kind!r}")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if rng is None:
        rng = RngStream(0, 0)
    if burn_in >= t_periods - 1:
        raise ValueError("burn-in leaves no regression sample")

    ss = steady if steady is not None else aiyagari_steady_state(params)
    nz = params.z_chain.states.size
    if plm_kind == "moment":
        belief = MomentBelief(params, l_star=ss.l, ridge=ridge)
    else:
        belief = PricePlmBelief(params, ridge=ridge)
    fgrid = build_forecast_grid(params, plm_kind, ss.k, ss.l, n_nodes, span)
    z_fit = simulate_chain(params.z_chain, t_periods, rng)

    theta = belief.coefficients().copy()
    coef_path = [theta.copy()]
    changes: list[float] = []
    converged = False
    v_warm = None

    def _report() -> FixedPointReport:
        return FixedPointReport(
            plm_kind=plm_kind, converged=converged, iterations=len(changes),
            coefficients=theta.copy(), coef_path=np.array(coef_path),
            changes=np.array(changes), orthogonality={}, r2={},
        )

    for _ in range(max_outer):
        res = run_temporary_equilibrium(
            params, belief, ss.g, t_periods, z_path=z_fit, fgrid=fgrid,
            learn=False, v_init=v_warm, bellman_tol=bellman_tol,
        )
        v_warm = res.table.v
        theta_hat = _estimate_plm(res.records, plm_kind, burn_in, nz, theta, ridge=ridge)
        theta_new = (1.0 - damping) * theta + damping * theta_hat
        change = float(np.max(np.abs(theta_new - theta)))
        theta = theta_new
        belief.set_coefficients(theta)
        coef_path.append(theta.copy())
        changes.append(change)
        if change < outer_tol:
            converged = True
            break
        if len(changes) > oscillation_window and change >= changes[-1 - oscillation_window]:
            raise OscillationError(_report())

    t_val = validation_periods if validation_periods is not None else t_periods
    res_val = run_temporary_equilibrium(
        params, belief, ss.g, t_val, rng=rng.child(1), fgrid=fgrid,
        learn=False, v_init=v_warm, bellman_tol=bellman_tol,
    )
    orth, r2 = _plm_validation(res_val.records, plm_kind, burn_in, nz, theta)
    report = _report()
    report.orthogonality = orth
    report.r2 = r2
    return report


# ---------------------------------------------------------------------------
# Consistency diagnostics


def _forecast_errors(records):
    """(log-wage error, return error) on rows where forecast and realized
    next prices both exist."""
    fw = np.array([rec.forecast_w for rec in records])
    fr = np.array([rec.forecast_r for rec in records])
    rw = np.array([rec.realized_w for rec in records])
    rr = np.array([rec.realized_r for rec in records])
    ok = np.isfinite(fw) & np.isfinite(rw)
    return np.log(rw[ok]) - np.log(fw[ok]), rr[ok] - fr[ok], ok


def _ks_statistic(e: np.ndarray, scale: float) -> float:
    if scale <= 0.0:
        return 0.0 if np.max(np.abs(e), initial=0.0) == 0.0 else np.inf
    z = np.sort(e / scale)
    n = z.size
    cdf = norm.cdf(z)
    hi = np.max(np.arange(1, n + 1) / n - cdf)
    lo = np.max(cdf - np.arange(0, n) / n)
    return float(max(hi, lo))


def criterion3a_distance(records, window: int, norm_kind: str, residual_scales=None) -> dict:
    """Forecast/realization distance per price over the trailing window.

    norm_kind selects mean-error (mean of realized minus forecast), RMSE,
    or the KS statistic of standardized errors against a standard normal.
    Wage errors are in logs, return errors in levels, matching the units
    the perceived laws are estimated in. The KS variant standardizes by
    `residual_scales` (per-price dict, e.g. from the belief's
    residual_scale()) when given, else by the sample sd.
    """
    if norm_kind not in ("mean-error", "rmse", "ks"):
        raise ValueError(f"unknown norm kind {norm_kind!r}")
    if window < 30:
        raise ValueError("window below 30 periods makes the statistic meaningless")
    e_w, e_r, _ = _forecast_errors(records)
    if e_w.size < window:
        raise ValueError(f"only {e_w.size} usable periods for a window of {window}")
    e_w = e_w[-window:]
    e_r = e_r[-window:]
    out = {}
    for name, e in (("w", e_w), ("r", e_r)):
        if norm_kind == "mean-error":
            out[name] = float(e.mean())
        elif norm_kind == "rmse":
            out[name] = float(np.sqrt(np.mean(e**2)))
        else:
            if residual_scales is not None and name in residual_scales:
                s = float(residual_scales[name])
            else:
                s = float(e.std(ddof=1)) if e.size > 1 else 0.0
            out[name] = _ks_statistic(e, s)
    return out


_REGRESSOR_FIELDS = {
    "const": lambda rec: 1.0,
    "k": lambda rec: rec.k,
    "log_k": lambda rec: np.log(rec.k),
    "w": lambda rec: rec.w,
    "log_w": lambda rec: np.log(rec.w),
    "r": lambda rec: rec.r,
    "l": lambda rec: rec.l,
}


def sce_diagnostic(records, regressors=("const", "log_w", "r")) -> dict:
    """Sample orthogonality of forecast errors against conditioning
    regressors: mean of error times x over usable periods, per price.

    Near-zero vectors mean realized prices do not systematically
    disappoint the beliefs along any listed direction.
    """
    unknown = [name for name in regressors if name not in _REGRESSOR_FIELDS]
    if unknown:
        raise ValueError(f"unknown regressors {unknown}; choose from {sorted(_REGRESSOR_FIELDS)}")
    e_w, e_r, ok = _forecast_errors(records)
    if e_w.size < 100:
        raise ValueError(f"need at least 100 usable periods, have {e_w.size}")
    rows = [rec for rec, use in zip(records, ok) if use]
    X = np.array([[_REGRESSOR_FIELDS[name](rec) for name in regressors] for rec in rows])
    return {"w": X.T @ e_w / e_w.size, "r": X.T @ e_r / e_r.size}


def regime_switch_run(
    params: EconomyParams,
    params_after: EconomyParams,
    t_switch: int,
    belief,
    g0: Histogram,
    T: int,
    rng: RngStream,
    **kwargs,
) -> SimResult:
    """Online run with a parameter change at t_switch: the belief keeps
    its state and re-learns under the new regime; the forecast lattice is
    rebuilt around the aggregates at the switch. The record at
    t_switch - 1 has no forecast/realized pair (the seam between legs)."""
    if not 0 < t_switch < T:
        raise ValueError("switch must fall strictly inside the run")
    if params_after.z_chain.states.size != params.z_chain.states.size:
        raise ValueError("regimes must share the z-state count")
    z_path = simulate_chain(params.z_chain, T, rng)
    leg1 = run_temporary_equilibrium(
        params, belief, g0, t_switch, z_path=z_path[:t_switch], **kwargs,
    )
    grid = params_after.asset_nodes()
    k1 = float(grid @ leg1.g.g.sum(axis=1))
    l1 = float(leg1.g.g.sum(axis=0) @ params_after.income_chain.states)
    fgrid2 = _default_fgrid(
        params_after, belief, k1, l1,
        kwargs.get("n_nodes", 9), kwargs.get("span", 0.25),
    )
    kwargs2 = {k: v for k, v in kwargs.items() if k not in ("fgrid", "n_nodes", "span")}
    leg2 = run_temporary_equilibrium(
        params_after, belief, leg1.g, T - t_switch, z_path=z_path[t_switch:],
        fgrid=fgrid2, v_init=leg1.table.v, **kwargs2,
    )
    records = leg1.records + [replace(rec, t=rec.t + t_switch) for rec in leg2.records]
    return SimResult(
        records, leg2.g, leg2.table, fgrid2,
        leg1.n_resolves + leg2.n_resolves,
        leg1.clamp_count + leg2.clamp_count,
        max(leg1.walras_max, leg2.walras_max),
    )
