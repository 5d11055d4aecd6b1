"""Production economy with heterogeneous households.

Households face idiosyncratic income risk and pick savings on an asset
grid. A representative firm rents capital and effective labor at
marginal products. The Bellman solver runs on an extended household
state (asset, income, aggregate state, forecast node) so that any
belief model able to place forecasts on a node lattice can price
continuation values. Cross-sectional distributions are histograms
pushed forward by lottery transition operators.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .stoch import MarkovChain, discretize_ar1, find_root, stationary_distribution

__all__ = [
    "GridSpec",
    "EconomyParams",
    "Histogram",
    "ValueTable",
    "ForecastGrid",
    "ForecastAtoms",
    "AssetLottery",
    "TransitionOperator",
    "BellmanConvergenceError",
    "SteadyState",
    "firm_prices",
    "capital_demand",
    "crra_utility",
    "solve_bellman",
    "policy_at",
    "apply_lottery",
    "step_distribution",
    "aggregate",
    "stationary_histogram",
    "aiyagari_steady_state",
    "save_value_table",
    "load_value_table",
    "save_histogram",
    "load_histogram",
]


@dataclass(frozen=True)
class GridSpec:
    """Grid with nodes bunched toward the lower end when curvature > 1."""

    lo: float
    hi: float
    count: int
    curvature: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("grid upper bound must exceed lower bound")
        if self.count < 2:
            raise ValueError("grid needs at least 2 nodes")
        if self.curvature <= 0.0:
            raise ValueError("grid curvature must be positive")

    def nodes(self) -> np.ndarray:
        u = np.linspace(0.0, 1.0, self.count)
        return self.lo + (self.hi - self.lo) * u**self.curvature


def _default_income_chain() -> MarkovChain:
    # persistent idiosyncratic income in logs, exponentiated and scaled
    # so the stationary mean of the level is exactly 1
    logs = discretize_ar1(0.9, 0.1, 2)
    levels = np.exp(logs.states)
    pi = stationary_distribution(logs)
    levels = levels / float(pi @ levels)
    return MarkovChain(levels, logs.P)


def _default_z_chain() -> MarkovChain:
    p = 0.875
    return MarkovChain(
        np.array([0.99, 1.01]),
        np.array([[p, 1.0 - p], [1.0 - p, p]]),
    )


@dataclass(frozen=True)
class EconomyParams:
    """Preference, technology and grid calibration.

    beta_disc may be 0 (a fully myopic household is a valid limit used
    in tests); sigma_c = 1 selects log utility.
    """

    beta_disc: float = 0.99
    sigma_c: float = 2.0
    alpha_k: float = 0.36
    delta: float = 0.025
    a_min: float = 0.0
    asset_grid: GridSpec = GridSpec(0.0, 150.0, 100, 3.0)
    income_chain: MarkovChain = None
    z_chain: MarkovChain = None

    def __post_init__(self):
        if self.income_chain is None:
            object.__setattr__(self, "income_chain", _default_income_chain())
        if self.z_chain is None:
            object.__setattr__(self, "z_chain", _default_z_chain())
        if not 0.0 <= self.beta_disc < 1.0:
            raise ValueError("beta_disc must lie in [0, 1)")
        if self.sigma_c <= 0.0:
            raise ValueError("sigma_c must be positive")
        if not 0.0 < self.alpha_k < 1.0:
            raise ValueError("alpha_k must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.asset_grid.lo != self.a_min:
            raise ValueError("asset grid must start at a_min")
        if np.any(self.income_chain.states <= 0.0):
            raise ValueError("income levels must be positive")
        if np.any(self.z_chain.states <= 0.0):
            raise ValueError("productivity levels must be positive")

    def asset_nodes(self) -> np.ndarray:
        return self.asset_grid.nodes()

    def content_hash(self) -> str:
        h = hashlib.sha256()
        scalars = (
            self.beta_disc, self.sigma_c, self.alpha_k, self.delta, self.a_min,
            self.asset_grid.lo, self.asset_grid.hi, float(self.asset_grid.count),
            self.asset_grid.curvature,
        )
        h.update(",".join(repr(float(x)) for x in scalars).encode())
        for arr in (self.income_chain.states, self.income_chain.P,
                    self.z_chain.states, self.z_chain.P):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()


class Histogram:
    """Mass over the (asset, income) lattice; g[i, j] is the fraction of
    agents at asset node i with income node j."""

    __slots__ = ("g",)

    def __init__(self, g):
        self.g = np.asarray(g, dtype=float)
        if self.g.ndim != 2:
            raise ValueError("histogram must be 2-D (asset x income)")
        self.validate(tol=1e-9)

    def validate(self, tol: float = 1e-12) -> None:
        if not np.all(np.isfinite(self.g)):
            raise ValueError("histogram has non-finite mass")
        if np.any(self.g < -1e-15):
            raise ValueError("histogram has negative mass")
        m = float(self.g.sum())
        if abs(m - 1.0) > tol:
            raise ValueError(f"histogram mass {m!r} deviates from 1")

    @property
    def mass(self) -> float:
        return float(self.g.sum())

    def as_vector(self) -> np.ndarray:
        return self.g.reshape(-1)

    @classmethod
    def point_mass(cls, na: int, ny: int, ia: int = 0, iy: int = 0) -> "Histogram":
        g = np.zeros((na, ny))
        g[ia, iy] = 1.0
        return cls(g)

    @classmethod
    def from_marginals(cls, asset_weights, income_weights) -> "Histogram":
        a = np.asarray(asset_weights, dtype=float)
        y = np.asarray(income_weights, dtype=float)
        return cls(np.outer(a / a.sum(), y / y.sum()))


@dataclass
class ValueTable:
    """Converged household value and savings policy.

    v and policy are indexed (asset, income, z, forecast node). policy
    holds refined savings levels; policy_idx the grid argmax they were
    refined from.
    """

    v: np.ndarray
    policy: np.ndarray
    policy_idx: np.ndarray
    sup_gap: float
    iterations: int
    clamped_atoms: int = 0
    gap_history: np.ndarray | None = None


@dataclass(frozen=True)
class ForecastGrid:
    """Forecast-node lattice: one coordinate axis per aggregate state,
    each node carrying the (w, r) pair households face there."""

    coords: np.ndarray
    w: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        if self.coords.ndim != 2 or self.w.shape != self.coords.shape or self.r.shape != self.coords.shape:
            raise ValueError("coords, w, r must share a (n_z, n_nodes) shape")
        if self.coords.shape[1] > 1 and np.any(np.diff(self.coords, axis=1) <= 0.0):
            raise ValueError("forecast coordinates must increase along each row")
        if np.any(self.w <= 0.0):
            raise ValueError("wage nodes must be positive")
        if np.any(self.r <= -1.0):
            raise ValueError("gross return at a node would be nonpositive")

    @property
    def n_z(self) -> int:
        return self.coords.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class ForecastAtoms:
    """Next-node forecasts: prob[z, s, z', q] weights atom q of the
    forecast conditional on the aggregate state moving z -> z'; coord
    holds the atom's coordinate on the z' row of the grid."""

    prob: np.ndarray
    coord: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prob", np.asarray(self.prob, dtype=float))
        object.__setattr__(self, "coord", np.asarray(self.coord, dtype=float))
        if self.prob.ndim != 4 or self.prob.shape != self.coord.shape:
            raise ValueError("prob and coord must share a (n_z, n_nodes, n_z, n_atoms) shape")
        if np.any(self.prob < 0.0):
            raise ValueError("atom weights must be nonnegative")
        if not np.allclose(self.prob.sum(axis=3), 1.0, atol=1e-9):
            raise ValueError("atom weights must sum to 1 per (z, node, z') branch")


class BellmanConvergenceError(RuntimeError):
    """Value iteration failed to reach tolerance; carries the gap history."""

    def __init__(self, gap_history):
        self.gap_history = np.asarray(gap_history, dtype=float)
        tail = ", ".join(f"{x:.3e}" for x in self.gap_history[-5:])
        super().__init__(
            f"value iteration not converged after {self.gap_history.size} sweeps "
            f"(last gaps: {tail})"
        )


def firm_prices(params: EconomyParams, k: float, l: float, z: float) -> tuple[float, float]:
    """Wage and net return at the firm's first-order conditions."""
    if k <= 0.0 or l <= 0.0 or z <= 0.0:
        raise ValueError("firm inputs and productivity must be positive")
    a = params.alpha_k
    r = z * a * k ** (a - 1.0) * l ** (1.0 - a) - params.delta
    w = z * (1.0 - a) * k**a * l ** (-a)
    return float(w), float(r)


def capital_demand(params: EconomyParams, r: float, l: float, z: float) -> float:
    """Capital the firm demands at net return r, from the inverted FOC."""
    if r + params.delta <= 0.0:
        raise ValueError("r + delta must be positive")
    if l <= 0.0 or z <= 0.0:
        raise ValueError("labor and productivity must be positive")
    a = params.alpha_k
    return float(l * (a * z / (r + params.delta)) ** (1.0 / (1.0 - a)))


def crra_utility(c, sigma: float):
    c = np.asarray(c, dtype=float)
    if sigma == 1.0:
        return np.log(c)
    return c ** (1.0 - sigma) / (1.0 - sigma)


def _frozen_atoms(fgrid: ForecastGrid) -> ForecastAtoms:
    # forecast node frozen in place: the household expects to stay at the
    # same node index on whichever z row is realized next
    nz, ns = fgrid.coords.shape
    prob = np.ones((nz, ns, nz, 1))
    coord = np.empty((nz, ns, nz, 1))
    for iz in range(nz):
        for s in range(ns):
            coord[iz, s, :, 0] = fgrid.coords[:, s]
    return ForecastAtoms(prob, coord)


def _mixing_matrix(fgrid: ForecastGrid, atoms: ForecastAtoms, z_P: np.ndarray):
    """Dense (nz*ns, nz*ns) matrix taking next-period values on the node
    lattice to expected continuation values at each current node.

    Returns the matrix and the count of atoms that fell off the grid and
    were clamped to its edge.
    """
    nz, ns = fgrid.coords.shape
    if atoms.prob.shape[:3] != (nz, ns, nz):
        raise ValueError("forecast atoms do not match the grid layout")
    nq = atoms.prob.shape[3]
    mix = np.zeros((nz * ns, nz * ns))
    clamped = 0
    for iz in range(nz):
        for s in range(ns):
            row = iz * ns + s
            for jz in range(nz):
                pz = z_P[iz, jz]
                coords = fgrid.coords[jz]
                for q in range(nq):
                    p = pz * atoms.prob[iz, s, jz, q]
                    if p == 0.0:
                        continue
                    c = atoms.coord[iz, s, jz, q]
                    if c < coords[0] or c > coords[-1]:
                        clamped += 1
                        c = min(max(c, coords[0]), coords[-1])
                    if ns == 1:
                        mix[row, jz * ns] += p
                        continue
                    j = int(np.searchsorted(coords, c, side="right")) - 1
                    j = min(max(j, 0), ns - 2)
                    wl = (coords[j + 1] - c) / (coords[j + 1] - coords[j])
                    mix[row, jz * ns + j] += p * wl
                    mix[row, jz * ns + j + 1] += p * (1.0 - wl)
    if not np.allclose(mix.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("continuation weights do not sum to 1; check atoms and z chain")
    return mix, clamped


def _mix_continuation(v: np.ndarray, mix: np.ndarray, y_P: np.ndarray) -> np.ndarray:
    # v: (na, ny, nz*ns) on next-period nodes -> expected value at
    # current (a', y, z, s)
    m = v @ mix.T
    return np.tensordot(y_P, m, axes=(1, 1)).transpose(1, 0, 2)


def _egm_policy(grid, res, r_flat, w_flat, ylev, mix, y_P, beta, sigma,
                tol=1e-11, max_iter=100_000):
    """Savings policy as the fixed point of backward Euler iteration on
    an endogenous grid.

    Each pass evaluates the discounted expected marginal value of
    next-period assets at the grid nodes, inverts marginal utility
    there, and maps the implied consumption back through the budget to
    the current-asset level that makes each node the optimal choice.
    Interpolating that inverse relation onto the fixed grid gives the
    new policy; queries left of the first endogenous point sit on the
    borrowing constraint, queries right of the last saturate at the
    grid top. Run to a sup-norm fixed point the policy is free of the
    node-snapping texture a single local refinement inherits from the
    grid argmax; that texture corrupts the drift of wealth enough to
    fake bistable dynamics and cap asset supply well short of its true
    level near the patience bound."""
    na, ny, nk = res.shape
    if beta == 0.0:
        return np.full((na, ny, nk), grid[0])
    gross = 1.0 + r_flat
    wy = w_flat[None, :] * ylev[:, None]
    x = np.full((na, ny, nk), grid[0])
    c = res - x
    scale = 1.0 + abs(float(grid[-1]))
    for _ in range(max_iter):
        vp = gross[None, None, :] * c ** (-sigma)
        mu = beta * _mix_continuation(vp, mix, y_P)
        c_end = mu ** (-1.0 / sigma)
        a_end = (c_end + grid[:, None, None] - wy[None, :, :]) / gross[None, None, :]
        x_new = np.empty_like(x)
        for iy in range(ny):
            for ik in range(nk):
                x_new[:, iy, ik] = np.interp(grid, a_end[:, iy, ik], grid)
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        c = res - x
        if change < tol * scale:
            return x
    raise RuntimeError(
        f"policy iteration stalled: sup change {change:.3e} after {max_iter} passes"
    )


def solve_bellman(
    params: EconomyParams,
    belief,
    fgrid: ForecastGrid,
    v_init=None,
    tol: float = 1e-7,
    max_iter: int = 5000,
    howard_passes: int = 50,
    refine: bool = True,
) -> ValueTable:
    """Value iteration over (asset, income, z, forecast node).

    belief must expose forecast_lattice(fgrid) -> ForecastAtoms placing
    next-period node forecasts; belief=None freezes the forecast node in
    place (constant-price continuation). Each improvement sweep is a full
    grid argmax; cheap policy-evaluation passes run between sweeps. On
    success the savings policy is recomputed off the grid by iterating
    the Euler equation on an endogenous grid to its fixed point; the
    grid argmax stays available as policy_idx.
    """
    grid = params.asset_nodes()
    na = grid.size
    ylev = params.income_chain.states
    y_P = params.income_chain.P
    z_P = params.z_chain.P
    ny = ylev.size
    nz = len(params.z_chain.states)
    if fgrid.n_z != nz:
        raise ValueError("forecast grid rows must match the z chain")
    ns = fgrid.n_nodes
    nk = nz * ns

    atoms = belief.forecast_lattice(fgrid) if belief is not None else _frozen_atoms(fgrid)
    mix, clamped = _mixing_matrix(fgrid, atoms, z_P)

    w_flat = fgrid.w.reshape(nk)
    r_flat = fgrid.r.reshape(nk)
    res = w_flat[None, None, :] * ylev[None, :, None] + (1.0 + r_flat)[None, None, :] * grid[:, None, None]

    cons = res[:, None, :, :] - grid[None, :, None, None]
    feasible = cons > 0.0
    if not feasible.any(axis=1).all():
        bad = np.argwhere(~feasible.any(axis=1))[0]
        raise ValueError(
            f"no affordable savings choice at asset node {bad[0]}, income node {bad[1]}, "
            f"price node {bad[2]}; check the grid and prices"
        )
    u = np.full(cons.shape, -np.inf)
    u[feasible] = crra_utility(cons[feasible], params.sigma_c)

    if v_init is None:
        v = np.zeros((na, ny, nk))
    else:
        arr = v_init.v if isinstance(v_init, ValueTable) else np.asarray(v_init, dtype=float)
        v = arr.reshape(na, ny, nk).copy()

    beta = params.beta_disc
    yi = np.arange(ny)[None, :, None]
    ki = np.arange(nk)[None, None, :]
    gap_history = []
    jstar = None
    for it in range(1, max_iter + 1):
        ev = _mix_continuation(v, mix, y_P)
        cand = u + beta * ev[None, :, :, :]
        jstar = cand.argmax(axis=1)
        v_new = np.take_along_axis(cand, jstar[:, None, :, :], axis=1)[:, 0]
        gap = float(np.max(np.abs(v_new - v)))
        gap_history.append(gap)
        v = v_new
        if gap < tol:
            break
        if beta > 0.0 and howard_passes > 0:
            u_pol = np.take_along_axis(u, jstar[:, None, :, :], axis=1)[:, 0]
            for _ in range(howard_passes):
                ev = _mix_continuation(v, mix, y_P)
                v = u_pol + beta * ev[jstar, yi, ki]
    else:
        raise BellmanConvergenceError(gap_history)

    if refine:
        policy = _egm_policy(grid, res, r_flat, w_flat, ylev, mix, y_P, beta, params.sigma_c)
    else:
        policy = grid[jstar]

    if not np.all(res - policy > 0.0):
        raise RuntimeError("refined policy implies nonpositive consumption")

    return ValueTable(
        v=v.reshape(na, ny, nz, ns),
        policy=policy.reshape(na, ny, nz, ns),
        policy_idx=jstar.reshape(na, ny, nz, ns),
        sup_gap=gap_history[-1],
        iterations=len(gap_history),
        clamped_atoms=clamped,
        gap_history=np.asarray(gap_history),
    )


def policy_at(table: ValueTable, fgrid: ForecastGrid, iz: int, coord: float):
    """Savings policy (na, ny) at aggregate state iz and a forecast
    coordinate, linear between nodes. Returns (policy, clamped)."""
    coords = fgrid.coords[iz]
    ns = coords.size
    if ns == 1:
        return table.policy[:, :, iz, 0], False
    clamped = coord < coords[0] or coord > coords[-1]
    c = min(max(coord, coords[0]), coords[-1])
    j = int(np.searchsorted(coords, c, side="right")) - 1
    j = min(max(j, 0), ns - 2)
    wl = (coords[j + 1] - c) / (coords[j + 1] - coords[j])
    pol = wl * table.policy[:, :, iz, j] + (1.0 - wl) * table.policy[:, :, iz, j + 1]
    return pol, clamped


@dataclass(frozen=True)
class AssetLottery:
    """Two-point lottery per policy entry, mean-preserving on the grid."""

    idx_lo: np.ndarray
    idx_hi: np.ndarray
    w_lo: np.ndarray
    n_clamped: int


def apply_lottery(policy, grid) -> AssetLottery:
    """Split each savings level between its bracketing grid nodes with
    linear weights; levels off the grid are clamped (and counted)."""
    grid = np.asarray(grid, dtype=float)
    pol = np.asarray(policy, dtype=float)
    na = grid.size
    n_clamped = int(np.count_nonzero((pol < grid[0]) | (pol > grid[-1])))
    clamped = np.clip(pol, grid[0], grid[-1])
    idx_lo = np.clip(np.searchsorted(grid, clamped, side="right") - 1, 0, na - 2)
    idx_hi = idx_lo + 1
    w_lo = (grid[idx_hi] - clamped) / (grid[idx_hi] - grid[idx_lo])
    return AssetLottery(idx_lo.astype(np.int64), idx_hi.astype(np.int64), w_lo, n_clamped)


class TransitionOperator:
    """Row-stochastic transition over (asset, income) nodes: the asset
    lottery of a policy composed with the income chain."""

    def __init__(self, lottery: AssetLottery, income_P: np.ndarray):
        if lottery.idx_lo.ndim != 2:
            raise ValueError("lottery must cover an (asset, income) policy")
        na, ny = lottery.idx_lo.shape
        income_P = np.asarray(income_P, dtype=float)
        if income_P.shape != (ny, ny):
            raise ValueError("income chain size does not match the policy")
        self.lottery = lottery
        self.income_P = income_P
        self.shape = (na * ny, na * ny)
        self._cols = np.broadcast_to(np.arange(ny), (na, ny))
        self._flat_lo = lottery.idx_lo * ny + self._cols
        self._flat_hi = lottery.idx_hi * ny + self._cols

    @classmethod
    def from_policy(cls, policy2d, asset_nodes, income_chain: MarkovChain) -> "TransitionOperator":
        return cls(apply_lottery(policy2d, asset_nodes), income_chain.P)

    def push_forward(self, g: np.ndarray) -> np.ndarray:
        na, ny = self.lottery.idx_lo.shape
        lo = np.bincount(self._flat_lo.reshape(-1),
                         weights=(g * self.lottery.w_lo).reshape(-1),
                         minlength=na * ny)
        hi = np.bincount(self._flat_hi.reshape(-1),
                         weights=(g * (1.0 - self.lottery.w_lo)).reshape(-1),
                         minlength=na * ny)
        return (lo + hi).reshape(na, ny) @ self.income_P

    def to_csr(self) -> sparse.csr_matrix:
        na, ny = self.lottery.idx_lo.shape
        rows, cols, vals = [], [], []
        for ia in range(na):
            for iy in range(ny):
                row = ia * ny + iy
                for j, wgt in ((self.lottery.idx_lo[ia, iy], self.lottery.w_lo[ia, iy]),
                               (self.lottery.idx_hi[ia, iy], 1.0 - self.lottery.w_lo[ia, iy])):
                    if wgt == 0.0:
                        continue
                    for jy in range(ny):
                        p = wgt * self.income_P[iy, jy]
                        if p != 0.0:
                            rows.append(row)
                            cols.append(j * ny + jy)
                            vals.append(p)
        m = sparse.csr_matrix((vals, (rows, cols)), shape=self.shape)
        m.sum_duplicates()
        return m

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.to_csr().sum(axis=1)).reshape(-1)


def step_distribution(hist: Histogram, op: TransitionOperator) -> Histogram:
    """One Chapman-Kolmogorov step of the histogram."""
    return Histogram(op.push_forward(hist.g))


def aggregate(hist: Histogram, asset_nodes, income_levels) -> tuple[float, float]:
    """Mean assets and effective labor implied by the histogram."""
    a = np.asarray(asset_nodes, dtype=float)
    y = np.asarray(income_levels, dtype=float)
    k = float(a @ hist.g.sum(axis=1))
    l = float(hist.g.sum(axis=0) @ y)
    return k, l


def _gth_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix by state elimination.

    Grassmann-Taksar-Heyman: censors states from the last down, rescaling
    by the off-diagonal row mass instead of 1 - P[k, k]. No subtractions
    anywhere, so the result stays accurate even when the chain is
    metastable and the usual eigenproblem is hopelessly ill conditioned.
    """
    a = np.array(P, dtype=float)
    n = a.shape[0]
    scale = np.ones(n)
    for k in range(n - 1, 0, -1):
        s = a[k, :k].sum()
        if s <= 0.0:
            raise ValueError("chain is reducible: no path from a censored state downward")
        scale[k] = s
        a[:k, :k] += np.outer(a[:k, k] / s, a[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = (x[:k] @ a[:k, k]) / scale[k]
    return x / x.sum()


def stationary_histogram(
    op: TransitionOperator,
    g0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 200_000,
):
    """Fixed point of the push-forward.

    Wealth dynamics here are often metastable (decumulate in low income,
    accumulate in high), which drives the second eigenvalue within 1e-9
    of one; power iteration then never converges and naive linear solves
    lose most digits to conditioning. GTH elimination is exact for this,
    so it is tried first; power iteration from g0 is the fallback.
    Returns (Histogram, l1 one-step residual, iterations used).
    """
    na, ny = op.lottery.idx_lo.shape
    n = na * ny
    try:
        g = _gth_stationary(op.to_csr().toarray()).reshape(na, ny)
    except ValueError:
        g = None
    if g is not None:
        residual = float(np.abs(op.push_forward(g) - g).sum())
        if residual < tol:
            return Histogram(g), residual, 0

    g = np.full((na, ny), 1.0 / n) if g0 is None else np.asarray(g0, dtype=float)
    for it in range(1, max_iter + 1):
        g_next = op.push_forward(g)
        change = float(np.abs(g_next - g).sum())
        g = g_next
        if change < tol:
            residual = float(np.abs(op.push_forward(g) - g).sum())
            return Histogram(g), residual, it
    raise RuntimeError(f"distribution not stationary after {max_iter} steps (change {change:.3e})")


@dataclass
class SteadyState:
    """Stationary equilibrium with the aggregate state pinned at its mean."""

    r: float
    w: float
    g: Histogram
    table: ValueTable
    k: float
    l: float
    z: float
    residual: float
    params: EconomyParams
    fgrid: ForecastGrid


def aiyagari_steady_state(
    params: EconomyParams,
    r_bracket: tuple[float, float] | None = None,
    clearing_tol: float = 1e-6,
    vfi_tol: float = 1e-10,
    dist_tol: float = 1e-12,
) -> SteadyState:
    """Stationary equilibrium of the economy with z fixed at its mean.

    Root-finds the net return where household asset supply meets firm
    capital demand. Supply at each candidate r solves the household
    problem under constant prices and forward-iterates the histogram to
    its fixed point. Every evaluation cold-starts: supply is so steep in
    r near the root that the small path dependence a warm start leaves
    inside solver tolerance would move the root by more than the
    clearing tolerance allows, while a deterministic r -> excess supply
    map lets the bracketing root-finder hit it directly.
    """
    pi_z = stationary_distribution(params.z_chain)
    zbar = float(pi_z @ params.z_chain.states)
    pi_y = stationary_distribution(params.income_chain)
    l_star = float(pi_y @ params.income_chain.states)
    inner = replace(params, z_chain=MarkovChain(np.array([zbar]), np.array([[1.0]])))
    grid = params.asset_nodes()
    na, ny = grid.size, params.income_chain.states.size

    if r_bracket is None:
        r_bracket = (-params.delta + 1e-3, 1.0 / params.beta_disc - 1.0 - 1e-4)

    g0 = np.outer(np.full(na, 1.0 / na), pi_y)
    state: dict = {}

    def excess_supply(r: float) -> float:
        kl = (params.alpha_k * zbar / (r + params.delta)) ** (1.0 / (1.0 - params.alpha_k))
        w = zbar * (1.0 - params.alpha_k) * kl**params.alpha_k
        fgrid = ForecastGrid(np.zeros((1, 1)), np.array([[w]]), np.array([[r]]))
        table = solve_bellman(inner, None, fgrid, tol=vfi_tol)
        op = TransitionOperator.from_policy(table.policy[:, :, 0, 0], grid, params.income_chain)
        hist, residual, _ = stationary_histogram(op, g0, tol=dist_tol)
        k_s, _ = aggregate(hist, grid, params.income_chain.states)
        state.update(w=w, fgrid=fgrid, table=table, hist=hist, dist_residual=residual, k_s=k_s)
        return k_s - capital_demand(params, r, l_star, zbar)

    lo, hi = r_bracket
    f_lo = excess_supply(lo)
    f_hi = excess_supply(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise ValueError(
            "asset supply never crosses capital demand on the bracket: "
            f"excess supply {f_lo:.6g} at r={lo:.6g}, {f_hi:.6g} at r={hi:.6g}"
        )
    r_star = find_root(excess_supply, lo, hi, tol=1e-13)
    gap = excess_supply(r_star)
    residual = abs(gap)
    if residual > clearing_tol:
        raise RuntimeError(
            f"market clearing residual {residual:.3e} exceeds {clearing_tol:.1e} at r={r_star!r}"
        )
    return SteadyState(
        r=float(r_star),
        w=float(state["w"]),
        g=state["hist"],
        table=state["table"],
        k=float(state["k_s"]),
        l=l_star,
        z=zbar,
        residual=residual,
        params=inner,
        fgrid=state["fgrid"],
    )


def _header_array(header: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)


def _read_header(arr: np.ndarray) -> dict:
    return json.loads(arr.tobytes().decode())


def save_value_table(path, table: ValueTable, params: EconomyParams) -> None:
    header = {
        "kind": "value_table",
        "param_hash": params.content_hash(),
        "asset_grid": [params.asset_grid.lo, params.asset_grid.hi,
                       params.asset_grid.count, params.asset_grid.curvature],
        "shape": list(table.v.shape),
        "sup_gap": table.sup_gap,
        "iterations": table.iterations,
        "clamped_atoms": table.clamped_atoms,
    }
    np.savez_compressed(path, header=_header_array(header), v=table.v,
                        policy=table.policy, policy_idx=table.policy_idx)


def load_value_table(path) -> tuple[ValueTable, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = _read_header(data["header"])
        table = ValueTable(
            v=data["v"],
            policy=data["policy"],
            policy_idx=data["policy_idx"],
            sup_gap=float(header["sup_gap"]),
            iterations=int(header["iterations"]),
            clamped_atoms=int(header["clamped_atoms"]),
        )
    return table, header


def save_histogram(path, hist: Histogram, params: EconomyParams) -> None:
    header = {
        "kind": "histogram",
        "param_hash": params.content_hash(),
        "asset_grid": [params.asset_grid.lo, params.asset_grid.hi,
                       params.asset_grid.count, params.asset_grid.curvature],
        "shape": list(hist.g.shape),
    }
    np.savez_compressed(path, header=_header_array(header), g=hist.g)


def load_histogram(path) -> tuple[Histogram, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = _read_header(data["header"])
        hist = Histogram(data["g"])
    return hist, header
