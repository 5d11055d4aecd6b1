"""Tabular temporal-difference machinery.

TD(0) prediction on Markov reward processes, Q-learning (and Sarsa) with
epsilon-greedy exploration on finite MDPs, exact linear-solve and value
iteration oracles, and a price-binning adapter that turns observed price
paths into a finite learning environment.

Step sizes are keyed to per-state (or per state-action) visit counts, so
each entry individually satisfies the divergent-sum / square-summable
conditions when the schedule does.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .learning import StepSizeSchedule
from .stoch import RngStream

_SCHEDULE_CODES = {"harmonic": 0, "constant": 1, "power": 2}


def _schedule_args(schedule: StepSizeSchedule) -> tuple[int, float, float]:
    code = _SCHEDULE_CODES[schedule.kind]
    if schedule.kind == "constant":
        return code, schedule.alpha, 0.0
    if schedule.kind == "power":
        return code, schedule.c, schedule.a
    return code, 1.0, 1.0


@dataclass
class FiniteMrp:
    """Markov reward process: row-stochastic P, reward vector R, discount beta."""

    P: np.ndarray
    R: np.ndarray
    beta: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        n = self.R.size
        if self.P.shape != (n, n):
            raise ValueError("P must be n x n matching R")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("P must be row-stochastic")
        if not 0 < self.beta < 1:
            raise ValueError("discount must lie strictly inside (0, 1)")

    @property
    def n(self) -> int:
        return self.R.size


@dataclass
class FiniteMdp:
    """Finite MDP: P[x, c, :] transition rows, R[x, c] rewards, discount beta."""

    P: np.ndarray
    R: np.ndarray
    beta: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.P.ndim != 3 or self.P.shape[:2] != self.R.shape or self.P.shape[2] != self.R.shape[0]:
            raise ValueError("need P of shape (n, m, n) and R of shape (n, m)")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("every P[x, c, :] row must be stochastic")
        if not 0 < self.beta < 1:
            raise ValueError("discount must lie strictly inside (0, 1)")

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[1]


@dataclass
class QTable:
    """Action-value estimates with per-pair visit counts."""

    q: np.ndarray
    visits: np.ndarray

    def greedy_policy(self) -> np.ndarray:
        """argmax over actions, ties broken by lowest action index."""
        return np.argmax(self.q, axis=1)

    def to_csv(self, path, config_hash: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if config_hash is not None:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["state", "action", "value", "visits"])
            n, m = self.q.shape
            for x in range(n):
                for c in range(m):
                    writer.writerow([x, c, repr(float(self.q[x, c])), int(self.visits[x, c])])


def values_to_csv(values: np.ndarray, visits: np.ndarray, path, config_hash: str | None = None) -> None:
    """Dump a state-value vector (state, value, visits)."""
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["state", "value", "visits"])
        for x in range(values.size):
            writer.writerow([x, repr(float(values[x])), int(visits[x])])


def solve_mrp_exact(mrp: FiniteMrp) -> np.ndarray:
    """Fixed-policy values v = (I - beta P)^(-1) R."""
    n = mrp.n
    v = np.linalg.solve(np.eye(n) - mrp.beta * mrp.P, mrp.R)
    resid = np.max(np.abs(v - mrp.R - mrp.beta * mrp.P @ v))
    assert resid < 1e-10, "Bellman residual unexpectedly large"
    return v


def solve_mdp_exact(mdp: FiniteMdp, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Value iteration to tol; returns (optimal values, greedy policy)."""
    v = np.zeros(mdp.n)
    for _ in range(max_iter):
        q = mdp.R + mdp.beta * mdp.P @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = mdp.R + mdp.beta * mdp.P @ v
    return v, np.argmax(q, axis=1)


def random_mdp(
    n_states: int,
    n_actions: int,
    beta: float,
    rng: RngStream,
    min_gap: float = 0.0,
    max_tries: int = 200,
) -> FiniteMdp:
    """Random MDP with Dirichlet(1) transition rows and U(0,1) rewards.

    With min_gap > 0, draws are rejected until the optimal action beats the
    runner-up by at least min_gap in every state, so a near-converged
    learner's greedy policy is well defined. Raises after max_tries."""
    gen = rng.generator()
    for _ in range(max_tries):
        P = gen.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        R = gen.uniform(0.0, 1.0, size=(n_states, n_actions))
        mdp = FiniteMdp(P, R, beta)
        if min_gap <= 0.0:
            return mdp
        v, _ = solve_mdp_exact(mdp)
        q = np.sort(mdp.R + mdp.beta * mdp.P @ v, axis=1)
        if float(np.min(q[:, -1] - q[:, -2])) >= min_gap:
            return mdp
    raise ValueError(f"no MDP with action gap >= {min_gap} found in {max_tries} tries")


@njit(cache=True)
def _td0_kernel(cdf, R, beta, T, uniforms, v0, start, code, c1, c2):  # pragma: no cover
    n = cdf.shape[0]
    v = v0.copy()
    visits = np.zeros(n, dtype=np.int64)
    x = start
    for t in range(T):
        u = uniforms[t]
        xn = 0
        while cdf[x, xn] < u:
            xn += 1
        visits[x] += 1
        if code == 0:
            alpha = 1.0 / visits[x]
        elif code == 1:
            alpha = c1
        else:
            alpha = c1 / visits[x] ** c2
        v[x] += alpha * (R[x] + beta * v[xn] - v[x])
        x = xn
    return v, visits


def td0_predict(
    mrp: FiniteMrp,
    schedule: StepSizeSchedule,
    T: int,
    rng: RngStream,
    v0: np.ndarray | None = None,
    start: int = 0,
):
    """TD(0) value prediction along one simulated trajectory.

    The update V(x) <- V(x) + alpha [R + beta V(x') - V(x)] uses the
    schedule evaluated at the visit count of x. Returns (values, visits).
    """
    if T < 1:
        raise ValueError("need T >= 1")
    if v0 is None:
        v0 = np.zeros(mrp.n)
    v0 = np.asarray(v0, dtype=float)
    cdf = np.cumsum(mrp.P, axis=1)
    cdf[:, -1] = 1.0
    uniforms = rng.generator().random(T)
    code, c1, c2 = _schedule_args(schedule)
    v, visits = _td0_kernel(cdf, mrp.R, mrp.beta, T, uniforms, v0, start, code, c1, c2)
    return v, visits


@njit(cache=True)
def _q_kernel(cdf, R, beta, T, eps, draws, start, code, c1, c2, sarsa):  # pragma: no cover
    n, m = R.shape
    q = np.zeros((n, m))
    visits = np.zeros((n, m), dtype=np.int64)
    x = start

    # epsilon-greedy pick for state x using two uniforms
    def pick(qrow, u_explore, u_action):
        if u_explore < eps:
            a = int(u_action * m)
            if a >= m:
                a = m - 1
            return a
        best = 0
        for j in range(1, m):
            if qrow[j] > qrow[best]:
                best = j
        return best

    a = pick(q[x], draws[0, 0], draws[0, 1])
    for t in range(T):
        u = draws[t, 2]
        xn = 0
        while cdf[x, a, xn] < u:
            xn += 1
        visits[x, a] += 1
        if code == 0:
            alpha = 1.0 / visits[x, a]
        elif code == 1:
            alpha = c1
        else:
            alpha = c1 / visits[x, a] ** c2
        an = pick(q[xn], draws[t + 1, 0], draws[t + 1, 1])
        if sarsa:
            target = R[x, a] + beta * q[xn, an]
        else:
            qmax = q[xn, 0]
            for j in range(1, m):
                if q[xn, j] > qmax:
                    qmax = q[xn, j]
            target = R[x, a] + beta * qmax
        q[x, a] += alpha * (target - q[x, a])
        x = xn
        a = an
    return q, visits


def q_learn(
    mdp: FiniteMdp,
    epsilon: float,
    schedule: StepSizeSchedule,
    T: int,
    rng: RngStream,
    start: int = 0,
    sarsa: bool = False,
) -> QTable:
    """Q-learning with epsilon-greedy exploration (Sarsa when sarsa=True).

    Ties in the greedy choice break toward the lowest action index; the
    table starts at zero so the beta=0 case reduces exactly to per-pair
    sample averaging of rewards.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if T < 1:
        raise ValueError("need T >= 1")
    cdf = np.cumsum(mdp.P, axis=2)
    cdf[:, :, -1] = 1.0
    draws = rng.generator().random((T + 1, 3))
    code, c1, c2 = _schedule_args(schedule)
    q, visits = _q_kernel(cdf, mdp.R, mdp.beta, T, epsilon, draws, start, code, c1, c2, sarsa)
    return QTable(q, visits)


@dataclass
class PriceBinner:
    """Per-dimension bin edges turning a price vector into one composite index.

    Each dimension with k edges has k+1 bins; values on an edge go to the
    upper bin and out-of-range values land in the end bins, so every real
    maps to exactly one bin.
    """

    edges: list = field(default_factory=list)

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=float) for e in self.edges]
        for e in self.edges:
            if e.ndim != 1 or e.size == 0 or (e.size > 1 and not np.all(np.diff(e) > 0)):
                raise ValueError("each edge vector must be 1-D, nonempty, strictly increasing")

    @property
    def dims(self) -> int:
        return len(self.edges)

    @property
    def n_bins(self) -> int:
        out = 1
        for e in self.edges:
            out *= e.size + 1
        return out


def bin_prices(binner: PriceBinner, p) -> int:
    """Row-major composite bin index of a price vector."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.size != binner.dims:
        raise ValueError(f"price vector has {p.size} entries, binner expects {binner.dims}")
    idx = 0
    for i, e in enumerate(binner.edges):
        idx = idx * (e.size + 1) + int(np.searchsorted(e, p[i], side="right"))
    return idx


def environment_from_prices(prices, binner: PriceBinner, rewards, beta: float) -> FiniteMrp:
    """Empirical MRP over price bins from an observed price path.

    Transition rows are empirical frequencies of consecutive bin pairs;
    bins never visited get a self-loop. `rewards` is a vector over bins or a
    callable on the bin index. One concrete way of letting a TD learner
    study equilibrium prices, not the only one.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    bins = np.array([bin_prices(binner, row) for row in prices])
    n = binner.n_bins
    counts = np.zeros((n, n))
    np.add.at(counts, (bins[:-1], bins[1:]), 1.0)
    P = np.zeros((n, n))
    rowsum = counts.sum(axis=1)
    visited = rowsum > 0
    P[visited] = counts[visited] / rowsum[visited, None]
    P[~visited, ~visited] = 1.0
    R = np.array([rewards(i) for i in range(n)]) if callable(rewards) else np.asarray(rewards, dtype=float)
    return FiniteMrp(P, R, beta)
