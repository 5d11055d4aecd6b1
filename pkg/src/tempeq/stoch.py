"""Shared stochastic kernel: seeded RNG streams, finite Markov chains,
AR(1) discretization and scalar root-finding.

Everything downstream draws randomness through RngStream so that a
(seed, stream id) pair pins the full draw sequence on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    Uses the counter-based Philox generator, so distinct stream ids give
    statistically independent streams from one master seed. Not shareable
    between concurrent tasks; give each task its own id.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + offset)


class MarkovChain:
    """Finite-state Markov chain with real-valued states.

    states must be strictly increasing; P must be row-stochastic.
    """

    def __init__(self, states, P):
        states = np.asarray(states, dtype=float)
        P = np.asarray(P, dtype=float)
        if states.ndim != 1 or P.shape != (states.size, states.size):
            raise ValueError("states must be a vector and P square of matching size")
        if states.size > 1 and not np.all(np.diff(states) > 0):
            raise ValueError("states must be strictly increasing")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        rowsum = P.sum(axis=1)
        if np.any(np.abs(rowsum - 1.0) > 1e-12):
            raise ValueError("every row of P must sum to 1 within 1e-12")
        self.states = states
        self.P = P
        self.n = states.size

    def __repr__(self):
        return f"MarkovChain(n={self.n})"


def stationary_distribution(chain: MarkovChain, tol: float = 1e-12) -> np.ndarray:
    """Stationary probability vector pi with pi P = pi.

    Solved through the eigen decomposition of P'. A unit eigenvalue with
    multiplicity above one means the chain is reducible (no unique pi) and
    raises. Periodic but irreducible chains still have a unique pi and pass.
    """
    if chain.n == 1:
        return np.array([1.0])
    vals, vecs = np.linalg.eig(chain.P.T)
    close = np.abs(vals - 1.0) < 1e-9
    if close.sum() != 1:
        raise ValueError(
            "no unique stationary distribution (reducible or degenerate chain): "
            f"{close.sum()} unit eigenvalues"
        )
    pi = np.real(vecs[:, close].ravel())
    pi = pi / pi.sum()
    if np.any(pi < -tol):
        raise ValueError("stationary solve produced negative mass; chain ill-conditioned")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def discretize_ar1(rho: float, sigma: float, n: int) -> MarkovChain:
    """Rouwenhorst discretization of x' = rho x + eps, eps ~ N(0, sigma^2).

    Matches the unconditional variance sigma^2/(1-rho^2) and the first
    autocorrelation rho exactly at any n, which Tauchen does not.
    """
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    if sigma <= 0:
        raise ValueError("need sigma > 0")
    if n < 2:
        raise ValueError("need at least 2 states")

    p = (1.0 + rho) / 2.0
    P = np.array([[p, 1.0 - p], [1.0 - p, p]])
    for m in range(3, n + 1):
        top = np.zeros((m, m))
        top[:-1, :-1] += p * P
        top[:-1, 1:] += (1.0 - p) * P
        bot = np.zeros((m, m))
        bot[1:, :-1] += (1.0 - p) * P
        bot[1:, 1:] += p * P
        P = top + bot
        P[1:-1, :] /= 2.0

    # spread chosen so the stationary (binomial) distribution has the AR(1) variance
    psi = sigma / np.sqrt(1.0 - rho**2) * np.sqrt(n - 1)
    states = np.linspace(-psi, psi, n)
    return MarkovChain(states, P)


def simulate_chain(chain: MarkovChain, T: int, rng: RngStream, start: int = 0) -> np.ndarray:
    """Simulate T state indices, beginning at `start` (start itself not recorded).

    *Output* int64 array of length T; identical (chain, T, rng, start) give a
    bit-identical path.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    if not 0 <= start < chain.n:
        raise ValueError("start index out of range")
    u = rng.generator().random(T)
    cdf = np.cumsum(chain.P, axis=1)
    # guard against rounding so u=0.9999999999999999 cannot fall off the row
    cdf[:, -1] = 1.0
    path = np.empty(T, dtype=np.int64)
    s = start
    for t in range(T):
        s = int(np.searchsorted(cdf[s], u[t], side="right"))
        path[t] = s
    return path


def find_root(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Bracketing scalar root finder (Brent: bisection safeguard + inverse quadratic).

    Returns x with |f(x)| <= tol or final bracket width <= tol. Requires a
    sign change on [lo, hi]; rejects brackets without one.
    """
    from scipy import optimize

    if not lo < hi:
        raise ValueError("need lo < hi")
    if tol <= 0:
        raise ValueError("need tol > 0")
    fa, fb = f(lo), f(hi)
    if abs(fa) <= tol:
        return lo
    if abs(fb) <= tol:
        return hi
    if fa * fb > 0:
        raise ValueError(f"no sign change on bracket: f({lo})={fa:g}, f({hi})={fb:g}")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=max_iter))
