"""Stochastic-approximation update rules and the pluggable belief-model contract.

Every learning mechanism in the package is an instance of one recursion,

    NewEstimate <- OldEstimate + StepSize * (Target - OldEstimate),

specialized by the step-size schedule: 1/t gives the sample average, a
constant gives adaptive expectations, and a matrix gain gives recursive
least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StepSizeSchedule:
    """Step-size sequence alpha_t, one of three kinds.

    kind "harmonic": alpha_t = 1/t.
    kind "constant": alpha_t = alpha.
    kind "power":    alpha_t = c / t**a, c in (0, 1] so all steps stay in (0, 1].
    """

    kind: str
    alpha: float = 0.1
    c: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "constant", "power"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not 0 < self.alpha <= 1:
            raise ValueError("constant step size must lie in (0, 1]")
        if self.kind == "power":
            if not 0 < self.c <= 1:
                raise ValueError("power schedule needs c in (0, 1] to keep steps in (0, 1]")
            if self.a < 0:
                raise ValueError("power schedule needs a >= 0")

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedules are indexed from t = 1")
        if self.kind == "harmonic":
            return 1.0 / t
        if self.kind == "constant":
            return self.alpha
        return self.c / t**self.a


def check_robbins_monro(schedule: StepSizeSchedule) -> tuple[bool, bool]:
    """Classify a schedule against the two step-size conditions.

    Returns (sum alpha_t diverges, sum alpha_t^2 converges), decided
    analytically from the schedule kind, not by numeric summation.
    """
    if schedule.kind == "harmonic":
        return (True, True)
    if schedule.kind == "constant":
        return (True, False)
    # c/t^a: the sum diverges iff a <= 1; the square sum converges iff 2a > 1
    return (schedule.a <= 1.0, schedule.a > 0.5)


def sa_update(old, target, alpha: float):
    """One stochastic-approximation step: old + alpha * (target - old)."""
    if not 0 < alpha <= 1:
        raise ValueError("step size must lie in (0, 1]")
    old = np.asarray(old, dtype=float)
    target = np.asarray(target, dtype=float)
    if old.shape != target.shape:
        raise ValueError(f"dimension mismatch: {old.shape} vs {target.shape}")
    out = old + alpha * (target - old)
    return float(out) if out.ndim == 0 else out


def sample_average_update(pe: float, p: float, t: int) -> float:
    """Recursive sample mean: pe + (1/t)(p - pe), t = 1-based observation count.

    After feeding observations 1..t this equals their batch mean.
    """
    if t < 1:
        raise ValueError("observation count t must be >= 1")
    return pe + (p - pe) / t


def adaptive_update(pe: float, p: float, alpha: float) -> float:
    """Adaptive-expectations step with constant gain alpha in (0, 1].

    Iterating from pe0 over prices p_0..p_t reproduces the exponential
    weights closed form (1-alpha)^(t+1) pe0 + alpha * sum_j (1-alpha)^j p_{t-j}.
    """
    if not 0 < alpha <= 1:
        raise ValueError("adaptive gain must lie in (0, 1]")
    return pe + alpha * (p - pe)


def adaptive_closed_form(pe0: float, prices, alpha: float) -> float:
    """Closed form of the adaptive recursion after feeding `prices` in order."""
    prices = np.asarray(prices, dtype=float)
    t = prices.size - 1
    j = np.arange(t + 1)
    weights = alpha * (1.0 - alpha) ** j
    return (1.0 - alpha) ** (t + 1) * pe0 + float(weights @ prices[::-1])


class RlsState:
    """Recursive least squares over a fixed regressor dimension.

    Accumulates the raw moments A = sum x x' and b = sum x p and solves
    (ridge*I + A) theta = b after each observation, so theta always equals
    the batch (ridge-regularized) normal-equations estimate on everything
    fed so far. ridge = 1e-4 by default, which keeps the solve well posed
    before full rank; ridge = 0 is allowed and falls back to a pseudoinverse
    until A is invertible.

    theta_prior shifts the ridge anchor: b starts at ridge * theta_prior, so
    the estimate begins at the prior and the data take over as t grows.
    """

    def __init__(self, dim: int, ridge: float = 1e-4, theta_prior=None):
        if dim < 1:
            raise ValueError("need at least one regressor")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.dim = dim
        self.ridge = ridge
        self.A = np.zeros((dim, dim))
        self.b = np.zeros(dim)
        self.anchor = np.zeros(dim)
        if theta_prior is not None:
            theta_prior = np.asarray(theta_prior, dtype=float)
            if theta_prior.shape != (dim,):
                raise ValueError("prior shape mismatch")
            self.anchor = ridge * theta_prior
            self.b += self.anchor
        self.sp2 = 0.0
        self.t = 0
        self.theta = self._solve()

    def _solve(self) -> np.ndarray:
        M = self.A + self.ridge * np.eye(self.dim)
        try:
            return np.linalg.solve(M, self.b)
        except np.linalg.LinAlgError:
            return np.linalg.pinv(M) @ self.b

    @property
    def R(self) -> np.ndarray:
        """Regressor second-moment matrix including the ridge."""
        return self.A + self.ridge * np.eye(self.dim)

    def update(self, x, p: float) -> "RlsState":
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"regressor has dim {x.shape}, state expects ({self.dim},)")
        self.A += np.outer(x, x)
        self.b += x * p
        self.sp2 += p * p
        self.t += 1
        self.theta = self._solve()
        return self

    def residual_variance(self) -> float:
        """SSR/(t - dim) of the current fit; 0.0 before that is defined."""
        dof = self.t - self.dim
        if dof < 1:
            return 0.0
        # the prior anchor in b is not data; strip it or the identity is off
        b_data = self.b - self.anchor
        ssr = self.sp2 - 2.0 * self.theta @ b_data + self.theta @ self.A @ self.theta
        return max(ssr, 0.0) / dof


def rls_update(state: RlsState, x, p: float) -> RlsState:
    """Feed one (regressor, realization) pair into an RlsState (mutating)."""
    return state.update(x, p)


class BeliefModel:
    """Contract for pluggable price beliefs.

    forecast(observables) is a pure function of internal state and inputs,
    returning a point forecast or a finite forecast distribution over next
    prices; update(realized, observables) is the only mutator;
    coefficients() has fixed length over a run.
    """

    model_kind = "abstract"

    def forecast(self, observables):
        raise NotImplementedError

    def update(self, realized, observables) -> None:
        raise NotImplementedError

    def coefficients(self) -> np.ndarray:
        raise NotImplementedError

    def residual_scale(self):
        """Residual sd the model attributes to its own forecasts, if any."""
        return None

    def snapshot(self) -> dict:
        """JSON-ready state summary for checkpoint reports."""
        coefs = np.asarray(self.coefficients(), dtype=float)
        return {
            "model_kind": self.model_kind,
            "coefficients": [float(c) for c in coefs],
            "t": int(getattr(self, "t", 0)),
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


@dataclass
class CoefficientMonitor:
    """Sup-norm drift tracker used to gate expensive re-solves."""

    reference: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def drift(self, coefs) -> float:
        coefs = np.asarray(coefs, dtype=float)
        if self.reference.size != coefs.size:
            return np.inf
        return float(np.max(np.abs(coefs - self.reference)))

    def rebase(self, coefs) -> None:
        self.reference = np.asarray(coefs, dtype=float).copy()
