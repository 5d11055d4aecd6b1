"""Cobweb testbed: closed-form rational expectations, equilibrium price
generation under any belief model, the perceived-to-actual coefficient map,
and learning-convergence experiments.

Demand is -b_d * p, supply is gamma * p_expected + u with an AR(1) supply
shock u' = rho u + eps. Clearing gives the reduced form

    p = -(gamma / b_d) * p_expected - u / b_d,

so beliefs feed back into the price they try to predict. Producers commit
one period ahead: the forecast for period t is formed with information
through t-1 (u_{t-1} is the predictor).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .learning import BeliefModel, RlsState
from .stoch import RngStream


@dataclass(frozen=True)
class CobwebParams:
    """Demand slope b_d, supply slope gamma, shock persistence rho, innovation sd."""

    b_d: float
    gamma: float
    rho: float
    sigma_eps: float

    def __post_init__(self):
        if self.b_d <= 0:
            raise ValueError("demand slope b_d must be positive")
        if self.gamma <= 0:
            raise ValueError("supply slope gamma must be positive")
        if not abs(self.rho) < 1:
            raise ValueError("need |rho| < 1")
        if self.sigma_eps < 0:
            raise ValueError("innovation sd cannot be negative")


def rational_forecast(params: CobwebParams, u_prev: float) -> float:
    """Model-consistent price expectation -rho*u_prev/(b_d+gamma).

    With rho = 0 the supply shock is unforecastable and the rational
    expectation is simply zero.
    """
    return -params.rho * u_prev / (params.b_d + params.gamma)


def realize_price(params: CobwebParams, pe: float, u: float) -> float:
    """Market-clearing price given the forecast and the realized supply shock."""
    return -(params.gamma / params.b_d) * pe - u / params.b_d


def t_map(params: CobwebParams, theta: tuple[float, float]) -> tuple[float, float]:
    """Map perceived-law coefficients (theta0, theta1) to the actual law they induce.

    If producers forecast p = theta0 + theta1 * u_prev, the realized price
    follows theta0' = -(gamma/b_d) theta0 and theta1' = -(gamma/b_d) theta1 - rho/b_d.
    The unique fixed point (0, -rho/(b_d+gamma)) is the rational/restricted
    perceptions equilibrium.
    """
    ratio = params.gamma / params.b_d
    theta0, theta1 = theta
    return (-ratio * theta0, -ratio * theta1 - params.rho / params.b_d)


def t_map_fixed_point(params: CobwebParams) -> tuple[float, float]:
    return (0.0, -params.rho / (params.b_d + params.gamma))


class RationalCobwebBelief(BeliefModel):
    """Fixed rational forecast; update does nothing, coefficients are the REE pair."""

    model_kind = "cobweb-rational"

    def __init__(self, params: CobwebParams):
        self.params = params
        self.t = 0

    def forecast(self, observables):
        return rational_forecast(self.params, float(observables))

    def update(self, realized, observables):
        self.t += 1

    def coefficients(self):
        return np.array(t_map_fixed_point(self.params))


class RlsCobwebBelief(BeliefModel):
    """Least-squares learner regressing price on (1, u_prev)."""

    model_kind = "cobweb-rls"

    def __init__(self, ridge: float = 1e-4):
        self.state = RlsState(2, ridge=ridge)

    @property
    def t(self):
        return self.state.t

    def forecast(self, observables):
        u_prev = float(observables)
        th = self.state.theta
        return th[0] + th[1] * u_prev

    def update(self, realized, observables):
        self.state.update(np.array([1.0, float(observables)]), float(realized))

    def coefficients(self):
        return self.state.theta.copy()

    def residual_scale(self):
        v = self.state.residual_variance()
        return np.sqrt(v) if v > 0 else None


class SampleAverageCobwebBelief(BeliefModel):
    """Forecast = running mean of past prices (decreasing gain 1/t)."""

    model_kind = "cobweb-sample-average"

    def __init__(self, pe0: float = 0.0):
        self.pe = pe0
        self.t = 0

    def forecast(self, observables):
        return self.pe

    def update(self, realized, observables):
        self.t += 1
        self.pe += (float(realized) - self.pe) / self.t

    def coefficients(self):
        return np.array([self.pe])


class AdaptiveCobwebBelief(BeliefModel):
    """Constant-gain adaptive expectations."""

    model_kind = "cobweb-adaptive"

    def __init__(self, alpha: float, pe0: float = 0.0):
        if not 0 < alpha <= 1:
            raise ValueError("adaptive gain must lie in (0, 1]")
        self.alpha = alpha
        self.pe = pe0
        self.t = 0

    def forecast(self, observables):
        return self.pe

    def update(self, realized, observables):
        self.t += 1
        self.pe += self.alpha * (float(realized) - self.pe)

    def coefficients(self):
        return np.array([self.pe])


@dataclass
class CobwebPath:
    """Per-period record of a cobweb run.

    u, p_expected, p_realized are length T; theta holds the belief
    coefficient snapshot after each period's update (T x k).
    """

    params: CobwebParams
    seed: int
    u0: float
    u: np.ndarray
    p_expected: np.ndarray
    p_realized: np.ndarray
    theta: np.ndarray

    def check_reduced_form(self, tol: float = 1e-12) -> float:
        """Max violation of p = -(gamma/b_d) p_expected - u/b_d; raises above tol."""
        q = self.params
        worst = float(
            np.max(np.abs(self.p_realized + (q.gamma / q.b_d) * self.p_expected + self.u / q.b_d))
        )
        if worst > tol:
            raise AssertionError(f"reduced-form identity violated by {worst:g}")
        return worst

    def to_csv(self, path, config_hash: str | None = None) -> None:
        k = self.theta.shape[1]
        with open(path, "w", newline="") as fh:
            if config_hash is not None:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "u", "p_expected", "p_realized", "theta0", "theta1"])
            for t in range(self.u.size):
                th0 = repr(float(self.theta[t, 0])) if k >= 1 else ""
                th1 = repr(float(self.theta[t, 1])) if k >= 2 else ""
                writer.writerow(
                    [
                        t + 1,
                        repr(float(self.u[t])),
                        repr(float(self.p_expected[t])),
                        repr(float(self.p_realized[t])),
                        th0,
                        th1,
                    ]
                )


@njit(cache=True)
def _rls_cobweb_kernel(u0, eps, bd, gamma, rho, ridge):  # pragma: no cover - jitted
    T = eps.shape[0]
    u = np.empty(T)
    pe = np.empty(T)
    p = np.empty(T)
    th = np.empty((T, 2))
    # moment accumulation (a00, a01, a11, b0, b1) mirrors RlsState exactly
    a00 = 0.0
    a01 = 0.0
    a11 = 0.0
    b0 = 0.0
    b1 = 0.0
    th0 = 0.0
    th1 = 0.0
    u_prev = u0
    for t in range(T):
        ut = rho * u_prev + eps[t]
        pet = th0 + th1 * u_prev
        pt = -(gamma / bd) * pet - ut / bd
        a00 += 1.0
        a01 += u_prev
        a11 += u_prev * u_prev
        b0 += pt
        b1 += u_prev * pt
        m00 = a00 + ridge
        m11 = a11 + ridge
        det = m00 * m11 - a01 * a01
        th0 = (m11 * b0 - a01 * b1) / det
        th1 = (m00 * b1 - a01 * b0) / det
        u[t] = ut
        pe[t] = pet
        p[t] = pt
        th[t, 0] = th0
        th[t, 1] = th1
        u_prev = ut
    return u, pe, p, th


def run_cobweb(
    params: CobwebParams,
    belief: BeliefModel,
    T: int,
    rng: RngStream,
    u0: float | None = None,
    fast: bool = True,
) -> CobwebPath:
    """Simulate T market-clearing periods under the given belief model.

    Each period: the shock advances, producers forecast from u_{t-1}, the
    price clears, and the belief updates on (u_{t-1}, p_t). u0 defaults to a
    draw from the AR(1) stationary distribution (zero when sigma_eps = 0).

    The RLS belief takes a jitted fast path computing the identical
    recursion; pass fast=False to force the generic loop.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    gen = rng.generator()
    if u0 is None:
        if params.sigma_eps > 0:
            u0 = float(gen.normal(0.0, params.sigma_eps / np.sqrt(1.0 - params.rho**2)))
        else:
            u0 = 0.0
    eps = (
        gen.normal(0.0, params.sigma_eps, T)
        if params.sigma_eps > 0
        else np.zeros(T)
    )

    # the closed-form 2x2 solve needs the ridge to keep the early moments invertible
    if fast and isinstance(belief, RlsCobwebBelief) and belief.state.t == 0 and belief.state.ridge > 0:
        u, pe, p, th = _rls_cobweb_kernel(
            u0, eps, params.b_d, params.gamma, params.rho, belief.state.ridge
        )
        # sync the belief object so callers can keep using it afterwards
        x = np.column_stack([np.ones(T), np.concatenate(([u0], u[:-1]))])
        belief.state.A = x.T @ x
        belief.state.b = x.T @ p
        belief.state.sp2 = float(p @ p)
        belief.state.t = T
        belief.state.theta = th[-1].copy()
        return CobwebPath(params, rng.seed, u0, u, pe, p, th)

    k = np.asarray(belief.coefficients()).size
    u = np.empty(T)
    pe = np.empty(T)
    p = np.empty(T)
    th = np.empty((T, k))
    u_prev = u0
    for t in range(T):
        ut = params.rho * u_prev + eps[t]
        pet = belief.forecast(u_prev)
        pt = realize_price(params, pet, ut)
        belief.update(pt, u_prev)
        u[t] = ut
        pe[t] = pet
        p[t] = pt
        th[t] = belief.coefficients()
        u_prev = ut
    return CobwebPath(params, rng.seed, u0, u, pe, p, th)
