"""Price-belief models for the production economy.

Each model implements the BeliefModel contract plus forecast_lattice,
which places next-period forecast atoms on a ForecastGrid so the
Bellman solver can mix continuation values over them. Forecasts are
point forecasts by default; a Gauss-Hermite spread over the perceived
law's residual is an opt-in flag per model.

Conditioning follows the per-state convention: one coefficient block
per (current z, next z) transition. Observables enter as an
Observation row; each model documents which fields it reads.
"""

from dataclasses import dataclass

import numpy as np

from .economy import EconomyParams, ForecastAtoms, ForecastGrid, firm_prices
from .learning import BeliefModel, RlsState
from .stoch import stationary_distribution


@dataclass(frozen=True)
class Observation:
    """One period's aggregate observables as the belief models see them."""

    iz: int
    k: float
    l: float
    w: float
    r: float

    @property
    def log_k(self) -> float:
        return float(np.log(self.k))

    @property
    def log_w(self) -> float:
        return float(np.log(self.w))


def plm_prior(plm_kind: str) -> dict:
    """Coefficient priors per regression target, shared by the online
    beliefs and the batch re-estimator so both pin any unidentified
    direction the same way: persistence in the own regressor, zero
    elsewhere."""
    if plm_kind == "moment":
        return {"log_k": np.array([0.0, 1.0])}
    if plm_kind == "price":
        return {"log_w": np.array([0.0, 1.0, 0.0]), "r": np.array([0.0, 0.0, 1.0])}
    raise ValueError(f"unknown PLM kind {plm_kind!r}")


def _gh_atoms(center, sd, n):
    # Gauss-Hermite nodes for a normal around center; n=0 or sd=0 degenerates
    if n <= 1 or sd <= 0.0:
        return np.array([1.0]), np.array([center])
    x, w = np.polynomial.hermite.hermgauss(n)
    return w / np.sqrt(np.pi), center + np.sqrt(2.0) * sd * x


def build_forecast_grid(
    params: EconomyParams,
    kind: str,
    k_center: float,
    l_star: float,
    n_nodes: int = 9,
    span: float = 0.25,
) -> ForecastGrid:
    """Forecast-state lattice around a capital level.

    Nodes are log-spaced over k_center*exp(+-span); every node carries
    the firm-FOC prices at its own capital and the row's z. The scalar
    node coordinate is the active model's forecast statistic: log k for
    the moment PLM, log w for the price PLM (the price pair itself
    lives on the firm-FOC manifold, so one coordinate pins both).
    """
    if kind not in ("moment", "price"):
        raise ValueError(f"unknown forecast grid kind {kind!r}")
    if n_nodes < 1:
        raise ValueError("need at least one forecast node")
    z_states = np.asarray(params.z_chain.states, dtype=float)
    nz = z_states.size
    logk = np.linspace(np.log(k_center) - span, np.log(k_center) + span, n_nodes)
    if n_nodes == 1:
        logk = np.array([np.log(k_center)])
    w = np.empty((nz, n_nodes))
    r = np.empty((nz, n_nodes))
    for iz, z in enumerate(z_states):
        for s, lk in enumerate(logk):
            w[iz, s], r[iz, s] = firm_prices(params, float(np.exp(lk)), l_star, float(z))
    coords = np.broadcast_to(logk, (nz, n_nodes)).copy()
    if kind == "price":
        coords = np.log(w)
    return ForecastGrid(coords, w, r)


class ConstantPriceBelief(BeliefModel):
    """Prices expected to stay at fixed per-z values forever.

    Reads nothing from observables; update is a no-op. coefficients()
    exposes the (w, r) rows so convergence monitors see a flat line.
    """

    model_kind = "constant-price"

    def __init__(self, w, r):
        self.w = np.atleast_1d(np.asarray(w, dtype=float))
        self.r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.w.shape != self.r.shape:
            raise ValueError("w and r must have one value per z state")
        self.t = 0

    @classmethod
    def from_steady_state(cls, ss) -> "ConstantPriceBelief":
        return cls(np.full(len(ss.params.z_chain.states), ss.w),
                   np.full(len(ss.params.z_chain.states), ss.r))

    def forecast(self, observables) -> np.ndarray:
        return np.column_stack([self.w, self.r])

    def update(self, realized, observables) -> None:
        self.t += 1

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.w, self.r])

    def coordinate(self, observables) -> float:
        """Forecast-state coordinate; pairs naturally with one-node rows."""
        return float(np.log(self.w[observables.iz]))

    def forecast_lattice(self, fgrid: ForecastGrid) -> ForecastAtoms:
        nz, ns = fgrid.coords.shape
        if nz != self.w.size:
            raise ValueError("belief covers a different number of z states")
        prob = np.ones((nz, ns, nz, 1))
        coord = np.empty((nz, ns, nz, 1))
        for jz in range(nz):
            # nearest lattice coordinate to the believed-constant price state
            target = fgrid.coords[jz, np.argmin(np.abs(fgrid.w[jz] - self.w[jz]))]
            coord[:, :, jz, 0] = target
        return ForecastAtoms(prob, coord)


class _PerTransitionRls:
    """One RlsState per (current z, next z) cell, flat helpers shared by
    the two PLM beliefs."""

    def __init__(self, nz: int, dim: int, ridge: float, priors):
        self.nz = nz
        self.dim = dim
        self.cells = [
            [RlsState(dim, ridge=ridge, theta_prior=priors[iz][jz]) for jz in range(nz)]
            for iz in range(nz)
        ]

    def theta(self, iz: int, jz: int) -> np.ndarray:
        return self.cells[iz][jz].theta

    def flat(self) -> np.ndarray:
        return np.concatenate([self.cells[iz][jz].theta
                               for iz in range(self.nz) for jz in range(self.nz)])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float).reshape(self.nz * self.nz, self.dim)
        for iz in range(self.nz):
            for jz in range(self.nz):
                cell = self.cells[iz][jz]
                theta = vec[iz * self.nz + jz]
                # rewrite the moment vector so the imposed coefficients are the
                # exact ridge solve of the stored moments; SSR stays put
                b_data = cell.b - cell.anchor
                ssr = cell.sp2 - 2.0 * cell.theta @ b_data + cell.theta @ cell.A @ cell.theta
                cell.anchor = cell.ridge * theta
                cell.b = cell.A @ theta + cell.anchor
                cell.sp2 = ssr + theta @ cell.A @ theta
                cell.theta = cell._solve()

    def sd(self, iz: int, jz: int) -> float:
        return float(np.sqrt(self.cells[iz][jz].residual_variance()))

    def total_t(self) -> int:
        return sum(self.cells[iz][jz].t for iz in range(self.nz) for jz in range(self.nz))


class MomentBelief(BeliefModel):
    """Perceived law of motion for the capital moment.

    Regresses log k' on (1, log k) separately per (z, z') transition and
    maps predicted capital to prices through the firm conditions at the
    forecast's z' and stationary effective labor. Reads observables.iz
    and observables.k; update regresses the next observation's log k on
    the previous one's.
    """

    model_kind = "moment-plm"

    def __init__(self, params: EconomyParams, l_star: float | None = None,
                 ridge: float = 1e-4, quad_nodes: int = 0):
        self.params = params
        self.z_states = np.asarray(params.z_chain.states, dtype=float)
        nz = self.z_states.size
        if l_star is None:
            pi_y = stationary_distribution(params.income_chain)
            l_star = float(pi_y @ params.income_chain.states)
        self.l_star = l_star
        if quad_nodes and not 3 <= quad_nodes <= 7:
            raise ValueError("quadrature nodes must lie in 3..7 (or 0 for point forecasts)")
        self.quad_nodes = quad_nodes
        # random-walk prior log k' = log k: neutral start the data overwrites
        prior = plm_prior("moment")["log_k"]
        priors = [[prior] * nz for _ in range(nz)]
        self._rls = _PerTransitionRls(nz, 2, ridge, priors)

    @property
    def t(self) -> int:
        return self._rls.total_t()

    def forecast(self, observables: Observation) -> np.ndarray:
        """(nz, 2) array of (w, r) forecasts, one row per next z."""
        x = np.array([1.0, observables.log_k])
        out = np.empty((self.z_states.size, 2))
        for jz, z in enumerate(self.z_states):
            k_hat = float(np.exp(self._rls.theta(observables.iz, jz) @ x))
            out[jz] = firm_prices(self.params, k_hat, self.l_star, float(z))
        return out

    def update(self, realized: Observation, observables: Observation) -> None:
        x = np.array([1.0, observables.log_k])
        self._rls.cells[observables.iz][realized.iz].update(x, realized.log_k)

    def coefficients(self) -> np.ndarray:
        return self._rls.flat()

    def set_coefficients(self, vec) -> None:
        """Driver hook: impose damped coefficients between outer iterations."""
        self._rls.set_flat(vec)

    def coordinate(self, observables) -> float:
        return observables.log_k

    def forecast_lattice(self, fgrid: ForecastGrid) -> ForecastAtoms:
        nz, ns = fgrid.coords.shape
        nq = max(self.quad_nodes, 1)
        prob = np.empty((nz, ns, nz, nq))
        coord = np.empty((nz, ns, nz, nq))
        for iz in range(nz):
            for s in range(ns):
                x = np.array([1.0, fgrid.coords[iz, s]])
                for jz in range(nz):
                    center = float(self._rls.theta(iz, jz) @ x)
                    sd = self._rls.sd(iz, jz) if self.quad_nodes else 0.0
                    p, c = _gh_atoms(center, sd, nq)
                    prob[iz, s, jz, : p.size] = p
                    coord[iz, s, jz, : p.size] = c
                    if p.size < nq:
                        prob[iz, s, jz, p.size:] = 0.0
                        coord[iz, s, jz, p.size:] = c[-1]
        return ForecastAtoms(prob, coord)


class PricePlmBelief(BeliefModel):
    """Perceived laws of motion for the prices themselves.

    Two regressions per (z, z') transition on x = (1, log w, r): one for
    log w' and one for r'. The lattice coordinate is log w, with each
    node's (w, r) pair pinned to the firm-FOC manifold; the r' equation
    therefore only enters records and consistency diagnostics, while the
    household continuation reads the manifold r at the forecast node.
    Reads observables.iz, .w and .r.
    """

    model_kind = "price-plm"

    def __init__(self, params: EconomyParams, ridge: float = 1e-4,
                 quad_nodes: int = 0):
        self.params = params
        self.z_states = np.asarray(params.z_chain.states, dtype=float)
        nz = self.z_states.size
        if quad_nodes and not 3 <= quad_nodes <= 7:
            raise ValueError("quadrature nodes must lie in 3..7 (or 0 for point forecasts)")
        self.quad_nodes = quad_nodes
        base = plm_prior("price")
        priors_w = [[base["log_w"]] * nz for _ in range(nz)]
        priors_r = [[base["r"]] * nz for _ in range(nz)]
        self._rls_w = _PerTransitionRls(nz, 3, ridge, priors_w)
        self._rls_r = _PerTransitionRls(nz, 3, ridge, priors_r)

    @property
    def t(self) -> int:
        return self._rls_w.total_t()

    @staticmethod
    def _x(log_w: float, r: float) -> np.ndarray:
        return np.array([1.0, log_w, r])

    def forecast(self, observables: Observation) -> np.ndarray:
        x = self._x(observables.log_w, observables.r)
        out = np.empty((self.z_states.size, 2))
        for jz in range(self.z_states.size):
            out[jz, 0] = np.exp(self._rls_w.theta(observables.iz, jz) @ x)
            out[jz, 1] = self._rls_r.theta(observables.iz, jz) @ x
        return out

    def update(self, realized: Observation, observables: Observation) -> None:
        x = self._x(observables.log_w, observables.r)
        self._rls_w.cells[observables.iz][realized.iz].update(x, realized.log_w)
        self._rls_r.cells[observables.iz][realized.iz].update(x, realized.r)

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self._rls_w.flat(), self._rls_r.flat()])

    def set_coefficients(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        half = vec.size // 2
        self._rls_w.set_flat(vec[:half])
        self._rls_r.set_flat(vec[half:])

    def coordinate(self, observables) -> float:
        return observables.log_w

    def residual_scale(self):
        """Pooled residual sds of the two price equations, keyed by price."""
        sw = [self._rls_w.sd(iz, jz) for iz in range(self.z_states.size)
              for jz in range(self.z_states.size)]
        sr = [self._rls_r.sd(iz, jz) for iz in range(self.z_states.size)
              for jz in range(self.z_states.size)]
        return {"w": float(np.sqrt(np.mean(np.square(sw)))),
                "r": float(np.sqrt(np.mean(np.square(sr))))}

    def forecast_lattice(self, fgrid: ForecastGrid) -> ForecastAtoms:
        nz, ns = fgrid.coords.shape
        nq = max(self.quad_nodes, 1)
        prob = np.empty((nz, ns, nz, nq))
        coord = np.empty((nz, ns, nz, nq))
        for iz in range(nz):
            for s in range(ns):
                x = self._x(fgrid.coords[iz, s], fgrid.r[iz, s])
                for jz in range(nz):
                    center = float(self._rls_w.theta(iz, jz) @ x)
                    sd = self._rls_w.sd(iz, jz) if self.quad_nodes else 0.0
                    p, c = _gh_atoms(center, sd, nq)
                    prob[iz, s, jz, : p.size] = p
                    coord[iz, s, jz, : p.size] = c
                    if p.size < nq:
                        prob[iz, s, jz, p.size:] = 0.0
                        coord[iz, s, jz, p.size:] = c[-1]
        return ForecastAtoms(prob, coord)
