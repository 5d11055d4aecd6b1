"""Double-well diffusion laboratory.

dX = -V'(X) dt + sigma dW with V(x) = (c4/4) x^4 - (c2/2) x^2 has minima at
+-sqrt(c2/c4) and an analytic stationary density proportional to
exp(-2 V(x) / sigma^2). Paths hop between the wells at a rate that any
linearization around one minimum puts essentially at zero, which is the
point of the comparison utilities here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import norm

from .stoch import RngStream

_DIVERGENCE_BOUND = 1e3


@dataclass(frozen=True)
class DoubleWellSpec:
    """Potential coefficients, noise level and step size.

    kind "diffusion" is the Euler-Maruyama discretization (noise sigma*sqrt(dt));
    kind "discrete" is the S-shaped map X' = X + dt*drift(X) + sigma*eps, the
    same loop with unit-variance shocks (equivalent to a diffusion with
    sigma/sqrt(dt)).
    """

    c4: float = 1.0
    c2: float = 1.0
    sigma: float = 0.5
    dt: float = 0.01
    kind: str = "diffusion"

    def __post_init__(self):
        if self.c4 <= 0 or self.c2 <= 0:
            raise ValueError("need c4 > 0 and c2 > 0 for two wells")
        if self.sigma < 0:
            raise ValueError("noise level cannot be negative")
        if not 0 < self.dt <= 0.05:
            raise ValueError("dt must lie in (0, 0.05]; the cubic drift is unstable beyond that")
        if self.kind not in ("diffusion", "discrete"):
            raise ValueError("kind must be 'diffusion' or 'discrete'")

    @property
    def well(self) -> float:
        """Position of the right minimum."""
        return float(np.sqrt(self.c2 / self.c4))

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return self.c4 / 4.0 * x**4 - self.c2 / 2.0 * x**2


def drift(spec: DoubleWellSpec, x):
    """-V'(x) = -c4 x^3 + c2 x."""
    x = np.asarray(x, dtype=float)
    out = -spec.c4 * x**3 + spec.c2 * x
    return float(out) if out.ndim == 0 else out


@njit(cache=True)
def _em_kernel(path, x0, c4, c2, dt, noise_scale, shocks, offset):  # pragma: no cover
    x = x0
    for i in range(shocks.shape[0]):
        x = x + (-c4 * x**3 + c2 * x) * dt + noise_scale * shocks[i]
        if abs(x) > _DIVERGENCE_BOUND:
            path[offset + i] = x
            return offset + i
        path[offset + i] = x
    return -1


def simulate_em(spec: DoubleWellSpec, x0: float, T: int, rng: RngStream) -> np.ndarray:
    """Simulate T steps; returns the path including x0 (length T+1).

    Shocks are drawn in chunks to bound memory on long runs. A sample
    exceeding |x| = 1e3 aborts with a pointer at the dt stability guard.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    noise_scale = spec.sigma * np.sqrt(spec.dt) if spec.kind == "diffusion" else spec.sigma
    path = np.empty(T + 1)
    path[0] = x0
    gen = rng.generator()
    chunk = 1_000_000
    done = 0
    x = float(x0)
    while done < T:
        m = min(chunk, T - done)
        shocks = gen.standard_normal(m) if noise_scale > 0 else np.zeros(m)
        bad = _em_kernel(path, x, spec.c4, spec.c2, spec.dt, noise_scale, shocks, 1 + done)
        if bad >= 0:
            raise FloatingPointError(
                f"path diverged (|x| > {_DIVERGENCE_BOUND:g}) at step {bad}; "
                "the dt <= 0.05 stability guard assumes noise of moderate size, "
                "reduce dt or sigma"
            )
        done += m
        x = path[done]
    return path


def stationary_density(spec: DoubleWellSpec, grid) -> np.ndarray:
    """exp(-2 V / sigma^2) on the grid, normalized to integrate to 1 (trapezoid)."""
    if spec.sigma <= 0:
        raise ValueError("no stationary density without noise (sigma > 0 required)")
    grid = np.asarray(grid, dtype=float)
    f = np.exp(-2.0 * spec.potential(grid) / spec.sigma**2)
    z = np.trapezoid(f, grid)
    return f / z


def hopping_stats(path, threshold: float = 0.5) -> dict:
    """Well-hopping statistics under a hysteresis rule.

    A hop is a crossing from below -threshold to above +threshold or back;
    wandering near zero without reaching the far threshold does not count.
    Occupancy is (fraction of samples with x < 0, fraction with x >= 0).
    Residence times are the inter-hop durations in steps, attributed to the
    well occupied during the interval.
    """
    if threshold <= 0:
        raise ValueError("hysteresis threshold must be positive")
    path = np.asarray(path, dtype=float)
    region = np.zeros(path.size, dtype=np.int8)
    region[path >= threshold] = 1
    region[path <= -threshold] = -1

    nz = np.flatnonzero(region)
    occ_left = float(np.mean(path < 0))
    occ_right = float(np.mean(path >= 0))
    if nz.size == 0:
        rs = np.empty(0, dtype=np.int8)
        flips = np.empty(0, dtype=np.int64)
    else:
        rs = region[nz]
        flips = np.flatnonzero(rs[1:] != rs[:-1])

    crossings = int(flips.size)
    up = int(np.sum(rs[flips + 1] == 1)) if crossings else 0
    down = crossings - up
    if nz.size:
        # occupation k runs from times[k] to times[k+1] in well wells[k]
        times = np.concatenate(([nz[0]], nz[flips + 1]))
        wells = rs[np.concatenate(([0], flips + 1))]
        durations = np.diff(times)
        res_left = durations[wells[:-1] == -1]
        res_right = durations[wells[:-1] == 1]
    else:
        res_left = res_right = np.empty(0)
    # a well never left contributes the whole path; one never entered contributes 0
    occupied = rs[0] if nz.size else 0
    mean_res = {
        "left": float(np.mean(res_left)) if res_left.size else (float(path.size) if occupied == -1 else 0.0),
        "right": float(np.mean(res_right)) if res_right.size else (float(path.size) if occupied == 1 else 0.0),
    }
    return {
        "crossings": crossings,
        "up_crossings": up,
        "down_crossings": down,
        "mean_residence": mean_res,
        "occupancy": (occ_left, occ_right),
    }


def linearized_comparison(spec: DoubleWellSpec, well: str = "left") -> dict:
    """Ornstein-Uhlenbeck linearization at one minimum versus the true density.

    Linearizing the drift at x* gives an OU process with stationary variance
    sigma^2 / (2 V''(x*)). The report holds the OU stationary sd, the OU
    probability mass beyond the basin boundary x = 0, the true mass there,
    and their ratio: the factor by which the local approximation understates
    excursions to the other well.
    """
    if spec.sigma <= 0:
        raise ValueError("comparison needs sigma > 0")
    if well not in ("left", "right"):
        raise ValueError("well must be 'left' or 'right'")
    xstar = -spec.well if well == "left" else spec.well
    vpp = 3.0 * spec.c4 * xstar**2 - spec.c2  # = 2 c2 at either minimum
    ou_sd = spec.sigma / np.sqrt(2.0 * vpp)
    # mass on the far side of the saddle at 0
    ou_far_mass = float(norm.cdf(-abs(xstar) / ou_sd))
    span = max(4.0 * spec.well, 6.0 * ou_sd)
    grid = np.linspace(-span, span, 4001)
    f = stationary_density(spec, grid)
    if well == "left":
        mask = grid >= 0
    else:
        mask = grid <= 0
    true_far_mass = float(np.trapezoid(np.where(mask, f, 0.0), grid))
    return {
        "well": well,
        "x_star": float(xstar),
        "ou_sd": float(ou_sd),
        "ou_far_mass": ou_far_mass,
        "true_far_mass": true_far_mass,
        "ratio": true_far_mass / ou_far_mass if ou_far_mass > 0 else np.inf,
    }


def path_to_csv(path_array, file, thin: int = 1, config_hash: str | None = None) -> None:
    path_array = np.asarray(path_array, dtype=float)
    with open(file, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "x"])
        for i in range(0, path_array.size, thin):
            writer.writerow([i, repr(float(path_array[i]))])


def density_to_csv(grid, density, file, config_hash: str | None = None) -> None:
    with open(file, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "density"])
        for x, d in zip(grid, density):
            writer.writerow([repr(float(x)), repr(float(d))])


def hopping_to_json(stats: dict, file) -> None:
    with open(file, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
