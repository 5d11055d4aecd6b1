"""Belief models over the forecast-state lattice."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tempeq.beliefs import (
    ConstantPriceBelief,
    MomentBelief,
    Observation,
    PricePlmBelief,
    _gh_atoms,
    build_forecast_grid,
    plm_prior,
)
from tempeq.economy import EconomyParams, firm_prices
from tempeq.stoch import stationary_distribution

PARAMS = EconomyParams()


def make_obs(iz=0, k=39.0, l=1.0) -> Observation:
    w, r = firm_prices(PARAMS, k, l, PARAMS.z_chain.states[iz])
    return Observation(iz=iz, k=k, l=l, w=w, r=r)


def test_observation_logs():
    obs = Observation(iz=0, k=np.e, l=1.0, w=np.e**2, r=0.01)
    assert obs.log_k == pytest.approx(1.0)
    assert obs.log_w == pytest.approx(2.0)


def test_plm_prior_shapes():
    moment = plm_prior("moment")
    assert set(moment) == {"log_k"}
    assert_allclose(moment["log_k"], [0.0, 1.0])
    price = plm_prior("price")
    assert set(price) == {"log_w", "r"}
    assert_allclose(price["log_w"], [0.0, 1.0, 0.0])
    assert_allclose(price["r"], [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        plm_prior("volatility")


def test_gh_atoms_match_normal_moments():
    p, c = _gh_atoms(1.5, 0.3, 3)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert p @ c == pytest.approx(1.5, abs=1e-12)
    assert p @ (c - 1.5) ** 2 == pytest.approx(0.09, abs=1e-12)

    p5, c5 = _gh_atoms(0.0, 2.0, 5)
    assert p5 @ c5**4 == pytest.approx(3 * 2.0**4, abs=1e-10)

    # degenerate requests collapse to a single point mass at the center
    p1, c1 = _gh_atoms(0.7, 0.0, 5)
    assert_allclose(p1, [1.0])
    assert_allclose(c1, [0.7])


def test_build_forecast_grid_moment():
    fgrid = build_forecast_grid(PARAMS, "moment", k_center=39.0, l_star=1.0, n_nodes=5, span=0.2)
    assert fgrid.coords.shape == (2, 5)
    expect = np.linspace(np.log(39.0) - 0.2, np.log(39.0) + 0.2, 5)
    assert_allclose(fgrid.coords[0], expect, atol=1e-12)
    assert_allclose(fgrid.coords[1], expect, atol=1e-12)
    # every node carries the firm-FOC prices at its own capital
    w, r = firm_prices(PARAMS, float(np.exp(expect[2])), 1.0, 0.99)
    assert fgrid.w[0, 2] == pytest.approx(w, abs=1e-12)
    assert fgrid.r[0, 2] == pytest.approx(r, abs=1e-12)


def test_build_forecast_grid_price_uses_log_wage_coordinate():
    fgrid = build_forecast_grid(PARAMS, "price", k_center=39.0, l_star=1.0, n_nodes=5)
    assert_allclose(fgrid.coords, np.log(fgrid.w), atol=1e-12)
    assert np.all(np.diff(fgrid.coords, axis=1) > 0)

    single = build_forecast_grid(PARAMS, "price", k_center=39.0, l_star=1.0, n_nodes=1)
    assert single.n_nodes == 1

    with pytest.raises(ValueError):
        build_forecast_grid(PARAMS, "variance", 39.0, 1.0)
    with pytest.raises(ValueError):
        build_forecast_grid(PARAMS, "price", 39.0, 1.0, n_nodes=0)


def test_constant_price_belief():
    belief = ConstantPriceBelief([2.0, 2.2], [0.01, 0.012])
    fc = belief.forecast(None)
    assert_allclose(fc, [[2.0, 0.01], [2.2, 0.012]])
    assert_allclose(belief.coefficients(), [2.0, 2.2, 0.01, 0.012])
    belief.update(None, None)
    assert belief.t == 1
    with pytest.raises(ValueError):
        ConstantPriceBelief([2.0], [0.01, 0.02])


def test_constant_price_lattice_targets_nearest_node(degenerate_steady):
    belief = ConstantPriceBelief.from_steady_state(degenerate_steady)
    fgrid = degenerate_steady.fgrid
    atoms = belief.forecast_lattice(fgrid)
    assert atoms.prob.shape == (1, fgrid.n_nodes, 1, 1)
    # believed-constant prices sit exactly on the steady-state node
    j = int(np.argmin(np.abs(fgrid.w[0] - degenerate_steady.w)))
    assert_allclose(atoms.coord[0, :, 0, 0], fgrid.coords[0, j], atol=1e-12)


def test_moment_belief_prior_is_random_walk():
    belief = MomentBelief(PARAMS, l_star=1.0)
    obs = make_obs(iz=0, k=40.0)
    fc = belief.forecast(obs)
    for jz, z in enumerate(PARAMS.z_chain.states):
        assert_allclose(fc[jz], firm_prices(PARAMS, 40.0, 1.0, float(z)), atol=1e-12)
    assert belief.coordinate(obs) == pytest.approx(np.log(40.0))


def test_moment_belief_updates_one_transition_cell():
    belief = MomentBelief(PARAMS, l_star=1.0)
    prev = make_obs(iz=0, k=39.0)
    nxt = make_obs(iz=1, k=40.0)
    belief.update(nxt, prev)
    counts = [[belief._rls.cells[i][j].t for j in range(2)] for i in range(2)]
    assert counts == [[0, 1], [0, 0]]
    assert belief.t == 1


def test_moment_belief_coefficient_round_trip():
    belief = MomentBelief(PARAMS, l_star=1.0)
    vec = belief.coefficients()
    assert vec.shape == (2 * 2 * 2,)
    assert_allclose(vec.reshape(-1, 2), [[0.0, 1.0]] * 4)
    vec2 = vec + 0.01 * np.arange(vec.size)
    belief.set_coefficients(vec2)
    assert_allclose(belief.coefficients(), vec2, atol=0)


def test_price_belief_prior_is_persistence():
    belief = PricePlmBelief(PARAMS)
    obs = make_obs(iz=0, k=39.0)
    fc = belief.forecast(obs)
    assert_allclose(fc, [[obs.w, obs.r]] * 2, atol=1e-12)
    assert belief.coordinate(obs) == pytest.approx(obs.log_w)


def test_price_belief_update_and_round_trip():
    belief = PricePlmBelief(PARAMS)
    prev = make_obs(iz=1, k=39.0)
    nxt = make_obs(iz=0, k=39.5)
    belief.update(nxt, prev)
    assert belief._rls_w.cells[1][0].t == 1
    assert belief._rls_r.cells[1][0].t == 1
    assert belief._rls_w.cells[0][0].t == 0

    vec = belief.coefficients()
    assert vec.shape == (2 * 4 * 3,)
    belief2 = PricePlmBelief(PARAMS)
    belief2.set_coefficients(vec)
    assert_allclose(belief2.coefficients(), vec, atol=0)

    scale = belief.residual_scale()
    assert set(scale) == {"w", "r"}
    assert scale["w"] == 0.0  # one observation cannot define a residual


def test_quad_nodes_validation():
    with pytest.raises(ValueError):
        MomentBelief(PARAMS, quad_nodes=2)
    with pytest.raises(ValueError):
        PricePlmBelief(PARAMS, quad_nodes=8)


def test_price_lattice_point_forecast_stays_on_node():
    belief = PricePlmBelief(PARAMS)
    fgrid = build_forecast_grid(PARAMS, "price", 39.0, 1.0, n_nodes=5)
    atoms = belief.forecast_lattice(fgrid)
    assert atoms.prob.shape == (2, 5, 2, 1)
    # persistence prior forecasts log w' = log w whatever z does
    for jz in range(2):
        assert_allclose(atoms.coord[0, :, jz, 0], fgrid.coords[0], atol=1e-12)


def test_quadrature_lattice_weights_sum_to_one():
    belief = MomentBelief(PARAMS, l_star=1.0, quad_nodes=5)
    fgrid = build_forecast_grid(PARAMS, "moment", 39.0, 1.0, n_nodes=3)
    atoms = belief.forecast_lattice(fgrid)
    assert atoms.prob.shape == (2, 3, 2, 5)
    assert_allclose(atoms.prob.sum(axis=3), 1.0, atol=1e-9)
    # a fresh belief has no residual spread, so the mass sits on one atom
    assert_allclose(atoms.prob[..., 1:], 0.0, atol=0)


def test_moment_belief_learns_a_planted_law():
    gen = np.random.default_rng(0)
    belief = MomentBelief(PARAMS, l_star=1.0)
    lk = 3.6
    for _ in range(4000):
        iz = int(gen.integers(0, 2))
        jz = int(gen.integers(0, 2))
        lk_next = 0.4 + 0.9 * lk + gen.normal(0.0, 0.001)
        belief.update(
            Observation(iz=jz, k=float(np.exp(lk_next)), l=1.0, w=2.0, r=0.01),
            Observation(iz=iz, k=float(np.exp(lk)), l=1.0, w=2.0, r=0.01),
        )
        lk = lk_next
    theta = belief.coefficients().reshape(-1, 2)
    assert_allclose(theta[:, 0], 0.4, atol=0.05)
    assert_allclose(theta[:, 1], 0.9, atol=0.02)


def test_effective_labor_defaults_to_stationary_mean():
    belief = MomentBelief(PARAMS)
    pi_y = stationary_distribution(PARAMS.income_chain)
    assert belief.l_star == pytest.approx(float(pi_y @ PARAMS.income_chain.states))
