"""Double-well diffusion: analytic density, hopping, and the OU contrast."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm

from tempeq.bistable import (
    DoubleWellSpec,
    density_to_csv,
    drift,
    hopping_stats,
    hopping_to_json,
    linearized_comparison,
    path_to_csv,
    simulate_em,
    stationary_density,
)
from tempeq.stoch import RngStream


def test_spec_validation():
    with pytest.raises(ValueError):
        DoubleWellSpec(c4=0.0)
    with pytest.raises(ValueError):
        DoubleWellSpec(c2=-1.0)
    with pytest.raises(ValueError):
        DoubleWellSpec(sigma=-0.1)
    with pytest.raises(ValueError):
        DoubleWellSpec(dt=0.06)
    with pytest.raises(ValueError):
        DoubleWellSpec(dt=0.0)
    with pytest.raises(ValueError):
        DoubleWellSpec(kind="jump")


def test_wells_and_drift():
    spec = DoubleWellSpec(c4=1.0, c2=4.0)
    assert spec.well == pytest.approx(2.0)
    assert drift(spec, 0.0) == 0.0
    assert drift(spec, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert drift(spec, -2.0) == pytest.approx(0.0, abs=1e-12)

    std = DoubleWellSpec()
    assert drift(std, 0.5) > 0  # pushed out toward the right well
    assert drift(std, 1.5) < 0  # pulled back in
    assert std.potential(1.0) == pytest.approx(-0.25)
    assert std.potential(0.0) == 0.0
    assert_allclose(std.potential([-1.0, 1.0]), [-0.25, -0.25])


def test_stationary_density_analytic_properties():
    spec = DoubleWellSpec(sigma=0.7)
    grid = np.linspace(-3.0, 3.0, 1201)
    f = stationary_density(spec, grid)
    assert np.trapezoid(f, grid) == pytest.approx(1.0, abs=1e-8)
    assert_allclose(f, f[::-1], atol=1e-12)  # even potential, even density

    i_well = int(np.argmin(np.abs(grid - 1.0)))
    i_saddle = int(np.argmin(np.abs(grid)))
    # mode-to-saddle ratio exp(2 (V(0) - V(1)) / sigma^2) = exp(0.5 / sigma^2)
    assert f[i_well] / f[i_saddle] == pytest.approx(np.exp(0.5 / 0.49), rel=1e-12)

    with pytest.raises(ValueError):
        stationary_density(DoubleWellSpec(sigma=0.0), grid)


def test_noiseless_flow_settles_in_the_nearest_well():
    spec = DoubleWellSpec(sigma=0.0)
    right = simulate_em(spec, 0.5, 2000, RngStream(0, 0))
    assert right.size == 2001
    assert right[0] == 0.5
    assert right[-1] == pytest.approx(1.0, abs=1e-9)
    left = simulate_em(spec, -0.5, 2000, RngStream(0, 0))
    assert left[-1] == pytest.approx(-1.0, abs=1e-9)
    ridge = simulate_em(spec, 0.0, 100, RngStream(0, 0))
    assert_allclose(ridge, 0.0, atol=0)


def test_simulation_is_reproducible():
    spec = DoubleWellSpec(sigma=0.7)
    a = simulate_em(spec, -1.0, 5000, RngStream(3, 1))
    b = simulate_em(spec, -1.0, 5000, RngStream(3, 1))
    c = simulate_em(spec, -1.0, 5000, RngStream(3, 2))
    assert_allclose(a, b, rtol=0, atol=0)
    assert np.any(a != c)


def test_divergence_guard_points_at_dt():
    spec = DoubleWellSpec(sigma=0.0, dt=0.05)
    with pytest.raises(FloatingPointError, match="dt"):
        simulate_em(spec, 50.0, 10, RngStream(0, 0))


def test_discrete_kind_matches_rescaled_diffusion():
    dt = 0.01
    diffusion = DoubleWellSpec(sigma=0.7, dt=dt, kind="diffusion")
    discrete = DoubleWellSpec(sigma=0.7 * np.sqrt(dt), dt=dt, kind="discrete")
    a = simulate_em(diffusion, -1.0, 1000, RngStream(5, 0))
    b = simulate_em(discrete, -1.0, 1000, RngStream(5, 0))
    assert_allclose(a, b, rtol=0, atol=0)


def test_hopping_stats_square_wave():
    path = np.concatenate([np.full(5, -1.0), np.full(5, 1.0), np.full(5, -1.0)])
    stats = hopping_stats(path)
    assert stats["crossings"] == 2
    assert stats["up_crossings"] == 1
    assert stats["down_crossings"] == 1
    assert stats["occupancy"] == pytest.approx((10 / 15, 5 / 15))
    assert stats["mean_residence"] == {"left": 5.0, "right": 5.0}


def test_hopping_stats_edge_cases():
    constant = hopping_stats(np.full(40, 1.0))
    assert constant["crossings"] == 0
    assert constant["occupancy"] == (0.0, 1.0)
    assert constant["mean_residence"] == {"left": 0.0, "right": 40.0}

    # wandering inside the hysteresis band never counts as a hop
    wander = hopping_stats(np.array([-0.4, 0.4, -0.4, 0.4]))
    assert wander["crossings"] == 0

    partial = hopping_stats(np.array([-1.0, 0.4, -1.0, 1.0]))
    assert partial["crossings"] == 1
    assert partial["up_crossings"] == 1
    assert partial["down_crossings"] == 0

    with pytest.raises(ValueError):
        hopping_stats(np.zeros(5), threshold=0.0)


def test_linearized_comparison_understates_hopping():
    spec = DoubleWellSpec(sigma=0.7)
    rep = linearized_comparison(spec, well="left")
    assert rep["x_star"] == -1.0
    assert rep["ou_sd"] == pytest.approx(0.35, abs=1e-12)
    assert rep["ou_far_mass"] == pytest.approx(float(norm.cdf(-1.0 / 0.35)), abs=1e-12)
    assert rep["true_far_mass"] == pytest.approx(0.5, abs=0.01)
    assert rep["ratio"] > 100.0

    other = linearized_comparison(spec, well="right")
    assert other["x_star"] == 1.0
    assert other["ou_far_mass"] == pytest.approx(rep["ou_far_mass"], abs=1e-15)

    with pytest.raises(ValueError):
        linearized_comparison(spec, well="middle")
    with pytest.raises(ValueError):
        linearized_comparison(DoubleWellSpec(sigma=0.0))


def test_long_run_matches_stationary_density():
    spec = DoubleWellSpec(sigma=0.7)
    path = simulate_em(spec, -1.0, 1_000_000, RngStream(11, 0))
    stats = hopping_stats(path)
    assert stats["occupancy"][0] > 0.2 and stats["occupancy"][1] > 0.2
    assert stats["crossings"] > 100

    edges = np.linspace(-3.0, 3.0, 21)
    emp, _ = np.histogram(path, bins=edges)
    emp = emp / path.size
    xs = np.linspace(-3.0, 3.0, 2401)  # 120 grid intervals per bin
    f = stationary_density(spec, xs)
    true = np.array([
        np.trapezoid(f[i * 120:(i + 1) * 120 + 1], xs[i * 120:(i + 1) * 120 + 1])
        for i in range(20)
    ])
    assert np.abs(emp - true).sum() < 0.1


def test_csv_and_json_writers(tmp_path):
    path_file = tmp_path / "path.csv"
    path_to_csv(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), path_file, thin=2, config_hash="aa")
    lines = path_file.read_text().splitlines()
    assert lines[0] == "# config_hash=aa"
    assert lines[1] == "step,x"
    assert [ln.split(",")[0] for ln in lines[2:]] == ["0", "2", "4"]

    dens_file = tmp_path / "density.csv"
    density_to_csv([0.0, 0.5], [1.25, 0.75], dens_file)
    assert dens_file.read_text().splitlines()[1] == "0.0,1.25"

    stats = hopping_stats(np.full(10, 1.0))
    json_file = tmp_path / "hops.json"
    hopping_to_json(stats, json_file)
    loaded = json.loads(json_file.read_text())
    assert loaded["crossings"] == 0
    assert loaded["occupancy"] == [0.0, 1.0]
