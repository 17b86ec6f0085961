import math

import numpy as np
import pytest

from fodkit.convolution import forward_signal
from fodkit.errors import ConfigurationError
from fodkit.simulation import (
    Scenario,
    add_rician_noise,
    fiber_directions,
    make_scenario,
    noiseless_signal,
    standard_scenarios,
    project_truth,
    replicate_rng,
    scenario_by_id,
    simulate_replicate,
    truncation_error,
    with_reps,
)
from fodkit.sphere import SHBasis, UnitDirection, axial_angle, eval_real_sym_sh, gradient_grid


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        make_scenario(1, snr=0.0)
    u = UnitDirection.from_degrees(10, 0)
    with pytest.raises(ConfigurationError):
        Scenario("bad", fibers=((u, 0.7), (u, 0.7)))


def test_scenario_json_round_trip():
    sc = make_scenario(2, sep=60.0, b=3000.0)
    back = Scenario.from_dict(sc.to_dict())
    assert back == sc


def test_project_truth():
    basis = SHBasis(8)
    iso = project_truth(make_scenario(0), basis).f_star
    assert iso[0] == pytest.approx(1 / (2 * math.sqrt(math.pi)))
    assert not np.any(iso[1:])
    pole = Scenario("pole", fibers=((UnitDirection(0.0, 0.0), 1.0),))
    f = project_truth(pole, basis).f_star
    assert np.all(np.abs(f[basis.orders != 0]) < 1e-12)
    sc = make_scenario(2, sep=90.0)
    parts = [eval_real_sym_sh(basis, u) for u in sc.directions]
    assert np.allclose(project_truth(sc, basis).f_star, 0.5 * (parts[0] + parts[1]), atol=1e-12)


def test_noiseless_signal_examples():
    sc = make_scenario(1)
    u = sc.directions[0].xyz
    r = sc.response
    s = noiseless_signal(sc, np.array([u]))
    assert s[0] == pytest.approx(math.exp(-r.b * r.lambda3))
    perp = np.cross(u, [0.0, 0.0, 1.0])
    assert noiseless_signal(sc, np.array([perp]))[0] == pytest.approx(math.exp(-r.b * r.lambda1))
    two = make_scenario(2, sep=90.0)
    g = np.array([[1.0, 0.0, 0.0]])
    expected = np.mean([r(u.xyz @ g[0]) for u in two.directions])
    assert noiseless_signal(two, g)[0] == pytest.approx(expected)


def test_isotropic_signal_matches_forward():
    sc = make_scenario(0)
    g = gradient_grid(41)
    s = noiseless_signal(sc, g)
    fwd = forward_signal(project_truth(sc, SHBasis(8)).f_star, sc.response, g)
    assert np.ptp(s) < 1e-12
    assert s == pytest.approx(fwd, rel=1e-10)


def test_signal_matches_truncated_forward():
    sc = make_scenario(1)
    g = gradient_grid(81)
    exact = noiseless_signal(sc, g)
    approx = forward_signal(project_truth(sc, SHBasis(16)).f_star, sc.response, g)
    assert np.max(np.abs(exact - approx)) < 0.02


def test_rician_limits():
    rng = np.random.default_rng(0)
    s = np.linspace(0.1, 1.0, 20)
    assert np.allclose(add_rician_noise(s, 1e-12, rng), s, atol=1e-9)
    y = add_rician_noise(np.zeros(100_000), 0.1, np.random.default_rng(1))
    assert y.mean() == pytest.approx(0.1 * math.sqrt(math.pi / 2), rel=0.02)
    y = add_rician_noise(np.full(100_000, 0.5), 0.1, np.random.default_rng(2))
    assert (y**2).mean() == pytest.approx(0.25 + 0.02, rel=0.02)


def test_fiber_geometry():
    for sep in (90, 75, 60, 45, 30):
        a, b = fiber_directions(2, sep)
        assert axial_angle(a.xyz, b.xyz) == pytest.approx(sep)
    d = [u.xyz for u in fiber_directions(3)]
    got = sorted(float(axial_angle(d[i], d[j])) for i, j in ((0, 1), (0, 2), (1, 2)))
    assert got == pytest.approx([60.0, 75.0, 90.0])
    with pytest.raises(ConfigurationError):
        fiber_directions(2, None)


def test_standard_scenarios():
    scs = standard_scenarios()
    # per (n, snr): K=0,1,3 and five separations at b=1000, 3000, plus 45/30 at b=5000
    assert len(scs) == 3 * 2 * (2 * 8 + 2)
    assert len({s.id for s in scs}) == len(scs)
    assert {s.seed for s in scs} == {0}
    k2 = [s for s in scs if s.k == 2]
    assert {s.sep for s in k2} == {90, 75, 60, 45, 30}
    assert {tuple(s.weights) for s in k2} == {(0.5, 0.5)}
    k3 = [s for s in scs if s.k == 3]
    assert {tuple(s.weights) for s in k3} == {(0.3, 0.3, 0.4)}
    assert {s.b for s in scs} == {1000, 3000, 5000}
    assert {s.n_gradients for s in scs} == {41, 81, 321}


def test_scenario_lookup():
    sc = scenario_by_id("2fib_sep90_b1000_n41_snr20", reps=7)
    assert sc.k == 2 and sc.sep == 90 and sc.reps == 7
    with pytest.raises(ConfigurationError):
        scenario_by_id("nope")
    assert with_reps(sc, 3).reps == 3


def test_replicates_are_reproducible_and_independent():
    sc = make_scenario(2, sep=60.0)
    g = gradient_grid(41)
    a = simulate_replicate(sc, g, 4)
    b = simulate_replicate(sc, g, 4)
    c = simulate_replicate(sc, g, 5)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)
    r1 = replicate_rng(sc.id, 0, 1).standard_normal(3)
    r2 = replicate_rng(sc.id, 0, 2).standard_normal(3)
    assert not np.array_equal(r1, r2)


def test_isotropic_replicates_have_constant_mean():
    sc = make_scenario(0)
    g = gradient_grid(41)
    ys = np.array([simulate_replicate(sc, g, r) for r in range(200)])
    col_means = ys.mean(axis=0)
    assert np.ptp(col_means) < 6 * sc.sigma / math.sqrt(200)


def test_truncation_error():
    g = gradient_grid(41)
    assert truncation_error(make_scenario(0), g) < 1e-12
    one = make_scenario(1)
    e8, e16 = truncation_error(one, g, 8), truncation_error(one, g, 16)
    assert 0 < e16 < e8 < 0.05
    sharp = make_scenario(1, b=5000.0)
    assert truncation_error(sharp, g, 8) > e8
