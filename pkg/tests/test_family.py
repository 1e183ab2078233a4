import numpy as np
import pytest

from starstab import eos, family
from starstab.errors import ConfigError, IndeterminateError


def test_seed_count():
    assert family.seed_count(1.25) == 1
    assert family.seed_count(1.5) == 0
    for g in (4 / 3, 1.2, 2.0):
        with pytest.raises(ConfigError):
            family.seed_count(g)


def test_degenerate_family_refuses_classification():
    law = eos.make_polytrope(1.0, 4.0 / 3.0)
    curve = family.sweep(law, 0.5, 2.0, n=9)
    assert curve.degenerate and curve.events == []
    with pytest.raises(IndeterminateError):
        family.classify(curve, 4.0 / 3.0, seed=0)


def test_sweep_validates_range():
    law = eos.make_polytrope(1.0, 1.5)
    with pytest.raises(ConfigError):
        family.sweep(law, 2.0, 1.0)
    with pytest.raises(ConfigError):
        family.sweep(law, 0.1, 1.0, n=3)


def test_polytrope_log_slopes_exact():
    gamma = 1.5
    curve = family.sweep(eos.make_polytrope(1.0, gamma), 0.1, 10.0, n=17)
    assert np.allclose(curve.slope_M, (3 * gamma - 4) / 2, atol=1e-6)
    assert np.allclose(curve.slope_R, (gamma - 2) / 2, atol=1e-6)


def _synthetic(mu, M, R):
    return family.FamilyCurve(mu, M, R)


def test_turning_points_on_synthetic_spiral():
    # a mass-radius spiral with a maximum then a minimum of M
    mu = np.exp(np.linspace(0.0, 5.5, 201))
    x = np.log(mu)
    M = 1.0 + 0.3 * np.sin(x)            # max at x = pi/2, min at x = 3 pi/2
    R = 1.0 + 0.3 * np.cos(x)
    c = _synthetic(mu, M, R)
    family.locate_extrema(c)
    kinds = [e["kind"] for e in c.events]
    assert kinds == ["max", "min"]
    assert c.events[0]["mu"] == pytest.approx(np.exp(np.pi / 2), rel=1e-3)
    # counterclockwise bends: n^u gains at each extremum
    assert [e["turn"] for e in c.events] == [1, 1]
    family.classify(c, 1.5)
    assert c.nu[0] == 0 and c.nu[-1] == 2


def test_clockwise_bend_decrements_and_clamps():
    mu = np.geomspace(0.1, 100.0, 201)
    x = np.log(mu)
    M = 1.0 + 0.3 * np.sin(x)
    R = 1.0 - 0.3 * np.cos(x)            # reversed bend direction
    c = _synthetic(mu, M, R)
    family.locate_extrema(c)
    assert [e["turn"] for e in c.events] == [-1, -1]
    with pytest.warns(RuntimeWarning):
        family.classify(c, 1.25)          # 1 -> 0, then clamped at 0
    assert c.nu[0] == 1 and c.nu[-1] == 0
    assert c.events[-1].get("clamped")


def test_noisy_derivative_is_indeterminate():
    mu = np.geomspace(1.0, 2.0, 21)
    M = 1.0 + 1e-3 * np.sin(2.3 * np.arange(21) ** 1.5)
    c = _synthetic(mu, M, np.ones(21) + mu)
    with pytest.raises(IndeterminateError):
        family.locate_extrema(c)


def test_i_mu_cases():
    mu = np.geomspace(0.1, 10.0, 9)
    # M increasing, M/R increasing -> i = 1
    c = _synthetic(mu, mu**0.25, mu**-0.25)
    assert family.i_mu(c, 4) == 1
    # M increasing, M/R decreasing -> i = 0
    c = _synthetic(mu, mu**0.25, mu**0.5)
    assert family.i_mu(c, 4) == 0
    # M' = 0 -> i = 1
    c = _synthetic(mu, np.ones(9), mu**0.5)
    assert family.i_mu(c, 4) == 1


def test_white_dwarf_family_truncation_is_reported():
    law = eos.make_white_dwarf()
    c = family.sweep(law, 1e-2, 1e2, n=9)
    assert not c.truncated
    assert np.all(c.dM > 0)
