import math

import numpy as np
import pytest

from starstab import eos
from starstab.errors import ConfigError, InvariantError, NumericalError
from starstab.hydro import (HydroConfig, Perturbation, drift_bound, eigenmode_cells, evolve,
                            make_initial, make_setup, run)
from starstab.hydro import riemann
from starstab.hydro.scheme import Grid, Scheme, SchemeOptions, primitives


def _poly_scheme(grid, gamma=1.4, **kw):
    return Scheme(grid, lambda r: np.maximum(r, 0) ** gamma,
                  lambda r: gamma * np.maximum(r, 0) ** (gamma - 1), SchemeOptions(**kw))


@pytest.mark.parametrize("geometry", ["planar", "spherical"])
def test_uniform_state_at_rest_is_preserved(geometry):
    g = Grid(32, 1.0, geometry=geometry)
    sch = _poly_scheme(g, gravity=False)
    rho, mom = np.full(32, 0.7), np.zeros(32)
    for _ in range(20):
        rho, mom = sch.step(rho, mom, sch.max_dt(rho, mom))
    assert np.allclose(rho, 0.7, rtol=0, atol=1e-14)
    assert np.max(np.abs(mom)) < 1e-13


def test_mass_telescopes_with_reflecting_walls(rng):
    g = Grid(64, 1.0, faces=np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 63)])))
    sch = _poly_scheme(g, gravity=True, viscosity=1e-4)
    rho = 1.0 + 0.3 * rng.uniform(size=64)
    mom = 0.1 * rng.standard_normal(64)
    m0 = sch.mass(rho)
    for _ in range(50):
        rho, mom = sch.step(rho, mom, sch.max_dt(rho, mom))
    assert abs(sch.mass(rho) - m0) <= 1e-13 * m0


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(3, 1.0)
    with pytest.raises(ValueError):
        Grid(4, 1.0, geometry="cylindrical")
    with pytest.raises(ValueError):
        Grid(4, 1.0, faces=[0, 0.5, 0.4, 0.8, 1.0])


def test_primitives_zero_velocity_below_floor():
    rho = np.array([1.0, 1e-20, 0.0])
    mom = np.array([0.5, 1.0, 1.0])
    v = primitives(rho, mom, 1e-12)
    assert v[0] == 0.5 and v[1] == 0.0 and v[2] == 0.0


def test_floor_cells_have_zero_momentum():
    g = Grid(16, 1.0)
    sch = _poly_scheme(g, floor=1e-8)
    rho = np.where(g.centers < 0.5, 1.0, 1e-10)
    mom = np.ones(16)
    rho2, mom2 = sch.apply_floor(rho, mom)
    assert np.all(mom2[rho < 1e-8] == 0.0)
    assert np.array_equal(rho2, rho)


def test_nan_raises_numerical_error():
    g = Grid(16, 1.0)
    sch = _poly_scheme(g)
    rho = np.ones(16)
    rho[3] = np.nan
    with pytest.raises(NumericalError):
        sch.step(rho, np.zeros(16), 1e-3)


def test_riemann_star_state_satisfies_jump_conditions():
    rs, vs = riemann.star_state(1.0, 0.0, 0.125, 0.0)
    assert rs == pytest.approx(0.37918, abs=1e-5)
    assert vs == pytest.approx(1.04301, abs=1e-5)
    # right shock: mass and momentum fluxes continuous in the shock frame
    rR, vR = 0.125, 0.0
    s = (rs * vs - rR * vR) / (rs - rR)
    PR, Ps = rR**1.4, rs**1.4
    lhs = rs * vs * (vs - s) + Ps
    rhs = rR * vR * (vR - s) + PR
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_riemann_vacuum_detected():
    with pytest.raises(ValueError):
        riemann.star_state(1.0, -10.0, 1.0, 10.0)


# --- star runs -------------------------------------------------------------


@pytest.fixture(scope="module")
def cfg():
    return HydroConfig(n_cells=96, t_end=0.2, cadence=0.05)


def test_setup_places_surface_on_face(poly15, cfg):
    st = make_setup(poly15, cfg)
    assert np.any(st.grid.faces == poly15.R)
    assert np.sum(st.rho_cells * st.grid.vol) == pytest.approx(poly15.M, rel=1e-12)
    assert np.all(st.rho_cells[st.grid.centers > poly15.R] == 0.0)


def test_stretched_grid_refines_centre(poly15):
    st = make_setup(poly15, HydroConfig(n_cells=96, stretch=1.5))
    h = st.grid.h
    assert h[0] < h[st.grid.faces.searchsorted(poly15.R) - 1]
    assert np.any(st.grid.faces == poly15.R)


def test_zero_perturbation_has_zero_distance(poly15, cfg):
    s = make_initial(poly15, Perturbation("none", 0.0), cfg)
    from starstab.functionals import distance
    assert distance(s).total == 0.0


def test_mass_preserving_perturbations(poly15, cfg):
    st = make_setup(poly15, cfg)
    m0 = np.sum(st.rho_cells * st.grid.vol)
    for kind in ("density_bump", "eigenmode_seed"):
        s = make_initial(poly15, Perturbation(kind, 1e-2), cfg, st)
        m = np.sum(st.cells(s.rho) * st.grid.vol)
        assert abs(m - m0) <= 1e-12 * m0
    s = make_initial(poly15, Perturbation("mass_offset", 1e-2), cfg, st)
    assert np.sum(st.cells(s.rho) * st.grid.vol) == pytest.approx(1.01 * m0, rel=1e-12)


def test_negative_density_perturbation_rejected(poly15, cfg):
    with pytest.raises(InvariantError):
        make_initial(poly15, Perturbation("density_bump", 10.0, sign=-1), cfg)


def test_eigenmode_seed_distance_is_quadratic(poly125):
    c = HydroConfig(n_cells=96)
    st = make_setup(poly125, c)
    mode, lam = eigenmode_cells(st)
    assert lam < 0 and np.max(np.abs(mode)) == pytest.approx(1.0)
    from starstab.functionals import distance
    d = [distance(make_initial(poly125, Perturbation("eigenmode_seed", a), c, st)).total for a in (1e-3, 1e-2)]
    assert d[1] / d[0] == pytest.approx(100.0, rel=0.05)


def test_evolve_records_on_cadence(poly15, cfg):
    tr = run(poly15, cfg)
    unit = tr.meta["time_unit"]
    assert np.allclose(np.array(tr.t) / unit, [0, 0.05, 0.1, 0.15, 0.2], atol=1e-12)
    assert tr.mass_drift() <= 1e-12
    assert tr.status == "ok" and tr.meta["n_steps"] > 0


def test_zero_run_stays_within_drift_bound(poly15, cfg):
    tr = run(poly15, HydroConfig(**{**cfg.to_dict(), "perturbation": Perturbation("none", 0.0)}))
    E_mu = tr.E[0]
    assert np.max(tr.d) <= drift_bound(cfg.n_cells, E_mu)


def test_evolve_rejects_mismatched_grid(poly15, cfg):
    s = make_initial(poly15, Perturbation("none", 0.0), HydroConfig(n_cells=64))
    with pytest.raises(ConfigError):
        evolve(s, cfg, poly15)


def test_stop_ratio_ends_run(poly15):
    c = HydroConfig(n_cells=64, t_end=1.0, cadence=0.05, stop_ratio=1e-9,
                    perturbation=Perturbation("velocity_kick", 1e-2))
    tr = run(poly15, c)
    assert tr.status == "stopped" and len(tr.t) == 2


@pytest.mark.parametrize("bad", [{"cfl": 1.5}, {"n_cells": 4}, {"R_dom_factor": 1.0},
                                 {"viscosity": -1.0}, {"time_unit": "years"}, {"nope": 1}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        HydroConfig.from_dict(bad)


def test_perturbation_kind_validated():
    with pytest.raises(ConfigError):
        Perturbation("shake")
