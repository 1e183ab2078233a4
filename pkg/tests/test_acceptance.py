"""Acceptance criteria, one test per criterion, at the stated tolerances."""
import math
import time

import numpy as np
import pytest

from starstab import eos, family, functionals as fn, spectral as sp
from starstab.hydro import (HydroConfig, Perturbation, energy_tolerance, run, stability_experiment)
from starstab.hydro.scheme import Grid, Scheme, SchemeOptions
from starstab.hydro import riemann
from starstab.star import lane_emden_n1, solve_star

MU_RANGE = (0.1, 10.0)


@pytest.fixture(scope="module")
def families():
    out = {}
    for gamma in (1.5, 1.25):
        law = eos.make_polytrope(1.0, gamma)
        curve = family.sweep(law, *MU_RANGE, n=17)
        family.classify(curve, gamma)
        out[gamma] = (law, curve)
    return out


# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mu", [0.5, 1.0, 4.0])
def test_closed_form_gamma2_star(mu):
    law = eos.make_polytrope(1.0, 2.0, override=True)
    t0 = time.perf_counter()
    p = solve_star(law, mu)
    elapsed = time.perf_counter() - t0
    R, M, rho, _ = lane_emden_n1(mu, 1.0, p.r)
    assert math.isclose(R, math.pi / math.sqrt(2 * math.pi), rel_tol=1e-15)
    assert abs(p.R - R) / R <= 1e-8
    assert abs(p.M - M) / M <= 1e-8
    assert np.max(np.abs(p.rho - rho)) / mu <= 1e-6
    assert elapsed < 1.0


# ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [1.3, 1.5])
def test_polytrope_scaling(gamma):
    law = eos.make_polytrope(1.0, gamma)
    mus = np.geomspace(0.1, 10.0, 9)
    stars = [solve_star(law, m) for m in mus]
    r_inv = np.array([s.R * s.mu ** (-(gamma - 2) / 2) for s in stars])
    m_inv = np.array([s.M * s.mu ** (-(3 * gamma - 4) / 2) for s in stars])
    for inv in (r_inv, m_inv):
        assert np.max(np.abs(inv / inv[0] - 1.0)) <= 1e-4


# ---------------------------------------------------------------------------

def test_degenerate_gamma_four_thirds():
    law = eos.make_polytrope(1.0, 4.0 / 3.0)
    curve = family.sweep(law, *MU_RANGE, n=17)
    assert np.all(np.abs(curve.slope_M) <= 1e-4)
    assert curve.degenerate


# ---------------------------------------------------------------------------

def test_turning_point_classifier(families):
    _, stable = families[1.5]
    _, unstable = families[1.25]
    assert np.all(stable.nu == 0)
    assert np.all(unstable.nu == 1)


# ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [1.5, 1.25])
def test_spectral_inertia_matches_classifier(families, gamma):
    law, curve = families[gamma]
    idx = np.linspace(0, curve.mu.size - 1, 5).round().astype(int)
    assert len(set(idx)) == 5
    for k in idx:
        p = solve_star(law, curve.mu[k])
        lz = sp.converged_inertia(sp.spectrum_L_Z, p, (80, 160))
        lt = sp.converged_inertia(sp.spectrum_tildeL, p, (80, 160), l=0)
        assert lz.n_minus == curve.nu[k]
        assert lt.n_minus + lt.n_zero == lz.n_minus + lz.n_zero


# ---------------------------------------------------------------------------

def test_translation_kernel_and_trivial_radial_kernel(families):
    law, curve = families[1.5]
    assert np.all(np.abs(curve.slope_M) > curve.zero_tol)      # M'(mu) != 0
    p = solve_star(law, 1.0)
    ks = sp.kernel_study(p, (40, 80, 160))
    assert min(ks["ratios"]) >= 4.0
    assert ks["vector_error"][-1] <= 1e-3
    assert sp.spectrum_tildeL(p, 0, 160).n_zero == 0


# ---------------------------------------------------------------------------

LAWS_RANDOM = [
    ("poly1.5", lambda: eos.make_polytrope(1.0, 1.5)),
    ("poly1.25", lambda: eos.make_polytrope(1.0, 1.25)),
    ("poly5/3", lambda: eos.make_polytrope(1.0, 5.0 / 3.0)),
    ("white_dwarf", lambda: eos.make_white_dwarf()),
]


@pytest.fixture(scope="module")
def random_states():
    rng = np.random.default_rng(2024)
    states = []
    for _, mk in LAWS_RANDOM:
        p = solve_star(mk(), 1.0)
        lay = fn.NodeLayout(p.R, 1.5 * p.R)
        for _ in range(25):
            states.append(fn.random_state(p, rng, lay, amplitude=float(rng.uniform(0.01, 0.3))))
    return states


def test_decomposition_identity(random_states):
    assert len(random_states) == 100
    res = [fn.decomposition_check(s) for s in random_states]
    assert max(res) <= 1e-8


def test_fenchel_closed_form():
    worst = 0.0
    for gamma in (1.25, 1.5, 5.0 / 3.0):
        h = eos.build_enthalpy(eos.make_polytrope(1.0, gamma))
        assert h.provenance == "closed-form"
        for k, rb in enumerate((1e-3, 1e-1, 1.0, 10.0, 1e3)):
            worst = max(worst, eos.fenchel_check(rb, 10_000 // 5, h, seed=k))
    assert worst <= 1e-9


def test_fenchel_tabulated():
    rho = np.geomspace(1e-8, 1e8, 400)
    laws = [eos.make_white_dwarf(),
            eos.make_custom_table(rho, rho**1.25 * (1 + rho**0.35) / (1 + 0.1 * rho**0.35))]
    worst = 0.0
    for law in laws:
        h = eos.build_enthalpy(law, force_tabulated=True)
        for k, rb in enumerate((1e-3, 1e-1, 1.0, 10.0, 1e3)):
            worst = max(worst, eos.fenchel_check(rb, 10_000 // 5, h, seed=k))
    assert worst <= 1e-6


def test_duality_slack(random_states):
    slack = [fn.duality_gap(s).slack for s in random_states]
    assert min(slack) >= -1e-9


# ---------------------------------------------------------------------------

def test_second_variation_fd_hessian():
    law = eos.make_polytrope(1.0, 1.5)
    p = solve_star(law, 1.0)
    lay = fn.NodeLayout(p.R, 1.5 * p.R)
    form = sp.assemble_tildeL(p, 0, 1.5 * p.R, 120)
    nodes = form.mesh.nodes
    rng = np.random.default_rng(9)
    measured = 0
    for _ in range(20):
        a = rng.standard_normal(4)
        x = sum(a[k] * np.cos(k * np.pi * nodes / (1.5 * p.R)) for k in range(4))
        phi = form.mesh.evaluate(x, lay.r)
        dphi = form.mesh.evaluate(x, lay.r, derivative=True)
        est, order = fn.hessian_fd(lay, phi, dphi, p)
        exact = x @ form.A @ x / (4 * math.pi)
        assert abs(est[-1] - exact) <= 1e-4 * abs(exact)
        assert order >= 1.9
        measured += math.isfinite(order)
    # an infinite order means the estimates agree below rounding noise; most
    # directions must still show a measurable truncation error
    assert measured >= 15


# ---------------------------------------------------------------------------

def test_white_dwarf_family_stable():
    law = eos.make_white_dwarf()
    curve = family.sweep(law, 1e-2, 1e4, n=49)
    assert not curve.truncated
    assert np.all(np.diff(curve.M) > 0)
    assert np.all(curve.dM > 0)
    family.classify(curve, law.gamma0)
    assert np.all(curve.nu == 0)


# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def stable_batch():
    p = solve_star(eos.make_polytrope(1.0, 1.5), 1.0)
    base = dict(n_cells=200, t_end=10.0, cadence=0.1)
    cfgs = [HydroConfig(**base, perturbation=Perturbation("density_bump", a)) for a in (1e-3, 1e-2)]
    return p, cfgs, stability_experiment(p, cfgs, workers=2)


def test_mass_conservation_and_energy_inequality(stable_batch):
    p, cfgs, rep = stable_batch
    for cfg, tr in zip(cfgs, rep["trajectories"]):
        assert tr.mass_drift() <= 1e-12
        assert tr.energy_excess() <= energy_tolerance(cfg.n_cells, tr.E[0])


def test_sod_convergence_order():
    K, g = 1.0, 1.4
    errs = []
    for n in (100, 200, 400, 800):
        grid = Grid(n, 1.0, geometry="planar")
        sch = Scheme(grid, lambda r: K * np.maximum(r, 0) ** g, lambda r: K * g * np.maximum(r, 0) ** (g - 1),
                     SchemeOptions(gravity=False))
        rho = np.where(grid.centers < 0.5, 1.0, 0.125)
        mom = np.zeros(n)
        t, t_end = 0.0, 0.15
        while t < t_end:
            dt = min(sch.max_dt(rho, mom), t_end - t)
            rho, mom = sch.step(rho, mom, dt)
            t += dt
        sub = grid.faces[:-1, None] + grid.h[:, None] * (np.arange(16) + 0.5)[None, :] / 16
        exact = riemann.sample((sub - 0.5) / t_end, 1.0, 0.0, 0.125, 0.0, K, g)[0].mean(axis=1)
        errs.append(np.sum(np.abs(rho - exact) * grid.h))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.8)


def test_stable_run_has_no_growth(stable_batch):
    p, cfgs, rep = stable_batch
    tr = rep["trajectories"][1]                       # amplitude 1e-2
    assert tr.t[-1] >= 10 * p.sound_crossing_time() * (1 - 1e-12)
    assert tr.growth_factor() <= 2.0
    assert np.max(tr.d) <= 2.0 * tr.d[0]


def test_unstable_run_grows():
    p = solve_star(eos.make_polytrope(1.0, 1.25), 0.1)
    base = dict(n_cells=400, stretch=1.5, t_end=0.5, cadence=0.005)
    seeded = run(p, HydroConfig(**base, stop_ratio=100.0,
                                perturbation=Perturbation("eigenmode_seed", 1e-2)))
    d = seeded.d
    assert np.max(d) >= 10.0 * d[0]
    assert seeded.mass_drift() <= 1e-12
    # the growth comes from the seeded mode, not from the scheme's own drift
    k = int(np.argmax(d >= 10.0 * d[0]))
    t_hit = seeded.t[k] / seeded.meta["time_unit"]
    drift = run(p, HydroConfig(**{**base, "t_end": t_hit}, perturbation=Perturbation("none", 0.0)))
    assert np.max(drift.d) <= 0.1 * d[k]


def test_amplification_ratio_bounded(stable_batch):
    p, cfgs, rep = stable_batch
    ratios = [r["ratio"] for r in rep["runs"]]
    assert all(np.isfinite(ratios))
    assert rep["max_ratio"] <= 5.0
    assert 0.2 <= rep["trend"] <= 5.0
