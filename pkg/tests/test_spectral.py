import math

import numpy as np
import pytest

from starstab import eos, spectral as sp
from starstab.errors import ConfigError, NumericalError
from starstab.star import solve_star


def test_inertia_diagonal_pencil():
    A = np.diag([-2.0, 0.0, 1.0, 3.0])
    rep = sp.inertia(A, np.eye(4), zero_tol=1e-12)
    assert (rep.n_minus, rep.n_zero) == (1, 1)


def test_inertia_with_constraint_removes_negative_direction():
    A = np.diag([-1.0, 2.0, 3.0])
    rep = sp.inertia(A, np.eye(3), constraint=[1.0, 0.0, 0.0])
    assert rep.n == 2 and rep.n_minus == 0
    # Sylvester: any congruent weight gives the same counts
    B = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.1], [0.0, 0.1, 3.0]])
    rep2 = sp.inertia(np.diag([-1.0, 2.0, 3.0]), B)
    assert rep2.n_minus == 1


def test_inertia_rejects_bad_input():
    with pytest.raises(NumericalError):
        sp.inertia(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))
    with pytest.raises(ConfigError):
        sp.inertia(np.ones((2, 3)), np.eye(2))
    with pytest.raises(NumericalError):
        sp.inertia(np.eye(2), np.diag([1.0, -1.0]))


def test_p2_mesh_integrates_quadratics_exactly():
    m = sp.P2Mesh(np.linspace(0.0, 2.0, 5))
    x = m.nodes
    coeffs = x**2
    r = np.linspace(0, 2, 37)
    assert np.allclose(m.evaluate(coeffs, r), r**2, atol=1e-13)
    assert np.allclose(m.evaluate(coeffs, r, derivative=True), 2 * r, atol=1e-12)
    M = m.assemble(np.ones_like(m.rg), "mass")
    assert np.ones(x.size) @ M @ np.ones(x.size) == pytest.approx(2.0, rel=1e-14)


def test_unconstrained_and_constrained_counts(poly15, poly125):
    # without the mass constraint L_mu has one negative direction for both
    assert sp.spectrum_L_Z(poly15, 80, constrained=False).n_minus == 1
    assert sp.spectrum_L_Z(poly125, 80, constrained=False).n_minus == 1
    assert sp.spectrum_L_Z(poly15, 80).n_minus == 0
    assert sp.spectrum_L_Z(poly125, 80).n_minus == 1


def test_lowest_eigenvalues_agree_between_forms(poly125):
    a = sp.spectrum_L_Z(poly125, 160).eigenvalues[0]
    b = sp.spectrum_tildeL(poly125, 0, 160).eigenvalues[0]
    assert a < 0 and b < 0
    assert a == pytest.approx(b, rel=2e-3)


def test_converged_inertia_records_counts(poly15):
    rep = sp.converged_inertia(sp.spectrum_tildeL, poly15, (40, 80), l=0)
    assert rep.meta["converged"]
    assert rep.meta["convergence"]["counts"] == [(0, 0), (0, 0)]


def test_coercivity_constant_positive_for_stable_star(poly15):
    c0 = sp.coercivity_constant(poly15)
    assert c0 > 0


def test_mass_derivative_in_kernel_modulo_constraint():
    law = eos.make_polytrope(1.0, 1.5)
    p = solve_star(law, 1.0)
    lo, hi = solve_star(law, 1.0 - 1e-3), solve_star(law, 1.0 + 1e-3)
    assert sp.mass_derivative_residual(lo, hi, p) < 1e-3


def test_l1_kernel_converges(poly15):
    ks = sp.kernel_study(poly15, (40, 80))
    assert ks["ratios"][0] >= 4.0
    assert ks["vector_error"][-1] < 1e-3


def test_report_to_dict(poly15):
    d = sp.spectrum_tildeL(poly15, 1, 40).to_dict()
    assert d["operator"] == "tildeL_l1" and len(d["eigenvalues_lowest"]) == 10
