import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from starstab import eos
from starstab.errors import ConfigError, InvalidLawError


def test_polytrope_closed_forms():
    law = eos.make_polytrope(1.0, 1.5)
    h = eos.build_enthalpy(law)
    assert math.isclose(law.P(2.0), 2.0**1.5, rel_tol=1e-14)
    # Phi = K rho^gamma / (gamma - 1), Phi' = K gamma rho^(gamma-1) / (gamma - 1)
    assert math.isclose(h.phi(1.0), 2.0, rel_tol=1e-14)
    assert math.isclose(h.dphi(4.0), 6.0, rel_tol=1e-14)
    assert math.isclose(h.inv_dphi(6.0), 4.0, rel_tol=1e-14)
    assert h.provenance == "closed-form"


def test_enthalpy_relations_numerically():
    law = eos.make_polytrope(2.0, 1.7)
    h = eos.build_enthalpy(law)
    for r in (0.1, 1.0, 7.0):
        dphi = integrate.quad(lambda s: law.dP(s) / s, 0, r, epsrel=1e-13)[0]
        assert math.isclose(h.dphi(r), dphi, rel_tol=1e-10)
        assert math.isclose(h.phi(r), r * h.dphi(r) - law.P(r), rel_tol=1e-13)
        assert math.isclose(h.d2phi(r), law.dP(r) / r, rel_tol=1e-13)


@pytest.mark.parametrize("gamma", [1.2, 1.1, 2.0, 2.5])
def test_polytrope_rejects_gamma_outside_range(gamma):
    with pytest.raises(InvalidLawError, match="violates gamma"):
        eos.make_polytrope(1.0, gamma)


def test_polytrope_override_and_bad_K():
    assert eos.make_polytrope(1.0, 2.0, override=True).gamma0 == 2.0
    with pytest.raises(InvalidLawError):
        eos.make_polytrope(1.0, 1.0, override=True)
    with pytest.raises(InvalidLawError, match="K > 0"):
        eos.make_polytrope(-1.0, 1.5)


def test_white_dwarf_f_series_and_closed_form_agree():
    x = np.array([0.05, 0.2, 0.49, 0.5, 0.51, 1.0, 5.0])
    closed = x * np.sqrt(1 + x * x) * (2 * x * x - 3) + 3 * np.arcsinh(x)
    quad = np.array([integrate.quad(lambda t: 8 * t**4 / math.sqrt(1 + t * t), 0, xi, epsrel=1e-13)[0]
                     for xi in x])
    assert np.allclose(eos.white_dwarf_f(x), quad, rtol=1e-12, atol=0)
    big = x >= 0.5
    assert np.allclose(eos.white_dwarf_f(x[big]), closed[big], rtol=1e-13)


def test_white_dwarf_limits():
    law = eos.make_white_dwarf()
    assert law.exponents == pytest.approx((5 / 3, 1 / 3, 4 / 3, 2 / 3))
    assert eos.check_law(law) == []


def test_tabulated_matches_closed_form_white_dwarf():
    law = eos.make_white_dwarf()
    closed = eos.build_enthalpy(law)
    tab = eos.build_enthalpy(law, force_tabulated=True)
    assert tab.provenance == "quadrature-tabulated"
    r = np.geomspace(1e-8, 1e8, 400)
    assert np.max(np.abs(tab.dphi(r) / closed.dphi(r) - 1)) < 1e-10
    y = closed.dphi(r)
    assert np.max(np.abs(tab.inv_dphi(y) / r - 1)) < 1e-9


def test_custom_table_from_config_and_csv(tmp_path):
    rho = np.geomspace(1e-6, 1e6, 60)
    P = rho**1.5
    path = tmp_path / "table.csv"
    path.write_text("rho,P\n" + "\n".join(f"{a:.17g},{b:.17g}" for a, b in zip(rho, P)))
    law = eos.law_from_config({"kind": "custom_table", "path": "table.csv"}, base_dir=tmp_path)
    assert law.gamma0 == pytest.approx(1.5, rel=1e-6)
    assert law.P(1.0) == pytest.approx(1.0, rel=1e-8)
    inline = eos.law_from_config({"kind": "custom_table", "rho": rho.tolist(), "P": P.tolist()})
    assert inline.P(3.0) == pytest.approx(law.P(3.0), rel=1e-14)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="eos.K: missing"):
        eos.law_from_config({"kind": "polytrope", "gamma": 1.5})
    with pytest.raises(ConfigError, match="unknown pressure law"):
        eos.law_from_config({"kind": "stiff"})
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    with pytest.raises(ConfigError, match=":2:"):
        eos.read_table_csv(bad)


def test_custom_table_rejects_bad_rows():
    with pytest.raises(InvalidLawError):
        eos.make_custom_table([1, 2, 3], [1, 2, 3])
    with pytest.raises(InvalidLawError):
        eos.make_custom_table([1, 2, 3, 4], [1, -2, 3, 4])


def test_table_exponent_range_enforced_unless_overridden():
    rho = np.geomspace(1e-6, 1e6, 50)
    with pytest.raises(InvalidLawError, match="gamma0"):
        eos.make_custom_table(rho, rho**2.2)
    law = eos.make_custom_table(rho, rho**2.2, override=True)
    assert eos.check_law(law) == []


def test_check_law_detects_wrong_declared_limits():
    law = eos.make_polytrope(1.0, 1.5)
    bad = type(law)(**{**law.__dict__, "K0": 2.0 * law.K0})
    assert any("K0" in p for p in eos.check_law(bad))
    with pytest.raises(InvalidLawError):
        eos.validate_law(bad)


def test_psi_values_and_domain():
    h = eos.build_enthalpy(eos.make_polytrope(1.0, 1.5))
    # Psi(1, 1) = Phi(2) - Phi(1) - Phi'(1)
    assert eos.psi(1.0, 1.0, h) == pytest.approx(2 * 2**1.5 - 2 - 3, rel=1e-13)
    assert eos.psi(1.0, 0.0, h) == 0.0
    with pytest.raises(ValueError):
        eos.psi(1.0, -1.5, h)


def test_psi_small_tau_branch_is_continuous():
    h = eos.build_enthalpy(eos.make_polytrope(1.0, 1.5))
    rb = 2.0
    t = np.array([0.25 * rb * (1 - 1e-12), 0.25 * rb * (1 + 1e-12)])
    v = eos.psi(np.full(2, rb), t, h)
    assert abs(v[1] / v[0] - 1) < 1e-10
    # quadratic behaviour at small tau
    tau = 1e-4
    assert eos.psi(rb, tau, h) == pytest.approx(0.5 * h.d2phi(rb) * tau**2, rel=1e-3)


def test_psi_star_interior_and_vacuum_branches():
    # concave convention: Psi*(y) = inf_tau Psi(tau) - y tau
    h = eos.build_enthalpy(eos.make_polytrope(1.0, 1.5))
    assert eos.psi_star(1.0, 3.0, h) == pytest.approx((-4.0, -3.0, -4.0 / 3.0), rel=1e-12)
    # y <= -Phi'(rho_b): minimiser at the vacuum bound tau = -rho_b
    assert eos.psi_star(1.0, -5.0, h) == pytest.approx((-4.0, 1.0, 0.0), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(rb=st.floats(1e-3, 1e3), u=st.floats(-0.99, 5.0), y=st.floats(-5.0, 5.0))
def test_fenchel_young_inequality(rb, u, y):
    h = eos.build_enthalpy(eos.make_polytrope(1.0, 1.4))
    tau = u * rb
    ys = y * h.dphi(rb)
    gap = eos.psi(rb, tau, h) - ys * tau - eos.psi_star(rb, ys, h)[0]
    assert gap >= -1e-9 * (1 + abs(ys * tau))


def test_fenchel_check_is_tight_and_small():
    for law in (eos.make_polytrope(1.0, 1.5), eos.make_white_dwarf()):
        h = eos.build_enthalpy(law)
        assert eos.fenchel_check(1.0, 400, h, seed=3) <= 1e-9
