"""Pressure laws, enthalpy and the pointwise Legendre transform.

All quantities are in G = 1 units.  Evaluators accept scalars or numpy arrays
and broadcast like ufuncs.  The enthalpy is

    Phi'(rho) = int_0^rho P'(s)/s ds,    Phi(0) = Phi'(0) = 0,

and is recovered from the pressure through the identity Phi = rho Phi' - P,
which holds whenever P(0) = 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

from .errors import ConfigError, InvalidLawError, NumericalError

GAMMA_MIN = 6.0 / 5.0
GAMMA_MAX = 2.0

# Gauss-Legendre rule on [0, 1] used for the cancellation-free difference
# quotients in psi / psi_star.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_GL_T = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W
# |tau| / rho_b below which Psi and Phi' differences use the integral form.
_SMALL_STEP = 0.25


def _as_float_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic equation of state p = P(rho).

    ``closed_form`` optionally carries exact ``phi``, ``dphi`` and ``inv_dphi``
    evaluators; when absent the enthalpy is tabulated by quadrature.
    """

    label: str
    pressure: Callable
    dpressure: Callable
    d2pressure: Callable
    gamma0: float
    gamma1: float
    K0: float
    K1: float
    rho_ref: float = 1.0
    rho_lo: Optional[float] = None
    rho_hi: Optional[float] = None
    theta0: Optional[float] = None
    eps: Optional[float] = None
    c1: bool = False
    override: bool = False
    closed_form: Optional[dict] = None
    config: dict = field(default_factory=dict)

    def P(self, rho):
        return self.pressure(_as_float_array(rho))

    def dP(self, rho):
        return self.dpressure(_as_float_array(rho))

    def d2P(self, rho):
        return self.d2pressure(_as_float_array(rho))

    def sound_speed(self, rho):
        return np.sqrt(np.maximum(self.dP(rho), 0.0))

    @property
    def exponents(self):
        return (self.gamma0, self.theta0, self.gamma1, self.eps)


# ---------------------------------------------------------------------------
# constructors


def _check_gamma(gamma, name="gamma"):
    if not gamma > GAMMA_MIN:
        raise InvalidLawError(f"{name}={gamma} violates {name} > 6/5")
    if not gamma < GAMMA_MAX:
        raise InvalidLawError(f"{name}={gamma} violates {name} < 2")


def make_polytrope(K: float, gamma: float, override: bool = False) -> PressureLaw:
    """P(rho) = K rho**gamma.

    ``override`` admits exponents outside (6/5, 2) (any gamma > 1); it exists so
    that the closed-form gamma = 2 star can serve as a solver oracle.
    """
    K = float(K)
    gamma = float(gamma)
    if not K > 0:
        raise InvalidLawError(f"K={K} violates K > 0")
    if override:
        if not gamma > 1.0:
            raise InvalidLawError(f"gamma={gamma} violates gamma > 1 (override)")
    else:
        _check_gamma(gamma)

    g1 = gamma - 1.0

    def P(r):
        return K * np.power(r, gamma)

    def dP(r):
        return K * gamma * np.power(r, g1)

    def d2P(r):
        with np.errstate(divide="ignore"):
            return K * gamma * g1 * np.power(r, gamma - 2.0)

    def phi(r):
        return K / g1 * np.power(r, gamma)

    def dphi(r):
        return K * gamma / g1 * np.power(r, g1)

    def inv_dphi(y):
        y = np.maximum(y, 0.0)
        return np.power(g1 * y / (K * gamma), 1.0 / g1)

    return PressureLaw(
        label=f"polytrope(K={K:g}, gamma={gamma:g})",
        pressure=P,
        dpressure=dP,
        d2pressure=d2P,
        gamma0=gamma,
        gamma1=gamma,
        K0=K * gamma,
        K1=K * gamma,
        rho_ref=1.0,
        theta0=g1 / 2.0,
        c1=True,
        override=override,
        closed_form={"phi": phi, "dphi": dphi, "inv_dphi": inv_dphi},
        config={"kind": "polytrope", "K": K, "gamma": gamma, "override": override},
    )


def _wd_series(x, terms=30):
    # 8 sum_k binom(-1/2, k) x^(5+2k)/(5+2k)
    out = np.zeros_like(x)
    coef = 1.0
    x2 = x * x
    xp = x**5
    for k in range(terms):
        out += coef * xp / (5 + 2 * k)
        coef *= -(2 * k + 1) / (2.0 * (k + 1))
        xp = xp * x2
    return 8.0 * out


def white_dwarf_f(x):
    """f(x) = x sqrt(1+x^2)(2x^2-3) + 3 asinh(x), series-evaluated for x < 1/2."""
    x = _as_float_array(x)
    small = x < 0.5
    out = np.empty_like(x)
    xs = x[small]
    out[small] = _wd_series(xs)
    xl = x[~small]
    out[~small] = xl * np.sqrt(1.0 + xl * xl) * (2.0 * xl * xl - 3.0) + 3.0 * np.arcsinh(xl)
    return out if out.ndim else float(out)


def make_white_dwarf(A: float = 1.0, B: float = 1.0) -> PressureLaw:
    """Chandrasekhar white-dwarf law P = A f(x), rho = B x^3."""
    A = float(A)
    B = float(B)
    if not (A > 0 and B > 0):
        raise InvalidLawError(f"white dwarf needs A > 0 and B > 0, got A={A}, B={B}")
    c = 8.0 * A / (3.0 * B)

    def xof(r):
        return np.cbrt(r / B)

    def P(r):
        return A * white_dwarf_f(xof(r))

    def dP(r):
        x = xof(r)
        return c * x * x / np.sqrt(1.0 + x * x)

    def d2P(r):
        x = xof(r)
        with np.errstate(divide="ignore"):
            return 8.0 * A / (9.0 * B * B) * (x + 2.0 / x) / (1.0 + x * x) ** 1.5

    def dphi(r):
        x = xof(r)
        x2 = x * x
        return 8.0 * A / B * x2 / (np.sqrt(1.0 + x2) + 1.0)

    def phi(r):
        r = _as_float_array(r)
        return r * dphi(r) - P(r)

    def inv_dphi(y):
        w = np.maximum(y, 0.0) * B / (8.0 * A)
        return B * np.power(w * (2.0 + w), 1.5)

    return PressureLaw(
        label=f"white_dwarf(A={A:g}, B={B:g})",
        pressure=P,
        dpressure=dP,
        d2pressure=d2P,
        gamma0=5.0 / 3.0,
        gamma1=4.0 / 3.0,
        K0=c / B ** (2.0 / 3.0),
        K1=c / B ** (1.0 / 3.0),
        rho_ref=B,
        theta0=1.0 / 3.0,
        eps=2.0 / 3.0,
        c1=True,
        closed_form={"phi": phi, "dphi": dphi, "inv_dphi": inv_dphi},
        config={"kind": "white_dwarf", "A": A, "B": B},
    )


def make_custom_table(rho, P, label="custom_table", override=False) -> PressureLaw:
    """Pressure law from tabulated (rho, P) samples.

    log P is fitted by a cubic spline in log rho; outside the table the end
    slopes continue as pure power laws, which fixes gamma0 and gamma1.
    """
    rho = np.asarray(rho, dtype=float)
    P = np.asarray(P, dtype=float)
    if rho.ndim != 1 or rho.shape != P.shape or rho.size < 4:
        raise InvalidLawError("custom table needs >= 4 matching (rho, P) rows")
    if np.any(rho <= 0) or np.any(P <= 0):
        raise InvalidLawError("custom table rows must have rho > 0 and P > 0")
    order = np.argsort(rho)
    rho, P = rho[order], P[order]
    if np.any(np.diff(rho) <= 0):
        raise InvalidLawError("custom table has duplicate densities")
    s, lp = np.log(rho), np.log(P)
    spl = interpolate.CubicSpline(s, lp)
    d1, d2 = spl.derivative(1), spl.derivative(2)
    s_lo, s_hi = s[0], s[-1]
    g0, g1 = float(d1(s_lo)), float(d1(s_hi))
    lp_lo, lp_hi = lp[0], lp[-1]

    def logp_parts(r):
        sr = np.log(np.maximum(r, 1e-300))
        lo, hi = sr < s_lo, sr > s_hi
        mid = ~(lo | hi)
        L = np.empty_like(sr)
        L1 = np.empty_like(sr)
        L2 = np.zeros_like(sr)
        L[mid] = spl(sr[mid])
        L1[mid] = d1(sr[mid])
        L2[mid] = d2(sr[mid])
        L[lo] = lp_lo + g0 * (sr[lo] - s_lo)
        L1[lo] = g0
        L[hi] = lp_hi + g1 * (sr[hi] - s_hi)
        L1[hi] = g1
        return L, L1, L2

    def Pf(r):
        r = _as_float_array(r)
        L, _, _ = logp_parts(np.atleast_1d(r))
        out = np.where(np.atleast_1d(r) > 0, np.exp(L), 0.0)
        return out.reshape(r.shape) if r.ndim else float(out[0])

    def dPf(r):
        r = _as_float_array(r)
        ra = np.atleast_1d(r)
        L, L1, _ = logp_parts(ra)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(ra > 0, np.exp(L) * L1 / ra, 0.0)
        return out.reshape(r.shape) if r.ndim else float(out[0])

    def d2Pf(r):
        r = _as_float_array(r)
        ra = np.atleast_1d(r)
        L, L1, L2 = logp_parts(ra)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(L) / ra**2 * (L1 * L1 - L1 + L2)
        return out.reshape(r.shape) if r.ndim else float(out[0])

    K0 = float(np.exp(lp_lo) * g0 / rho[0] ** g0)
    K1 = float(np.exp(lp_hi) * g1 / rho[-1] ** g1)
    law = PressureLaw(
        label=label,
        pressure=Pf,
        dpressure=dPf,
        d2pressure=d2Pf,
        gamma0=g0,
        gamma1=g1,
        K0=K0,
        K1=K1,
        rho_ref=float(np.sqrt(rho[0] * rho[-1])),
        override=override,
        config={"kind": "custom_table", "rho": rho.tolist(), "P": P.tolist(), "override": override},
    )
    if not override:
        _check_gamma(g0, "gamma0")
        _check_gamma(g1, "gamma1")
    return law


def read_table_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (rho, P) columns from a CSV file; '#' lines and a header row are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ConfigError(f"{path}:{lineno}: expected two numeric columns (rho, P)")
    if not rows:
        raise ConfigError(f"{path}: no (rho, P) rows found")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


def law_from_config(cfg: dict, base_dir=None) -> PressureLaw:
    """Build a pressure law from ``{kind: polytrope|white_dwarf|custom_table, ...}``."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("eos: expected a record with a 'kind' field")
    kind = cfg["kind"]
    try:
        if kind == "polytrope":
            return make_polytrope(cfg["K"], cfg["gamma"], bool(cfg.get("override", False)))
        if kind == "white_dwarf":
            return make_white_dwarf(cfg.get("A", 1.0), cfg.get("B", 1.0))
        if kind == "custom_table":
            if "path" in cfg:
                p = Path(cfg["path"])
                if base_dir is not None and not p.is_absolute():
                    p = Path(base_dir) / p
                rho, P = read_table_csv(p)
            else:
                rho, P = cfg["rho"], cfg["P"]
            return make_custom_table(rho, P, cfg.get("label", "custom_table"),
                                     bool(cfg.get("override", False)))
    except KeyError as exc:
        raise ConfigError(f"eos.{exc.args[0]}: missing required field for kind '{kind}'") from None
    raise ConfigError(f"eos.kind: unknown pressure law kind '{kind}'")


# ---------------------------------------------------------------------------
# assumption checks


def check_law(law: PressureLaw, rtol: float = 0.05) -> list[str]:
    """Sampling-based check of positivity, the asymptotic limits and (C1).

    Returns a list of violation messages (empty when the law passes).
    """
    problems = []
    ref = law.rho_ref
    s = ref * np.logspace(-10, 10, 201)
    dp = law.dP(s)
    if not np.all(np.isfinite(dp)) or np.any(dp <= 0):
        problems.append("P' > 0 fails on sampled densities")
    for pts, g, K, name in (
        (ref * np.array([1e-6, 1e-8]), law.gamma0, law.K0, "K0"),
        (ref * np.array([1e6, 1e8]), law.gamma1, law.K1, "K1"),
    ):
        lim = pts ** (1.0 - g) * law.dP(pts)
        err = np.abs(lim / K - 1.0)
        if np.any(err > rtol):
            problems.append(f"s^(1-gamma) P'(s) -> {name}={K:g} fails (rel. error {err.max():.3g})")
    if law.c1:
        c1 = s * law.d2P(s) + 2.0 * dp
        if np.any(c1 <= 0):
            problems.append("rho P'' + 2 P' > 0 fails on sampled densities")
    if not law.override:
        for g, name in ((law.gamma0, "gamma0"), (law.gamma1, "gamma1")):
            if not GAMMA_MIN < g < GAMMA_MAX:
                problems.append(f"{name}={g} outside (6/5, 2)")
    return problems


def validate_law(law: PressureLaw, rtol: float = 0.05) -> PressureLaw:
    problems = check_law(law, rtol)
    if problems:
        raise InvalidLawError(f"{law.label}: " + "; ".join(problems))
    return law


# ---------------------------------------------------------------------------
# enthalpy


class Enthalpy:
    """Phi, Phi', Phi'' and the zero-extended inverse (Phi')_+^{-1}."""

    provenance = "abstract"

    def __init__(self, law: PressureLaw):
        self.law = law

    def dphi(self, rho):
        raise NotImplementedError

    def inv_dphi(self, y):
        raise NotImplementedError

    def phi(self, rho):
        rho = _as_float_array(rho)
        return rho * self.dphi(rho) - self.law.P(rho)

    def d2phi(self, rho):
        """Phi'' = P'(rho)/rho, with the rho -> 0 limit at rho = 0."""
        rho = _as_float_array(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.law.dP(rho) / rho
        if np.any(rho == 0):
            lim = np.inf if self.law.gamma0 < 2.0 else self.law.K0
            out = np.where(rho == 0, lim, out)
        return out

    def inv_d2phi(self, rho):
        """1/Phi''(rho), finite (zero) at the vacuum."""
        rho = _as_float_array(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = rho / self.law.dP(rho)
        return np.where(rho > 0, out, 0.0 if self.law.gamma0 < 2.0 else 1.0 / self.law.K0)

    def inv_dphi_plus(self, y):
        y = _as_float_array(y)
        out = np.zeros_like(y)
        pos = y > 0
        if np.any(pos):
            out[pos] = self.inv_dphi(y[pos])
        return out if out.ndim else float(out)


class ClosedFormEnthalpy(Enthalpy):
    provenance = "closed-form"

    def __init__(self, law: PressureLaw):
        super().__init__(law)
        cf = law.closed_form
        self._phi = cf.get("phi")
        self._dphi = cf["dphi"]
        self._inv = cf["inv_dphi"]

    def phi(self, rho):
        if self._phi is None:
            return super().phi(rho)
        return self._phi(_as_float_array(rho))

    def dphi(self, rho):
        return self._dphi(_as_float_array(rho))

    def inv_dphi(self, y):
        return self._inv(_as_float_array(y))


class TabulatedEnthalpy(Enthalpy):
    """Phi' tabulated on a log-spaced density grid.

    ln Phi' is interpolated in ln rho by a quintic Hermite spline carrying the
    exact first and second log-derivatives (from P' and P''), so the table is
    monotone and Phi'' is consistent with the interpolant to high order.
    Outside the table Phi' continues as the gamma0 / gamma1 power laws.
    """

    provenance = "quadrature-tabulated"

    def __init__(self, law: PressureLaw, lo=1e-12, hi=1e10, n=3700, rho_ref=None):
        super().__init__(law)
        if rho_ref is None:
            rho_ref = law.rho_ref
        s = np.linspace(math.log(lo * rho_ref), math.log(hi * rho_ref), n)
        rho = np.exp(s)
        dP = law.dP(rho)
        if np.any(~np.isfinite(dP)) or np.any(dP <= 0):
            raise InvalidLawError(f"{law.label}: P' not positive on the tabulation grid")

        def integrand(t):
            return float(law.dP(math.exp(t)))

        first, err0 = integrate.quad(integrand, -np.inf, s[0], epsabs=0.0, epsrel=1e-12, limit=200)
        if not np.isfinite(first) or err0 > 1e-8 * abs(first) + 1e-300:
            raise NumericalError(f"{law.label}: quadrature of P'(s)/s near 0 did not converge")
        pieces = np.empty(n - 1)
        for k in range(n - 1):
            val, err = integrate.quad(integrand, s[k], s[k + 1], epsabs=0.0, epsrel=1e-13, limit=50)
            if not np.isfinite(val) or err > 1e-10 * abs(val) + 1e-300:
                raise NumericalError(f"{law.label}: quadrature failed on [{rho[k]:g}, {rho[k+1]:g}]")
            pieces[k] = val
        y = first + np.concatenate([[0.0], np.cumsum(pieces)])
        if np.any(np.diff(y) <= 0):
            raise InvalidLawError(f"{law.label}: tabulated Phi' is not increasing")
        L = np.log(y)
        g = dP / y
        L2 = rho * law.d2P(rho) / y - g * g
        self._s = s
        self._L = L
        self._spline = interpolate.BPoly.from_derivatives(s, np.column_stack([L, g, L2]))
        self._dspline = self._spline.derivative()
        mid = 0.5 * (s[1:] + s[:-1])
        if np.any(self._dspline(mid) <= 0):
            raise InvalidLawError(f"{law.label}: interpolated Phi' is not monotone")
        self._s0, self._s1 = s[0], s[-1]
        self._L0, self._L1 = L[0], L[-1]
        self._e0 = law.gamma0 - 1.0
        self._e1 = law.gamma1 - 1.0

    def _logdphi(self, s):
        out = np.empty_like(s)
        lo, hi = s < self._s0, s > self._s1
        mid = ~(lo | hi)
        out[mid] = self._spline(s[mid])
        out[lo] = self._L0 + self._e0 * (s[lo] - self._s0)
        out[hi] = self._L1 + self._e1 * (s[hi] - self._s1)
        return out

    def dphi(self, rho):
        rho = _as_float_array(rho)
        ra = np.atleast_1d(rho)
        out = np.zeros_like(ra)
        pos = ra > 0
        out[pos] = np.exp(self._logdphi(np.log(ra[pos])))
        return out.reshape(rho.shape) if rho.ndim else float(out[0])

    def inv_dphi(self, y):
        y = _as_float_array(y)
        ya = np.atleast_1d(y)
        out = np.zeros_like(ya)
        pos = ya > 0
        L = np.log(ya[pos])
        s = np.empty_like(L)
        lo, hi = L < self._L0, L > self._L1
        mid = ~(lo | hi)
        s[lo] = self._s0 + (L[lo] - self._L0) / self._e0
        s[hi] = self._s1 + (L[hi] - self._L1) / self._e1
        if np.any(mid):
            sm = np.interp(L[mid], self._L, self._s)
            Lm = L[mid]
            for _ in range(8):
                ds = (self._spline(sm) - Lm) / self._dspline(sm)
                sm = np.clip(sm - ds, self._s0, self._s1)
                if np.max(np.abs(ds)) < 1e-15:
                    break
            s[mid] = sm
        out[pos] = np.exp(s)
        return out.reshape(y.shape) if y.ndim else float(out[0])


def build_enthalpy(law: PressureLaw, tabulation: Optional[dict] = None,
                   force_tabulated: bool = False) -> Enthalpy:
    """Closed-form enthalpy when the law declares one, tabulated otherwise.

    ``tabulation`` may set ``lo``, ``hi`` (multiples of the reference density),
    ``n`` (grid points) and ``rho_ref``.
    """
    if law.closed_form is not None and not force_tabulated:
        return ClosedFormEnthalpy(law)
    return TabulatedEnthalpy(law, **(tabulation or {}))


# ---------------------------------------------------------------------------
# relative enthalpy and its Legendre transform


def _mean_d2phi(enthalpy, rho_b, z):
    """int_0^1 Phi''(rho_b + t z) dt by Gauss-Legendre (for |z| <= rho_b/4)."""
    pts = rho_b[..., None] + _GL_T * z[..., None]
    return np.sum(_GL_W * enthalpy.d2phi(pts), axis=-1)


def _weighted_d2phi(enthalpy, rho_b, z):
    """int_0^1 (1-t) Phi''(rho_b + t z) dt (for |z| <= rho_b/4)."""
    pts = rho_b[..., None] + _GL_T * z[..., None]
    return np.sum(_GL_W * (1.0 - _GL_T) * enthalpy.d2phi(pts), axis=-1)


def psi(rho_b, tau, enthalpy: Enthalpy):
    """Psi_{rho_b}(tau) = Phi(tau+rho_b) - Phi(rho_b) - Phi'(rho_b) tau, tau >= -rho_b."""
    rho_b, tau = np.broadcast_arrays(_as_float_array(rho_b), _as_float_array(tau))
    scalar = rho_b.ndim == 0
    rho_b = np.atleast_1d(rho_b).astype(float)
    tau = np.atleast_1d(tau).astype(float)
    if np.any(tau < -rho_b * (1.0 + 1e-14)):
        raise ValueError("psi: tau < -rho_b (below the vacuum bound)")
    tau = np.maximum(tau, -rho_b)
    out = np.empty_like(tau)
    small = (np.abs(tau) <= _SMALL_STEP * rho_b) & (rho_b > 0)
    if np.any(small):
        out[small] = tau[small] ** 2 * _weighted_d2phi(enthalpy, rho_b[small], tau[small])
    big = ~small
    if np.any(big):
        rb, tb = rho_b[big], tau[big]
        out[big] = enthalpy.phi(tb + rb) - enthalpy.phi(rb) - enthalpy.dphi(rb) * tb
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def _solve_z(rho_b, y, enthalpy):
    """z with Phi'(rho_b + z) - Phi'(rho_b) = y, for y > -Phi'(rho_b)."""
    d0 = enthalpy.dphi(rho_b)
    z = enthalpy.inv_dphi_plus(y + d0) - rho_b
    small = (rho_b > 0) & (np.abs(y) <= 0.05 * d0)
    if np.any(small):
        rb, ys = rho_b[small], y[small]
        zs = ys / enthalpy.d2phi(rb)
        for _ in range(30):
            zs = np.clip(zs, -_SMALL_STEP * rb, _SMALL_STEP * rb)
            g = zs * _mean_d2phi(enthalpy, rb, zs) - ys
            step = g / enthalpy.d2phi(rb + zs)
            zs = zs - step
            if np.all(np.abs(step) <= 1e-16 * np.abs(zs) + 1e-300):
                break
        z[small] = zs
    return z


def psi_star(rho_b, y, enthalpy: Enthalpy):
    """Legendre transform of Psi_{rho_b}: returns (value, first, second derivative).

    Psi*(y) = inf_{tau >= -rho_b} Psi(tau) - y tau.  For y <= -Phi'(rho_b) the
    infimum sits at the vacuum bound tau = -rho_b.
    """
    rho_b, y = np.broadcast_arrays(_as_float_array(rho_b), _as_float_array(y))
    scalar = rho_b.ndim == 0
    rho_b = np.atleast_1d(rho_b).astype(float)
    y = np.atleast_1d(y).astype(float)
    val = np.empty_like(y)
    d1 = np.empty_like(y)
    d2 = np.empty_like(y)
    d0 = enthalpy.dphi(rho_b)
    low = y <= -d0
    if np.any(low):
        rb = rho_b[low]
        val[low] = -enthalpy.phi(rb) + d0[low] * rb + y[low] * rb
        d1[low] = rb
        d2[low] = 0.0
    up = ~low
    if np.any(up):
        rb, yu = rho_b[up], y[up]
        z = _solve_z(rb, yu, enthalpy)
        z = np.maximum(z, -rb)
        val[up] = psi(rb, z, enthalpy) - yu * z
        d1[up] = -z
        d2[up] = -enthalpy.inv_d2phi(z + rb)
    if scalar:
        return float(val[0]), float(d1[0]), float(d2[0])
    return val, d1, d2


def fenchel_check(rho_b, n: int, enthalpy: Enthalpy, seed: int = 0) -> float:
    """Max of Psi*(y) + y tau - Psi(tau) over n random (tau, y) pairs.

    ``rho_b`` may be a scalar or an array of backgrounds sampled uniformly.
    Fenchel-Young says the result is <= 0 up to evaluation error.
    """
    if n < 1:
        raise ValueError("fenchel_check: n must be >= 1")
    rng = np.random.default_rng(seed)
    rb = np.atleast_1d(_as_float_array(rho_b))
    rb = rb[rng.integers(0, rb.size, n)] if rb.size > 1 else np.full(n, rb[0])
    scale = np.maximum(rb, 1.0)
    tau = -rb + rng.uniform(0.0, 1.0, n) * (rb + 2.0 * scale)
    yscale = enthalpy.dphi(rb + scale)
    y = rng.uniform(-2.0, 2.0, n) * yscale
    tau[0], y[0] = 0.0, 0.0
    val, d1, _ = psi_star(rb, y, enthalpy)
    # every fourth pair sits at the minimiser, where the inequality is tight
    tight = np.arange(n) % 4 == 1
    tau[tight] = np.maximum(-d1[tight], -rb[tight])
    viol = val + y * tau - psi(rb, tau, enthalpy)
    return float(np.max(viol))
