"""Steady non-rotating stars by radial shooting.

The steady relation Phi'(rho) = -V + V(R) is integrated in the variable
u = Phi'(rho), which stays smooth through the vacuum boundary:

    u' = -m / r**2,      m' = 4 pi r**2 (Phi')_+^{-1}(u).

The surface R is the first zero of u, and V(r) = -M/R - u(r) inside the star.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate, interpolate

from .eos import Enthalpy, PressureLaw, build_enthalpy
from .errors import ConfigError, StarSolveError

FOUR_PI = 4.0 * math.pi


@dataclass
class SolverOptions:
    """Integrator controls for :func:`solve_star` (adaptive DOP853)."""

    rtol: float = 1e-12
    atol_scale: float = 1e-15
    n_nodes: int = 2049
    r0_factor: float = 1e-6
    r_max_factor: float = 1e3

    @classmethod
    def from_dict(cls, d: Optional[dict]):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"solver: unknown option(s) {sorted(unknown)}")
        return cls(**d)


@dataclass
class StarProfile:
    """One steady star sampled on radial nodes 0 = r_0 < ... < r_N = R."""

    mu: float
    R: float
    M: float
    r: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    u: np.ndarray
    enthalpy: Enthalpy = field(repr=False)
    residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def V(self):
        return -self.M / self.R - self.u

    @property
    def V_surface(self):
        return -self.M / self.R

    @property
    def law(self) -> PressureLaw:
        return self.enthalpy.law

    @cached_property
    def _u_spline(self):
        r = self.r
        with np.errstate(divide="ignore", invalid="ignore"):
            du = np.where(r > 0, -self.m / r**2, 0.0)
        return interpolate.CubicHermiteSpline(r, self.u, du)

    @cached_property
    def _m_spline(self):
        return interpolate.CubicHermiteSpline(self.r, self.m, FOUR_PI * self.r**2 * self.rho)

    def u_at(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r < self.R, self._u_spline(np.clip(r, 0.0, self.R)), 0.0)
        return np.maximum(out, 0.0)

    def rho_at(self, r):
        return self.enthalpy.inv_dphi_plus(self.u_at(r))

    def m_at(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.R, self._m_spline(np.clip(r, 0.0, self.R)), self.M)

    def V_at(self, r):
        """Potential, extended by -M/r outside the support."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            outside = -self.M / np.maximum(r, self.R)
        return np.where(r < self.R, -self.M / self.R - self.u_at(r), outside)

    def dV_at(self, r):
        """V'(r) = m(r)/r**2."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.m_at(r) / np.where(r > 0, r, 1.0) ** 2, 0.0)

    def sound_crossing_time(self, n=4001):
        """2 int_0^R dr / sqrt(P'(rho_mu)), by Gauss-Legendre in a surface-regular variable."""
        # near the surface c ~ (R-r)^{1/2}, so substitute r = R(1 - s^2)
        x, w = np.polynomial.legendre.leggauss(200)
        s = 0.5 * (x + 1.0)
        w = 0.5 * w
        r = self.R * (1.0 - s * s)
        c = np.sqrt(self.law.dP(self.rho_at(r)))
        return float(2.0 * np.sum(w * 2.0 * self.R * s / c))


def _center_series(mu, enthalpy, r):
    """Fourth-order expansion of (u, m) about the centre."""
    u0 = float(enthalpy.dphi(mu))
    d2 = float(enthalpy.d2phi(mu))
    rho2 = -(2.0 * math.pi / 3.0) * mu / d2
    c4 = -(math.pi / 5.0) * rho2
    u = u0 - (2.0 * math.pi / 3.0) * mu * r**2 + c4 * r**4
    m = (FOUR_PI / 3.0) * mu * r**3 + (FOUR_PI / 5.0) * rho2 * r**5
    return u, m


def solve_star(law: PressureLaw, mu: float, enthalpy: Optional[Enthalpy] = None,
               options: Optional[SolverOptions] = None) -> StarProfile:
    """Steady star with central density ``mu``.

    Raises
    ------
    StarSolveError
        If u never reaches zero before ``r_max_factor`` times the guessed radius,
        or the integrator fails (step underflow).
    """
    mu = float(mu)
    if not (mu > 0 and math.isfinite(mu)):
        raise ConfigError(f"mu={mu} violates mu > 0")
    opts = options or SolverOptions()
    h = enthalpy if enthalpy is not None else build_enthalpy(law)
    u0 = float(h.dphi(mu))
    guess = math.sqrt(3.0 * u0 / (2.0 * math.pi * mu))
    r0 = opts.r0_factor * guess
    y0 = np.array(_center_series(mu, h, r0))
    scale_m = FOUR_PI / 3.0 * mu * guess**3

    def rhs(r, y):
        rho = h.inv_dphi_plus(y[0])
        return np.array([-y[1] / (r * r), FOUR_PI * r * r * rho])

    r_max = opts.r_max_factor * guess

    def surface(r, y):
        return y[0]

    surface.terminal = True
    surface.direction = -1
    res = integrate.solve_ivp(
        rhs, (r0, r_max), y0, method="DOP853", rtol=opts.rtol,
        atol=[opts.atol_scale * u0, opts.atol_scale * scale_m],
        events=surface, dense_output=True,
    )
    if res.status == -1:
        raise StarSolveError(f"integration failed at mu={mu:g}: {res.message}")
    if res.t_events[0].size == 0:
        raise StarSolveError(f"no vacuum boundary found before r_max={r_max:g} (mu={mu:g})")
    R = float(res.t_events[0][0])
    M = float(res.y_events[0][0][1])

    n = opts.n_nodes
    r = 0.5 * R * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))
    r[-1] = R
    u = np.empty(n)
    m = np.empty(n)
    inner = r <= r0
    u[inner], m[inner] = _center_series(mu, h, r[inner])
    yy = res.sol(r[~inner])
    u[~inner], m[~inner] = yy[0], yy[1]
    u[-1], m[-1] = 0.0, M
    u = np.maximum(u, 0.0)
    rho = h.inv_dphi_plus(u)
    rho[0] = mu
    prof = StarProfile(mu=mu, R=R, M=M, r=r, rho=rho, m=m, u=u, enthalpy=h,
                       meta={"rtol": opts.rtol, "n_steps": int(res.t.size - 1), "nfev": int(res.nfev),
                             "provenance": h.provenance})
    prof.residual = steady_residual(prof)
    return prof


def steady_residual(profile: StarProfile) -> float:
    """max |dP(rho)/dr + rho m / r^2| over interior nodes, scaled by max rho m / r^2."""
    r, rho, m = profile.r, profile.rho, profile.m
    p = profile.law.P(rho)
    dp = interpolate.CubicSpline(r, p)(r, 1)
    sl = slice(1, -1)
    grav = rho[sl] * m[sl] / r[sl] ** 2
    scale = np.max(np.abs(grav))
    if not scale > 0:
        return float("inf")
    return float(np.max(np.abs(dp[sl] + grav)) / scale)


def profile_from_arrays(enthalpy: Enthalpy, r, rho, m=None, meta=None) -> StarProfile:
    """Wrap externally supplied (r, rho[, m]) samples as a profile.

    The enclosed mass defaults to cumulative Simpson quadrature of 4 pi r^2 rho.
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if m is None:
        m = integrate.cumulative_simpson(FOUR_PI * r**2 * rho, x=r, initial=0.0)
    m = np.asarray(m, dtype=float)
    R = float(r[-1])
    M = float(m[-1])
    u = np.asarray(enthalpy.dphi(rho), dtype=float)
    prof = StarProfile(mu=float(rho[0]), R=R, M=M, r=r, rho=rho, m=m, u=u, enthalpy=enthalpy,
                       meta=dict(meta or {}))
    prof.residual = steady_residual(prof)
    return prof


def lane_emden_n1(mu: float, K: float = 1.0, r=None):
    """Closed-form gamma = 2 star: rho = mu sin(kr)/(kr), k = sqrt(2 pi / K).

    Returns (R, M) or, when ``r`` is given, (R, M, rho(r), m(r)).
    """
    k = math.sqrt(2.0 * math.pi / K)
    R = math.pi / k
    M = 4.0 * math.pi**2 * mu / k**3
    if r is None:
        return R, M
    r = np.asarray(r, dtype=float)
    kr = k * r
    rho = mu * np.sinc(kr / math.pi)
    m = FOUR_PI * mu / k**3 * (np.sin(kr) - kr * np.cos(kr))
    return R, M, rho, m
