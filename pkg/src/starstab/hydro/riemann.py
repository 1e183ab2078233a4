"""Exact Riemann solver for the barotropic Euler equations P = K rho^gamma.

Used only as a validation oracle for the finite-volume scheme.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize


def _wave(rho, rhoK, K, gamma):
    """Velocity jump across a left/right wave connecting rhoK to rho (positive = compressive)."""
    cK = math.sqrt(K * gamma * rhoK ** (gamma - 1.0))
    if rho <= rhoK:
        c = math.sqrt(K * gamma * rho ** (gamma - 1.0))
        return 2.0 / (gamma - 1.0) * (c - cK)
    P, PK = K * rho**gamma, K * rhoK**gamma
    return math.sqrt((P - PK) * (rho - rhoK) / (rho * rhoK))


def star_state(rhoL, vL, rhoR, vR, K=1.0, gamma=1.4):
    """(rho*, v*) in the middle region."""
    def g(rho):
        return _wave(rho, rhoL, K, gamma) + _wave(rho, rhoR, K, gamma) + vR - vL

    lo = 1e-14 * min(rhoL, rhoR)
    if g(lo) > 0:
        raise ValueError("vacuum generated: no positive middle density")
    hi = max(rhoL, rhoR)
    while g(hi) < 0:
        hi *= 2.0
    rs = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)
    vs = 0.5 * (vL - _wave(rs, rhoL, K, gamma) + vR + _wave(rs, rhoR, K, gamma))
    return rs, vs


def sample(xi, rhoL, vL, rhoR, vR, K=1.0, gamma=1.4):
    """Self-similar solution (rho, v) at xi = (x - x0)/t."""
    xi = np.asarray(xi, dtype=float)
    rs, vs = star_state(rhoL, vL, rhoR, vR, K, gamma)
    rho = np.empty_like(xi)
    v = np.empty_like(xi)

    def c_of(r):
        return np.sqrt(K * gamma * r ** (gamma - 1.0))

    # left wave
    cL = c_of(rhoL)
    if rs > rhoL:
        s = (rs * vs - rhoL * vL) / (rs - rhoL)
        left = xi < s
        mid_l = np.zeros_like(xi, dtype=bool)
        head = tail = s
    else:
        head, tail = vL - cL, vs - c_of(rs)
        left = xi < head
        mid_l = (xi >= head) & (xi < tail)
    rho[left], v[left] = rhoL, vL
    if np.any(mid_l):
        J = vL + 2.0 * cL / (gamma - 1.0)
        c = (J - xi[mid_l]) * (gamma - 1.0) / (gamma + 1.0)
        v[mid_l] = xi[mid_l] + c
        rho[mid_l] = (c * c / (K * gamma)) ** (1.0 / (gamma - 1.0))
    # right wave
    cR = c_of(rhoR)
    if rs > rhoR:
        s = (rs * vs - rhoR * vR) / (rs - rhoR)
        right = xi > s
        mid_r = np.zeros_like(xi, dtype=bool)
        rtail = s
    else:
        rtail, rhead = vs + c_of(rs), vR + cR
        right = xi > rhead
        mid_r = (xi <= rhead) & (xi > rtail)
    rho[right], v[right] = rhoR, vR
    if np.any(mid_r):
        J = vR - 2.0 * cR / (gamma - 1.0)
        c = (xi[mid_r] - J) * (gamma - 1.0) / (gamma + 1.0)
        v[mid_r] = xi[mid_r] - c
        rho[mid_r] = (c * c / (K * gamma)) ** (1.0 / (gamma - 1.0))
    star = ~(left | mid_l | right | mid_r)
    rho[star], v[star] = rs, vs
    return rho, v
