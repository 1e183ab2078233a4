"""Finite-volume update for radial Euler-Poisson with optional viscosity.

Cells cover [0, R_dom] (or a planar interval for validation runs), uniform
by default or on caller-supplied faces.
Conserved variables are (rho, rho v) per cell.  Interface fluxes use HLL with
Davis wave speeds on minmod-limited primitive states, gravity is the monopole
field m(r)/r**2 from the enclosed mass, and time stepping is two-stage SSP
Runge-Kutta.  The outer wall reflects, so the mass flux there is exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import NumericalError

FOUR_PI = 4.0 * math.pi


@dataclass
class Grid:
    """Cells on [r0, r1]; ``geometry`` is "spherical" or "planar".

    Faces are uniform unless given explicitly.
    """

    n_cells: int
    r1: float
    r0: float = 0.0
    geometry: str = "spherical"
    faces: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.geometry not in ("spherical", "planar"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.faces is None:
            self.faces = np.linspace(self.r0, self.r1, self.n_cells + 1)
        else:
            self.faces = np.asarray(self.faces, dtype=float)
            self.n_cells = self.faces.size - 1
            self.r0, self.r1 = float(self.faces[0]), float(self.faces[-1])
        if self.n_cells < 4:
            raise ValueError("grid needs at least 4 cells")
        self.h = np.diff(self.faces)
        if np.any(self.h <= 0):
            raise ValueError("grid faces must be strictly increasing")
        self.centers = 0.5 * (self.faces[:-1] + self.faces[1:])
        # centre spacing including mirrored ghost centres at both walls
        xg = np.concatenate([[2 * self.r0 - self.centers[0]], self.centers, [2 * self.r1 - self.centers[-1]]])
        self.dx = np.diff(xg)
        if self.geometry == "spherical":
            self.area = FOUR_PI * self.faces**2
            self.vol = FOUR_PI / 3.0 * np.diff(self.faces**3)
            # mass-weighted centre, where the cell-average gravity is sampled
            a, b = self.faces[:-1], self.faces[1:]
            self.r_grav = np.cbrt(0.5 * (a**3 + b**3))
        else:
            self.area = np.ones(self.n_cells + 1)
            self.vol = self.h.copy()
            self.r_grav = self.centers
        self.dA = np.diff(self.area)
        # length scale for the advective limit: cell volume over mean face area
        mean_area = 0.5 * (self.area[:-1] + self.area[1:])
        self.dt_len = np.minimum(self.h, self.vol / mean_area)


@dataclass
class SchemeOptions:
    cfl: float = 0.4
    floor: float = 1e-12
    viscosity: float = 0.0
    gravity: bool = True
    second_order: bool = True
    # cells below this multiple of the floor fall back to first order
    vacuum_factor: float = 1e3


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def primitives(rho, mom, floor):
    """Velocity with the vacuum contract v = 0 where rho <= floor."""
    live = rho > floor
    v = np.zeros_like(rho)
    v[live] = mom[live] / rho[live]
    return v


class Scheme:
    """Semi-discrete operator and SSP-RK2 stepping for a given pressure law."""

    def __init__(self, grid: Grid, P: Callable, dP: Callable, options: Optional[SchemeOptions] = None):
        self.grid = grid
        self.P = P
        self.dP = dP
        self.opt = options or SchemeOptions()
        if not 0.0 < self.opt.cfl < 1.0:
            raise ValueError(f"cfl={self.opt.cfl} outside (0, 1)")
        if not self.opt.floor > 0.0:
            raise ValueError("density floor must be positive")
        if self.opt.viscosity < 0.0:
            raise ValueError("viscosity must be >= 0")

    # -- pieces ------------------------------------------------------------

    def sound_speed(self, rho):
        return np.sqrt(np.maximum(self.dP(np.maximum(rho, 0.0)), 0.0))

    def _reconstruct(self, rho, v):
        """Left/right primitive states at every face (ghosts mirror v)."""
        g = self.grid
        rg = np.concatenate([[rho[0]], rho, [rho[-1]]])
        vg = np.concatenate([[-v[0]], v, [-v[-1]]])
        if self.opt.second_order:
            gr = np.diff(rg) / g.dx
            gv = np.diff(vg) / g.dx
            sr = _minmod(gr[:-1], gr[1:]) * g.h
            sv = _minmod(gv[:-1], gv[1:]) * g.h
            thin = rho < self.opt.vacuum_factor * self.opt.floor
            near = thin | np.concatenate([[False], thin[:-1]]) | np.concatenate([thin[1:], [False]])
            sr[near] = 0.0
            sv[near] = 0.0
        else:
            sr = np.zeros_like(rho)
            sv = np.zeros_like(v)
        rp, rm = rho + 0.5 * sr, rho - 0.5 * sr      # values at right/left faces of each cell
        vp, vm = v + 0.5 * sv, v - 0.5 * sv
        rL = np.concatenate([[rm[0]], rp])
        rR = np.concatenate([rm, [rp[-1]]])
        vL = np.concatenate([[-vm[0]], vp])
        vR = np.concatenate([vm, [-vp[-1]]])
        # floor cells carry no velocity
        vL = np.where(rL > self.opt.floor, vL, 0.0)
        vR = np.where(rR > self.opt.floor, vR, 0.0)
        return rL, vL, rR, vR

    def _hll(self, rL, vL, rR, vR):
        cL, cR = self.sound_speed(rL), self.sound_speed(rR)
        pL, pR = self.P(rL), self.P(rR)
        sL = np.minimum(vL - cL, vR - cR)
        sR = np.maximum(vL + cL, vR + cR)
        FL = np.stack([rL * vL, rL * vL * vL + pL])
        FR = np.stack([rR * vR, rR * vR * vR + pR])
        UL = np.stack([rL, rL * vL])
        UR = np.stack([rR, rR * vR])
        den = np.where(sR - sL > 0, sR - sL, 1.0)
        Fs = (sR * FL - sL * FR + sL * sR * (UR - UL)) / den
        F = np.where(sL >= 0, FL, np.where(sR <= 0, FR, Fs))
        F[:, (sR - sL) <= 0] = 0.5 * (FL + FR)[:, (sR - sL) <= 0]
        # reflecting boundaries carry no mass
        F[0, 0] = 0.0
        F[0, -1] = 0.0
        return F, np.maximum(np.abs(sL), np.abs(sR))

    def gravity(self, rho):
        """m(r)/r**2 at each cell's gravity point (zero if gravity is off)."""
        g = self.grid
        if not self.opt.gravity or g.geometry != "spherical":
            return np.zeros_like(rho)
        m_left = np.concatenate([[0.0], np.cumsum(rho * g.vol)[:-1]])
        a = g.faces[:-1]
        m_c = m_left + rho * FOUR_PI / 3.0 * (g.r_grav**3 - a**3)
        return m_c / g.r_grav**2

    def rhs(self, rho, mom):
        g = self.grid
        v = primitives(rho, mom, self.opt.floor)
        rL, vL, rR, vR = self._reconstruct(rho, v)
        F, _ = self._hll(rL, vL, rR, vR)
        AF = F * g.area
        drho = -(AF[0, 1:] - AF[0, :-1]) / g.vol
        dmom = -(AF[1, 1:] - AF[1, :-1]) / g.vol + self.P(rho) * g.dA / g.vol
        dmom -= rho * self.gravity(rho)
        eps = self.opt.viscosity
        if eps > 0.0:
            dmom += self._viscous(rho, v)
        return drho, dmom

    def _viscous(self, rho, v):
        """eps div(rho D(v)), radial component, as a centred face flux plus hoop term."""
        g = self.grid
        eps = self.opt.viscosity
        vg = np.concatenate([[-v[0]], v, [-v[-1]]])
        rg = np.concatenate([[rho[0]], rho, [rho[-1]]])
        rho_f = 0.5 * (rg[:-1] + rg[1:])
        tau = eps * rho_f * np.diff(vg) / g.dx
        tau[0] = 0.0 if g.geometry == "spherical" else tau[0]
        out = (g.area[1:] * tau[1:] - g.area[:-1] * tau[:-1]) / g.vol
        if g.geometry == "spherical":
            out -= 2.0 * eps * rho * v / g.centers**2
        return out

    def max_dt(self, rho, mom):
        v = primitives(rho, mom, self.opt.floor)
        s = np.abs(v) + self.sound_speed(rho)
        with np.errstate(divide="ignore"):
            dt = self.opt.cfl * float(np.min(np.where(s > 0, self.grid.dt_len / s, np.inf)))
        if self.opt.viscosity > 0.0:
            dt = min(dt, 0.2 * float(np.min(self.grid.h)) ** 2 / self.opt.viscosity)
        return dt

    # -- stepping ----------------------------------------------------------

    def apply_floor(self, rho, mom):
        """Zero the momentum of floor cells; density is never modified (mass is exact)."""
        if np.any(rho < 0.0):
            # tiny negative round-off on vacuum cells; anything larger is an error
            bad = rho < -self.opt.floor
            if np.any(bad):
                k = int(np.argmin(rho))
                raise NumericalError(f"negative density {rho[k]:.3e} in cell {k}")
        mom = np.where(rho > self.opt.floor, mom, 0.0)
        return rho, mom

    def step(self, rho, mom, dt):
        """One SSP-RK2 step of size dt."""
        d1, m1 = self.rhs(rho, mom)
        r1, u1 = self.apply_floor(rho + dt * d1, mom + dt * m1)
        d2, m2 = self.rhs(r1, u1)
        r2 = 0.5 * rho + 0.5 * (r1 + dt * d2)
        u2 = 0.5 * mom + 0.5 * (u1 + dt * m2)
        r2, u2 = self.apply_floor(r2, u2)
        if not (np.all(np.isfinite(r2)) and np.all(np.isfinite(u2))):
            err = NumericalError("non-finite state after step")
            err.state = {"rho": rho.copy(), "mom": mom.copy(), "dt": dt}
            raise err
        return r2, u2

    def mass(self, rho):
        return float(np.sum(rho * self.grid.vol))
