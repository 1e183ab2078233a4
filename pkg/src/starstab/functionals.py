"""Energy, energy-Casimir, the five-part distance, and the dual functional.

Radial states live on a :class:`Layout`, a set of quadrature points on
[0, R_dom] split at the star radius R (integrands switch definition there).
Two layouts are provided:

* :class:`NodeLayout` -- point values on uniform nodes, composite Simpson;
  the node at R is duplicated so each side carries its own limit.
* :class:`CellLayout` -- piecewise-constant cell values (finite volumes),
  Gauss points inside each cell; enclosed masses are exact.

All radial integrals are ``int f dr``; volume integrals carry 4 pi r^2
explicitly.  Field energies use (1/8 pi) int |grad V|^2 dx = 1/2 int q^2/r^2 dr
plus the exterior tail q(R_dom)^2 / (2 R_dom).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .eos import psi, psi_star
from .errors import InvariantError
from .star import StarProfile

FOUR_PI = 4.0 * math.pi


def _simpson_weights(x):
    """Composite Simpson weights on an odd number of uniformly spaced points."""
    n = x.size
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson needs an odd number (>= 3) of points")
    h = (x[-1] - x[0]) / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


class Layout:
    """Quadrature points ``r`` with weights ``w`` (for int dr) and an ``inside`` mask."""

    r: np.ndarray
    w: np.ndarray
    inside: np.ndarray
    R: float
    R_dom: float

    def integrate(self, f, where=None):
        f = np.asarray(f, dtype=float)
        if where is None:
            return float(np.sum(self.w * f))
        return float(np.sum(np.where(where, self.w * f, 0.0)))

    def volume(self, f, where=None):
        """int f dx over the (masked) ball, radial."""
        return self.integrate(FOUR_PI * self.r**2 * np.asarray(f, dtype=float), where)

    def enclosed_mass(self, rho):
        raise NotImplementedError

    def outer_moment(self, rho):
        """int_r^inf 4 pi s rho(s) ds at the points (rho = 0 beyond R_dom)."""
        raise NotImplementedError

    def potential(self, rho):
        """V(r) = -q(r)/r - int_r^inf 4 pi s rho ds, with V(0) = -int 4 pi s rho."""
        q = self.enclosed_mass(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(self.r > 0, q / np.where(self.r > 0, self.r, 1.0), 0.0)
        return -first - self.outer_moment(rho)

    def field_energy(self, q_a, q_b=None):
        """(1/4 pi) int grad V_a . grad V_b dx from enclosed masses (with the exterior tail)."""
        if q_b is None:
            q_b = q_a
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(self.r > 0, q_a * q_b / np.where(self.r > 0, self.r, 1.0) ** 2, 0.0)
        return self.integrate(f) + float(q_a[-1] * q_b[-1]) / self.R_dom


class NodeLayout(Layout):
    """Uniform nodes on [0, R] (2 n_in + 1) and [R, R_dom] (2 n_out + 1), Simpson."""

    def __init__(self, R: float, R_dom: float, n_in: int = 2000, n_out: int = 1000):
        if not R_dom > R:
            raise ValueError("R_dom must exceed R")
        self.R, self.R_dom = float(R), float(R_dom)
        self.r_in = np.linspace(0.0, R, 2 * n_in + 1)
        self.r_out = np.linspace(R, R_dom, 2 * n_out + 1)
        self.n1 = self.r_in.size
        self.r = np.concatenate([self.r_in, self.r_out])
        self.w = np.concatenate([_simpson_weights(self.r_in), _simpson_weights(self.r_out)])
        self.inside = np.zeros(self.r.size, dtype=bool)
        self.inside[: self.n1] = True

    def _cumulative(self, f):
        a = integrate.cumulative_simpson(f[: self.n1], x=self.r_in, initial=0.0)
        b = integrate.cumulative_simpson(f[self.n1:], x=self.r_out, initial=0.0)
        return np.concatenate([a, a[-1] + b])

    def enclosed_mass(self, rho):
        return self._cumulative(FOUR_PI * self.r**2 * rho)

    def outer_moment(self, rho):
        c = self._cumulative(FOUR_PI * self.r * rho)
        return c[-1] - c

    def sample(self, f):
        return np.asarray(f(self.r), dtype=float)


class CellLayout(Layout):
    """Finite-volume cells on ``faces``; the cell containing R is split at R.

    Point values are constant per (sub)cell, so q(r) and the outer moment are
    exact for the piecewise-constant density.
    """

    def __init__(self, faces, R: float, n_gauss: int = 4):
        faces = np.asarray(faces, dtype=float)
        self.faces = faces
        self.R, self.R_dom = float(R), float(faces[-1])
        self.n_cells = faces.size - 1
        edges = faces.copy()
        owner = np.arange(self.n_cells)
        if faces[0] < R < faces[-1] and not np.any(np.isclose(faces, R, rtol=0, atol=1e-14 * R)):
            k = int(np.searchsorted(faces, R)) - 1
            edges = np.insert(faces, k + 1, R)
            owner = np.insert(owner, k + 1, k)
        self.edges = edges
        self.owner = owner                              # sub-cell -> cell index
        a, b = edges[:-1], edges[1:]
        gx, gw = np.polynomial.legendre.leggauss(n_gauss)
        self.a_sub = a
        self.sub = np.repeat(np.arange(a.size), n_gauss)
        self.r = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gx[None, :]).ravel()
        self.w = (0.5 * (b - a)[:, None] * gw[None, :]).ravel()
        self.inside = np.repeat(0.5 * (a + b) < R, n_gauss)
        self.vol_sub = FOUR_PI / 3.0 * (b**3 - a**3)
        self.vol = FOUR_PI / 3.0 * np.diff(faces**3)

    def expand(self, cell_values):
        """Point values from per-cell values."""
        return np.asarray(cell_values, dtype=float)[self.owner][self.sub]

    def _sub_values(self, rho_points):
        n = self.w.size // self.a_sub.size
        return rho_points[::n]

    def enclosed_mass(self, rho):
        rs = self._sub_values(rho)
        Qf = np.concatenate([[0.0], np.cumsum(rs * self.vol_sub)])
        a = self.a_sub[self.sub]
        return Qf[self.sub] + rs[self.sub] * FOUR_PI / 3.0 * (self.r**3 - a**3)

    def outer_moment(self, rho):
        rs = self._sub_values(rho)
        b = self.edges[1:]
        per = rs * 2.0 * math.pi * (b**2 - self.a_sub**2)
        tail = np.concatenate([np.cumsum(per[::-1])[::-1][1:], [0.0]])
        return tail[self.sub] + rs[self.sub] * 2.0 * math.pi * (b[self.sub] ** 2 - self.r**2)

    def cell_mass(self, cell_values):
        return float(np.sum(np.asarray(cell_values) * self.vol))


# ---------------------------------------------------------------------------
# states


@dataclass
class PerturbedState:
    """Radial (rho, v) on a layout, measured against a steady profile.

    ``rho_ref`` is the reference density at the layout points; it defaults to
    the profile's density and may be replaced by a discrete equilibrium.
    """

    layout: Layout
    rho: np.ndarray
    v: np.ndarray
    profile: StarProfile
    rho_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.rho_ref is None:
            self.rho_ref = np.where(self.layout.inside, self.profile.rho_at(self.layout.r), 0.0)
        if np.any(self.rho < 0):
            raise InvariantError("state has negative density")
        # velocity is meaningless on the vacuum set
        self.v = np.where(self.rho > 0, self.v, 0.0)

    @property
    def mass(self):
        return self.layout.volume(self.rho)

    @classmethod
    def steady(cls, profile: StarProfile, layout: Layout):
        lay = layout
        rho = np.where(lay.inside, profile.rho_at(lay.r), 0.0)
        return cls(lay, rho, np.zeros_like(rho), profile)


def split_in_out(state: PerturbedState):
    """(rho_in, rho_out, V_in, V_out) with rho_in = rho on B, rho_out the remainder."""
    lay = state.layout
    rho_in = np.where(lay.inside, state.rho, 0.0)
    rho_out = state.rho - rho_in
    return rho_in, rho_out, lay.potential(rho_in), lay.potential(rho_out)


def energy(layout: Layout, rho, v, enthalpy):
    """E = int (rho v^2 / 2 + Phi(rho)) dx - (1/8 pi) int |grad V|^2 dx."""
    q = layout.enclosed_mass(rho)
    kin = layout.volume(0.5 * rho * v * v)
    internal = layout.volume(enthalpy.phi(rho))
    return kin + internal - 0.5 * layout.field_energy(q)


def energy_casimir(state: PerturbedState):
    """(E, H) with H = E - V_mu(R_mu) M = E + (M_mu/R_mu) M."""
    p = state.profile
    E = energy(state.layout, state.rho, state.v, p.enthalpy)
    return E, E + p.M / p.R * state.mass


@dataclass
class DistanceBreakdown:
    d1: float
    d2: float
    d3: float
    d4: float
    d5: float
    out_field: float
    cross: float
    dH: float
    mass_gap: float

    @property
    def total(self):
        return self.d1 + self.d2 + self.d3 + self.d4 + self.d5

    @property
    def terms(self):
        return (self.d1, self.d2, self.d3, self.d4, self.d5)

    def to_dict(self):
        out = asdict(self)
        out["d"] = self.total
        return out


def distance(state: PerturbedState, check: bool = True) -> DistanceBreakdown:
    """Five-term distance of ``state`` from the steady star, plus the out-field terms.

    ``dH`` is H(state) - H(reference) with both energies on the same layout.
    Raises InvariantError if a term is below -1e-12 (relative to its scale).
    """
    lay, p = state.layout, state.profile
    h = p.enthalpy
    ins = lay.inside
    rho, ref = state.rho, state.rho_ref
    rho_in = np.where(ins, rho, 0.0)
    rho_out = rho - rho_in
    q_in = lay.enclosed_mass(rho_in)
    q_out = lay.enclosed_mass(rho_out)
    q_mu = lay.enclosed_mass(ref)

    d1 = lay.volume(0.5 * rho * state.v**2)
    tau = np.where(ins, rho - ref, 0.0)
    d2 = lay.volume(psi(np.where(ins, ref, 0.0), tau, h), ins)
    d3 = lay.volume(h.phi(rho_out), ~ins)
    d4 = 0.5 * lay.field_energy(q_in - q_mu)
    with np.errstate(divide="ignore"):
        gap = np.where(ins, 0.0, p.M / p.R - p.M / np.maximum(lay.r, p.R))
    d5 = lay.volume(gap * rho_out, ~ins)
    out_field = 0.5 * lay.field_energy(q_out)
    cross = lay.field_energy(q_out, q_in - q_mu)

    E1 = energy(lay, rho, state.v, h)
    E0 = energy(lay, ref, np.zeros_like(ref), h)
    M1, M0 = lay.volume(rho), lay.volume(ref)
    dH = (E1 - E0) + p.M / p.R * (M1 - M0)
    br = DistanceBreakdown(d1, d2, d3, d4, d5, out_field, cross, dH, abs(M1 - p.M))
    if check:
        scale = 1e-12 * (1.0 + abs(E0))
        bad = [f"d{i+1}={t:.3e}" for i, t in enumerate(br.terms) if t < -scale]
        if bad:
            raise InvariantError("negative distance term(s): " + ", ".join(bad))
    return br


def decomposition_check(state: PerturbedState) -> float:
    """|LHS - RHS| / (1 + |LHS|) for H - H_mu = d1+d2+d3-d4+d5 - out_field - cross."""
    b = distance(state)
    rhs = b.d1 + b.d2 + b.d3 - b.d4 + b.d5 - b.out_field - b.cross
    return abs(b.dH - rhs) / (1.0 + abs(b.dH))


def d5_lower_bound(state: PerturbedState, delta: float) -> float:
    """delta M/((R+delta) R) times the exterior mass beyond R + delta."""
    p, lay = state.profile, state.layout
    far = lay.r > p.R + delta
    return delta * p.M / ((p.R + delta) * p.R) * lay.volume(state.rho, far & ~lay.inside)


# ---------------------------------------------------------------------------
# projection and the dual functional


def projection_P(layout: Layout, phi, profile: StarProfile, rho_ref=None) -> float:
    """1/Phi''(rho_mu)-weighted average of phi over B."""
    ins = layout.inside
    if rho_ref is None:
        rho_ref = np.where(ins, profile.rho_at(layout.r), 0.0)
    wt = profile.enthalpy.inv_d2phi(rho_ref)
    den = layout.volume(wt, ins)
    if not den > 0:
        raise InvariantError("projection weight vanishes on B")
    return layout.volume(wt * np.asarray(phi, dtype=float), ins) / den


def dual_B(layout: Layout, phi, dphi, profile: StarProfile, rho_ref=None) -> float:
    """B(phi) = (1/8 pi) int |grad phi|^2 + int_B Psi*_{rho_mu}(P phi - phi) dx.

    ``phi`` and ``dphi`` are values and radial derivatives at the layout points;
    beyond R_dom phi is continued as the harmonic c/r.
    """
    phi = np.asarray(phi, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    ins = layout.inside
    if rho_ref is None:
        rho_ref = np.where(ins, profile.rho_at(layout.r), 0.0)
    grad = 0.5 * layout.integrate(dphi**2 * layout.r**2) + 0.5 * layout.R_dom * phi[-1] ** 2
    Pphi = projection_P(layout, phi, profile, rho_ref)
    y = np.where(ins, Pphi - phi, 0.0)
    val = psi_star(np.where(ins, rho_ref, 0.0), y, profile.enthalpy)[0]
    return grad + layout.volume(val, ins)


def second_variation(layout: Layout, phi, dphi, profile: StarProfile, rho_ref=None) -> float:
    """<B''(0) phi, phi> = (1/4 pi) int |grad phi|^2 - int_B (P phi - phi)^2 / Phi''."""
    phi = np.asarray(phi, dtype=float)
    ins = layout.inside
    if rho_ref is None:
        rho_ref = np.where(ins, profile.rho_at(layout.r), 0.0)
    grad = layout.integrate(np.asarray(dphi) ** 2 * layout.r**2) + layout.R_dom * phi[-1] ** 2
    Pphi = projection_P(layout, phi, profile, rho_ref)
    wt = profile.enthalpy.inv_d2phi(rho_ref)
    return grad - layout.volume(wt * (Pphi - phi) ** 2, ins)


def hessian_fd(layout: Layout, phi, dphi, profile: StarProfile, eps=(1e-2, 5e-3, 2.5e-3),
               resolved_rel: float = 1e-9):
    """Symmetric second differences of B at 0 along phi for decreasing steps.

    Returns (estimates, observed order), the order from successive differences
    of the estimates (no reference value needed).  When the first two
    estimates already agree to ``resolved_rel`` the truncation error is below
    rounding noise and cannot be measured; the order is then reported as inf.
    """
    phi = np.asarray(phi, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    rho_ref = np.where(layout.inside, profile.rho_at(layout.r), 0.0)
    est = []
    for e in eps:
        bp = dual_B(layout, e * phi, e * dphi, profile, rho_ref)
        bm = dual_B(layout, -e * phi, -e * dphi, profile, rho_ref)
        est.append((bp + bm) / (e * e))
    est = np.array(est)
    order = float("nan")
    if len(est) >= 3:
        d1, d2 = abs(est[0] - est[1]), abs(est[1] - est[2])
        if d1 <= resolved_rel * abs(est[-1]):
            order = float("inf")
        elif d2 > 0:
            order = math.log(d1 / d2) / math.log(eps[0] / eps[1])
        else:
            order = float("inf")
    return est, order


@dataclass
class DualityGap:
    d2_minus_d4: float
    surrogate: float
    slack: float
    pointwise_min: float = field(default=0.0)


def duality_gap(state: PerturbedState) -> DualityGap:
    """Compare d2 - d4 with B(V~_in) + P V~_in int_B rho~_in.

    V~_in = V_in - V_mu and rho~_in = rho_in - rho_mu.  Fenchel-Young makes the
    slack nonnegative pointwise; ``pointwise_min`` reports the smallest
    integrand value.
    """
    lay, p = state.layout, state.profile
    ins = lay.inside
    ref = state.rho_ref
    rho_in = np.where(ins, state.rho, 0.0)
    b = distance(state)
    Vt = lay.potential(rho_in) - lay.potential(ref)
    dVt = (lay.enclosed_mass(rho_in) - lay.enclosed_mass(ref))
    with np.errstate(divide="ignore", invalid="ignore"):
        dVt = np.where(lay.r > 0, dVt / np.where(lay.r > 0, lay.r, 1.0) ** 2, 0.0)
    B = dual_B(lay, Vt, dVt, p, ref)
    PV = projection_P(lay, Vt, p, ref)
    rt = np.where(ins, rho_in - ref, 0.0)
    sur = B + PV * lay.volume(rt, ins)
    y = np.where(ins, PV - Vt, 0.0)
    rb = np.where(ins, ref, 0.0)
    pw = psi(rb, rt, p.enthalpy) - y * rt - psi_star(rb, y, p.enthalpy)[0]
    pmin = float(np.min(np.where(ins, pw, np.inf)))
    return DualityGap(b.d2 - b.d4, sur, b.d2 - b.d4 - sur, pmin)


# ---------------------------------------------------------------------------
# randomized admissible states


def _bump(r, c, w):
    x = (r - c) / w
    return np.where(np.abs(x) < 1.0, np.cos(0.5 * np.pi * x) ** 2, 0.0)


def random_state(profile: StarProfile, rng: np.random.Generator, layout: Optional[Layout] = None,
                 amplitude: float = 0.1, exterior: bool = True, velocity: bool = True) -> PerturbedState:
    """Smooth random perturbation of the steady star.

    Interior: rho_mu (1 + s(r)) plus a positive bump, s a few low cosine modes.
    Exterior: a positive smooth shell in (R, R_dom).  Velocity: smooth random.
    """
    R = profile.R
    if layout is None:
        layout = NodeLayout(R, 1.5 * R)
    r = layout.r
    ins = layout.inside
    mu = profile.mu
    base = np.where(ins, profile.rho_at(r), 0.0)
    k = np.arange(1, 4)
    coef = rng.uniform(-1.0, 1.0, 3) * amplitude
    s = np.sum(coef[:, None] * np.cos(np.pi * k[:, None] * r[None, :] / R), axis=0)
    rho = base * (1.0 + s)
    c, w = rng.uniform(0.2, 0.7) * R, rng.uniform(0.1, 0.25) * R
    rho = rho + np.where(ins, rng.uniform(0.0, amplitude) * mu * _bump(r, c, w), 0.0)
    if exterior:
        span = layout.R_dom - R
        c = R + rng.uniform(0.3, 0.7) * span
        w = rng.uniform(0.1, 0.25) * span
        rho = rho + np.where(ins, 0.0, rng.uniform(0.0, 0.5 * amplitude) * mu * _bump(r, c, w))
    v = np.zeros_like(r)
    if velocity:
        a = rng.uniform(-1.0, 1.0, 2) * amplitude
        v = (a[0] * r / R + a[1] * (r / R) ** 2) * np.exp(-((r / R) ** 2))
    return PerturbedState(layout, np.maximum(rho, 0.0), v, profile)
