"""Initial data, time evolution with diagnostics, and stability batches."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, InvariantError, NumericalError
from ..functionals import CellLayout, DistanceBreakdown, PerturbedState, distance, energy
from ..spectral import assemble_Lmu_Zmu, inertia
from ..star import StarProfile
from .scheme import Grid, Scheme, SchemeOptions

KINDS = ("none", "density_bump", "velocity_kick", "eigenmode_seed", "mass_offset")

# The scheme is not well balanced.  Measured on the gamma = 3/2, K = 1, mu = 1
# star over 10 sound-crossing times with 100, 200 and 400 cells:
#   zero perturbation: sup_t d(t) <= 1.1e-6 |E_mu| at 200 cells, scaling as h^4;
#   perturbations of amplitude <= 1e-2: max_t E(t) - E(0) <= 1e-5 |E(0)| at 200
#   cells, scaling as h^2 (h^4 for the zero perturbation).
DRIFT_COEF, DRIFT_ORDER = 1.1e-6, 4
ENERGY_COEF, ENERGY_ORDER = 1.0e-5, 2
CALIBRATION_CELLS = 200


def drift_bound(n_cells: int, E_mu: float, safety: float = 2.0) -> float:
    """Budget for sup_t d(t) of an unperturbed run at this resolution."""
    return safety * DRIFT_COEF * abs(E_mu) * (CALIBRATION_CELLS / n_cells) ** DRIFT_ORDER


def energy_tolerance(n_cells: int, E0: float, safety: float = 2.0) -> float:
    """tol_E in E(t) <= E(0) + tol_E at this resolution (amplitudes up to 1e-2)."""
    return safety * ENERGY_COEF * abs(E0) * (CALIBRATION_CELLS / n_cells) ** ENERGY_ORDER


@dataclass
class Perturbation:
    """Initial perturbation of the steady star.

    ``amplitude`` is relative to the central density for density kinds and
    to sqrt(M/R) (a velocity scale) times r/R for ``velocity_kick``.  Bump
    centre and half-width are fractions of R.  ``mass_offset`` rescales the
    interior density by (1 + amplitude) with no change of shape.
    """

    kind: str = "density_bump"
    amplitude: float = 1e-2
    mass_preserving: bool = True
    center: float = 0.5
    width: float = 0.25
    sign: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"perturbation.kind: {self.kind!r} not one of {KINDS}")
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            raise ConfigError(f"perturbation.amplitude={self.amplitude} must be >= 0")


@dataclass
class HydroConfig:
    """Run controls.  Times are in sound-crossing units unless ``time_unit`` is "absolute".

    The domain is [0, R_dom] with R_dom close to ``R_dom_factor`` R, adjusted
    so that R is a cell face.  ``stretch`` > 0 grades the interior cells
    geometrically toward the centre (r = R (e^{s x} - 1)/(e^s - 1) on a uniform
    x), which resolves centrally condensed stars; exterior cells keep the
    width of the last interior cell.
    """

    n_cells: int = 200
    R_dom_factor: float = 1.5
    cfl: float = 0.4
    floor_factor: float = 1e-12
    viscosity: float = 0.0
    t_end: float = 10.0
    cadence: float = 0.1
    time_unit: str = "sound_crossing"
    perturbation: Perturbation = field(default_factory=Perturbation)
    q: float = 1.5
    stretch: float = 0.0
    gravity: bool = True
    snapshots: bool = False
    stop_ratio: Optional[float] = None
    max_steps: int = 10_000_000

    def __post_init__(self):
        if isinstance(self.perturbation, dict):
            self.perturbation = Perturbation(**self.perturbation)
        if not 0.0 < self.cfl < 1.0:
            raise ConfigError(f"hydro.cfl={self.cfl} outside (0, 1)")
        if not self.floor_factor > 0.0:
            raise ConfigError("hydro.floor_factor must be > 0")
        if not self.R_dom_factor > 1.0:
            raise ConfigError("hydro.R_dom_factor must exceed 1 (R_dom > R)")
        if self.viscosity < 0.0:
            raise ConfigError("hydro.viscosity must be >= 0")
        if self.n_cells < 8:
            raise ConfigError("hydro.n_cells must be >= 8")
        if self.stretch < 0.0:
            raise ConfigError("hydro.stretch must be >= 0")
        if self.time_unit not in ("sound_crossing", "absolute"):
            raise ConfigError(f"hydro.time_unit={self.time_unit!r}")
        if not (self.t_end > 0 and self.cadence > 0):
            raise ConfigError("hydro.t_end and hydro.cadence must be > 0")

    @classmethod
    def from_dict(cls, d: Optional[dict]):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"hydro: unknown field(s) {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"hydro: {exc}") from None

    def to_dict(self):
        return asdict(self)


@dataclass
class Setup:
    """Grid, diagnostic layout and discrete reference for one profile."""

    profile: StarProfile
    grid: Grid
    layout: CellLayout
    rho_cells: np.ndarray          # cell averages of the steady star
    floor: float

    @property
    def rho_ref(self):
        return self.layout.expand(self.rho_cells)

    def cells(self, point_values):
        """Per-cell values from layout point values (R is a face, so no split cells)."""
        n = self.layout.w.size // self.grid.n_cells
        return np.asarray(point_values)[::n].copy()


def make_setup(profile: StarProfile, config: Optional[HydroConfig] = None) -> Setup:
    cfg = config or HydroConfig()
    n_in = max(4, int(round(cfg.n_cells / cfg.R_dom_factor)))
    if n_in >= cfg.n_cells:
        raise ConfigError("hydro: R_dom_factor leaves no exterior cells")
    R = profile.R
    x = np.arange(n_in + 1) / n_in
    s = cfg.stretch
    inner = R * np.expm1(s * x) / math.expm1(s) if s > 0 else R * x
    inner[-1] = R
    outer = R + (inner[-1] - inner[-2]) * np.arange(1, cfg.n_cells - n_in + 1)
    grid = Grid(cfg.n_cells, float(outer[-1]), faces=np.concatenate([inner, outer]))
    layout = CellLayout(grid.faces, R)
    mf = profile.m_at(grid.faces)
    mf[n_in:] = profile.M
    rho = np.diff(mf) / grid.vol
    rho[n_in:] = 0.0
    return Setup(profile, grid, layout, np.maximum(rho, 0.0), cfg.floor_factor * profile.mu)


def _cell_average(setup: Setup, f):
    """Volume averages of f(r) over the cells, by 6-point Gauss-Legendre in r."""
    g = setup.grid
    x, w = np.polynomial.legendre.leggauss(6)
    a, b = g.faces[:-1], g.faces[1:]
    r = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x
    vals = f(r) * 4.0 * math.pi * r * r * (0.5 * (b - a)[:, None] * w)
    return vals.sum(axis=1) / g.vol


def _bump(r, c, w):
    x = (r - c) / w
    return np.where(np.abs(x) < 1.0, np.cos(0.5 * np.pi * x) ** 4, 0.0)


def eigenmode_cells(setup: Setup, n_el: int = 120):
    """Cell averages of the most negative L_mu|Z_mu eigenvector, max |value| = 1, >= 0 at the surface."""
    p = setup.profile
    form = assemble_Lmu_Zmu(p, n_el)
    rep = inertia(form.A, form.W, form.c, keep_vectors=1)
    x = rep.vectors[:, 0]
    mesh = form.mesh
    inside = setup.grid.faces[1:] <= p.R * (1 + 1e-14)

    def f(r):
        return np.where(r < p.R, mesh.evaluate(x, np.clip(r, 0.0, p.R).ravel()).reshape(r.shape), 0.0)

    dr = np.where(inside, _cell_average(setup, f), 0.0)
    k_out = int(np.flatnonzero(inside)[-1])
    s = np.sign(dr[k_out - 2]) or 1.0
    dr = s * dr / np.max(np.abs(dr))
    return dr, float(rep.eigenvalues[0])


def make_initial(profile: StarProfile, perturbation: Optional[Perturbation] = None,
                 config: Optional[HydroConfig] = None, setup: Optional[Setup] = None) -> PerturbedState:
    """Perturbed cell state measured against the discrete steady star.

    Raises
    ------
    InvariantError
        If the perturbation produces a negative density.
    """
    cfg = config or HydroConfig()
    pert = perturbation or cfg.perturbation
    st = setup or make_setup(profile, cfg)
    g, p = st.grid, profile
    rho = st.rho_cells.copy()
    v = np.zeros(g.n_cells)
    inside = st.rho_cells > 0
    a = pert.amplitude * pert.sign
    if pert.kind == "density_bump" and a != 0:
        c, w = pert.center * p.R, pert.width * p.R
        rho = rho + a * p.mu * np.where(inside, _cell_average(st, lambda r: _bump(r, c, w)), 0.0)
    elif pert.kind == "eigenmode_seed" and a != 0:
        mode, _ = eigenmode_cells(st)
        rho = rho + a * p.mu * mode
    elif pert.kind == "mass_offset":
        rho = rho * (1.0 + a)
    elif pert.kind == "velocity_kick":
        scale = math.sqrt(p.M / p.R)
        v = np.where(inside, a * scale * (g.centers / p.R) * np.exp(-(g.centers / p.R) ** 2), 0.0)
    if pert.mass_preserving and pert.kind in ("density_bump", "eigenmode_seed"):
        m_in = float(np.sum(rho[inside] * g.vol[inside]))
        m_out = float(np.sum(rho[~inside] * g.vol[~inside]))
        target = float(np.sum(st.rho_cells * g.vol))
        rho[inside] *= (target - m_out) / m_in
    if np.any(rho < 0):
        raise InvariantError(
            f"perturbation {pert.kind} with amplitude {pert.amplitude:g} gives negative density "
            f"(min {rho.min():.3e}); reduce the amplitude")
    lay = st.layout
    return PerturbedState(lay, lay.expand(rho), lay.expand(v), p, rho_ref=st.rho_ref)


@dataclass
class Trajectory:
    """Time series of diagnostics; d is measured against the discrete steady star."""

    t: list = field(default_factory=list)
    M: list = field(default_factory=list)
    E: list = field(default_factory=list)
    H: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return np.array([b.total for b in self.breakdowns])

    def arrays(self):
        return {
            "t": np.array(self.t), "M": np.array(self.M), "E": np.array(self.E), "H": np.array(self.H),
            "d": self.d, **{f"d{i+1}": np.array([b.terms[i] for b in self.breakdowns]) for i in range(5)},
        }

    def mass_drift(self):
        M = np.array(self.M)
        return float(np.max(np.abs(M - M[0])) / M[0])

    def energy_excess(self):
        """max_t E(t) - E(0)."""
        E = np.array(self.E)
        return float(np.max(E - E[0]))

    def amplification(self, M_mu: float, q: float = 1.5, with_mass: bool = True):
        """sup_t d(t) / (d(0) + |M - M_mu|^q)."""
        d = self.d
        den = d[0] + (abs(self.M[0] - M_mu) ** q if with_mass else 0.0)
        return float(np.max(d) / den) if den > 0 else float("inf")

    def running_amplification(self, M_mu: float, q: float = 1.5):
        d = self.d
        return np.maximum.accumulate(d) / (d[0] + abs(self.M[0] - M_mu) ** q)

    def growth_factor(self):
        """sup of d over the second half of the run over its sup over the first half.

        Values near or below 1 mean no growth trend; an instability gives a
        large value.
        """
        t = np.array(self.t)
        d = self.d
        half = t <= 0.5 * t[-1]
        return float(np.max(d[~half]) / np.max(d[half])) if np.max(d[half]) > 0 else float("inf")


def _diagnostics(setup, rho, v):
    lay, p = setup.layout, setup.profile
    state = PerturbedState(lay, lay.expand(rho), lay.expand(v), p, rho_ref=setup.rho_ref)
    br = distance(state, check=False)
    E = energy(lay, state.rho, state.v, p.enthalpy)
    return state, br, E, E + p.M / p.R * state.mass


def make_scheme(setup: Setup, config: HydroConfig) -> Scheme:
    law = setup.profile.law
    opts = SchemeOptions(cfl=config.cfl, floor=setup.floor, viscosity=config.viscosity,
                         gravity=config.gravity)
    return Scheme(setup.grid, law.P, law.dP, opts)


def evolve(initial: PerturbedState, config: Optional[HydroConfig] = None,
           profile: Optional[StarProfile] = None, setup: Optional[Setup] = None) -> Trajectory:
    """Advance ``initial`` to the end time, recording diagnostics at every cadence.

    Step failures raise NumericalError with the partial trajectory attached as
    ``exc.trajectory``.
    """
    cfg = config or HydroConfig()
    p = profile or initial.profile
    st = setup or make_setup(p, cfg)
    if initial.layout.faces.size != st.grid.faces.size or not np.allclose(initial.layout.faces, st.grid.faces):
        raise ConfigError("evolve: initial state is not on the configured grid")
    scheme = make_scheme(st, cfg)
    unit = p.sound_crossing_time() if cfg.time_unit == "sound_crossing" else 1.0
    t_end, cadence = cfg.t_end * unit, cfg.cadence * unit
    rho = st.cells(initial.rho)
    mom = rho * st.cells(initial.v)
    traj = Trajectory(meta={"time_unit": unit, "n_cells": st.grid.n_cells, "R_dom": st.grid.r1,
                            "floor": st.floor, "config": cfg.to_dict()})

    def record(t):
        v = np.where(rho > st.floor, mom / np.where(rho > 0, rho, 1.0), 0.0)
        state, br, E, H = _diagnostics(st, rho, v)
        traj.t.append(t)
        traj.M.append(scheme.mass(rho))
        traj.E.append(E)
        traj.H.append(H)
        traj.breakdowns.append(br)
        if cfg.snapshots:
            traj.snapshots.append(state)

    t, n_steps, k = 0.0, 0, 1
    t0 = time.perf_counter()
    record(0.0)
    d0 = traj.breakdowns[0].total
    try:
        while t < t_end * (1 - 1e-14):
            t_next = min(k * cadence, t_end)
            while t < t_next * (1 - 1e-14):
                dt = min(scheme.max_dt(rho, mom), t_next - t)
                if not dt > 1e-14 * t_end:
                    raise NumericalError(f"time step underflow (dt={dt:.3e}) at t={t:.6g}")
                rho, mom = scheme.step(rho, mom, dt)
                t += dt
                n_steps += 1
                if n_steps > cfg.max_steps:
                    raise NumericalError(f"step limit {cfg.max_steps} reached at t={t:.6g}")
            record(t_next)
            t = t_next
            k += 1
            if cfg.stop_ratio is not None and d0 > 0 and traj.breakdowns[-1].total >= cfg.stop_ratio * d0:
                traj.status = "stopped"
                traj.message = f"d reached {cfg.stop_ratio:g} d(0)"
                break
    except NumericalError as exc:
        traj.status = "failed"
        traj.message = str(exc)
        exc.trajectory = traj
        raise
    finally:
        traj.meta["n_steps"] = n_steps
        traj.meta["wall_time"] = time.perf_counter() - t0
    return traj


def run(profile: StarProfile, config: HydroConfig) -> Trajectory:
    st = make_setup(profile, config)
    return evolve(make_initial(profile, config.perturbation, config, st), config, profile, st)


def stability_experiment(profile: StarProfile, configs, workers: int = 1) -> dict:
    """Run a batch and report amplification ratios.

    For each run: d(0), |M - M_mu|, sup d, the ratio sup d / (d(0) + |M - M_mu|^q),
    the same ratio without the mass term, and the second-half growth factor.
    ``trend`` is the ratio at the largest amplitude over that at the smallest.
    Runs are independent and execute concurrently when ``workers`` > 1.
    """
    configs = list(configs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(lambda c: run(profile, c), configs))
    else:
        trajs = [run(profile, c) for c in configs]
    rows = []
    for cfg, tr in zip(configs, trajs):
        d = tr.d
        rows.append({
            "kind": cfg.perturbation.kind,
            "amplitude": cfg.perturbation.amplitude,
            "d0": float(d[0]),
            "mass_gap": abs(tr.M[0] - profile.M),
            "sup_d": float(np.max(d)),
            "ratio": tr.amplification(profile.M, cfg.q),
            "ratio_without_mass": tr.amplification(profile.M, cfg.q, with_mass=False),
            "growth_factor": tr.growth_factor(),
            "t_end": float(tr.t[-1]),
            "status": tr.status,
        })
    ratios = [r["ratio"] for r in rows]
    amps = [r["amplitude"] for r in rows]
    lo, hi = int(np.argmin(amps)), int(np.argmax(amps))
    return {
        "mu": profile.mu,
        "runs": rows,
        "max_ratio": float(np.max(ratios)),
        "trend": float(ratios[hi] / ratios[lo]) if ratios[lo] > 0 else float("inf"),
        "trajectories": trajs,
    }
