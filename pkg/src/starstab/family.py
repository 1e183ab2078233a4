"""Mass-radius families and the turning-point count of unstable modes."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .eos import GAMMA_MAX, GAMMA_MIN, Enthalpy, PressureLaw, build_enthalpy
from .errors import ConfigError, IndeterminateError, StarSolveError
from .star import SolverOptions, solve_star

# a log-derivative below this is treated as zero regardless of curve scale;
# it sits well above the solver noise (about 1e-10 at default tolerances)
ABS_ZERO = 1e-7
REL_ZERO = 1e-6


@dataclass
class FamilyCurve:
    """Samples of mu -> (M, R) with derivatives and turning-point bookkeeping.

    Derivatives are stored both with respect to mu and as logarithmic
    derivatives ``s_M = dlnM/dlnmu`` etc., which are what the sign tests use.
    """

    mu: np.ndarray
    M: np.ndarray
    R: np.ndarray
    dM: np.ndarray = None
    dR: np.ndarray = None
    dMR: np.ndarray = None
    nu: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    degenerate: bool = False
    truncated: bool = False
    failure: Optional[str] = None
    label: str = ""

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.mu.size and np.any(np.diff(self.mu) <= 0):
            raise ConfigError("family: mu samples must be strictly increasing")
        if self.dM is None and self.mu.size >= 2:
            self.dM, self.dR, self.dMR = _derivatives(self.mu, self.M, self.R)

    @property
    def slope_M(self):
        return self.dM * self.mu / self.M

    @property
    def slope_R(self):
        return self.dR * self.mu / self.R

    @property
    def slope_MR(self):
        return self.dMR * self.mu * self.R / self.M

    @property
    def zero_tol(self):
        """Threshold below which a logarithmic derivative counts as zero."""
        s = np.abs(self.slope_M)
        return max(REL_ZERO * float(np.max(s)) if s.size else 0.0, ABS_ZERO)

    def mass_sign(self):
        s = self.slope_M
        out = np.sign(s).astype(int)
        out[np.abs(s) <= self.zero_tol] = 0
        return out


def _fd_weights_uniform(n):
    """Fourth-order first-derivative stencils for n >= 5 uniform points (unit spacing)."""
    rows = []
    for k in range(n):
        if 2 <= k <= n - 3:
            rows.append((k - 2, np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0))
        elif k == 0:
            rows.append((0, np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0))
        elif k == 1:
            rows.append((0, np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0))
        elif k == n - 2:
            rows.append((n - 5, np.array([-1.0, 6.0, -18.0, 10.0, 3.0]) / 12.0))
        else:
            rows.append((n - 5, np.array([3.0, -16.0, 36.0, -48.0, 25.0]) / 12.0))
    return rows


def _log_derivative(x, f):
    """df/dx on a grid x; fourth order when uniform with >= 5 points."""
    h = np.diff(x)
    if x.size >= 5 and np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        out = np.empty_like(f)
        for k, (start, w) in enumerate(_fd_weights_uniform(x.size)):
            out[k] = np.dot(w, f[start:start + 5]) / h[0]
        return out
    return np.gradient(f, x, edge_order=2 if x.size >= 3 else 1)


def _derivatives(mu, M, R):
    x = np.log(mu)
    dM = _log_derivative(x, M) / mu
    dR = _log_derivative(x, R) / mu
    dMR = _log_derivative(x, M / R) / mu
    return dM, dR, dMR


def _local_slopes(law, enthalpy, mu, h, options):
    """(dlnM/dlnmu, dlnR/dlnmu) at mu from a 5-point stencil in ln mu."""
    pts = mu * np.exp(h * np.array([-2.0, -1.0, 1.0, 2.0]))
    w = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    stars = [solve_star(law, p, enthalpy, options) for p in pts]
    lnM = np.log([s.M for s in stars])
    lnR = np.log([s.R for s in stars])
    return float(np.dot(w, lnM)), float(np.dot(w, lnR))


def sweep(law: PressureLaw, mu_min: float, mu_max: float, n: int = 33,
          enthalpy: Optional[Enthalpy] = None, options: Optional[SolverOptions] = None,
          refine: bool = True) -> FamilyCurve:
    """Solve stars on a log-spaced mu grid and locate mass extrema.

    Solver failures truncate the curve at the last good sample and set
    ``truncated``.  With ``refine`` the mass extrema between samples are
    located by root finding on a locally evaluated dM/dmu.
    """
    if not (0 < mu_min < mu_max):
        raise ConfigError(f"family: need 0 < mu_min < mu_max, got [{mu_min}, {mu_max}]")
    if n < 5:
        raise ConfigError(f"family: need at least 5 samples, got {n}")
    h = enthalpy if enthalpy is not None else build_enthalpy(law)
    mus = np.exp(np.linspace(math.log(mu_min), math.log(mu_max), n))
    Ms, Rs = [], []
    failure = None
    for mu in mus:
        try:
            s = solve_star(law, mu, h, options)
        except StarSolveError as exc:
            failure = f"mu={mu:g}: {exc}"
            break
        Ms.append(s.M)
        Rs.append(s.R)
    k = len(Ms)
    if k < 5:
        raise StarSolveError(f"family: only {k} samples solved ({failure})")
    curve = FamilyCurve(mus[:k], np.array(Ms), np.array(Rs), truncated=failure is not None,
                        failure=failure, label=law.label)
    locate_extrema(curve, law if refine else None, h, options)
    return curve


def locate_extrema(curve: FamilyCurve, law=None, enthalpy=None, options=None):
    """Fill ``curve.events`` with mass extrema and their bend direction.

    Each event records the location ``mu``, the signs of M'R' on either side
    (``before``/``after``) and ``turn``: +1 for a counterclockwise bend
    (M'R' from - to +), -1 for clockwise.
    """
    sign = curve.mass_sign()
    if np.all(sign == 0):
        curve.degenerate = True
        curve.events = []
        return curve
    nz = np.flatnonzero(sign)
    changes = [(nz[i], nz[i + 1]) for i in range(nz.size - 1) if sign[nz[i]] != sign[nz[i + 1]]]
    for (a0, b0), (a1, b1) in zip(changes, changes[1:]):
        if a1 <= b0 + 1 and b0 - a0 == 1 and b1 - a1 == 1 and a1 == b0:
            raise IndeterminateError(
                f"dM/dmu changes sign at consecutive samples near mu={curve.mu[a1]:g}; "
                "derivative noise suspected: increase the sample count or tighten the solver tolerance")
    events = []
    sR = curve.slope_R
    for a, b in changes:
        if law is not None:
            hloc = 1e-3

            def f(x):
                return _local_slopes(law, enthalpy, math.exp(x), hloc, options)[0]

            try:
                x = optimize.brentq(f, math.log(curve.mu[a]), math.log(curve.mu[b]), xtol=1e-10)
            except ValueError:
                x = _linear_root(curve, a, b)
            mu_star = math.exp(x)
            r_slope = _local_slopes(law, enthalpy, mu_star, hloc, options)[1]
        else:
            mu_star = math.exp(_linear_root(curve, a, b))
            t = (math.log(mu_star) - math.log(curve.mu[a])) / (math.log(curve.mu[b]) - math.log(curve.mu[a]))
            r_slope = (1 - t) * sR[a] + t * sR[b]
        rs = int(np.sign(r_slope))
        before = int(sign[a]) * rs
        after = int(sign[b]) * rs
        if rs == 0:
            raise IndeterminateError(f"dR/dmu vanishes at the mass extremum mu={mu_star:g}")
        events.append({"mu": mu_star, "kind": "max" if sign[a] > 0 else "min",
                       "before": before, "after": after, "turn": 1 if after > before else -1})
    curve.events = events
    return curve


def _linear_root(curve, a, b):
    xa, xb = math.log(curve.mu[a]), math.log(curve.mu[b])
    sa, sb = curve.slope_M[a], curve.slope_M[b]
    return xa + (xb - xa) * sa / (sa - sb)


def seed_count(gamma0: float) -> int:
    """Unstable-mode count on the small-mu end of the family."""
    if not GAMMA_MIN < gamma0 < GAMMA_MAX:
        raise ConfigError(f"gamma0={gamma0} outside (6/5, 2)")
    if abs(gamma0 - 4.0 / 3.0) < 1e-12:
        raise ConfigError("gamma0 = 4/3: the small-mu count is not determined (degenerate family)")
    return 1 if gamma0 < 4.0 / 3.0 else 0


def classify(curve: FamilyCurve, gamma0: float, seed: Optional[int] = None) -> FamilyCurve:
    """Fill ``curve.nu`` by walking the mass extrema upward from the seed count."""
    if curve.degenerate:
        raise IndeterminateError("mass is constant along the whole curve; the count is undefined")
    n0 = seed_count(gamma0) if seed is None else int(seed)
    nu = np.full(curve.mu.size, n0, dtype=int)
    n = n0
    for ev in sorted(curve.events, key=lambda e: e["mu"]):
        n_new = n + ev["turn"]
        if n_new < 0:
            warnings.warn(f"unstable count would drop below 0 at mu={ev['mu']:g}; clamped", RuntimeWarning)
            ev["clamped"] = True
            n_new = 0
        n = n_new
        nu[curve.mu > ev["mu"]] = n
    curve.nu = nu
    return curve


def i_mu(curve: FamilyCurve, k: int) -> int:
    """1 if M' (M/R)' > 0 or M' = 0; 0 if M' (M/R)' < 0 or (M/R)' = 0."""
    tol = curve.zero_tol
    a = curve.slope_M[k]
    b = curve.slope_MR[k]
    a0, b0 = abs(a) <= tol, abs(b) <= tol
    if a0 and b0:
        raise IndeterminateError(f"both M' and (M/R)' vanish at mu={curve.mu[k]:g}")
    if a0:
        return 1
    if b0:
        return 0
    return 1 if a * b > 0 else 0
