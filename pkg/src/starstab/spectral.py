"""Discrete quadratic forms of the linearized operators and their inertia.

Radial perturbations are discretized with continuous piecewise-quadratic
finite elements on a mesh graded towards r = 0 and r = R.  Two forms are
assembled:

* the density form  <L rho, rho> = int Phi''(rho_mu) rho^2 dx - (1/4 pi) int |grad V|^2 dx,
  with V the potential of rho.  For a radial rho with enclosed mass q(r) this
  is  4 pi int_0^R Phi'' rho^2 r^2 dr - int_0^R q^2/r^2 dr - q(R)^2/R.
  On the zero-mass subspace q(R) = 0 and the last term drops.
* the potential form  <Lt phi, phi> = int |grad phi|^2 - 4 pi int_B (phi - P phi)^2 / Phi'' dx
  for the angular degree l, truncated at R_out with the exact exterior
  harmonic closure.  P is the 1/Phi''-weighted average on B (only l = 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, IndeterminateError, NumericalError
from .star import StarProfile

FOUR_PI = 4.0 * math.pi
_NGAUSS = 6
_GX, _GW = np.polynomial.legendre.leggauss(_NGAUSS)


# ---------------------------------------------------------------------------
# P2 mesh machinery


def _shape(xi):
    """P2 shape functions and reference derivatives at points xi in [-1, 1]."""
    N = np.stack([0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)], axis=-1)
    dN = np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)
    return N, dN


@dataclass
class P2Mesh:
    """Element vertices ``x`` (n_el + 1 points) and derived quadrature data."""

    x: np.ndarray

    def __post_init__(self):
        x = self.x
        self.n_el = x.size - 1
        self.n_dof = 2 * self.n_el + 1
        a, b = x[:-1], x[1:]
        self.h = b - a
        self.rg = 0.5 * (a + b)[:, None] + 0.5 * self.h[:, None] * _GX[None, :]
        self.wg = 0.5 * self.h[:, None] * _GW[None, :]
        N, dN = _shape(_GX)
        self.N = N                                   # (g, 3)
        self.dN = dN[None, :, :] * (2.0 / self.h)[:, None, None]   # (e, g, 3)
        self.dofs = 2 * np.arange(self.n_el)[:, None] + np.arange(3)[None, :]

    @property
    def nodes(self):
        out = np.empty(self.n_dof)
        out[0::2] = self.x
        out[1::2] = 0.5 * (self.x[:-1] + self.x[1:])
        return out

    def assemble(self, coef, kind):
        """Sum_e int coef * (basis products) over elements.

        kind: "mass" (N_i N_j), "stiff" (N_i' N_j'), or "load" (N_i).
        ``coef`` has shape (n_el, n_gauss) and already includes weights' integrand factors.
        """
        cw = coef * self.wg
        if kind == "load":
            loc = np.einsum("eg,gi->ei", cw, self.N)
            out = np.zeros(self.n_dof)
            np.add.at(out, self.dofs, loc)
            return out
        if kind == "mass":
            loc = np.einsum("eg,gi,gj->eij", cw, self.N, self.N)
        elif kind == "stiff":
            loc = np.einsum("eg,egi,egj->eij", cw, self.dN, self.dN)
        else:
            raise ValueError(kind)
        out = np.zeros((self.n_dof, self.n_dof))
        idx = self.dofs
        np.add.at(out, (idx[:, :, None], idx[:, None, :]), loc)
        return out

    def evaluate(self, coeffs, r, derivative=False):
        """Evaluate a P2 field with nodal ``coeffs`` (or its r-derivative) at points r."""
        r = np.asarray(r, dtype=float)
        e = np.clip(np.searchsorted(self.x, r, side="right") - 1, 0, self.n_el - 1)
        xi = 2.0 * (r - self.x[e]) / self.h[e] - 1.0
        N, dN = _shape(xi)
        if derivative:
            return np.sum(dN * coeffs[self.dofs[e]], axis=-1) * 2.0 / self.h[e]
        return np.sum(N * coeffs[self.dofs[e]], axis=-1)


def graded_vertices(R: float, n_el: int) -> np.ndarray:
    """Vertices on [0, R] clustered at both ends (cosine spacing)."""
    t = np.arange(n_el + 1) / n_el
    x = 0.5 * R * (1.0 - np.cos(np.pi * t))
    x[-1] = R
    return x


def _exterior_vertices(R, R_out, h0, n_out):
    """Geometric grading on [R, R_out] starting from spacing about h0."""
    if n_out <= 0:
        return np.array([R])
    L = R_out - R
    if h0 * n_out >= L:
        return np.linspace(R, R_out, n_out + 1)
    # solve h0 (q^n - 1)/(q - 1) = L for the ratio q
    lo, hi = 1.0 + 1e-12, 10.0
    for _ in range(200):
        q = 0.5 * (lo + hi)
        if h0 * (q**n_out - 1.0) / (q - 1.0) > L:
            hi = q
        else:
            lo = q
    steps = h0 * q ** np.arange(n_out)
    x = R + np.concatenate([[0.0], np.cumsum(steps)])
    x[-1] = R_out
    return x


def _profile_fields(profile: StarProfile, r):
    """rho_mu, Phi''(rho_mu) and 1/Phi''(rho_mu) at points r < R."""
    h = profile.enthalpy
    rho = profile.rho_at(r)
    return rho, h.d2phi(rho), h.inv_d2phi(rho)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class DensityForm:
    """Matrices of the density form on B; A x = lam W x, mass constraint c . x = 0."""

    A: np.ndarray
    W: np.ndarray
    c: np.ndarray
    mesh: P2Mesh
    cutoff: int = 0
    enclosed: Optional[np.ndarray] = None   # q_i(r) at Gauss points, (n_el*g, n_dof)


def assemble_Lmu_Zmu(profile: StarProfile, n_el: int = 120) -> DensityForm:
    """Density form with weight int Phi'' rho_i rho_j dx and mass vector int rho_i dx.

    Gauss points where Phi''(rho_mu) is not finite (the vacuum edge for
    gamma0 < 2) are dropped from the weight integral; their count is returned
    as ``cutoff``.
    """
    R = profile.R
    mesh = P2Mesh(graded_vertices(R, n_el))
    r = mesh.rg
    _, d2, _ = _profile_fields(profile, r)
    bad = ~np.isfinite(d2)
    cutoff = int(bad.sum())
    d2 = np.where(bad, 0.0, d2)
    W = mesh.assemble(FOUR_PI * d2 * r * r, "mass")
    c = mesh.assemble(FOUR_PI * r * r, "load")

    # enclosed mass of each basis function at every Gauss point
    g = _NGAUSS
    ne = mesh.n_el
    full = np.einsum("eg,gi->ei", FOUR_PI * r * r * mesh.wg, mesh.N)     # (e, 3)
    F = np.zeros((ne, mesh.n_dof))
    np.put_along_axis(F, mesh.dofs, full, axis=1)
    before = np.vstack([np.zeros(mesh.n_dof), np.cumsum(F, axis=0)[:-1]])   # (e, n_dof)
    # partial integrals from the element start to each Gauss point
    a = mesh.x[:-1]
    sub_x, sub_w = np.polynomial.legendre.leggauss(4)
    span = r - a[:, None]                                                 # (e, g)
    s = a[:, None, None] + 0.5 * span[:, :, None] * (sub_x + 1.0)[None, None, :]   # (e, g, k)
    xi = 2.0 * (s - a[:, None, None]) / mesh.h[:, None, None] - 1.0
    Ns, _ = _shape(xi)                                                    # (e, g, k, 3)
    part = np.einsum("egk,egki->egi", FOUR_PI * s * s * 0.5 * span[:, :, None] * sub_w, Ns)
    Q = np.repeat(before[:, None, :], g, axis=1)                          # (e, g, n_dof)
    for k in range(3):
        Q[np.arange(ne)[:, None], np.arange(g)[None, :], mesh.dofs[:, k][:, None]] += part[:, :, k]
    Q = Q.reshape(ne * g, mesh.n_dof)
    wq = (mesh.wg / (r * r)).reshape(-1)
    Mq = Q.T @ (wq[:, None] * Q)
    A = W - Mq - np.outer(c, c) / R
    A = 0.5 * (A + A.T)
    return DensityForm(A=A, W=0.5 * (W + W.T), c=c, mesh=mesh, cutoff=cutoff, enclosed=Q)


@dataclass
class PotentialForm:
    """Matrices of the potential form for degree l; A x = lam G x."""

    A: np.ndarray
    G: np.ndarray
    mesh: P2Mesh
    l: int
    R_out: float
    free: np.ndarray          # indices of active degrees of freedom in the full mesh
    C: np.ndarray = None      # int_B phi_i phi_j / Phi'' dx (active dofs)
    w: np.ndarray = None      # int_B phi_i / Phi'' dx (active dofs)
    W0: float = 0.0           # int_B 1/Phi'' dx

    def expand(self, x):
        """Full nodal vector (zeros on constrained dofs)."""
        out = np.zeros(self.mesh.n_dof)
        out[self.free] = x
        return out


def potential_mesh(profile: StarProfile, n_el: int, R_out: float):
    n_out = max(4, n_el // 4)
    inner = graded_vertices(profile.R, n_el)
    outer = _exterior_vertices(profile.R, R_out, inner[-1] - inner[-2], n_out)
    return P2Mesh(np.concatenate([inner, outer[1:]]))


def assemble_tildeL(profile: StarProfile, l: int = 0, R_out: Optional[float] = None,
                    n_el: int = 120) -> PotentialForm:
    """Potential form for angular degree l on [0, R_out] with the r^-(l+1) closure.

    The 4 pi normalization of the angular integral is kept in both terms, so
    x.G.x equals int |grad phi|^2 dx over R^3 for a radial (l = 0) field.
    """
    if l not in (0, 1):
        raise ConfigError(f"spectrum: harmonic degree l={l} not supported (0 or 1)")
    R = profile.R
    if R_out is None:
        R_out = 1.5 * R
    if not R_out > R:
        raise ConfigError(f"spectrum: R_out={R_out} must exceed the star radius {R}")
    mesh = potential_mesh(profile, n_el, R_out)
    r = mesh.rg
    G = mesh.assemble(FOUR_PI * r * r, "stiff")
    if l > 0:
        G += mesh.assemble(np.full_like(r, FOUR_PI * l * (l + 1)), "mass")
    G[-1, -1] += FOUR_PI * (l + 1) * R_out
    inside = r < R
    _, _, inv = _profile_fields(profile, np.where(inside, r, 0.0))
    inv = np.where(inside, inv, 0.0)
    C = mesh.assemble(FOUR_PI * inv * r * r, "mass")
    w = mesh.assemble(FOUR_PI * inv * r * r, "load")
    W0 = float(np.sum(FOUR_PI * inv * r * r * mesh.wg))
    if l == 0:
        A = G - FOUR_PI * (C - np.outer(w, w) / W0)
        free = np.arange(mesh.n_dof)
    else:
        A = G - FOUR_PI * C
        free = np.arange(1, mesh.n_dof)
    A = 0.5 * (A + A.T)
    sel = np.ix_(free, free)
    return PotentialForm(A=A[sel], G=0.5 * (G + G.T)[sel], mesh=mesh, l=l, R_out=R_out,
                         free=free, C=C[sel], w=w[free], W0=W0)


# ---------------------------------------------------------------------------
# inertia


@dataclass
class SpectralReport:
    """Sorted generalized eigenvalues with negative / zero counts."""

    operator: str
    n: int
    R_out: Optional[float]
    eigenvalues: np.ndarray
    n_minus: int
    n_zero: int
    zero_tol: float
    kernel: np.ndarray = None
    vectors: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "operator": self.operator,
            "n": self.n,
            "R_out": self.R_out,
            "n_minus": self.n_minus,
            "n_zero": self.n_zero,
            "zero_tol": self.zero_tol,
            "eigenvalues_lowest": [float(v) for v in self.eigenvalues[:10]],
            "meta": self.meta,
        }


def inertia(A, W, constraint=None, zero_tol=None, rel_zero=1e-6, operator="form",
            keep_vectors=0) -> SpectralReport:
    """Inertia of the pencil (A, W), optionally restricted to constraint . x = 0.

    ``zero_tol`` defaults to ``rel_zero`` times the largest |eigenvalue|.
    ``keep_vectors`` lowest eigenvectors (in full coordinates) are attached.
    """
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    for name, X in (("form", A), ("weight", W)):
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ConfigError(f"inertia: {name} matrix must be square")
        scale = max(np.max(np.abs(X)), 1e-300)
        if np.max(np.abs(X - X.T)) > 1e-10 * scale:
            raise NumericalError(f"inertia: {name} matrix is not symmetric")
    # Jacobi scaling: the weight diagonal spans many decades near a vacuum
    # edge where Phi'' blows up, which would otherwise defeat the Cholesky step
    dW = np.diag(W)
    if np.any(dW <= 0):
        raise NumericalError("inertia: weight matrix has a non-positive diagonal")
    d = 1.0 / np.sqrt(dW)
    A = A * d[:, None] * d[None, :]
    W = W * d[:, None] * d[None, :]
    Q = None
    if constraint is not None:
        c = np.atleast_2d(np.asarray(constraint, dtype=float)) * d[None, :]
        Q = sla.null_space(c)
        A = Q.T @ A @ Q
        W = Q.T @ W @ Q
    try:
        lam, vec = sla.eigh(0.5 * (A + A.T), 0.5 * (W + W.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"inertia: weight matrix is not positive definite ({exc})") from None
    if zero_tol is None:
        zero_tol = rel_zero * float(np.max(np.abs(lam)))
    n_minus = int(np.sum(lam < -zero_tol))
    zero = np.abs(lam) <= zero_tol
    if Q is not None:
        vec = Q @ vec
    vec = vec * d[:, None]
    rep = SpectralReport(operator=operator, n=int(A.shape[0]), R_out=None, eigenvalues=lam,
                         n_minus=n_minus, n_zero=int(zero.sum()), zero_tol=float(zero_tol),
                         kernel=vec[:, zero])
    if keep_vectors:
        rep.vectors = vec[:, :keep_vectors]
    return rep


def spectrum_L_Z(profile: StarProfile, n_el: int = 120, constrained: bool = True) -> SpectralReport:
    """Inertia of the density form on the zero-mass subspace (or on all of L^2 if not constrained)."""
    f = assemble_Lmu_Zmu(profile, n_el)
    op = "L_mu_Zmu_radial" if constrained else "L_mu_radial"
    rep = inertia(f.A, f.W, f.c if constrained else None, operator=op, keep_vectors=3)
    rep.meta["surface_cutoff_points"] = f.cutoff
    rep.meta["n_el"] = n_el
    return rep


def spectrum_tildeL(profile: StarProfile, l: int = 0, n_el: int = 120,
                    R_out: Optional[float] = None) -> SpectralReport:
    f = assemble_tildeL(profile, l, R_out, n_el)
    rep = inertia(f.A, f.G, operator=f"tildeL_l{l}", keep_vectors=3)
    rep.R_out = f.R_out
    rep.meta["n_el"] = n_el
    return rep


def converged_inertia(fn, profile, n_el=(80, 160), **kw) -> SpectralReport:
    """Run a spectrum function at successive grid sizes; require stable counts.

    The returned report is the finest one with the per-grid counts under
    ``meta["convergence"]``.
    """
    reps = [fn(profile, n_el=n, **kw) for n in n_el]
    counts = [(r.n_minus, r.n_zero) for r in reps]
    rep = reps[-1]
    rep.meta["convergence"] = {"n_el": list(n_el), "counts": counts,
                               "lowest": [float(r.eigenvalues[0]) for r in reps]}
    rep.meta["converged"] = len(set(counts)) == 1
    if not rep.meta["converged"]:
        raise IndeterminateError(f"{rep.operator}: inertia not stable under refinement {counts}")
    return rep


def coercivity_constant(profile: StarProfile, report: Optional[SpectralReport] = None,
                        n_el: int = 120) -> float:
    """Smallest eigenvalue of (1/4pi) Lt against the gradient norm (l = 0).

    This is the discrete constant C0 in <B''(0) phi, phi> >= C0 |grad phi|^2.
    """
    if report is None:
        report = spectrum_tildeL(profile, 0, n_el)
    if report.n_minus or report.n_zero:
        raise IndeterminateError(
            f"coercivity undefined: form has {report.n_minus} negative and {report.n_zero} zero directions")
    return float(report.eigenvalues[0] / FOUR_PI)


def kernel_study(profile: StarProfile, n_el=(40, 80, 160), R_out: Optional[float] = None) -> dict:
    """Smallest |eigenvalue| of the l = 1 form under refinement and its match with V'.

    The mismatch is measured in the gradient norm G after optimal scaling:
    |v - a V'|_G / |a V'|_G.
    """
    lams, errs = [], []
    for n in n_el:
        f = assemble_tildeL(profile, 1, R_out, n)
        lam, vec = sla.eigh(f.A, f.G)
        k = int(np.argmin(np.abs(lam)))
        v = vec[:, k]
        nodes = f.mesh.nodes[f.free]
        dV = profile.dV_at(nodes)
        a = (dV @ f.G @ v) / (dV @ f.G @ dV)
        diff = v - a * dV
        errs.append(float(np.sqrt((diff @ f.G @ diff) / (a * a * (dV @ f.G @ dV)))))
        lams.append(float(abs(lam[k])))
    ratios = [lams[i] / lams[i + 1] for i in range(len(lams) - 1)]
    return {"n_el": list(n_el), "abs_lambda": lams, "ratios": ratios, "vector_error": errs}


def mass_derivative_residual(profile_lo: StarProfile, profile_hi: StarProfile,
                             profile: StarProfile, n_el: int = 120) -> float:
    """Check that L applied to d rho_mu / d mu is a multiple of the mass functional.

    ``profile_lo``/``profile_hi`` bracket ``profile`` in mu; the centred
    difference of the densities is projected on the P2 space and the
    residual of A x - a c (best a) is returned relative to |A x|.
    """
    f = assemble_Lmu_Zmu(profile, n_el)
    nodes = f.mesh.nodes
    dmu = profile_hi.mu - profile_lo.mu
    x = (profile_hi.rho_at(nodes) - profile_lo.rho_at(nodes)) / dmu
    y = f.A @ x
    # compare in the W^{-1} dual norm (what the form sees), Jacobi-scaled
    d = 1.0 / np.sqrt(np.diag(f.W))
    Ws = f.W * d[:, None] * d[None, :]
    cho = sla.cho_factor(Ws)

    def dual(v, w):
        return float((v * d) @ sla.cho_solve(cho, w * d))

    a = dual(y, f.c) / dual(f.c, f.c)
    res = y - a * f.c
    return math.sqrt(dual(res, res) / dual(y, y))
