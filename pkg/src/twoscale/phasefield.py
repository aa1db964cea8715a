"""
Allen-Cahn type phase field on the periodic unit cell.

The phase field phi is ~1 in the fluid and ~0 in the mineral.  It evolves by

    dphi/dt = gamma * lap(phi) + F(phi, u) / lam**2,
    F(phi, u) = -gamma * P'(phi) - 4 * lam * phi * (1 - phi) * f(u) / u_star,

with the double well P(phi) = 8 phi^2 (1 - phi)^2 and the reaction rate
f(u) = k ([u]_+^2 / u_eq^2 - 1).  Time stepping is implicit Euler where the
nonlinearity is split as F = F_plus + F_minus (nondecreasing / nonincreasing
parts).  F_plus is treated explicitly, F_minus implicitly via the L-scheme

    (1 + Lc) phi_j + dt*gamma*A phi_j + dt/lam^2 * L phi_j
        = phi_prev + dt/lam^2 F_plus(phi_prev) + Lc phi_outer
          + dt/lam^2 (F_minus(phi_{j-1}) + L phi_{j-1}),

where Lc damps the change relative to the previous multi-scale iterate
``phi_outer``.  Space is discretized with periodic P1 elements and a lumped
mass matrix, which makes the system matrix an M-matrix on the structured
right-triangle meshes used here and gives a discrete maximum principle.
"""
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from . import fem
from .mesh import Field, MeshError


class PhaseFieldError(RuntimeError):
    """Micro solver failure (no convergence, bound violation)."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(frozen=True)
class ChemistryParams:
    D: float = 1.0
    u_star: float = 1.0
    u_eq: float = 0.5
    k: float = 1.0
    gamma: float = 0.01
    lam: float = 0.08
    delta: float = 1e-4

    def __post_init__(self):
        bad = [n for n in ("D", "u_star", "u_eq", "k", "gamma", "lam", "delta") if not getattr(self, n) > 0]
        if bad:
            raise ValueError(f"parameters must be strictly positive: {', '.join(bad)}")
        if not self.u_eq < self.u_star:
            raise ValueError("u_eq must be smaller than u_star")
        if not self.lam < 1:
            raise ValueError("lam must be smaller than 1")
        if not self.delta < 1e-2:
            raise ValueError("delta must be small (< 1e-2)")


@dataclass(frozen=True)
class SolverKnobs:
    """Micro solver settings.

    ``L_lin`` is ``"dynamic"`` (the cheap formula in :func:`lipschitz_bound_F1`),
    ``"bound"`` (the exact maximum of |dF/dphi| over [0, 1]) or a number.
    """

    L_coup: float = 1e-4
    L_lin: object = "dynamic"
    tol_mu: float = 1e-8
    max_micro_iters: int = 500
    bound_tol: float = 1e-9
    mass: str = "lumped"

    def __post_init__(self):
        if self.L_coup < 0:
            raise ValueError("L_coup must be nonnegative")
        if not self.tol_mu > 0:
            raise ValueError("tol_mu must be positive")
        if self.max_micro_iters < 1:
            raise ValueError("max_micro_iters must be >= 1")
        if isinstance(self.L_lin, str):
            if self.L_lin not in ("dynamic", "bound"):
                raise ValueError(f"unknown L_lin policy {self.L_lin!r}")
        elif not float(self.L_lin) >= 0:
            raise ValueError("L_lin must be nonnegative")

    def linearization(self, u, params):
        if self.L_lin == "dynamic":
            return lipschitz_bound_F1(u, params)
        if self.L_lin == "bound":
            return max_slope_F1(u, params)
        return float(self.L_lin)


# -- nonlinearity --------------------------------------------------------------
def double_well_prime(phi):
    phi = np.asarray(phi, dtype=float)
    return 16.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)


def reaction_rate(u, params=None, *, u_eq=None, k=None):
    """f(u) = k ([u]_+^2 / u_eq^2 - 1)."""
    if params is not None:
        u_eq = params.u_eq if u_eq is None else u_eq
        k = params.k if k is None else k
    u_eq = 0.5 if u_eq is None else u_eq
    k = 1.0 if k is None else k
    up = np.maximum(np.asarray(u, dtype=float), 0.0)
    return k * (up**2 / u_eq**2 - 1.0)


def F(phi, u, params):
    phi = np.asarray(phi, dtype=float)
    f = reaction_rate(u, params)
    return -params.gamma * double_well_prime(phi) - 4.0 * params.lam * phi * (1.0 - phi) * f / params.u_star


def _slope_coeffs(u, params):
    """dF/dphi = a z^2 + b z + c."""
    g, lam = params.gamma, params.lam
    fr = reaction_rate(u, params) / params.u_star
    a = -96.0 * g
    b = 96.0 * g + 8.0 * lam * fr
    c = -16.0 * g - 4.0 * lam * fr
    return a, b, c


def dF_dphi(phi, u, params):
    a, b, c = _slope_coeffs(u, params)
    phi = np.asarray(phi, dtype=float)
    return (a * phi + b) * phi + c


def F_split(phi, u, params):
    """Split F into its nondecreasing and nonincreasing parts in phi.

    F_plus(x) = int_0^x [dF/dz]_+ dz and F_minus = F - F_plus.  The slope is
    a concave quadratic in z, so its positive part is supported between the
    two real roots (and vanishes if there are none).
    """
    phi = np.asarray(phi, dtype=float)
    a, b, c = _slope_coeffs(u, params)
    a, b, c = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    # a < 0: roots ordered r1 <= r2
    r1 = (-b + sq) / (2.0 * a)
    r2 = (-b - sq) / (2.0 * a)

    def G(x):
        return ((a / 3.0 * x + b / 2.0) * x + c) * x

    fp = G(np.clip(phi, r1, r2)) - G(np.clip(0.0, r1, r2))
    fp = np.where(disc > 0.0, fp, 0.0)
    return fp, F(phi, u, params) - fp


def lipschitz_bound_F1(u, params):
    """Cheap linearization constant max(|2 lam f + 8 gamma|, |2 lam f - 8 gamma|)."""
    f = reaction_rate(u, params)
    a = 2.0 * params.lam * f
    g8 = 8.0 * params.gamma
    return np.maximum(np.abs(a + g8), np.abs(a - g8))


def max_slope_F1(u, params):
    """Exact max over phi in [0, 1] of |dF/dphi|."""
    a, b, c = _slope_coeffs(u, params)
    pts = [0.0, 1.0]
    zv = -b / (2.0 * a)
    if 0.0 < zv < 1.0:
        pts.append(zv)
    return float(max(abs(dF_dphi(z, u, params)) for z in pts))


def dt_bound(u, params, L_coup=0.0):
    """Largest step for which the micro iteration is guaranteed to contract."""
    m = max_slope_F1(u, params)
    return np.inf if m == 0 else params.lam**2 * (1.0 + L_coup) / m


# -- initial data ------------------------------------------------------------
def interface_profile(signed_distance, lam):
    """Stationary diffuse profile: 0 deep in the mineral, 1 in the fluid."""
    return 0.5 * (1.0 + np.tanh(2.0 * np.asarray(signed_distance) / lam))


@lru_cache(maxsize=32)
def circle_radius(porosity, lam, n_quad=1024):
    """Radius of a centred diffuse circular grain giving the cell porosity."""
    if not 0.0 < porosity < 1.0:
        raise ValueError("porosity must lie in (0, 1)")
    s = (np.arange(n_quad) + 0.5) / n_quad - 0.5
    r = np.hypot(*np.meshgrid(s, s))

    def excess(R):
        return interface_profile(r - R, lam).mean() - porosity

    return brentq(excess, 1e-6, 0.75, xtol=1e-14)


def circle_field(mesh, porosity, lam):
    """Diffuse circular mineral grain centred in the cell."""
    R = circle_radius(float(porosity), float(lam))
    return lambda x, y: interface_profile(np.hypot(x, y) - R, lam)


def rect_field(box, lam):
    """Diffuse axis-aligned mineral grain ``box = (x0, x1, y0, y1)``.

    Uses the stationary profile across the signed distance to the box, so the
    grain starts relaxed like the circular one."""
    x0, x1, y0, y1 = box
    cx, cy, hx, hy = (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2, (y1 - y0) / 2

    def f(x, y):
        qx, qy = np.abs(x - cx) - hx, np.abs(y - cy) - hy
        d = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0)) + np.minimum(np.maximum(qx, qy), 0)
        return interface_profile(d, lam)

    return f


# -- discrete solver -----------------------------------------------------------
def porosity(phi):
    """Cell average of the phase field (|Y| = 1)."""
    return phi.integral()


def l2_norm(mesh, values):
    """Exact L2(Y) norm of a periodic P1 function."""
    v = values[mesh.element_nodes]
    s = v.sum(axis=1)
    return float(np.sqrt(np.sum(mesh.areas * ((v * v).sum(axis=1) + s * s)) / 12.0))


class _LScheme:
    """Factorized L-scheme system for one (mesh, dt, L, Lc) combination.

    The nonlinear and linearization terms always use the lumped mass; the
    time-derivative and coupling terms use the lumped (default) or the
    consistent mass matrix.
    """

    def __init__(self, mesh, dt, L, L_coup, params, mass="lumped"):
        self.mesh = mesh
        self.m = fem.p1_lumped_mass(mesh)
        self.s = dt / params.lam**2
        self.L = L
        self.L_coup = L_coup
        if mass == "lumped":
            self.M = diags(self.m)
        elif mass == "consistent":
            self.M = fem.p1_mass(mesh).tocsr()
        else:
            raise ValueError(f"unknown mass option {mass!r}")
        A = fem.p1_stiffness(mesh) * (dt * params.gamma) + self.M * (1.0 + L_coup) + diags(self.m * (self.s * L))
        self.A = A.tocsc()
        self.lu = splu(self.A, permc_spec="MMD_AT_PLUS_A")

    def explicit(self, phi_prev, u, params):
        fp, _ = F_split(phi_prev, u, params)
        return self.M @ phi_prev + self.m * (self.s * fp)

    def solve(self, explicit, phi_outer, phi_inner, u, params):
        _, fm = F_split(phi_inner, u, params)
        rhs = explicit + self.L_coup * (self.M @ phi_outer) + self.m * (self.s * (fm + self.L * phi_inner))
        x = self.lu.solve(rhs)
        res = np.linalg.norm(self.A @ x - rhs)
        if not np.isfinite(res) or res > 1e-8 * max(1.0, np.linalg.norm(rhs)):
            raise PhaseFieldError(f"linear solve failed, residual {res:.3e}")
        return x


def _same_mesh(*fields):
    m = fields[0].mesh
    if any(f.mesh is not m for f in fields[1:]):
        raise MeshError("phase fields must live on the same mesh")
    if any(f.family != "P1" for f in fields):
        raise MeshError("phase fields must be P1")
    return m


def lscheme_step(phi_prev_time, phi_outer, phi_inner, u, dt, knobs, params):
    """One linear L-scheme iteration; returns the new iterate (unclamped)."""
    mesh = _same_mesh(phi_prev_time, phi_outer, phi_inner)
    L = knobs.linearization(u, params)
    sys_ = _LScheme(mesh, dt, L, knobs.L_coup, params, knobs.mass)
    x = sys_.solve(sys_.explicit(phi_prev_time.values, u, params), phi_outer.values, phi_inner.values, u, params)
    return Field(mesh, x, "P1")


@dataclass
class MicroSolveInfo:
    iterations: int
    errors: list = field(default_factory=list)
    clamp: float = 0.0
    L_lin: float = 0.0


def solve_phasefield(phi_prev_time, phi_outer, u, dt, knobs, params, phi_start=None, info=None):
    """Iterate the L-scheme to convergence.

    Returns ``(phi, iterations)``.  The result is clamped to [0, 1]; a clamp
    larger than ``knobs.bound_tol`` raises :class:`PhaseFieldError`.  If
    ``info`` (a :class:`MicroSolveInfo`) is given, the iteration history is
    recorded in it.
    """
    mesh = _same_mesh(phi_prev_time, phi_outer)
    bound = dt_bound(u, params, knobs.L_coup)
    if dt > bound * (1 + 1e-12):
        warnings.warn(
            f"dt={dt:g} exceeds the contraction bound {bound:.4g} for u={u:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    L = knobs.linearization(u, params)
    sys_ = _LScheme(mesh, dt, L, knobs.L_coup, params, knobs.mass)
    explicit = sys_.explicit(phi_prev_time.values, u, params)
    cur = (phi_start if phi_start is not None else phi_outer).values
    errors = []
    for j in range(1, knobs.max_micro_iters + 1):
        new = sys_.solve(explicit, phi_outer.values, cur, u, params)
        err = l2_norm(mesh, new - cur)
        errors.append(err)
        cur = new
        if err <= knobs.tol_mu:
            break
    else:
        raise PhaseFieldError(
            f"micro iteration did not reach tol {knobs.tol_mu:g} in {knobs.max_micro_iters} steps "
            f"(last error {errors[-1]:.3e})",
            errors,
        )
    clamped = np.clip(cur, 0.0, 1.0)
    clamp = float(np.max(np.abs(clamped - cur)))
    if info is not None:
        info.iterations = j
        info.errors = errors
        info.clamp = clamp
        info.L_lin = float(L)
    if clamp > knobs.bound_tol:
        raise PhaseFieldError(f"phase field left [0, 1] by {clamp:.3e}", errors)
    return Field(mesh, clamped, "P1"), j
