"""Periodic cell problems for the effective diffusivity and permeability.

Both problems are posed on the unit cell with the regularized phase field
phi_d = phi + delta as coefficient, taken element-wise constant (the element
mean of a P1 phase field, or the values of a P0 one).

Diffusion: find a periodic, zero-mean omega with
    div(phi_d (grad omega + e_s)) = 0,      A_rs = int phi_d (delta_rs + d_r omega^s),
solved in mixed form for the flux sigma = phi_d (grad omega + e_s) with RT0 /
P0 elements, so that A_rs = int sigma^s_r.

Permeability: with the unknown v = phi_d w (Crouzeix-Raviart) and a P0
pressure Pi,
    mu <grad v, grad z> + <(g / phi_d^2) v, z> + <Pi, div z> = <e_s, z>,
    <div v, q> = 0,                          K_rs = int v^s_r.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .mesh import Field, MeshError
from .phasefield import porosity as _porosity

DRAG_CONSTANT = 25.0


class CellProblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class EffectiveTensors:
    A: np.ndarray
    K: np.ndarray
    porosity: float

    def row(self):
        """Values in the order A11, A12, A22, K11, K12, K21, K22, porosity."""
        A, K = self.A, self.K
        return [A[0, 0], A[0, 1], A[1, 1], K[0, 0], K[0, 1], K[1, 0], K[1, 1], self.porosity]


@dataclass(frozen=True)
class CellAux:
    """Auxiliary cell solutions: omega (P0), sigma (RT0), w (CR pairs), Pi (P0)."""

    omega: tuple = ()
    sigma: tuple = ()
    w: tuple = ()
    Pi: tuple = ()


def drag(phi, lam, K=DRAG_CONSTANT):
    """Drag coefficient g = 10 K (1 - phi) / (lam (phi + 10)); zero in the fluid."""
    phi = np.asarray(phi, dtype=float)
    return 10.0 * K * (1.0 - phi) / (lam * (phi + 10.0))


def _element_phi(phi):
    if phi.family == "P0":
        return phi.values
    if phi.family == "P1":
        return phi.element_means()
    raise MeshError(f"phase field must be P0 or P1, got {phi.family}")


def _check_phi(vals):
    if vals.min() < -1e-9 or vals.max() > 1 + 1e-9:
        raise CellProblemError(f"phase field outside [0, 1]: [{vals.min():.3e}, {vals.max():.3e}]")


def _solve(M, rhs, what, spd=False):
    # minimum degree ordering on A^T + A suits symmetric positive definite systems
    try:
        lu = splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A") if spd else splu(M.tocsc())
    except RuntimeError as exc:
        raise CellProblemError(f"{what}: singular system ({exc})") from None
    x = lu.solve(rhs)
    res = np.linalg.norm(M @ x - rhs, axis=0)
    scale = np.maximum(np.linalg.norm(rhs, axis=0), 1e-300)
    if not np.all(np.isfinite(x)) or np.any(res > 1e-8 * scale):
        raise CellProblemError(f"{what}: solve failed, relative residuals {res / scale}")
    return x


def solve_diffusion_cell(phi, delta, method="cr"):
    """Effective diffusion tensor from the periodic cell problem.

    ``method="mixed"`` solves the RT0 / P0 saddle point system directly.
    ``method="cr"`` (default) solves the equivalent symmetric positive
    definite Crouzeix-Raviart problem: with an element-wise constant
    coefficient and no source, the RT0 flux equals phi_d (grad omega_CR + e_s)
    element by element, so both give the same tensor up to round-off at a
    fraction of the cost.

    Returns ``(aux, A)`` with ``aux.omega`` the two correctors (P0 for the
    mixed method, CR otherwise) and ``aux.sigma`` the two RT0 fluxes.
    """
    mesh = phi.mesh
    if not mesh.periodic:
        raise MeshError("cell problems need a periodic mesh")
    vals = _element_phi(phi)
    _check_phi(vals)
    pd = vals + delta
    if method == "cr":
        omega, sigma, A = _diffusion_cr(mesh, pd)
    elif method == "mixed":
        omega, sigma, A = _diffusion_mixed(mesh, pd)
    else:
        raise ValueError(f"unknown method {method!r}")
    asym = abs(A[0, 1] - A[1, 0])
    if asym > 1e-8 * max(1.0, np.abs(A).max()):
        raise CellProblemError(f"effective diffusion tensor not symmetric ({asym:.3e})")
    A = 0.5 * (A + A.T)
    sig = tuple(Field(mesh, sigma[:, s], "RT0") for s in range(2))
    return CellAux(omega=omega, sigma=sig), A


def _diffusion_mixed(mesh, pd):
    nt, ne = mesh.n_elements, mesh.n_edges
    M = fem.rt0_mass(mesh, 1.0 / pd)
    B = fem.rt0_divergence(mesh)
    a = sp.csr_matrix(mesh.areas[:, None])
    S = sp.bmat([[M, B.T, None], [B, None, a], [None, a.T, None]], format="csc")
    ints = fem.rt0_integrals(mesh)
    rhs = np.zeros((ne + nt + 1, 2))
    for s in range(2):
        rhs[:ne, s] = np.bincount(mesh.t2e.ravel(), weights=ints[:, :, s].ravel(), minlength=ne)
    x = _solve(S, rhs, "diffusion cell problem")
    sigma = x[:ne]
    A = np.array([[rhs[:ne, r] @ sigma[:, s] for s in range(2)] for r in range(2)])
    omega = tuple(Field(mesh, x[ne : ne + nt, s], "P0") for s in range(2))
    return omega, sigma, A


def _diffusion_cr(mesh, pd):
    ne = mesh.n_edges
    # CR basis of the edge opposite local vertex k has gradient -2 grad(lambda_k)
    G = -2.0 * mesh.grad_lambda
    w = pd * mesh.areas
    K = fem.cr_stiffness(mesh, pd)
    rhs = np.stack(
        [-np.bincount(mesh.t2e.ravel(), weights=(w[:, None] * G[:, :, s]).ravel(), minlength=ne) for s in range(2)],
        axis=1,
    )
    # constants form the kernel: pin edge 0, then shift to zero mean
    x = np.zeros((ne, 2))
    x[1:] = _solve(K[1:, 1:], rhs[1:], "diffusion cell problem", spd=True)
    x -= (np.bincount(mesh.t2e.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=ne) @ x) / mesh.areas.sum()
    grads = [np.einsum("tk,tkd->td", x[mesh.t2e, s], G) for s in range(2)]
    flux = [pd[:, None] * (grads[s] + np.eye(2)[s]) for s in range(2)]
    A = np.array([[np.sum(mesh.areas * flux[s][:, r]) for s in range(2)] for r in range(2)])
    # RT0 dofs: outward flux of the constant element flux through local edge k
    # is -2|T| sigma . grad(lambda_k); take it from the edge's first element
    sigma = np.zeros((ne, 2))
    out = [-2.0 * mesh.areas[:, None] * np.einsum("td,tkd->tk", flux[s], mesh.grad_lambda) for s in range(2)]
    first = mesh.edge_signs > 0
    for s in range(2):
        sigma[mesh.t2e[first], s] = out[s][first]
    omega = tuple(Field(mesh, x[:, s], "CR") for s in range(2))
    return omega, sigma, A


def solve_permeability_cell(phi, delta, mu_f=1.0, lam=0.08):
    """Effective permeability from the Stokes-Brinkman type cell problem.

    Returns ``(aux, K)``; ``aux.w`` holds the two CR velocity pairs v = phi_d w
    and ``aux.Pi`` the zero-mean P0 pressures.  K is not symmetrized.
    """
    mesh = phi.mesh
    if not mesh.periodic:
        raise MeshError("cell problems need a periodic mesh")
    if not mu_f > 0:
        raise ValueError("mu_f must be positive")
    vals = _element_phi(phi)
    _check_phi(vals)
    pd = vals + delta
    g = drag(np.clip(vals, 0.0, 1.0), lam)
    if not np.any(g > 0):
        raise CellProblemError("permeability cell problem is singular without any mineral (zero drag)")
    nt, ne = mesh.n_elements, mesh.n_edges
    Kv = fem.cr_stiffness(mesh, mu_f) + fem.cr_mass(mesh, g / pd**2)
    Bx, By = fem.cr_divergence(mesh)
    a = sp.csr_matrix(mesh.areas[:, None])
    S = sp.bmat(
        [[Kv, None, Bx.T, None], [None, Kv, By.T, None], [Bx, By, None, a], [None, None, a.T, None]],
        format="csc",
    )
    wts = np.bincount(mesh.t2e.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=ne)
    rhs = np.zeros((2 * ne + nt + 1, 2))
    rhs[:ne, 0] = wts
    rhs[ne : 2 * ne, 1] = wts
    x = _solve(S, rhs, "permeability cell problem")
    K = np.array([[wts @ x[r * ne : (r + 1) * ne, s] for s in range(2)] for r in range(2)])
    w = tuple((Field(mesh, x[:ne, s], "CR"), Field(mesh, x[ne : 2 * ne, s], "CR")) for s in range(2))
    Pi = tuple(Field(mesh, x[2 * ne : 2 * ne + nt, s], "P0") for s in range(2))
    return CellAux(w=w, Pi=Pi), K


def effective_update(phi, params, mu_f=1.0, with_permeability=True):
    """Porosity, effective diffusion and (optionally) permeability of a cell.

    When the permeability is skipped, K is returned as NaN.
    """
    _, A = solve_diffusion_cell(phi, params.delta)
    if with_permeability:
        _, K = solve_permeability_cell(phi, params.delta, mu_f, params.lam)
    else:
        K = np.full((2, 2), np.nan)
    return EffectiveTensors(A=A, K=K, porosity=_porosity(phi))
