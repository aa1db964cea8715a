"""Macro-scale Darcy flow and reactive transport with RT0 / P0 mixed elements.

Flow:       q = -K grad p,  div q = 0
Transport:  por (u - u*) + dt div(q u) - dt D div(A grad u) = por_old (u_old - u*)

Scalars (p, u) are element-wise constant, fluxes live on edges (total normal
flux per edge, RT0).  Dirichlet data enter weakly through the flux equation,
zero-Neumann conditions are imposed essentially by removing the boundary
flux unknowns.  Advection uses upwind values per edge.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .mesh import Field, MeshError


class MacroSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data per named boundary segment; zero Neumann elsewhere.

    Segment names are those of :meth:`TriMesh.boundary_segment`.  Values are
    numbers or callables ``f(x, y)``.
    """

    p_dirichlet: dict = field(default_factory=dict)
    u_dirichlet: dict = field(default_factory=dict)

    @staticmethod
    def _edges_values(mesh, spec):
        edges, vals = [], []
        for name, value in spec.items():
            e = mesh.boundary_segment(name)
            mid = mesh.edge_midpoints[e]
            v = value(mid[:, 0], mid[:, 1]) if callable(value) else np.full(e.size, float(value))
            edges.append(e)
            vals.append(np.broadcast_to(v, e.shape))
        if not edges:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        e = np.concatenate(edges)
        v = np.concatenate(vals)
        e, first = np.unique(e, return_index=True)
        return e, v[first]

    def pressure(self, mesh):
        return self._edges_values(mesh, self.p_dirichlet)

    def concentration(self, mesh):
        return self._edges_values(mesh, self.u_dirichlet)


@dataclass
class MacroState:
    """Macro fields at one time level (P0 u, p, porosity; RT0 q)."""

    u: Field
    p: Field
    q: Field
    porosity: np.ndarray

    @property
    def mesh(self):
        return self.u.mesh

    def copy(self):
        return MacroState(
            Field(self.mesh, self.u.values.copy(), "P0"),
            Field(self.mesh, self.p.values.copy(), "P0"),
            Field(self.mesh, self.q.values.copy(), "RT0"),
            self.porosity.copy(),
        )


def _tensor_field(T, mesh, what):
    T = np.asarray(T, dtype=float)
    if T.shape == (2, 2):
        T = np.broadcast_to(T, (mesh.n_elements, 2, 2))
    if T.shape != (mesh.n_elements, 2, 2):
        raise MacroSolveError(f"{what} must have shape (n_elements, 2, 2)")
    if not np.all(np.isfinite(T)):
        raise MacroSolveError(f"{what} contains non-finite entries")
    asym = np.abs(T[:, 0, 1] - T[:, 1, 0])
    scale = np.abs(T).max(axis=(1, 2))
    if np.any(asym > 1e-6 * scale):
        warnings.warn(f"{what} is not symmetric; using its symmetric part", RuntimeWarning, stacklevel=3)
    T = 0.5 * (T + np.transpose(T, (0, 2, 1)))
    det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] ** 2
    if np.any(T[:, 0, 0] <= 0) or np.any(det <= 0):
        raise MacroSolveError(f"{what} is not positive definite on every element")
    return T


def _free_flux_dofs(mesh, dirichlet_edges):
    """Edges carrying a flux unknown: interior edges and Dirichlet edges."""
    neumann = np.setdiff1d(mesh.boundary_edges, dirichlet_edges)
    keep = np.ones(mesh.n_edges, dtype=bool)
    keep[neumann] = False
    return np.flatnonzero(keep)


def _factor_solve(S, rhs, what):
    try:
        x = splu(S.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise MacroSolveError(f"{what}: singular system ({exc})") from None
    res = np.linalg.norm(S @ x - rhs)
    if not np.all(np.isfinite(x)) or res > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise MacroSolveError(f"{what}: linear solve failed, residual {res:.3e}")
    return x


def solve_flow(mesh, K_field, bc):
    """Mixed Darcy solve; returns ``(p, q)`` as P0 and RT0 fields.

    Without pressure Dirichlet data the pressure mean is pinned to zero.
    """
    K = _tensor_field(K_field, mesh, "permeability")
    Kinv = np.linalg.inv(K)
    d_edges, d_vals = bc.pressure(mesh)
    free = _free_flux_dofs(mesh, d_edges)
    M = fem.rt0_mass(mesh, Kinv)[free][:, free]
    B = fem.rt0_divergence(mesh)[:, free]
    nt = mesh.n_elements
    g = np.zeros(mesh.n_edges)
    g[d_edges] = -d_vals
    blocks = [[M, -B.T], [-B, None]]
    rhs = [g[free], np.zeros(nt)]
    if d_edges.size == 0:
        a = sp.csr_matrix(mesh.areas[:, None])
        blocks = [[M, -B.T, None], [-B, None, a], [None, a.T, None]]
        rhs.append(np.zeros(1))
    S = sp.bmat(blocks, format="csc")
    x = _factor_solve(S, np.concatenate(rhs), "flow")
    q = np.zeros(mesh.n_edges)
    q[free] = x[: free.size]
    p = x[free.size : free.size + nt]
    return Field(mesh, p, "P0"), Field(mesh, q, "RT0")


def _upwind_matrix(mesh, q, u_edges, u_vals):
    """Advection operator C (C u = net outflow per element) and the inflow
    contribution of Dirichlet data to the right-hand side."""
    et = mesh.edge_elements
    Q = q.values
    nt = mesh.n_elements
    interior = np.flatnonzero(et[:, 1] >= 0)
    a, b = et[interior, 0], et[interior, 1]
    Qi = Q[interior]
    up = np.where(Qi >= 0, a, b)
    rows = np.concatenate([a, b])
    cols = np.concatenate([up, up])
    vals = np.concatenate([Qi, -Qi])
    # boundary edges: outward flux from the single neighbour
    bnd = np.flatnonzero(et[:, 1] < 0)
    Qb = Q[bnd]
    tb = et[bnd, 0]
    is_dir = np.isin(bnd, u_edges)
    inflow_dir = is_dir & (Qb < 0)
    use_interior = ~inflow_dir
    rows = np.concatenate([rows, tb[use_interior]])
    cols = np.concatenate([cols, tb[use_interior]])
    vals = np.concatenate([vals, Qb[use_interior]])
    C = sp.csr_matrix((vals, (rows, cols)), shape=(nt, nt))
    src = np.zeros(nt)
    if inflow_dir.any():
        lookup = dict(zip(u_edges.tolist(), u_vals.tolist()))
        ud = np.array([lookup[e] for e in bnd[inflow_dir].tolist()])
        np.add.at(src, tb[inflow_dir], Qb[inflow_dir] * ud)
    return C, src


def solve_transport(por_new, por_old, u_old, q, A_field, dt, D, u_star, bc):
    """Implicit reactive transport step; returns the new P0 concentration.

    ``por_new`` / ``por_old`` are element-wise porosities, ``q`` an RT0 Darcy
    flux (or None for no flow) and ``A_field`` per-element effective
    diffusion tensors.
    """
    mesh = u_old.mesh
    if not dt > 0:
        raise ValueError("dt must be positive")
    por_new = np.asarray(por_new, dtype=float)
    por_old = np.asarray(por_old, dtype=float)
    for name, por in (("por_new", por_new), ("por_old", por_old)):
        if por.shape != (mesh.n_elements,) or np.any(por <= 0) or np.any(por > 1 + 1e-12):
            raise MacroSolveError(f"{name} must lie in (0, 1] on every element")
    A = _tensor_field(A_field, mesh, "effective diffusion")
    Minv = np.linalg.inv(D * A)
    d_edges, d_vals = bc.concentration(mesh)
    free = _free_flux_dofs(mesh, d_edges)
    M = fem.rt0_mass(mesh, Minv)[free][:, free]
    B = fem.rt0_divergence(mesh)[:, free]
    nt = mesh.n_elements
    area = mesh.areas
    if q is None:
        C, inflow = sp.csr_matrix((nt, nt)), np.zeros(nt)
    else:
        if q.mesh is not mesh:
            raise MeshError("flux and concentration live on different meshes")
        C, inflow = _upwind_matrix(mesh, q, d_edges, d_vals)
    g = np.zeros(mesh.n_edges)
    g[d_edges] = -d_vals
    storage = sp.diags(por_new * area) + dt * C
    S = sp.bmat([[M, -B.T], [dt * B, storage]], format="csc")
    rhs_u = area * (por_new * u_star + por_old * (u_old.values - u_star)) - dt * inflow
    x = _factor_solve(S, np.concatenate([g[free], rhs_u]), "transport")
    return Field(mesh, x[free.size :], "P0")


def initial_state(mesh, u0, porosity):
    nt = mesh.n_elements
    return MacroState(
        u=Field(mesh, np.full(nt, float(u0)), "P0"),
        p=Field(mesh, np.zeros(nt), "P0"),
        q=Field(mesh, np.zeros(mesh.n_edges), "RT0"),
        porosity=np.broadcast_to(np.asarray(porosity, dtype=float), (nt,)).copy(),
    )


def divergence(q):
    """Element-wise divergence (net outflow / area) of an RT0 field."""
    mesh = q.mesh
    return (fem.rt0_divergence(mesh) @ q.values) / mesh.areas


def line_profile(mesh, values, axis=0, n_bins=None):
    """Average element values over strips orthogonal to ``axis``.

    Returns ``(centres, means)``; used for 1D projections of fields that
    only vary in one direction.
    """
    c = mesh.centroids[:, axis]
    lo, hi = mesh.root.domain[2 * axis : 2 * axis + 2]
    n_bins = n_bins or mesh.root.n_per_side[axis]
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, n_bins - 1)
    w = np.bincount(idx, weights=mesh.areas, minlength=n_bins)
    s = np.bincount(idx, weights=mesh.areas * values, minlength=n_bins)
    return 0.5 * (edges[1:] + edges[:-1]), s / w
