"""Element matrices and global assembly for P1, P0, RT0 and Crouzeix-Raviart.

RT0 degrees of freedom are total normal fluxes through edges.  On element
T the local basis function for edge k is

    psi_k(x) = s_k / (2|T|) * (x - P_k),

with P_k the vertex opposite edge k and s_k = +-1 the orientation sign, so
that the flux of psi_k through edge k equals s_k and div psi_k = s_k / |T|.

Crouzeix-Raviart basis functions are 1 - 2*lambda_k (one per edge midpoint).
"""
import numpy as np
import scipy.sparse as sp


def _scatter(rows, cols, vals, shape):
    return sp.csr_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape)


def _local_pairs(dofs):
    """Row/column index arrays for (nt, k, k) local matrices."""
    k = dofs.shape[1]
    return np.repeat(dofs, k, axis=1).reshape(-1, k, k), np.tile(dofs, (1, k)).reshape(-1, k, k)


def element_coefficient(coef, mesh):
    """Broadcast a scalar / per-element coefficient to shape (nt,)."""
    c = np.asarray(coef, dtype=float)
    if c.ndim == 0:
        return np.full(mesh.n_elements, float(c))
    if c.shape != (mesh.n_elements,):
        raise ValueError("coefficient must be scalar or one value per element")
    return c


# -- P1 ----------------------------------------------------------------------
def p1_stiffness(mesh, coef=1.0):
    """Stiffness matrix sum_T c_T |T| grad(l_i) . grad(l_j) on periodic nodes."""
    c = element_coefficient(coef, mesh)
    g = mesh.grad_lambda
    local = np.einsum("tid,tjd->tij", g, g) * (c * mesh.areas)[:, None, None]
    r, cc = _local_pairs(mesh.element_nodes)
    n = mesh.n_nodes
    return _scatter(r, cc, local, (n, n))


def p1_mass(mesh, coef=1.0):
    c = element_coefficient(coef, mesh)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = (c * mesh.areas)[:, None, None] * local[None]
    r, cc = _local_pairs(mesh.element_nodes)
    n = mesh.n_nodes
    return _scatter(r, cc, vals, (n, n))


def p1_lumped_mass(mesh):
    """Diagonal of the row-sum lumped mass matrix (area / 3 per vertex)."""
    w = np.repeat(mesh.areas / 3.0, 3)
    return np.bincount(mesh.element_nodes.ravel(), weights=w, minlength=mesh.n_nodes)


# -- RT0 ---------------------------------------------------------------------
def rt0_mass(mesh, weight=None):
    """Weighted RT0 mass matrix  int_T psi_k . W psi_l.

    ``weight`` is None (identity), per-element scalars (nt,), or per-element
    2x2 tensors (nt, 2, 2).  The integrand is quadratic, so the edge-midpoint
    rule is exact for element-wise constant weights.
    """
    nt = mesh.n_elements
    if weight is None:
        W = np.broadcast_to(np.eye(2), (nt, 2, 2))
    else:
        w = np.asarray(weight, dtype=float)
        W = w[:, None, None] * np.eye(2) if w.ndim == 1 else w
    p = mesh.coords
    s = mesh.edge_signs
    mids = mesh.local_edge_midpoints
    area = mesh.areas
    # psi_k at the three midpoints q: (nt, q, k, 2)
    diff = mids[:, :, None, :] - p[:, None, :, :]
    psi = diff * (s / (2.0 * area[:, None]))[:, None, :, None]
    local = np.einsum("tqkd,tde,tqle->tkl", psi, W, psi) * (area / 3.0)[:, None, None]
    r, c = _local_pairs(mesh.t2e)
    ne = mesh.n_edges
    return _scatter(r, c, local, (ne, ne))


def rt0_divergence(mesh):
    """Matrix B with B[T, e] = int_T div psi_e (i.e. the signed flux)."""
    nt = mesh.n_elements
    rows = np.repeat(np.arange(nt), 3)
    return _scatter(rows, mesh.t2e.ravel(), mesh.edge_signs.ravel(), (nt, mesh.n_edges))


def rt0_integrals(mesh):
    """Per-element integral of each local basis function, shape (nt, 3, 2)."""
    s = mesh.edge_signs
    c = mesh.centroids
    return 0.5 * s[:, :, None] * (c[:, None, :] - mesh.coords)


def rt0_element_average(mesh, flux):
    """Element-average vector of an RT0 field given by edge fluxes."""
    vals = flux[mesh.t2e]
    return np.einsum("tkd,tk->td", rt0_integrals(mesh), vals) / mesh.areas[:, None]


# -- Crouzeix-Raviart ----------------------------------------------------------
def cr_stiffness(mesh, coef=1.0):
    c = element_coefficient(coef, mesh)
    g = mesh.grad_lambda
    local = 4.0 * np.einsum("tid,tjd->tij", g, g) * (c * mesh.areas)[:, None, None]
    r, cc = _local_pairs(mesh.t2e)
    ne = mesh.n_edges
    return _scatter(r, cc, local, (ne, ne))


def cr_mass(mesh, coef=1.0):
    """CR mass matrix; diagonal because the midpoint rule is exact."""
    c = element_coefficient(coef, mesh)
    w = np.repeat(c * mesh.areas / 3.0, 3)
    d = np.bincount(mesh.t2e.ravel(), weights=w, minlength=mesh.n_edges)
    return sp.diags(d)


def cr_divergence(mesh):
    """Matrices (Bx, By) with B[T, e] = int_T d/dx_d of the CR basis on e."""
    g = mesh.grad_lambda
    nt = mesh.n_elements
    rows = np.repeat(np.arange(nt), 3)
    shape = (nt, mesh.n_edges)
    return tuple(
        _scatter(rows, mesh.t2e.ravel(), (-2.0 * mesh.areas[:, None] * g[:, :, d]).ravel(), shape)
        for d in range(2)
    )
