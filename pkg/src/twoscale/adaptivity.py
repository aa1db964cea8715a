"""Adaptivity on both scales.

Micro scale: the cell mesh follows the diffuse interface.  Every time step
starts from a fixed coarse cell mesh; coarse elements whose mean phase field
lies in the transition band [theta_r*lam, 1 - theta_r*lam] are marked, and
their descendants are bisected until every shortest edge inside them is at
most ``h_min``.  The new mesh is found by a
prediction - projection - correction sequence (see :func:`micro_adapt`).

Macro scale: only *active* macro elements solve cell problems; inactive ones
copy the micro state of the most similar active element.  Similarity is the
accumulated, exponentially forgetting distance

    d_E(x1, x2; t_n) = exp(-Lambda dt) d_E(x1, x2; t_{n-1})
                       + dt (|u(x1) - u(x2)| + int_Y |phi(x1) - phi(x2)|).
"""
import numpy as np
from scipy.spatial.distance import cdist

from .mesh import Field, MeshError, ancestors, bisect, interpolate, mesh_union, project

_MAX_BISECTIONS = 40


class MicroMeshes:
    """Band refinement of a coarse periodic cell mesh, with caching.

    Parameters
    ----------
    coarse : TriMesh
        Auxiliary uniform cell mesh (all adapted meshes descend from it).
    h_min : float
        Target shortest edge inside the band.
    theta_r, lam : float
        Band parameter and interface width; elements with mean phase field
        in [theta_r*lam, 1 - theta_r*lam] are refined.
    """

    def __init__(self, coarse, h_min, theta_r, lam):
        if not 0 < theta_r < 1.0 / (2.0 * lam):
            raise ValueError(f"theta_r must lie in (0, {1 / (2 * lam):g})")
        if not h_min > 0:
            raise ValueError("h_min must be positive")
        self.coarse = coarse
        self.h_min = h_min
        self.theta_r = theta_r
        self.lam = lam
        self._bisections = {}
        self._unions = {}

    def __getstate__(self):
        # caches are keyed by id() and are useless in another process
        state = dict(self.__dict__)
        state["_bisections"] = {}
        state["_unions"] = {}
        return state

    @property
    def band(self):
        lo = self.theta_r * self.lam
        return lo, 1.0 - lo

    def in_band(self, means):
        lo, hi = self.band
        return (means >= lo) & (means <= hi)

    def mark(self, phi, mesh=None):
        """Elements of ``mesh`` (default: the coarse mesh) whose mean phase
        field lies in the band."""
        mesh = mesh or self.coarse
        if callable(phi):
            means = interpolate(phi, mesh).element_means()
        else:
            means = project(phi, mesh, "P0").values
        return self.in_band(means)

    def _bisect(self, mesh, need):
        key = (id(mesh), np.packbits(need).tobytes())
        hit = self._bisections.get(key)
        if hit is None or hit[0] is not mesh:
            hit = (mesh, bisect(mesh, need))
            self._bisections[key] = hit
        return hit[1]

    def adapt(self, phi):
        """Mesh resolving the band of ``phi`` (a field or a callable).

        The band is detected once, on the coarse mesh.  Elements lying in a
        marked coarse element are bisected while their shortest edge exceeds
        ``h_min``; closure bisections may spill into neighbours.
        """
        marked = self.mark(phi)
        mesh = self.coarse
        for _ in range(_MAX_BISECTIONS):
            inside = marked[ancestors(mesh, self.coarse)]
            need = inside & (mesh.shortest_edges > self.h_min * (1 + 1e-9))
            if not need.any():
                return mesh
            mesh = self._bisect(mesh, need)
        raise MeshError(f"could not reach h_min={self.h_min:g}; achieved {mesh.min_edge:g}")

    def union(self, a, b):
        key = (id(a), id(b))
        hit = self._unions.get(key)
        if hit is None or hit[0] is not a or hit[1] is not b:
            hit = (a, b, mesh_union(a, b))
            self._unions[key] = hit
        return hit[2]

    def initial(self, profile):
        """Adapted mesh and clamped nodal interpolant of a profile f(x, y)."""
        mesh = self.adapt(profile)
        phi = interpolate(profile, mesh)
        return Field(mesh, np.clip(phi.values, 0.0, 1.0), "P1")


def _clamped(field):
    return Field(field.mesh, np.clip(field.values, 0.0, 1.0), field.family)


def transfer(phi, mesh):
    """Project a phase field onto ``mesh`` and clamp to [0, 1]."""
    if phi.mesh is mesh:
        return phi
    return _clamped(project(phi, mesh))


def micro_adapt(phi_prev, solve, meshes):
    """Prediction - projection - correction step for one cell.

    ``solve(phi_prev_time, phi_outer)`` runs the micro solver for the first
    multi-scale iteration on the mesh of its arguments and returns
    ``(phi, iterations)``.

    Returns ``(phi_new, mesh_new, iterations)`` where ``iterations`` is the
    count of the correction solve.
    """
    # prediction on the previous mesh
    phi_pred, _ = solve(phi_prev, phi_prev)
    mesh_new = meshes.adapt(phi_pred)
    # projection onto the union of old and predicted meshes
    mesh_r = meshes.union(phi_prev.mesh, mesh_new)
    prev_r = transfer(phi_prev, mesh_r)
    # correction on the union mesh, then back onto the predicted mesh
    phi_r, its = solve(prev_r, prev_r)
    return transfer(phi_r, mesh_new), mesh_new, its


# -- macro scale -------------------------------------------------------------
def distance_update(dE_prev, du, dphi_int, dt, Lambda):
    """One step of the exponentially forgetting distance recursion."""
    return np.exp(-Lambda * dt) * dE_prev + dt * (du + dphi_int)


class ActiveSet:
    """Active / inactive partition of macro points with the Copy method.

    ``assoc[i]`` is the active point copied by point ``i`` (``i`` itself
    for active points).  Initially every point is inactive and all distances
    vanish.
    """

    def __init__(self, n_points, Lambda=0.1, C_r=0.05, C_c=0.2):
        if not 0 <= C_c < 1:
            raise ValueError("C_c must lie in [0, 1)")
        if C_r < 0 or Lambda < 0:
            raise ValueError("C_r and Lambda must be nonnegative")
        self.n = int(n_points)
        self.Lambda = Lambda
        self.C_r = C_r
        self.C_c = C_c
        self.active = np.zeros(self.n, dtype=bool)
        self.assoc = np.full(self.n, -1, dtype=np.int64)
        self.dE = np.zeros((self.n, self.n))

    @property
    def active_ids(self):
        return np.flatnonzero(self.active)

    @property
    def inactive_ids(self):
        return np.flatnonzero(~self.active)

    def tolerances(self):
        tol_r = self.C_r * float(self.dE.max()) if self.n else 0.0
        return tol_r, self.C_c * tol_r

    def accumulate(self, u, phi_means, dt, cell_area=None):
        """Advance all pairwise distances by one time step.

        ``u`` holds one concentration per point, ``phi_means`` the cell phase
        fields as coarse-mesh element means (one row per point).
        """
        u = np.asarray(u, dtype=float)
        P = np.asarray(phi_means, dtype=float)
        if cell_area is not None:
            P = P * np.asarray(cell_area, dtype=float)[None, :]
        du = np.abs(u[:, None] - u[None, :])
        dphi = cdist(P, P, "cityblock")
        self.dE = distance_update(self.dE, du, dphi, dt, self.Lambda)
        np.fill_diagonal(self.dE, 0.0)

    def update(self):
        """Deactivate near-duplicates, activate outliers, re-associate."""
        if self.C_r == 0:
            self.active[:] = True
            self.assoc = np.arange(self.n)
            return self
        tol_r, tol_c = self.tolerances()
        d = self.dE
        for a in np.flatnonzero(self.active):
            others = self.active.copy()
            others[a] = False
            if others.any() and d[a, others].min() < tol_c:
                self.active[a] = False
        for i in range(self.n):
            if self.active[i]:
                continue
            act = self.active_ids
            if act.size == 0 or d[i, act].min() > tol_r:
                self.active[i] = True
        self._associate()
        return self

    def _associate(self):
        act = self.active_ids
        self.assoc = np.arange(self.n)
        if act.size == 0:
            raise RuntimeError("no active points")
        inact = self.inactive_ids
        if inact.size:
            # argmin returns the first (lowest index) minimiser
            self.assoc[inact] = act[np.argmin(self.dE[np.ix_(inact, act)], axis=1)]

    def set_fixed(self, active, assoc):
        """Use a prescribed partition (e.g. one active row of elements)."""
        active = np.asarray(active, dtype=bool)
        assoc = np.asarray(assoc, dtype=np.int64)
        if not np.all(active[assoc]):
            raise ValueError("association must map into active points")
        self.active = active.copy()
        self.assoc = assoc.copy()
        self.assoc[active] = np.flatnonzero(active)
        return self

    def copy_method(self, states):
        """Replace every inactive point's state by its associated active one."""
        return [states[j] for j in self.assoc]


def update_active_sets(aset):
    """Functional wrapper around :meth:`ActiveSet.update`."""
    return aset.update()


def copy_method(aset, states):
    return aset.copy_method(states)
