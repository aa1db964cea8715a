"""
Conforming triangular meshes with newest-vertex bisection.

Every mesh descends from a *root* mesh (a structured triangulation of a
rectangle).  Elements carry a genealogy key ``(root element, heap index)``
so that two meshes refined from the same root can be merged or projected
onto each other exactly.

Triangles are stored with the newest vertex first: for ``(v0, v1, v2)`` the
refinement edge is ``(v1, v2)``.  Local edge ``k`` is the edge opposite
vertex ``k``.

Periodic meshes (the unit cell) keep duplicated vertices on opposite faces;
``node_of_vertex`` maps geometric vertices onto periodic node classes, which
is what the finite element spaces number as degrees of freedom.
"""
import uuid
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "MeshError",
    "TriMesh",
    "Field",
    "build_uniform",
    "unit_cell",
    "refine_marked",
    "bisect",
    "refine_uniform",
    "ancestors",
    "mesh_union",
    "project",
    "project_to",
    "interpolate",
    "evaluate",
    "write_vtk",
]

_ROOT_SHIFT = 40
_HEAP_MASK = (1 << _ROOT_SHIFT) - 1
_MAX_DEPTH = 36
# periodic identification and vertex matching tolerance
_TOL = 1e-10

class MeshError(ValueError):
    """Invalid mesh operation (bad input, incompatible genealogy)."""


class _Root:
    """Shared ancestry of a family of nested meshes."""

    def __init__(self, domain, n_per_side, periodic):
        self.domain = tuple(float(d) for d in domain)
        self.n_per_side = n_per_side
        self.periodic = periodic
        self.id = uuid.uuid4().hex

    @property
    def lengths(self):
        x0, x1, y0, y1 = self.domain
        return x1 - x0, y1 - y0


def _grid_keys(points, root):
    """Integer coordinates on a 1e-10 grid, wrapped for periodic roots."""
    x0, _, y0, _ = root.domain
    ij = np.rint((points - np.array([x0, y0])) / _TOL).astype(np.int64)
    if root.periodic:
        lx, ly = root.lengths
        ij[:, 0] %= int(round(lx / _TOL))
        ij[:, 1] %= int(round(ly / _TOL))
    return ij


class TriMesh:
    """Immutable triangulation with refinement genealogy.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, newest vertex first, counterclockwise
    keys : (nt,) int64 genealogy keys
    root : shared ancestry object
    """

    def __init__(self, vertices, triangles, keys, root):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.keys = np.ascontiguousarray(keys, dtype=np.int64)
        self.root = root
        for a in (self.vertices, self.triangles, self.keys):
            a.flags.writeable = False
        if np.any(self.areas <= 0.0):
            raise MeshError("mesh contains triangles with nonpositive area")

    def __repr__(self):
        kind = "periodic " if self.periodic else ""
        return f"<TriMesh {kind}{self.n_elements} elements, {self.n_nodes} nodes>"

    @classmethod
    def _from_coords(cls, coords, keys, root):
        """Build a mesh from per-element vertex coordinates (nt, 3, 2)."""
        pts = coords.reshape(-1, 2)
        ij = np.rint((pts - np.array(root.domain[::2])) / _TOL).astype(np.int64)
        _, first, inv = np.unique(ij, axis=0, return_index=True, return_inverse=True)
        vertices = pts[first]
        triangles = inv.reshape(-1, 3)
        order = np.argsort(keys, kind="stable")
        return cls(vertices, triangles[order], keys[order], root)

    # -- basic sizes -------------------------------------------------------
    @property
    def periodic(self):
        return self.root.periodic

    @property
    def n_elements(self):
        return self.triangles.shape[0]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def coords(self):
        """Vertex coordinates per element, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    # -- geometry ----------------------------------------------------------
    @cached_property
    def areas(self):
        p = self.coords
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self):
        return self.coords.mean(axis=1)

    @cached_property
    def grad_lambda(self):
        """Gradients of the barycentric coordinates, shape (nt, 3, 2)."""
        p = self.coords
        g = np.empty_like(p)
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            g[:, k, 0] = a[:, 1] - b[:, 1]
            g[:, k, 1] = b[:, 0] - a[:, 0]
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def local_edge_lengths(self):
        """Length of local edge k (opposite vertex k), shape (nt, 3)."""
        p = self.coords
        return np.stack(
            [np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1) for k in range(3)],
            axis=1,
        )

    @cached_property
    def local_edge_midpoints(self):
        p = self.coords
        return np.stack([0.5 * (p[:, (k + 1) % 3] + p[:, (k + 2) % 3]) for k in range(3)], axis=1)

    @property
    def diameters(self):
        return self.local_edge_lengths.max(axis=1)

    @property
    def shortest_edges(self):
        return self.local_edge_lengths.min(axis=1)

    @property
    def h_max(self):
        return float(self.diameters.max())

    @property
    def h_min(self):
        return float(self.diameters.min())

    @property
    def min_edge(self):
        return float(self.local_edge_lengths.min())

    @property
    def max_edge(self):
        return float(self.local_edge_lengths.max())

    @property
    def depths(self):
        heap = self.keys & _HEAP_MASK
        return np.floor(np.log2(heap)).astype(np.int64)

    @property
    def root_elements(self):
        return self.keys >> _ROOT_SHIFT

    # -- topology ----------------------------------------------------------
    @cached_property
    def node_of_vertex(self):
        """Periodic node class of every geometric vertex."""
        ij = _grid_keys(self.vertices, self.root)
        _, inv = np.unique(ij, axis=0, return_inverse=True)
        return inv.ravel()

    @property
    def n_nodes(self):
        return int(self.node_of_vertex.max()) + 1

    @property
    def element_nodes(self):
        """Node (degree of freedom) indices per element, shape (nt, 3)."""
        return self.node_of_vertex[self.triangles]

    @cached_property
    def _edges(self):
        mid = self.local_edge_midpoints.reshape(-1, 2)
        ij = _grid_keys(mid, self.root)
        _, first, inv = np.unique(ij, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        ne = first.size
        counts = np.bincount(inv, minlength=ne)
        if counts.max() > 2:
            raise MeshError("non-manifold edge")
        # first occurrence carries the global orientation
        sign = np.full(inv.size, -1.0)
        sign[first] = 1.0
        edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        edge_tris[:, 0] = first // 3
        second = np.setdiff1d(np.arange(inv.size), first)
        edge_tris[inv[second], 1] = second // 3
        return inv.reshape(-1, 3), sign.reshape(-1, 3), edge_tris, first

    @property
    def t2e(self):
        """Edge index of local edge k, shape (nt, 3)."""
        return self._edges[0]

    @property
    def edge_signs(self):
        """+1 where the element's outward normal matches the edge orientation."""
        return self._edges[1]

    @property
    def edge_elements(self):
        """Adjacent elements per edge (second entry -1 on the boundary)."""
        return self._edges[2]

    @property
    def n_edges(self):
        return self._edges[2].shape[0]

    @cached_property
    def edge_midpoints(self):
        return self.local_edge_midpoints.reshape(-1, 2)[self._edges[3]]

    @cached_property
    def edge_lengths(self):
        return self.local_edge_lengths.ravel()[self._edges[3]]

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_elements[:, 1] < 0)

    @cached_property
    def periodic_map(self):
        """Pairing of opposite-boundary vertices, one involution per axis.

        Returns a dict ``{0: pairs_x, 1: pairs_y}`` where each entry is an
        array of shape (k, 2) with the first column on the low face.  Empty
        for non-periodic meshes.
        """
        if not self.periodic:
            return {}
        x0, x1, y0, y1 = self.root.domain
        out = {}
        for axis, lo, hi in ((0, x0, x1), (1, y0, y1)):
            c = self.vertices[:, axis]
            other = self.vertices[:, 1 - axis]
            low = np.flatnonzero(np.abs(c - lo) < _TOL)
            high = np.flatnonzero(np.abs(c - hi) < _TOL)
            kl = np.rint(other[low] / _TOL).astype(np.int64)
            kh = np.rint(other[high] / _TOL).astype(np.int64)
            ol, oh = np.argsort(kl), np.argsort(kh)
            if kl.size != kh.size or np.any(kl[ol] != kh[oh]):
                raise MeshError("periodic faces do not match vertex-for-vertex")
            out[axis] = np.column_stack([low[ol], high[oh]])
        return out

    def boundary_segment(self, name):
        """Boundary edge indices belonging to a named segment.

        Names are ``left``, ``right``, ``bottom``, ``top`` and the corner
        patches ``corner_ll``, ``corner_lr``, ``corner_ul``, ``corner_ur``
        (boundary edges touching that corner vertex).
        """
        if self.periodic:
            raise MeshError("periodic meshes have no boundary segments")
        x0, x1, y0, y1 = self.root.domain
        b = self.boundary_edges
        m = self.edge_midpoints[b]
        half = 0.5 * self.edge_lengths[b] + _TOL
        sides = {
            "left": np.abs(m[:, 0] - x0) < _TOL,
            "right": np.abs(m[:, 0] - x1) < _TOL,
            "bottom": np.abs(m[:, 1] - y0) < _TOL,
            "top": np.abs(m[:, 1] - y1) < _TOL,
        }
        corners = {"corner_ll": (x0, y0), "corner_lr": (x1, y0), "corner_ul": (x0, y1), "corner_ur": (x1, y1)}
        if name in sides:
            return b[sides[name]]
        if name in corners:
            c = np.array(corners[name])
            near = np.linalg.norm(m - c, axis=1) <= half
            return b[near]
        raise MeshError(f"unknown boundary segment {name!r}")


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficient vector of a finite element function on a mesh.

    ``family`` is one of ``P0`` (piecewise constant), ``P1`` (conforming
    linear, one value per periodic node), ``RT0`` (lowest order face flux,
    one total flux per edge) or ``CR`` (nonconforming linear, one value
    per edge midpoint).
    """

    mesh: TriMesh
    values: np.ndarray
    family: str = "P1"

    def __post_init__(self):
        n = {
            "P0": self.mesh.n_elements,
            "P1": self.mesh.n_nodes,
            "RT0": self.mesh.n_edges,
            "CR": self.mesh.n_edges,
        }.get(self.family)
        if n is None:
            raise MeshError(f"unknown element family {self.family!r}")
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != n:
            raise MeshError(f"{self.family} field needs {n} coefficients, got {v.shape[0]}")
        object.__setattr__(self, "values", v)

    def vertex_values(self):
        """Values at the geometric vertices (P1 only)."""
        return self.values[self.mesh.node_of_vertex]

    def element_means(self):
        if self.family == "P0":
            return self.values
        if self.family == "P1":
            return self.values[self.mesh.element_nodes].mean(axis=1)
        raise MeshError(f"element means not defined for {self.family}")

    def integral(self):
        return float(self.mesh.areas @ self.element_means())


# -- construction ------------------------------------------------------------
def build_uniform(domain, n_per_side, periodic=False):
    """Structured triangulation of an axis-aligned rectangle.

    Each of the ``nx * ny`` squares is split in two along a diagonal whose
    direction alternates in a checkerboard pattern, so the mesh is symmetric
    under the reflections of the rectangle.  Every triangle is right
    isosceles (for square cells) with its hypotenuse as refinement edge.

    Parameters
    ----------
    domain : (x0, x1, y0, y1)
    n_per_side : int or (nx, ny)
    periodic : bool
        Identify opposite faces.
    """
    x0, x1, y0, y1 = (float(d) for d in domain)
    if not (x1 - x0 > 0 and y1 - y0 > 0):
        raise MeshError(f"degenerate rectangle {domain}")
    nx, ny = (n_per_side, n_per_side) if np.isscalar(n_per_side) else n_per_side
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise MeshError("n_per_side must be >= 1")
    root = _Root((x0, x1, y0, y1), (nx, ny), periodic)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    p00 = np.column_stack([xs[i], ys[j]])
    p10 = np.column_stack([xs[i + 1], ys[j]])
    p01 = np.column_stack([xs[i], ys[j + 1]])
    p11 = np.column_stack([xs[i + 1], ys[j + 1]])
    even = ((i + j) % 2 == 0)[:, None, None]
    # newest vertex = right angle; refinement edge = diagonal
    ta = np.where(even, np.stack([p10, p11, p00], 1), np.stack([p00, p10, p01], 1))
    tb = np.where(even, np.stack([p01, p00, p11], 1), np.stack([p11, p01, p10], 1))
    coords = np.stack([ta, tb], axis=1).reshape(-1, 3, 2)
    keys = (np.arange(coords.shape[0], dtype=np.int64) << _ROOT_SHIFT) | 1
    return TriMesh._from_coords(coords, keys, root)


def unit_cell(n_per_side):
    """Periodic uniform mesh of Y = [-0.5, 0.5]^2."""
    return build_uniform((-0.5, 0.5, -0.5, 0.5), n_per_side, periodic=True)


# -- refinement --------------------------------------------------------------
def bisect(mesh, marked):
    """One round of newest-vertex bisection with conformity closure.

    Every marked element is bisected at least once; neighbours are bisected
    as needed to keep the mesh conforming.
    """
    marked = _as_mask(mesh, marked)
    if not marked.any():
        return mesh
    t2e = mesh.t2e
    emark = np.zeros(mesh.n_edges, dtype=bool)
    emark[t2e[marked, 0]] = True
    while True:
        need = emark[t2e].any(axis=1) & ~emark[t2e[:, 0]]
        if not need.any():
            break
        emark[t2e[need, 0]] = True

    split = emark[t2e[:, 0]]
    p = mesh.coords
    keep_c = p[~split]
    keep_k = mesh.keys[~split]

    ps = p[split]
    ks = mesh.keys[split]
    v0, v1, v2 = ps[:, 0], ps[:, 1], ps[:, 2]
    m = 0.5 * (v1 + v2)
    child = [np.stack([m, v0, v1], 1), np.stack([m, v2, v0], 1)]
    ckeys = [_child_key(ks, 0), _child_key(ks, 1)]
    # parent edge (v0, v1) is local edge 2, (v2, v0) is local edge 1
    again = [emark[t2e[split, 2]], emark[t2e[split, 1]]]

    out_c = [keep_c]
    out_k = [keep_k]
    for c, k, a in zip(child, ckeys, again):
        out_c.append(c[~a])
        out_k.append(k[~a])
        if a.any():
            cc = c[a]
            mm = 0.5 * (cc[:, 1] + cc[:, 2])
            out_c.append(np.stack([mm, cc[:, 0], cc[:, 1]], 1))
            out_c.append(np.stack([mm, cc[:, 2], cc[:, 0]], 1))
            out_k.append(_child_key(k[a], 0))
            out_k.append(_child_key(k[a], 1))
    coords = np.concatenate(out_c)
    keys = np.concatenate(out_k)
    if ((keys & _HEAP_MASK) >> _MAX_DEPTH).any():
        raise MeshError("maximum refinement depth exceeded")
    return TriMesh._from_coords(coords, keys, mesh.root)


def refine_marked(mesh, marked):
    """Subdivide every marked element into (at least) four children.

    Two bisection levels are applied to each marked element, plus whatever
    closure refinement is required for conformity.  For periodic meshes the
    closure crosses the periodic faces, so opposite boundaries stay matched.
    """
    marked = _as_mask(mesh, marked)
    if not marked.any():
        return mesh
    target = dict(zip(mesh.keys[marked].tolist(), (mesh.depths[marked] + 2).tolist()))
    out = bisect(mesh, marked)
    # second level: descendants of marked elements still shallower than target
    anc = _ancestor_in(out.keys, np.sort(mesh.keys[marked]))
    need = np.zeros(out.n_elements, dtype=bool)
    hit = anc >= 0
    if hit.any():
        tgt = np.array([target[int(k)] for k in np.sort(mesh.keys[marked])])
        need[hit] = out.depths[hit] < tgt[anc[hit]]
    return bisect(out, need)


def refine_uniform(mesh, times=1):
    """Refine every element ``times`` times (each time into four)."""
    for _ in range(times):
        mesh = refine_marked(mesh, np.ones(mesh.n_elements, dtype=bool))
    return mesh


def _as_mask(mesh, marked):
    marked = np.asarray(marked)
    if marked.dtype == bool:
        if marked.shape != (mesh.n_elements,):
            raise MeshError("marker mask has wrong length")
        return marked
    mask = np.zeros(mesh.n_elements, dtype=bool)
    if marked.size:
        if marked.min() < 0 or marked.max() >= mesh.n_elements:
            raise MeshError("marked element index out of range")
        mask[marked.astype(np.int64)] = True
    return mask


def _child_key(keys, c):
    root = keys >> _ROOT_SHIFT
    heap = keys & _HEAP_MASK
    return (root << _ROOT_SHIFT) | (2 * heap + c)


def _ancestor_in(query, sorted_keys):
    """Position in ``sorted_keys`` of the nearest ancestor-or-self of each
    query key, -1 where none exists."""
    pos = np.full(query.size, -1, dtype=np.int64)
    if sorted_keys.size == 0:
        return pos
    root = query >> _ROOT_SHIFT
    heap = query & _HEAP_MASK
    for k in range(_MAX_DEPTH + 1):
        h = heap >> k
        live = (h >= 1) & (pos < 0)
        if not live.any():
            break
        cand = (root << _ROOT_SHIFT) | h
        idx = np.searchsorted(sorted_keys, cand)
        idx = np.minimum(idx, sorted_keys.size - 1)
        hit = live & (sorted_keys[idx] == cand)
        pos[hit] = idx[hit]
    return pos


def _check_family(a, b):
    if a.root.id != b.root.id:
        raise MeshError("meshes do not share a refinement genealogy")


def mesh_union(a, b):
    """Coarsest common refinement of two meshes with shared genealogy."""
    _check_family(a, b)
    if a is b:
        return a
    keys = np.concatenate([a.keys, b.keys])
    coords = np.concatenate([a.coords, b.coords])
    keys, first = np.unique(keys, return_index=True)
    coords = coords[first]
    # drop every key that is a proper ancestor of another key
    root = keys >> _ROOT_SHIFT
    heap = keys & _HEAP_MASK
    anc = []
    h = heap >> 1
    while (h >= 1).any():
        live = h >= 1
        anc.append((root[live] << _ROOT_SHIFT) | h[live])
        h = h >> 1
    leaf = ~np.isin(keys, np.concatenate(anc)) if anc else np.ones(keys.size, bool)
    out = TriMesh._from_coords(coords[leaf], keys[leaf], a.root)
    total = a.areas.sum()
    if abs(out.areas.sum() - total) > 1e-9 * total:
        raise MeshError("meshes do not share a refinement genealogy")
    return out


# -- projection --------------------------------------------------------------
def _barycentric(points, tri):
    """Barycentric coordinates of points (n, 2) in triangles (n, 3, 2)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0 = b - a
    v1 = c - a
    v2 = points - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def _locate(fine, coarse):
    """Index in ``coarse`` of the ancestor-or-self of each ``fine`` element."""
    order = np.argsort(coarse.keys)
    pos = _ancestor_in(fine.keys, coarse.keys[order])
    if np.any(pos < 0):
        raise MeshError("meshes are not nested")
    return order[pos]


def ancestors(fine, coarse):
    """Index in ``coarse`` of the element containing each ``fine`` element.

    ``fine`` must be a refinement of ``coarse`` (same root grid)."""
    _check_family(fine, coarse)
    return _locate(fine, coarse)


def _restrict(mesh, over):
    """Barycentric coordinates of the vertices of ``over`` (a refinement of
    ``mesh``) in their ancestor elements of ``mesh``, plus ancestor ids."""
    anc = _locate(over, mesh)
    pts = over.coords.reshape(-1, 2)
    tri = np.repeat(mesh.coords[anc], 3, axis=0)
    lam = _barycentric(pts, tri).reshape(-1, 3, 3)
    return anc, lam


def p1_mass_matrix(mesh):
    """Consistent P1 mass matrix on periodic nodes."""
    nodes = mesh.element_nodes
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = mesh.areas[:, None, None] * local[None]
    rows = np.repeat(nodes, 3, axis=1).ravel()
    cols = np.tile(nodes, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def project(field, dst, family=None):
    """Project a field onto another mesh of the same genealogy.

    Projection onto a locally finer mesh is exact (the spaces are nested);
    onto a coarser mesh it is the L2-orthogonal projection within the
    target element family.  Supported: P1 -> P1, P1 -> P0, P0 -> P0.
    ``family`` defaults to the source family.
    """
    src = field.mesh
    _check_family(src, dst)
    target = family or field.family
    if (field.family, target) not in (("P1", "P1"), ("P1", "P0"), ("P0", "P0")):
        raise MeshError(f"projection {field.family} -> {target} is not supported")
    if src is dst and target == field.family:
        return Field(dst, field.values.copy(), target)
    apply = _projector(src, dst, field.family, target)
    return Field(dst, apply(field.values), target)


def project_to(field, dst, family):
    """Alias of :func:`project` with an explicit target family."""
    return project(field, dst, family)


@lru_cache(maxsize=1024)
def _cached_union(a, b):
    return mesh_union(a, b)


@lru_cache(maxsize=1024)
def _projector(src, dst, src_family, target):
    """Linear map from source coefficients to projected coefficients."""
    u = _cached_union(src, dst)
    anc_s, lam_s = _restrict(src, u)
    anc_d, lam_d = _restrict(dst, u)
    area = u.areas
    nu = u.n_elements
    n_src = src.n_nodes if src_family == "P1" else src.n_elements
    # values of the source at the union element vertices: fv = E[t] @ coeffs
    if target == "P0":
        # mean over the union element, then area-weighted average per dst element
        w = (area / 3.0)[:, None] * np.ones((nu, 3))
        if src_family == "P1":
            vals = np.einsum("ta,tab->tb", w, lam_s)
            cols = src.element_nodes[anc_s]
        else:
            vals = w.sum(axis=1, keepdims=True)
            cols = anc_s[:, None]
        rows = np.broadcast_to(anc_d[:, None], cols.shape)
        L = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(dst.n_elements, n_src))
        inv_area = 1.0 / dst.areas
        return lambda v: inv_area * (L @ v)
    # exact load of a linear function against each dst basis function on a
    # union element: |T|/12 (sum_a f_a g_a + sum f * sum g)
    sg = lam_d.sum(axis=1)
    W = (lam_d.transpose(0, 2, 1) + sg[:, :, None]) * (area / 12.0)[:, None, None]  # (t, j, a)
    vals = np.einsum("tja,tab->tjb", W, lam_s)
    rows = np.broadcast_to(dst.element_nodes[anc_d][:, :, None], vals.shape)
    cols = np.broadcast_to(src.element_nodes[anc_s][:, None, :], vals.shape)
    L = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(dst.n_nodes, n_src))
    lu = splu(p1_mass_matrix(dst).tocsc())
    return lambda v: lu.solve(L @ v)


def interpolate(f, mesh):
    """Nodal P1 interpolant of a callable ``f(x, y)``."""
    vals = np.zeros(mesh.n_nodes)
    vals[mesh.node_of_vertex] = f(mesh.vertices[:, 0], mesh.vertices[:, 1])
    return Field(mesh, vals, "P1")


# -- output ------------------------------------------------------------------
def evaluate(field, points, chunk=256):
    """Values of a P1 field at arbitrary points inside the domain.

    Each point is assigned to the element where its smallest barycentric
    coordinate is largest (the containing element, or the nearest one for
    points on shared edges), by brute force over chunks of points.
    """
    if field.family != "P1":
        raise MeshError("evaluate needs a P1 field")
    mesh = field.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = mesh.coords
    a = C[:, 0]
    v0 = C[:, 1] - a
    v1 = C[:, 2] - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    nodal = field.values[mesh.element_nodes]
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        q = pts[s : s + chunk]
        v2 = q[:, None, :] - a[None]
        l1 = (v2[..., 0] * v1[:, 1] - v2[..., 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * v2[..., 1] - v0[:, 1] * v2[..., 0]) / det
        l0 = 1.0 - l1 - l2
        t = np.argmax(np.minimum(np.minimum(l0, l1), l2), axis=1)
        r = np.arange(len(q))
        lam = np.column_stack([l0[r, t], l1[r, t], l2[r, t]])
        out[s : s + chunk] = np.sum(lam * nodal[t], axis=1)
    return out


def write_vtk(path, mesh, cell_data=None, point_data=None, title="twoscale mesh"):
    """Write a legacy-VTK ASCII unstructured grid (triangles, cell type 5)."""
    cell_data = cell_data or {}
    point_data = point_data or {}
    nv, nt = mesh.n_vertices, mesh.n_elements
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines += [f"{x:.16g} {y:.16g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        lines += _vtk_arrays(cell_data, nt)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        lines += _vtk_arrays(point_data, nv)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _vtk_arrays(data, n):
    out = []
    for name, arr in data.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != n:
            raise MeshError(f"array {name!r} has length {arr.shape[0]}, expected {n}")
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out += [f"{v:.16g}" for v in arr]
    return out
