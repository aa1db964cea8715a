import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.macro import (
    BoundaryData,
    MacroSolveError,
    divergence,
    initial_state,
    line_profile,
    solve_flow,
    solve_transport,
)
from twoscale.mesh import Field, build_uniform

RECT = (0.0, 1.0, 0.0, 0.5)


def iso(mesh, k):
    k = np.broadcast_to(np.asarray(k, dtype=float), (mesh.n_elements,))
    return k[:, None, None] * np.eye(2)[None]


class TestFlow:
    def test_linear_pressure_exact(self):
        m = build_uniform(RECT, (8, 4))
        p, q = solve_flow(m, iso(m, 2.0), BoundaryData(p_dirichlet={"left": 1.0, "right": 0.0}))
        assert np.allclose(p.values, 1.0 - m.centroids[:, 0], atol=1e-12)
        # total flux through the right face: K * grad p * height = 2 * 1 * 0.5
        right = m.boundary_segment("right")
        assert np.isclose(q.values[right].sum(), 1.0)
        assert np.abs(divergence(q)).max() < 1e-10

    def test_two_layer_closed_form(self):
        m = build_uniform(RECT, (16, 8))
        k1, k2 = 1.0, 0.25
        k = np.where(m.centroids[:, 0] < 0.5, k1, k2)
        p, q = solve_flow(m, iso(m, k), BoundaryData(p_dirichlet={"left": 1.0, "right": 0.0}))
        # series resistance: Darcy velocity = 1 / (0.5/k1 + 0.5/k2)
        v = 1.0 / (0.5 / k1 + 0.5 / k2)
        assert np.isclose(q.values[m.boundary_segment("right")].sum(), v * 0.5)
        assert np.isclose(-q.values[m.boundary_segment("left")].sum(), v * 0.5)
        # pressure gradient jumps by the permeability ratio
        xs, pp = line_profile(m, p.values)
        gl = np.polyfit(xs[xs < 0.5], pp[xs < 0.5], 1)[0]
        gr = np.polyfit(xs[xs > 0.5], pp[xs > 0.5], 1)[0]
        assert np.isclose(gr / gl, k1 / k2)

    def test_pure_neumann_is_zero_with_zero_mean(self):
        m = build_uniform(RECT, (4, 2))
        p, q = solve_flow(m, iso(m, 1.0), BoundaryData())
        assert np.allclose(q.values, 0.0)
        assert abs(m.areas @ p.values) < 1e-14

    def test_invalid_tensor(self):
        m = build_uniform(RECT, (2, 1))
        bad = iso(m, 1.0).copy()
        bad[0] = [[1.0, 2.0], [2.0, 1.0]]
        with pytest.raises(MacroSolveError):
            solve_flow(m, bad, BoundaryData(p_dirichlet={"left": 0.0}))

    def test_asymmetric_tensor_warns(self):
        m = build_uniform(RECT, (2, 1))
        K = iso(m, 1.0).copy()
        K[:, 0, 1] = 0.1
        with pytest.warns(RuntimeWarning, match="symmetric"):
            solve_flow(m, K, BoundaryData(p_dirichlet={"left": 0.0}))


def rt0_basis(P, k, s):
    """Unit-flux RT0 basis of local edge k (opposite vertex k) on triangle P."""
    d1, d2 = P[1] - P[0], P[2] - P[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return lambda x: s * (x - P[k]) / (2 * area)


def dense_transport(mesh, por_new, por_old, u_old, q, A, dt, D, u_star, dir_edges, u_d):
    """Independent dense assembly of the mixed upwind transport step."""
    nt, ne = mesh.n_elements, mesh.n_edges
    neu = np.setdiff1d(mesh.boundary_edges, dir_edges)
    free = np.setdiff1d(np.arange(ne), neu)
    idx = {e: i for i, e in enumerate(free)}
    nf = len(free)
    S = np.zeros((nf + nt, nf + nt))
    rhs = np.zeros(nf + nt)
    ud = dict(zip(dir_edges.tolist(), np.broadcast_to(u_d, dir_edges.shape).tolist()))
    for t in range(nt):
        P = mesh.coords[t]
        area = mesh.areas[t]
        Ainv = np.linalg.inv(D * A[t])
        mids = [0.5 * (P[(k + 1) % 3] + P[(k + 2) % 3]) for k in range(3)]
        basis = [rt0_basis(P, k, mesh.edge_signs[t, k]) for k in range(3)]
        for a in range(3):
            ea = mesh.t2e[t, a]
            if ea not in idx:
                continue
            for b in range(3):
                eb = mesh.t2e[t, b]
                if eb not in idx:
                    continue
                val = sum(basis[a](x) @ Ainv @ basis[b](x) for x in mids) * area / 3
                S[idx[ea], idx[eb]] += val
            # -(u, div psi) and dt (div q, v)
            S[idx[ea], nf + t] -= mesh.edge_signs[t, a]
            S[nf + t, idx[ea]] += dt * mesh.edge_signs[t, a]
        S[nf + t, nf + t] += por_new[t] * area
        rhs[nf + t] = area * (por_new[t] * u_star + por_old[t] * (u_old[t] - u_star))
        # upwind advection of the outward fluxes
        for a in range(3):
            e = mesh.t2e[t, a]
            F = mesh.edge_signs[t, a] * q[e]
            nb = [s for s in mesh.edge_elements[e] if s >= 0 and s != t]
            if F >= 0:
                S[nf + t, nf + t] += dt * F
            elif nb:
                S[nf + t, nf + nb[0]] += dt * F
            elif e in ud:
                rhs[nf + t] -= dt * F * ud[e]
            else:
                S[nf + t, nf + t] += dt * F
    for e in dir_edges:
        rhs[idx[e]] -= ud[e]
    return np.linalg.solve(S, rhs)[nf:]


class TestTransport:
    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 10_000))
    def test_dense_oracle(self, seed):
        m = build_uniform(RECT, (4, 2))
        rng = np.random.default_rng(seed)
        L = rng.normal(size=(m.n_elements, 2, 2)) * 0.3
        A = L @ np.transpose(L, (0, 2, 1)) + 0.2 * np.eye(2)
        por_new = rng.uniform(0.3, 0.9, m.n_elements)
        por_old = rng.uniform(0.3, 0.9, m.n_elements)
        u_old = rng.uniform(0, 0.5, m.n_elements)
        q = Field(m, rng.normal(size=m.n_edges), "RT0")
        bc = BoundaryData(u_dirichlet={"left": 0.3, "corner_ur": 0.1})
        got = solve_transport(por_new, por_old, Field(m, u_old, "P0"), q, A, 0.05, 0.7, 1.0, bc)
        e, v = bc.concentration(m)
        want = dense_transport(m, por_new, por_old, u_old, q.values, A, 0.05, 0.7, 1.0, e, v)
        assert np.allclose(got.values, want, atol=1e-12)

    def test_constant_state_preserved(self):
        m = build_uniform(RECT, (8, 4))
        por = np.random.default_rng(2).uniform(0.3, 0.9, m.n_elements)
        A = iso(m, np.random.default_rng(3).uniform(0.1, 1.0, m.n_elements))
        u = Field(m, np.full(m.n_elements, 0.37), "P0")
        K = iso(m, 1.0)
        _, q = solve_flow(m, K, BoundaryData(p_dirichlet={"left": 0.25, "right": 0.0}))
        out = solve_transport(por, por, u, q, A, 0.01, 1.0, 1.0, BoundaryData(u_dirichlet={"right": 0.37}))
        assert np.abs(out.values - 0.37).max() < 1e-12
        out = solve_transport(por, por, u, None, A, 0.01, 1.0, 1.0, BoundaryData())
        assert np.abs(out.values - 0.37).max() < 1e-12

    def test_mass_balance_without_boundary_flux(self):
        m = build_uniform(RECT, (6, 3))
        rng = np.random.default_rng(4)
        por_old = rng.uniform(0.3, 0.6, m.n_elements)
        por_new = por_old + 0.05
        u0 = Field(m, rng.uniform(0, 0.5, m.n_elements), "P0")
        u1 = solve_transport(por_new, por_old, u0, None, iso(m, 1.0), 0.01, 1.0, 1.0, BoundaryData())
        # sum |T| (por_new (u1 - u*) - por_old (u0 - u*)) = 0
        bal = m.areas @ (por_new * (u1.values - 1.0) - por_old * (u0.values - 1.0))
        assert abs(bal) < 1e-13

    def test_corner_sink_bounds(self):
        m = build_uniform(RECT, (10, 5))
        por = np.full(m.n_elements, 0.5)
        u = Field(m, np.full(m.n_elements, 0.5), "P0")
        bc = BoundaryData(u_dirichlet={"corner_ll": 0.0})
        for _ in range(5):
            u = solve_transport(por, por, u, None, iso(m, 0.33), 0.01, 1.0, 1.0, bc)
        assert u.values.min() >= 0.0 and u.values.max() <= 0.5 + 1e-12
        assert u.values[np.argmin(np.hypot(*m.centroids.T))] < 0.3

    def test_rejects_bad_porosity(self):
        m = build_uniform(RECT, (2, 1))
        u = Field(m, np.zeros(m.n_elements), "P0")
        with pytest.raises(MacroSolveError):
            solve_transport(np.zeros(m.n_elements), np.ones(m.n_elements), u, None, iso(m, 1.0), 0.1, 1, 1, BoundaryData())
        with pytest.raises(ValueError):
            solve_transport(np.ones(m.n_elements), np.ones(m.n_elements), u, None, iso(m, 1.0), 0.0, 1, 1, BoundaryData())


class TestState:
    def test_initial_state_and_copy(self):
        m = build_uniform(RECT, (2, 1))
        s = initial_state(m, 0.5, 0.3)
        c = s.copy()
        c.u.values[0] = 9
        assert s.u.values[0] == 0.5
        assert np.all(s.porosity == 0.3)
        assert s.mesh is m

    def test_line_profile(self):
        m = build_uniform(RECT, (4, 2))
        xs, v = line_profile(m, m.centroids[:, 0])
        assert np.allclose(xs, [0.125, 0.375, 0.625, 0.875])
        assert np.allclose(v, xs)
