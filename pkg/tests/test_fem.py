import numpy as np
from hypothesis import given, settings, strategies as st

from twoscale import fem
from twoscale.mesh import build_uniform, unit_cell


class TestP1:
    def test_stiffness_kernel_and_symmetry(self):
        m = unit_cell(5)
        K = fem.p1_stiffness(m).toarray()
        assert np.allclose(K, K.T)
        assert np.allclose(K.sum(axis=1), 0.0)
        assert np.linalg.eigvalsh(K).min() > -1e-12

    def test_masses(self):
        m = build_uniform((0, 2, 0, 1), (4, 3))
        assert np.isclose(fem.p1_lumped_mass(m).sum(), 2.0)
        M = fem.p1_mass(m).toarray()
        assert np.isclose(M.sum(), 2.0)
        assert np.allclose(M.sum(axis=1), fem.p1_lumped_mass(m))

    def test_stiffness_energy_of_linear(self):
        m = build_uniform((0, 1, 0, 1), 4)
        # u = x on the non-periodic mesh: energy = |grad u|^2 * area = 1
        u = np.zeros(m.n_nodes)
        u[m.node_of_vertex] = m.vertices[:, 0]
        K = fem.p1_stiffness(m)
        assert np.isclose(u @ (K @ u), 1.0)


class TestRT0:
    def test_divergence_of_interior_edges_cancels(self):
        m = build_uniform((0, 1, 0, 1), 3)
        B = fem.rt0_divergence(m).toarray()
        interior = m.edge_elements[:, 1] >= 0
        assert np.allclose(B[:, interior].sum(axis=0), 0.0)
        assert np.all(np.abs(B[:, ~interior].sum(axis=0)) == 1.0)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_mass_spd(self, seed):
        m = build_uniform((0, 1, 0, 1), 3)
        rng = np.random.default_rng(seed)
        L = rng.normal(size=(m.n_elements, 2, 2))
        W = L @ np.transpose(L, (0, 2, 1)) + 0.1 * np.eye(2)
        M = fem.rt0_mass(m, W).toarray()
        assert np.allclose(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0

    def test_constant_field_reproduced(self):
        # the flux dofs of a constant vector c reproduce c as element average
        m = build_uniform((0, 1, 0, 1), 3)
        c = np.array([0.3, -1.2])
        t = m.edge_elements[:, 0]
        k = np.array([list(m.t2e[tt]).index(e) for e, tt in enumerate(t)])
        out = -2.0 * m.areas[t] * (m.grad_lambda[t, k] @ c)
        q = out * m.edge_signs[t, k]
        avg = fem.rt0_element_average(m, q)
        assert np.allclose(avg, c)


class TestCR:
    def test_constants_in_kernel(self):
        m = unit_cell(4)
        K = fem.cr_stiffness(m).toarray()
        assert np.allclose(K.sum(axis=1), 0.0)

    def test_mass_diagonal_total(self):
        m = unit_cell(4)
        assert np.isclose(fem.cr_mass(m).diagonal().sum(), 1.0)

    def test_divergence_of_constant_is_zero(self):
        m = unit_cell(4)
        Bx, By = fem.cr_divergence(m)
        assert np.allclose(Bx @ np.ones(m.n_edges), 0.0)
        assert np.allclose(By @ np.ones(m.n_edges), 0.0)
