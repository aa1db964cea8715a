import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.adaptivity import (
    ActiveSet,
    MicroMeshes,
    copy_method,
    distance_update,
    micro_adapt,
    transfer,
    update_active_sets,
)
from twoscale.mesh import Field, ancestors, project, unit_cell
from twoscale.phasefield import ChemistryParams, SolverKnobs, circle_field, porosity, solve_phasefield

P = ChemistryParams()
COARSE = unit_cell(10)


def meshes(theta=2.0, h_min=None):
    return MicroMeshes(COARSE, h_min or P.lam / 3, theta, P.lam)


class TestDistance:
    def test_zero_stays_zero(self):
        assert distance_update(0.0, 0.0, 0.0, 0.01, 0.1) == 0.0

    def test_no_forgetting_accumulates(self):
        d = 0.0
        for n in range(1, 8):
            d = distance_update(d, 0.5, 0.5, 0.01, 0.0)
            assert np.isclose(d, 0.01 * n)

    def test_decay(self):
        assert np.isclose(distance_update(1.0, 0.0, 0.0, 0.01, 0.1), np.exp(-0.001))

    def test_accumulate_matrix(self):
        a = ActiveSet(3, Lambda=0.0, C_r=0.1)
        u = np.array([0.0, 0.1, 0.4])
        phis = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
        a.accumulate(u, phis, 0.5, cell_area=np.array([0.5, 0.5]))
        want = 0.5 * (np.abs(u[:, None] - u[None]) + 0.5 * np.abs(phis[:, None, 0] - phis[None, :, 0]))
        assert np.allclose(a.dE, want)
        assert np.allclose(a.dE, a.dE.T)


class TestActiveSet:
    def test_first_update_activates_one_point(self):
        # all distances vanish: the first point becomes active, all others copy it
        a = update_active_sets(ActiveSet(6, C_r=0.05))
        assert a.active.sum() == 1 and a.active[0]
        assert np.all(a.assoc == 0)

    def test_zero_tolerance_activates_everything(self):
        a = ActiveSet(5, C_r=0.0).update()
        assert a.active.all()
        assert np.array_equal(a.assoc, np.arange(5))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.floats(0.01, 0.9), st.floats(0.0, 0.9))
    def test_partition_and_association(self, seed, n, C_r, C_c):
        rng = np.random.default_rng(seed)
        a = ActiveSet(n, C_r=C_r, C_c=C_c)
        a.active = rng.random(n) < 0.5
        X = rng.random((n, 2))
        a.dE = np.abs(X[:, None] - X[None]).sum(-1)
        a.update()
        act = a.active_ids
        assert act.size >= 1
        assert np.all(a.active[a.assoc])
        assert np.array_equal(a.assoc[act], act)
        # every inactive point is within tol_r of its partner, which is its nearest active one
        tol_r, _ = a.tolerances()
        for i in a.inactive_ids:
            d = a.dE[i, act]
            assert a.dE[i, a.assoc[i]] == d.min()
            assert d.min() <= tol_r

    def test_copy_method(self):
        a = ActiveSet(4).set_fixed([True, False, True, False], [0, 2, 2, 0])
        assert copy_method(a, ["a", "b", "c", "d"]) == ["a", "c", "c", "a"]

    def test_set_fixed_validates(self):
        with pytest.raises(ValueError):
            ActiveSet(3).set_fixed([True, False, False], [0, 2, 0])

    def test_parameters_validated(self):
        with pytest.raises(ValueError):
            ActiveSet(2, C_c=1.0)
        with pytest.raises(ValueError):
            ActiveSet(2, C_r=-1)


class TestMicroMeshes:
    def test_band(self):
        m = meshes(2.0)
        assert np.allclose(m.band, (0.16, 0.84))
        with pytest.raises(ValueError):
            MicroMeshes(COARSE, 0.02, 1 / (2 * P.lam), P.lam)

    def test_constant_field_keeps_coarse_mesh(self):
        m = meshes()
        one = Field(COARSE, np.ones(COARSE.n_nodes), "P1")
        assert m.adapt(one) is COARSE

    def test_band_resolved(self):
        m = meshes()
        phi = m.initial(circle_field(None, 0.5, P.lam))
        mesh = phi.mesh
        assert mesh.n_elements > COARSE.n_elements
        # everything inside a marked coarse element is at the target size
        inside = m.mark(phi)[ancestors(mesh, COARSE)]
        assert inside.any() and not inside.all()
        assert np.all(mesh.shortest_edges[inside] <= m.h_min * (1 + 1e-9))
        assert phi.values.min() >= 0 and phi.values.max() <= 1

    def test_wider_band_refines_more(self):
        prof = circle_field(None, 0.5, P.lam)
        counts = [meshes(th).initial(prof).mesh.n_elements for th in (5.0, 2.0, 0.5)]
        assert counts[0] <= counts[1] <= counts[2]

    def test_caching(self):
        m = meshes()
        phi = m.initial(circle_field(None, 0.5, P.lam))
        assert m.adapt(phi) is m.adapt(phi)
        assert m.union(phi.mesh, COARSE) is m.union(phi.mesh, COARSE)

    def test_pickle_drops_caches(self):
        m = meshes()
        m.initial(circle_field(None, 0.5, P.lam))
        c = pickle.loads(pickle.dumps(m))
        assert c._bisections == {} and c._unions == {}
        assert c.h_min == m.h_min


class TestMicroAdapt:
    def solver(self, u):
        knobs = SolverKnobs(L_coup=0.0)
        return lambda prev, outer: solve_phasefield(prev, outer, u, 0.01, knobs, P)

    def test_full_fluid(self):
        m = meshes()
        one = Field(COARSE, np.ones(COARSE.n_nodes), "P1")
        phi, mesh, its = micro_adapt(one, self.solver(0.0), m)
        assert mesh is COARSE
        assert np.allclose(phi.values, 1.0)

    def test_dissolution_step(self):
        m = meshes()
        phi0 = m.initial(circle_field(None, 0.5, P.lam))
        phi1, mesh, its = micro_adapt(phi0, self.solver(0.0), m)
        assert phi1.mesh is mesh
        assert its >= 1
        assert porosity(phi1) > porosity(phi0)
        assert phi1.values.min() >= 0 and phi1.values.max() <= 1

    def test_transfer(self):
        m = meshes()
        phi = m.initial(circle_field(None, 0.5, P.lam))
        assert transfer(phi, phi.mesh) is phi
        raw = project(phi, COARSE)
        back = transfer(phi, COARSE)
        # L2 projection overshoots; the transfer clamps it back into [0, 1]
        assert raw.values.max() > 1
        assert np.array_equal(back.values, np.clip(raw.values, 0, 1))
