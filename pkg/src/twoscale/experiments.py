"""Experiment drivers: full runs, error studies against reference runs, and
parameter sweeps.  Everything written to disk is plain CSV or legacy VTK.
"""
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptivity import MicroMeshes, micro_adapt
from .coupling import CouplingState, shape_profile
from .config import parse_shape
from .macro import line_profile
from .mesh import evaluate, interpolate, unit_cell, write_vtk
from .phasefield import ChemistryParams, SolverKnobs, l2_norm, porosity, solve_phasefield

log = logging.getLogger(__name__)

STEP_COLUMNS = [
    "n", "t", "coupling_iters", "mean_micro_iters", "active_fraction",
    "u_min", "u_max", "por_min", "por_max", "mean_cell_elements",
]
TENSOR_COLUMNS = ["element", "x", "y", "A11", "A12", "A22", "K11", "K12", "K21", "K22", "porosity"]


@dataclass
class RunReport:
    """Result of :func:`run`.

    ``u_hist`` and ``por_hist`` have one row per time level (initial state
    first); ``active_hist`` one row per step.
    """

    config: object
    state: object
    rows: list = field(default_factory=list)
    u_hist: np.ndarray = None
    por_hist: np.ndarray = None
    active_hist: np.ndarray = None
    eps_history: dict = field(default_factory=dict)
    wall_time: float = 0.0
    files: dict = field(default_factory=dict)

    @property
    def mesh(self):
        return self.state.mesh

    @property
    def mean_active(self):
        """Mean number of active points per step."""
        if self.active_hist is None or len(self.active_hist) == 0:
            return float(self.mesh.n_elements)
        return float(self.active_hist.sum(axis=1).mean())

    def activity(self):
        """Percentage of steps each element was active."""
        if self.active_hist is None or len(self.active_hist) == 0:
            return np.zeros(self.mesh.n_elements)
        return 100.0 * self.active_hist.mean(axis=0)


def run(cfg, output_dir=None, snapshot_every=None, on_step=None):
    """Execute the time loop of ``cfg``; optionally write all outputs.

    ``on_step(state)`` is called after every committed step.
    """
    output_dir = output_dir if output_dir is not None else cfg.output_dir
    snapshot_every = cfg.snapshot_every if snapshot_every is None else snapshot_every
    t0 = time.time()
    state = CouplingState(cfg)
    u_hist = [state.macro.u.values.copy()]
    por_hist = [state.macro.porosity.copy()]
    active = []
    out = Path(output_dir) if output_dir else None
    report = RunReport(cfg, state)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _snapshot(out, state, report)
    for _ in range(cfg.n_steps):
        state.time_step()
        u_hist.append(state.macro.u.values.copy())
        por_hist.append(state.macro.porosity.copy())
        active.append(state.aset.active.copy())
        if out and snapshot_every and state.n % snapshot_every == 0:
            _snapshot(out, state, report)
        if on_step:
            on_step(state)
    report.rows = list(state.records)
    report.u_hist = np.array(u_hist)
    report.por_hist = np.array(por_hist)
    report.active_hist = np.array(active, dtype=bool).reshape(len(active), state.mesh.n_elements)
    report.eps_history = dict(state.eps_history)
    report.wall_time = time.time() - t0
    if out:
        write_report(report, out)
    return report


def _snapshot(out, state, report):
    path = out / f"macro_{state.n:04d}.vtk"
    cells = {"u": state.macro.u.values, "p": state.macro.p.values, "porosity": state.macro.porosity}
    A = np.array([s.tensors.A for s in state.states])
    cells.update(A11=A[:, 0, 0], A22=A[:, 1, 1])
    if state.cfg.flow:
        K = np.array([s.tensors.K for s in state.states])
        cells.update(K11=K[:, 0, 0], K22=K[:, 1, 1])
    write_vtk(path, state.mesh, cell_data=cells, title=f"{state.cfg.name} n={state.n}")
    report.files.setdefault("snapshots", []).append(str(path))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def write_report(report, out):
    """Write steps, convergence, tensors, 1D profile and activity CSVs."""
    out = Path(out)
    state = report.state
    f = report.files
    f["steps"] = _write_csv(
        out / "steps.csv", STEP_COLUMNS, [[getattr(r, c) for c in STEP_COLUMNS] for r in report.rows]
    )
    f["convergence"] = _write_csv(
        out / "convergence.csv",
        ["n", "i", "eps_M"],
        [[n, i + 1, e] for n, eps in sorted(report.eps_history.items()) for i, e in enumerate(eps)],
    )
    c = state.mesh.centroids
    f["tensors"] = _write_csv(
        out / "tensors.csv",
        TENSOR_COLUMNS,
        [[k, c[k, 0], c[k, 1], *s.tensors.row()] for k, s in enumerate(state.states)],
    )
    A = np.array([s.tensors.A for s in state.states])
    K = np.array([s.tensors.K for s in state.states])
    cols = {
        "u": state.macro.u.values,
        "p": state.macro.p.values,
        "porosity": state.macro.porosity,
        "A11": A[:, 0, 0],
        "A22": A[:, 1, 1],
        "K11": K[:, 0, 0],
        "K22": K[:, 1, 1],
    }
    x = None
    prof = []
    for name, v in cols.items():
        x, m = line_profile(state.mesh, v, axis=0)
        prof.append(m)
    f["profile"] = _write_csv(out / "profile.csv", ["x", *cols], np.column_stack([x, *prof]).tolist())
    act = report.activity()
    f["activity"] = _write_csv(
        out / "activity.csv", ["element", "x", "y", "percent_active"], [[k, c[k, 0], c[k, 1], act[k]] for k in range(len(act))]
    )
    return f


# -- errors ---------------------------------------------------------------------
def space_time_l2(diff_hist, areas, dt):
    """sqrt(sum_n dt sum_T |T| d_n(T)^2) over the time levels n >= 1."""
    d = np.asarray(diff_hist, dtype=float)[1:]
    return float(np.sqrt(dt * np.sum(d * d * np.asarray(areas)[None, :])))


def compare_runs(report, reference):
    """Table-2 style row of ``report`` against a reference run."""
    if report.mesh.n_elements != reference.mesh.n_elements or not np.allclose(
        report.mesh.centroids, reference.mesh.centroids
    ):
        raise ValueError("runs live on different macro meshes")
    if report.u_hist.shape != reference.u_hist.shape:
        raise ValueError("runs cover different time levels")
    areas = report.mesh.areas
    dt = report.config.dt
    E_u = space_time_l2(report.u_hist - reference.u_hist, areas, dt)
    N_u = space_time_l2(reference.u_hist, areas, dt)
    E_p = space_time_l2(report.por_hist - reference.por_hist, areas, dt)
    N_p = space_time_l2(reference.por_hist, areas, dt)
    n = report.mesh.n_elements
    return {
        "active": report.mean_active,
        "pct_active": 100.0 * report.mean_active / n,
        "E_u": E_u,
        "pct_E_u": 100.0 * E_u / N_u if N_u > 0 else 0.0,
        "E_por": E_p,
        "pct_E_por": 100.0 * E_p / N_p if N_p > 0 else 0.0,
    }


def error_study(cfg, ref_cfg, reference=None):
    """Run ``cfg`` and compare with ``ref_cfg`` (or a finished reference)."""
    if tuple(cfg.macro_domain) != tuple(ref_cfg.macro_domain) or tuple(cfg.macro_n) != tuple(ref_cfg.macro_n):
        raise ValueError("configuration and reference use different macro domains")
    if cfg.dt != ref_cfg.dt or cfg.T != ref_cfg.T:
        raise ValueError("configuration and reference use different time grids")
    reference = reference or run(ref_cfg, output_dir="")
    return compare_runs(run(cfg, output_dir=""), reference), reference


def sweep(cfg, key, values, reference=None, ref_cfg=None):
    """Run ``cfg`` with ``key`` set to each value; returns a list of rows.

    With a reference (report or config), every row also carries the
    Table-2 error columns.
    """
    if ref_cfg is not None and reference is None:
        reference = run(ref_cfg, output_dir="")
    rows = []
    for v in values:
        c = cfg.replace(**{key: v, "output_dir": None})
        rep = run(c, output_dir="")
        row = {key: v, "wall_time": rep.wall_time, "active": rep.mean_active}
        if reference is not None:
            row.update(compare_runs(rep, reference))
        rows.append(row)
    return rows


ERROR_COLUMNS = ["active", "pct_active", "E_u", "pct_E_u", "E_por", "pct_E_por"]
CELL_STUDY_COLUMNS = ["theta_r", "elements", "pct_elements", "E_phi", "pct_E_phi"]


# -- micro-scale study ------------------------------------------------------------
@dataclass
class CellStudy:
    """Single-cell phase-field evolution at fixed u, adaptive vs a fine mesh."""

    u: float = 0.0
    dt: float = 0.01
    T: float = 0.25
    shape: str = "circle(0.5)"
    coarse_n: int = 10
    reference_n: int = 60
    h_min: float = None
    params: ChemistryParams = field(default_factory=ChemistryParams)
    knobs: SolverKnobs = field(default_factory=lambda: SolverKnobs(L_coup=0.0))

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def profile(self):
        return shape_profile(parse_shape(self.shape), self.params.lam)

    def _solve(self, prev, outer):
        return solve_phasefield(prev, outer, self.u, self.dt, self.knobs, self.params)

    def reference(self):
        """Phase fields on the uniform reference mesh, one per time level."""
        mesh = unit_cell(self.reference_n)
        phi = interpolate(self.profile(), mesh)
        phi = type(phi)(mesh, np.clip(phi.values, 0.0, 1.0), "P1")
        out = [phi]
        for _ in range(self.n_steps):
            phi, _ = self._solve(phi, phi)
            out.append(phi)
        return out

    def adaptive(self, theta_r):
        """Phase fields and element counts of the adaptive run."""
        h_min = self.h_min if self.h_min is not None else self.params.lam / 3.0
        meshes = MicroMeshes(unit_cell(self.coarse_n), h_min, theta_r, self.params.lam)
        phi = meshes.initial(self.profile())
        fields, counts, iters = [phi], [], []
        for _ in range(self.n_steps):
            phi, mesh, its = micro_adapt(phi, self._solve, meshes)
            fields.append(phi)
            counts.append(mesh.n_elements)
            iters.append(its)
        return fields, counts, iters

    def errors(self, fields, reference):
        """Space-time L2 error of the adaptive run on the reference mesh."""
        ref_mesh = reference[0].mesh
        pts = ref_mesh.vertices
        e2 = r2 = 0.0
        for f, r in zip(fields[1:], reference[1:]):
            v = np.zeros(ref_mesh.n_nodes)
            v[ref_mesh.node_of_vertex] = evaluate(f, pts)
            e2 += self.dt * l2_norm(ref_mesh, v - r.values) ** 2
            r2 += self.dt * l2_norm(ref_mesh, r.values) ** 2
        return float(np.sqrt(e2)), float(np.sqrt(e2 / r2))

    def table(self, thetas, reference=None):
        """Table-1 style rows for the given band parameters."""
        reference = reference or self.reference()
        n_ref = reference[0].mesh.n_elements
        rows = []
        for th in thetas:
            fields, counts, iters = self.adaptive(th)
            E, rel = self.errors(fields, reference)
            rows.append(
                {
                    "theta_r": th,
                    "elements": float(np.mean(counts)),
                    "pct_elements": 100.0 * np.mean(counts) / n_ref,
                    "E_phi": E,
                    "pct_E_phi": 100.0 * rel,
                    "porosity": porosity(fields[-1]),
                    "mean_iters": float(np.mean(iters)),
                }
            )
        return rows


def write_rows(path, rows, columns=None):
    columns = columns or list(rows[0])
    return _write_csv(path, columns, [[r.get(c, "") for c in columns] for r in rows])
