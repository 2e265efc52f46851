"""Compliance minimization problem on a multiresolution mesh."""
from __future__ import annotations

import time

import numpy as np

from .elements import Material, subelement_stiffness
from .exceptions import ConfigurationError
from .filter import build_plan, compliance_gradient
from .linsolve import EquilibriumSolver
from .mesh import MeshSpec, apply_problem, build_mesh
from .slp import Evaluation


class Timers(dict):
    """Accumulated wall time per category."""

    def add(self, key, t0):
        self[key] = self.get(key, 0.0) + time.perf_counter() - t0


def passive_design_mask(mesh, density_idx):
    """Design variables whose centers fall inside the given density cells."""
    spec = mesh.spec
    mark = np.zeros(spec.n_density, dtype=bool)
    mark[density_idx] = True
    nx, ny, _ = mesh.density_shape
    g = np.floor(mesh.design_centers * spec.n_mr).astype(np.int64)
    return mark[g[:, 0] + nx * (g[:, 1] + ny * g[:, 2])]


class ComplianceProblem:
    """SLP callbacks for ``min f^T u(rho(x))  s.t.  sum v rho <= volfrac V``.

    Parameters
    ----------
    mesh : MeshTriple
    bc : BoundaryConditions
    mat : Material
    r_min : float
        Filter radius in displacement-element units.
    solver_opts : dict
        Passed to :class:`~mrtopopt.linsolve.EquilibriumSolver`.
    """

    def __init__(self, mesh, bc, mat=None, r_min=1.5, solver_opts=None, timers=None, filter_cap=None, plan=None):
        self.mesh = mesh
        self.bc = bc
        self.mat = mat or Material()
        self.timers = Timers() if timers is None else timers
        t0 = time.perf_counter()
        kw = {} if filter_cap is None else {"memory_cap": filter_cap}
        self._filter_kw = kw
        self.plan = build_plan(mesh, r_min, **kw) if plan is None else plan
        self.timers.add("prefilter", t0)
        spec = mesh.spec
        self.ksub = subelement_stiffness(spec.degree, spec.family, spec.n_mr, self.mat.nu)
        self.solver = EquilibriumSolver(mesh, self.ksub, bc, self.mat, timers=self.timers, **(solver_opts or {}))
        self.V = float(self.plan.volumes.sum())
        self.V_max = bc.volfrac * self.V
        self.void_x = passive_design_mask(mesh, bc.passive_void)
        self.solid_x = passive_design_mask(mesh, bc.passive_solid)
        self.base_lower = np.where(self.solid_x, 1.0, 0.0)
        self.base_upper = np.where(self.void_x, 0.0, 1.0)
        self.lower = self.base_lower.copy()
        self.upper = self.base_upper.copy()
        self.fixed = np.zeros(spec.n_design, dtype=bool)
        self.x = self.rho = None
        self._grad = None
        self.n_evaluations = 0

    @property
    def n_design(self):
        return self.mesh.spec.n_design

    def initial_point(self):
        x = np.full(self.n_design, self.bc.volfrac)
        return np.clip(x, self.lower, self.upper)

    def set_fixed(self, mask, x):
        """Pin the masked design variables at their values in ``x``."""
        mask = np.asarray(mask, dtype=bool) & ~(self.void_x | self.solid_x)
        self.fixed = mask
        self.lower = np.where(mask, x, self.base_lower)
        self.upper = np.where(mask, x, self.base_upper)

    def rebuild_filter(self, r_min):
        t0 = time.perf_counter()
        self.plan = build_plan(self.mesh, r_min, **self._filter_kw)
        self.timers.add("prefilter", t0)
        self._grad = None

    def density(self, x):
        t0 = time.perf_counter()
        rho = self.plan.project(x)
        self.timers.add("filter", t0)
        return rho

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        rho = self.density(x)
        u = self.solver.solve(rho)
        self.n_evaluations += 1
        self.x, self.rho, self._grad = x.copy(), rho, None
        f = self.solver.compliance(u)
        vol = float(self.plan.volumes @ rho)
        return Evaluation(f, vol - self.V_max, vol / self.V, self.solver.last_iterations)

    def ensure_evaluated(self, x):
        """Re-evaluate unless ``x`` is the point evaluated last."""
        if self.x is None or not np.array_equal(self.x, x):
            self.evaluate(x)

    def gradient(self):
        if self._grad is None:
            t0 = time.perf_counter()
            self._grad = compliance_gradient(self.solver.u, self.rho, self.plan, self.mesh, self.ksub, self.mat)
            self.timers.add("gradients", t0)
        gx, _ = self._grad
        return gx, self.plan.volume_jacobian

    def density_gradient(self):
        """``df/drho`` at the last evaluated point."""
        self.gradient()
        return self._grad[1]

    def lagrangian_density_gradient(self, lam):
        return self.density_gradient() + lam * self.plan.volumes

    def lift(self, rho):
        """Design vector whose projection approximates the density ``rho``."""
        spec = self.mesh.spec
        if spec.d_mr == spec.n_mr:
            return np.clip(np.asarray(rho, dtype=float), self.lower, self.upper)
        WT = self.plan.WT
        colsum = np.asarray(WT.sum(axis=1)).ravel()
        x = (WT @ rho) / colsum
        return np.clip(x, self.lower, self.upper)


def corrected_compliance(rho, spec, problem, mat, bc_params=None, solver_opts=None, fully_solid=False):
    """Compliance of ``rho`` evaluated with one linear element per density cell.

    With ``fully_solid=True`` returns the compliance of the all-solid domain
    (passive void cells excluded) instead.
    """
    n = spec.n_mr
    fine_spec = MeshSpec(n * spec.nelx, n * spec.nely, n * spec.nelz, 1, 1, 1, "lagrange")
    fine = build_mesh(fine_spec)
    bc = apply_problem(problem, fine, scale=n, **(bc_params or {}))
    if fully_solid:
        rho = np.ones(fine_spec.n_elements)
        rho[bc.passive_void] = 0.0
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (fine_spec.n_elements,):
        raise ConfigurationError("density vector does not match the density mesh")
    ksub = subelement_stiffness(1, "lagrange", 1, mat.nu)
    solver = EquilibriumSolver(fine, ksub, bc, mat, **(solver_opts or {}))
    u = solver.solve(rho)
    return solver.compliance(u)
