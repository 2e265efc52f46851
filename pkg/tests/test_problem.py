import numpy as np
import pytest

from mrtopopt.elements import Material
from mrtopopt.mesh import MeshSpec, apply_problem, build_mesh
from mrtopopt.problem import ComplianceProblem, corrected_compliance, passive_design_mask


def make(problem="cb", shape=(4, 2, 2), n=1, d=1, r=1.5):
    spec = MeshSpec(*shape, n_mr=n, d_mr=d)
    mesh = build_mesh(spec)
    bc = apply_problem(problem, mesh)
    return spec, ComplianceProblem(mesh, bc, Material(), r, dict(levels=1, tol=1e-12))


def test_corrected_equals_raw_on_single_resolution():
    spec, prob = make()
    x = np.random.default_rng(0).uniform(0.1, 1, prob.n_design)
    ev = prob.evaluate(x)
    F = corrected_compliance(prob.rho, spec, "cb", prob.mat, solver_opts=dict(levels=1, tol=1e-12))
    assert F == pytest.approx(ev.f, rel=1e-9)


def test_fully_solid_is_stiffest():
    spec, prob = make(n=2, d=2, r=0.8)
    opts = dict(levels=1, tol=1e-12)
    F_sol = corrected_compliance(None, spec, "cb", prob.mat, solver_opts=opts, fully_solid=True)
    F_one = corrected_compliance(np.ones(spec.n_density), spec, "cb", prob.mat, solver_opts=opts)
    F_half = corrected_compliance(np.full(spec.n_density, 0.5), spec, "cb", prob.mat, solver_opts=opts)
    assert F_sol == pytest.approx(F_one)
    # SIMP: rho = 0.5 has stiffness 1/8, so compliance scales by 8
    assert F_half == pytest.approx(8 * F_one, rel=1e-4)


def test_passive_regions_pin_bounds():
    spec, prob = make("ls", (10, 10, 2), 2, 2, 0.8)
    void = passive_design_mask(prob.mesh, prob.bc.passive_void)
    assert void.sum() == prob.bc.passive_void.size
    assert np.all(prob.upper[void] == 0) and np.all(prob.lower[~void] == 0)
    x0 = prob.initial_point()
    assert np.all(x0[void] == 0)
    _, bd = make("bd", (20, 4, 2), 1, 1, 1.5)
    assert np.all(bd.lower[bd.solid_x] == 1)


def test_lift():
    _, prob = make(shape=(4, 2, 2), n=2, d=2, r=0.8)
    rho = np.random.default_rng(1).uniform(0, 1, prob.n_design)
    np.testing.assert_array_equal(prob.lift(rho), rho)
    _, prob = make(shape=(4, 2, 2), n=3, d=2, r=0.8)
    np.testing.assert_allclose(prob.lift(np.full(prob.mesh.spec.n_density, 0.3)), 0.3)


def test_fixing_bounds_and_evaluation_cache():
    _, prob = make()
    x = prob.initial_point()
    mask = np.zeros(prob.n_design, dtype=bool)
    mask[:3] = True
    prob.set_fixed(mask, np.full(prob.n_design, 0.7))
    assert np.all(prob.lower[:3] == 0.7) and np.all(prob.upper[:3] == 0.7)
    prob.evaluate(x)
    n = prob.n_evaluations
    prob.ensure_evaluated(x.copy())
    assert prob.n_evaluations == n
    g, a = prob.gradient()
    np.testing.assert_allclose(prob.lagrangian_density_gradient(2.0), prob.density_gradient() + 2.0 * prob.plan.volumes)
    assert np.all(g <= 0) and np.all(a > 0)
