import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrtopopt.elements import Material, subelement_stiffness
from mrtopopt.exceptions import ConfigurationError, InvalidStateError, ResourceError
from mrtopopt.filter import (
    build_plan,
    compliance_density_gradient,
    element_energies,
    filter_weight,
    threshold_radius,
)
from mrtopopt.linsolve import EquilibriumSolver
from mrtopopt.mesh import MeshSpec, apply_problem, build_mesh


def dense_filter(mesh, r_min):
    d = np.linalg.norm(mesh.density_centers[:, None, :] - mesh.design_centers[None, :, :], axis=2)
    s = r_min / 3
    w = np.where(d <= r_min + 1e-12, np.exp(-d ** 2 / (2 * s * s)) / (2 * math.pi * s), 0.0)
    return w / w.sum(axis=1, keepdims=True)


def test_weight_values():
    # s = r_min / 3 = 0.5 gives a peak of 1 / pi
    assert filter_weight(0.0, 1.5) == pytest.approx(1 / math.pi)
    assert filter_weight(1.5, 1.5) == pytest.approx(math.exp(-4.5) / math.pi)
    assert filter_weight(1.5 + 1e-6, 1.5) == 0.0


@pytest.mark.parametrize("n,d,r", [(1, 1, 1.5), (2, 2, 0.6), (2, 2, 1.5), (3, 2, 1.2), (4, 2, 0.9), (3, 3, 2.0)])
def test_matches_dense_oracle(n, d, r):
    mesh = build_mesh(MeshSpec(4, 3, 2, n_mr=n, d_mr=d))
    plan = build_plan(mesh, r)
    np.testing.assert_allclose(plan.W.toarray(), dense_filter(mesh, r), atol=1e-14)
    np.testing.assert_allclose(plan.WT.toarray(), plan.W.toarray().T)
    np.testing.assert_allclose(plan.volume_jacobian, plan.W.T @ plan.volumes)


def test_rows_are_stochastic():
    mesh = build_mesh(MeshSpec(5, 3, 2, n_mr=3, d_mr=2))
    plan = build_plan(mesh, 1.3)
    np.testing.assert_allclose(np.asarray(plan.W.sum(axis=1)).ravel(), 1.0)
    np.testing.assert_allclose(plan.project(np.full(plan.n_design, 0.37)), 0.37)


_MESH = build_mesh(MeshSpec(3, 2, 2, n_mr=2, d_mr=2))
_PLAN = build_plan(_MESH, 1.1)
unit = arrays(np.float64, _PLAN.n_design, elements=st.floats(0, 1))


@settings(max_examples=50, deadline=None)
@given(unit, unit)
def test_projection_monotone_and_bounded(x, y):
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    r_lo, r_hi = _PLAN.project(lo), _PLAN.project(hi)
    assert np.all(r_lo <= r_hi + 1e-15)
    assert np.all((r_lo >= 0) & (r_hi <= 1))


@settings(max_examples=30, deadline=None)
@given(unit, arrays(np.float64, _PLAN.n_density, elements=st.floats(-10, 10)))
def test_backpropagate_is_adjoint(x, g):
    assert _PLAN.backpropagate(g) @ x == pytest.approx(g @ (_PLAN.W @ x), abs=1e-9)


def test_memory_cap():
    mesh = build_mesh(MeshSpec(4, 4, 4, n_mr=2, d_mr=2))
    with pytest.raises(ResourceError):
        build_plan(mesh, 3.0, memory_cap=1000)


def test_radius_validation():
    mesh = build_mesh(MeshSpec(2, 2, 2, n_mr=4, d_mr=2))
    with pytest.raises(ConfigurationError):
        build_plan(mesh, 0.0)
    # density centers sit 0.22 from the nearest design center
    with pytest.raises(ConfigurationError):
        build_plan(mesh, 0.1)


def test_threshold_radius():
    assert threshold_radius(1.5, 2) == pytest.approx(0.55)
    assert threshold_radius(0.3, 2) == 0.3


def _solved(n_mr=2):
    mesh = build_mesh(MeshSpec(4, 2, 2, n_mr=n_mr, d_mr=n_mr))
    bc = apply_problem("cb", mesh)
    mat = Material()
    ksub = subelement_stiffness(1, "lagrange", n_mr, mat.nu)
    solver = EquilibriumSolver(mesh, ksub, bc, mat, levels=1, tol=1e-13)
    rho = np.random.default_rng(0).uniform(0.3, 1.0, mesh.spec.n_density)
    return mesh, ksub, mat, solver, rho


def test_element_energies_dense():
    mesh, ksub, _, solver, rho = _solved()
    u = solver.solve(rho)
    en = element_energies(u, mesh, ksub, chunk=3)
    for e in (0, 5, mesh.n_elements - 1):
        ue = u[mesh.edofs[e]]
        for i in range(ksub.shape[0]):
            assert en[e, i] == pytest.approx(ue @ ksub[i] @ ue, rel=1e-12, abs=1e-300)


def test_density_gradient_finite_differences():
    mesh, ksub, mat, solver, rho = _solved()
    u = solver.solve(rho, warm=False)
    g = compliance_density_gradient(u, rho, mesh, ksub, mat)
    h = 1e-6
    for i in (0, 7, 31, rho.size - 1):
        rp, rm = rho.copy(), rho.copy()
        rp[i] += h
        rm[i] -= h
        fp = solver.compliance(solver.solve(rp, warm=False).copy())
        fm = solver.compliance(solver.solve(rm, warm=False).copy())
        assert g[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-5)


def test_gradient_requires_solution():
    mesh, ksub, mat, _, rho = _solved()
    with pytest.raises(InvalidStateError):
        compliance_density_gradient(None, rho, mesh, ksub, mat)
    with pytest.raises(InvalidStateError):
        compliance_density_gradient(np.full(mesh.n_dofs, np.nan), rho, mesh, ksub, mat)
