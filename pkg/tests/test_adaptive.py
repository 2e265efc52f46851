import itertools

import numpy as np
import pytest

from mrtopopt import TopologyOptimizer
from mrtopopt.adaptive import (
    MIXED,
    SOLID,
    VOID,
    FixConfig,
    RefreshHook,
    apply_fixing,
    classify_elements,
    release_fixing,
    select_fixed,
    surrounded,
)
from mrtopopt.elements import Material
from mrtopopt.exceptions import ConfigurationError
from mrtopopt.mesh import MeshSpec, apply_problem, build_mesh
from mrtopopt.problem import ComplianceProblem


def brute_surrounded(classes, shape, label):
    nx, ny, nz = shape
    out = np.zeros(len(classes), dtype=bool)
    for e in range(len(classes)):
        i, j, k = e % nx, (e // nx) % ny, e // (nx * ny)
        if classes[e] != label:
            continue
        ok = True
        for di, dj, dk in itertools.product((-1, 0, 1), repeat=3):
            a, b, c = i + di, j + dj, k + dk
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and classes[a + nx * (b + ny * c)] != label:
                ok = False
        out[e] = ok
    return out


def test_surrounded_matches_brute_force():
    rng = np.random.default_rng(0)
    shape = (5, 4, 3)
    for _ in range(20):
        classes = rng.choice([MIXED, VOID, SOLID], size=60, p=[0.1, 0.6, 0.3])
        for label in (VOID, SOLID):
            np.testing.assert_array_equal(surrounded(classes, shape, label), brute_surrounded(classes, shape, label))


def test_classify_elements():
    mesh = build_mesh(MeshSpec(3, 1, 1, n_mr=2, d_mr=2))
    rho = np.zeros(mesh.spec.n_density)
    g = np.zeros(mesh.spec.n_design)
    rho[mesh.elem_density[1]] = 0.95
    rho[mesh.elem_density[2]] = 0.95
    g[mesh.elem_design[1]] = -1.0
    g[mesh.elem_design[2]] = -1.0
    # one sub-cell below the solid cutoff makes element 2 mixed
    rho[mesh.elem_density[2, 0]] = 0.5
    np.testing.assert_array_equal(classify_elements(rho, g, mesh), [VOID, SOLID, MIXED])
    # a void element whose gradient asks for material is not void
    g[mesh.elem_design[0, 3]] = -1.0
    assert classify_elements(rho, g, mesh)[0] == MIXED


def test_fix_config():
    assert FixConfig().degrees() == [(1, "lagrange"), (2, "lagrange")]
    assert FixConfig(max_degree=3, family="serendipity").degrees()[-1] == (3, "serendipity")
    for kw in (dict(strategy="E9"), dict(max_degree=3), dict(rho_low=0.95), dict(refresh=0)):
        with pytest.raises(ConfigurationError):
            FixConfig(**kw)
    assert FixConfig(strategy="e2").strategy == "E2"


@pytest.mark.parametrize("strategy,expected", [("E1", []), ("E2", [1, 2, 3, 4, 5, 6]), ("E3", [2, 4, 6]), ("E4", [2])])
def test_refresh_schedule(strategy, expected):
    hook = RefreshHook(None, FixConfig(strategy=strategy, refresh=2))
    assert [k for k in range(1, 7) if hook.due(k)] == expected


def _half_solid_problem():
    mesh = build_mesh(MeshSpec(8, 4, 4, n_mr=2, d_mr=2, degree=2))
    bc = apply_problem("cb", mesh)
    mat = Material(Emin=1e-9)
    prob = ComplianceProblem(mesh, bc, mat, r_min=0.6, solver_opts=dict(levels=2))
    x = np.where(mesh.design_centers[:, 0] < 4, 1.0, 0.0)
    prob.evaluate(x)
    return prob, x


def brute_suppressed(mesh, bc, fixed_void):
    out = []
    for n in range(mesh.n_nodes):
        els = np.flatnonzero(np.any(mesh.conn == n, axis=1))
        if els.size and np.all(fixed_void[els]):
            if np.any(bc.f[3 * n:3 * n + 3] != 0) or np.isin(3 * n, bc.fixed_dofs):
                continue
            out.extend([3 * n, 3 * n + 1, 3 * n + 2])
    return np.array(out)


def test_fixing_on_a_split_design():
    prob, x = _half_solid_problem()
    state, changed = apply_fixing(prob, x, FixConfig())
    mesh = prob.mesh
    cx = mesh.element_ijk()[:, 0]
    assert changed
    # the narrow filter leaks ~3.5% density into layer 4 only; erosion drops its neighbors
    assert np.all(state.classes[cx == 3] == SOLID) and np.all(state.classes[cx == 4] == MIXED)
    assert np.all(state.fixed_elements[(cx <= 2) | (cx >= 6)])
    assert not np.any(state.fixed_elements[(cx >= 3) & (cx <= 5)])
    fixed_void = state.fixed_elements & (state.classes == VOID)
    np.testing.assert_array_equal(state.suppressed_dofs, brute_suppressed(mesh, prob.bc, fixed_void))
    # pinned variables keep their values
    fx = state.fixed_design
    assert np.all(prob.lower[fx] == x[fx]) and np.all(prob.upper[fx] == x[fx])
    u = prob.solver.solve(prob.rho)
    assert np.all(u[state.suppressed_dofs] == 0)
    release_fixing(prob)
    assert not prob.fixed.any() and prob.solver.suppressed.size == 0


def test_select_fixed_protects_load_and_supports():
    prob, x = _half_solid_problem()
    g, _ = prob.gradient()
    classes = np.full(prob.mesh.n_elements, VOID, dtype=np.int8)
    state = select_fixed(classes, prob.mesh, prob.bc)
    protected = np.union1d(prob.bc.fixed_dofs, np.flatnonzero(prob.bc.f))
    assert np.intersect1d(state.suppressed_dofs, protected).size == 0
    assert state.fixed_design.all()


def test_escalation_records_stages():
    kw = dict(problem="cb", nel=(8, 4, 4), nmr=2, dmr=2, mode="adaptive", threshold=False, correct=False,
              mg_levels=3, max_outer=6)
    est = TopologyOptimizer(strategy="E4", refresh=2, **kw).fit()
    names = [s["stage"] for s in est.report_.stages]
    assert names == ["deg1", "deg2"]
    events = [e[0] for e in est.report_.fix_events]
    assert events[0] == "deg2 it0"
    assert est.problem_.mesh.spec.degree == 2
    assert est.problem_.mat.Emin == pytest.approx(1e-9)
    e0 = TopologyOptimizer(strategy="E0", **kw).fit()
    assert e0.report_.fix_events == []


def test_adaptive_requires_linear_start():
    with pytest.raises(ConfigurationError):
        TopologyOptimizer(mode="adaptive", degree=2, nmr=2, dmr=2).fit()
