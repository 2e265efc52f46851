import numpy as np
import pytest
from scipy.optimize import brentq

from mrtopopt.exceptions import ConfigurationError
from mrtopopt.slp import (
    Evaluation,
    SlpConfig,
    SlpDriver,
    feasibility_restoration,
    infeasibility,
    lp_subproblem,
    merit_reductions,
    projected_gradient,
    solve_step,
    theta_large,
    theta_sup,
    trust_region_update,
    update_theta,
)


def test_lp_inactive_constraint():
    s, lam = lp_subproblem([1.0, -1.0], [1.0, 1.0], 0.0, [-1, -1], [1, 1])
    np.testing.assert_array_equal(s, [-1, 1])
    assert lam == 0.0


def test_lp_active_constraint():
    # min -s1 - 2 s2 s.t. s1 + s2 <= 0 on [-1, 1]^2: spend the budget on s2
    s, lam = lp_subproblem([-1.0, -2.0], [1.0, 1.0], 0.0, [-1, -1], [1, 1])
    np.testing.assert_allclose(s, [-1, 1])
    assert 1.0 <= lam <= 2.0


def test_lp_fractional_variable():
    s, lam = lp_subproblem([-3.0, -1.0], [2.0, 1.0], -1.0, [0, 0], [1, 1])
    # ratios g/a: -1.5 and -1 ; s1 = 0.5 fills a^T s = 1
    np.testing.assert_allclose(s, [0.5, 0.0])
    assert lam == pytest.approx(1.5)


def test_lp_infeasible():
    assert lp_subproblem([1.0], [1.0], 5.0, [-1.0], [1.0]) == (None, None)


def test_lp_kkt_on_random_problems():
    rng = np.random.default_rng(8)
    for _ in range(300):
        n = int(rng.integers(1, 30))
        g, a = rng.normal(size=n), rng.normal(size=n)
        lo, hi = -rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        c0 = rng.normal(scale=0.5)
        s, lam = lp_subproblem(g, a, c0, lo, hi)
        if s is None:
            continue
        assert lam >= 0
        r = a @ s + c0
        assert r <= 1e-10
        if lam > 0:
            assert abs(r) < 1e-10
        red = g + lam * a
        tol = 1e-9
        assert np.all((red <= tol) | (s <= lo + tol))
        assert np.all((red >= -tol) | (s >= hi - tol))


def test_restoration_reaches_boundary():
    a = np.array([1.0, 2.0])
    s = feasibility_restoration(a, 1.0, np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    assert a @ s + 1.0 == pytest.approx(0.0, abs=1e-14)
    # too far to reach: the most decreasing corner
    s = feasibility_restoration(a, 10.0, np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(s, [-1, -1])
    assert np.all(feasibility_restoration(a, -1.0, -np.ones(2), np.ones(2)) == 0)


def test_solve_step_falls_back_to_restoration():
    x = np.array([0.5, 0.5])
    res = solve_step(np.array([1.0, 1.0]), np.array([1.0, 1.0]), 1.0, x, np.zeros(2), np.ones(2), 0.1)
    assert res.restored and not res.feasible
    np.testing.assert_allclose(res.s, [-0.08, -0.08])
    res = solve_step(np.array([1.0, 1.0]), np.array([1.0, 1.0]), 0.0, x, np.zeros(2), np.ones(2), 0.1)
    assert res.feasible and not res.restored


def test_merit_pieces():
    assert infeasibility(-1.0) == 0.0
    assert infeasibility(2.0) == 2.0
    g, a, s = np.array([1.0, -1.0]), np.array([1.0, 1.0]), np.array([0.1, -0.3])
    a_red, p_red = merit_reductions(5.0, 4.0, 0.4, 0.1, g, a, s, 0.5)
    assert a_red == pytest.approx(0.5 * 1.0 + 0.5 * (0.08 - 0.005))
    assert p_red == pytest.approx(-0.5 * 0.4 + 0.5 * (0.08 - 0.02))


def test_theta_rules():
    assert theta_sup(1.0, 0.8) == 1.0
    assert theta_sup(1.0, 0.2) == pytest.approx(0.5 / 0.8)
    assert theta_sup(0.0, 0.0) == 1.0
    assert theta_large(0, 0.5, 1e6) == pytest.approx(0.5 * (1 + 1e6))
    assert update_theta(3, 1.0, 0.3, 1.0, 0.8) == 0.3
    assert update_theta(3, 1.0, 1.0, 1.0, -2.0) == pytest.approx(0.5 / 3.0)


def test_trust_region_update():
    cfg = SlpConfig()
    assert trust_region_update(False, 0, 1, 0.2, 0.1, 1.0, cfg) == pytest.approx(0.01)
    assert trust_region_update(False, 0, 1, 0.02, 0.1, 1.0, cfg) == pytest.approx(0.005)
    assert trust_region_update(True, 0.9, 1.0, 0.1, 0.1, 1.0, cfg) == pytest.approx(0.2)
    assert trust_region_update(True, 0.9, 1.0, 0.1, 0.7, 1.0, cfg) == 1.0
    assert trust_region_update(True, 0.2, 1.0, 0.1, 0.1, 1.0, cfg) == 0.1
    assert trust_region_update(True, 0.2, 1.0, 0.1, 1e-6, 1.0, cfg) == cfg.delta_min


def test_projected_gradient():
    x = np.array([0.0, 0.5, 1.0])
    gp = projected_gradient(x, np.array([1.0, 0.2, -3.0]), np.zeros(3), np.ones(3))
    np.testing.assert_allclose(gp, [0.0, -0.2, 0.0])


@pytest.mark.parametrize("kw", [dict(delta0=0), dict(accept_ratio=0.6), dict(delta0=1e-5), dict(max_outer=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SlpConfig(**kw)


class Quadratic:
    """min sum (x - t)^2  s.t.  sum x <= V  on [0, 1]^n."""

    def __init__(self, t, V):
        self.t, self.V = np.asarray(t, float), V
        self.lower, self.upper = np.zeros(self.t.size), np.ones(self.t.size)

    def evaluate(self, x):
        self.x = x.copy()
        return Evaluation(float(((x - self.t) ** 2).sum()), float(x.sum() - self.V), float(x.sum()))

    def gradient(self):
        return 2 * (self.x - self.t), np.ones(self.t.size)

    def solution(self):
        x = np.clip(self.t, 0, 1)
        if x.sum() <= self.V:
            return x
        lam = brentq(lambda m: np.clip(self.t - m / 2, 0, 1).sum() - self.V, 0, 10)
        return np.clip(self.t - lam / 2, 0, 1)


def test_driver_converges_to_analytic_optimum():
    prob = Quadratic(np.random.default_rng(1).uniform(0, 1.2, 12), 3.0)
    res = SlpDriver(prob, SlpConfig(eps_g=1e-6, eps_f=1e-8, eps_s=1e-12)).run(np.full(12, 0.2))
    assert res.reason == "kkt"
    np.testing.assert_allclose(res.x, prob.solution(), atol=1e-5)
    assert res.c <= 1e-10
    assert max(res.gp_history[-3:]) < 1e-6


def test_driver_contract_on_history():
    prob = Quadratic(np.random.default_rng(2).uniform(0, 1.2, 8), 2.0)
    res = SlpDriver(prob).run(np.full(8, 0.9))
    rows = res.history
    assert sum(r["accepted"] for r in rows) == res.n_outer
    assert len(rows) - res.n_outer == res.n_rejected
    for r0, r1 in zip(rows, rows[1:]):
        if not r0["accepted"]:
            assert r1["delta"] < r0["delta"]
    assert all(r["theta"] <= 1.0 for r in rows)


def test_driver_one_dimensional_and_hook():
    prob = Quadratic([0.3], 5.0)
    calls = []
    res = SlpDriver(prob, SlpConfig(eps_g=1e-8), on_accept=lambda k, x: calls.append(k) or False).run([1.0])
    assert res.x[0] == pytest.approx(0.3, abs=1e-6)
    assert calls == list(range(1, res.n_outer + 1))


def test_driver_step_and_iteration_stops():
    prob = Quadratic([0.5, 0.5], 0.2)
    # optimum is interior to the box but far from x0: capped
    res = SlpDriver(prob, SlpConfig(max_outer=2)).run([1.0, 1.0])
    assert res.reason == "max_outer" and res.n_outer == 2

    # pinned variables give zero steps; the step test fires before three KKT hits
    pinned = Quadratic([0.5, 0.5], 5.0)
    pinned.lower = pinned.upper = np.array([0.7, 0.7])
    res = SlpDriver(pinned).run([0.7, 0.7])
    assert res.reason == "step"
