"""Trust-region sequential linear programming with a merit function.

The problem has one linear inequality (the volume) and box bounds, so each LP
subproblem ``min g^T s  s.t.  a^T s + c0 <= 0,  l <= s <= u`` is a continuous
knapsack solved exactly by a Lagrangian breakpoint search.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, LPFailure

log = logging.getLogger(__name__)

_FEAS_TOL = 1e-12


@dataclass(frozen=True)
class SlpConfig:
    delta0: float = 0.1
    delta_min: float = 1e-4
    accept_ratio: float = 0.1
    expand_ratio: float = 0.5
    shrink_step: float = 0.25
    shrink_delta: float = 0.1
    grow: float = 2.0
    theta0: float = 1.0
    N: float = 1e6
    eps_s: float = 1e-4
    eps_f: float = 5e-2
    eps_g: float = 1e-3
    consecutive: int = 3
    max_outer: int = 500
    max_trials: int = 2500
    restoration_shrink: float = 0.8

    def __post_init__(self):
        pos = ("delta0", "delta_min", "shrink_step", "shrink_delta", "grow", "eps_s", "eps_f", "eps_g")
        for name in pos:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not (0 < self.accept_ratio < self.expand_ratio <= 1):
            raise ConfigurationError("need 0 < accept_ratio < expand_ratio <= 1")
        if self.delta0 < self.delta_min:
            raise ConfigurationError("delta0 must be >= delta_min")
        if self.consecutive < 1 or self.max_outer < 1:
            raise ConfigurationError("iteration limits must be >= 1")


@dataclass
class LPResult:
    s: np.ndarray
    lam: float
    feasible: bool
    restored: bool = False


def _greedy_min_as(a, lo, hi):
    """Box point minimizing ``a^T s``."""
    return np.where(a > 0, lo, np.where(a < 0, hi, np.clip(0.0, lo, hi)))


def lp_subproblem(g, a, c0, lo, hi):
    """Exact solution of ``min g^T s  s.t.  a^T s + c0 <= 0,  lo <= s <= hi``.

    Returns ``(s, lam)`` with the multiplier of the linear row, or
    ``(None, None)`` if the feasible set is empty.
    """
    g = np.asarray(g, dtype=float)
    a = np.asarray(a, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    b = -float(c0)
    scale = np.abs(a) @ np.maximum(np.abs(lo), np.abs(hi)) + abs(b)
    tol = _FEAS_TOL * max(1.0, scale)
    s_min = _greedy_min_as(a, lo, hi)
    if a @ s_min > b + tol:
        return None, None
    # unconstrained minimizer; ties in g resolved toward smaller a^T s
    s = np.where(g > 0, lo, np.where(g < 0, hi, s_min))
    h = a @ s
    if h <= b:
        return s, 0.0
    # variables that still move as lambda grows: coefficient g_i + lambda a_i changes sign
    bp = np.full(g.size, np.inf)
    nz = a != 0
    bp[nz] = -g[nz] / a[nz]
    movable = nz & (bp > 0) & (s != s_min)
    idx = np.flatnonzero(movable)
    order = idx[np.argsort(bp[idx], kind="stable")]
    delta = a[order] * (s_min[order] - s[order])
    cum = h + np.cumsum(delta)
    k = int(np.searchsorted(-cum, -b, side="left"))
    if k >= order.size:
        k = order.size - 1
    s = s.copy()
    s[order[:k]] = s_min[order[:k]]
    i = order[k]
    before = cum[k - 1] if k > 0 else h
    s[i] = s[i] + (b - before) / a[i]
    s[i] = min(max(s[i], lo[i]), hi[i])
    return s, float(bp[i])


def feasibility_restoration(a, c0, lo, hi):
    """Least-infeasible step inside the (already reduced) box.

    Minimizes the slack ``max(0, a^T s + c0)``. When zero slack is reachable
    the returned step is the minimizer of ``a^T s`` scaled back just enough to
    reach the constraint boundary.
    """
    a = np.asarray(a, dtype=float)
    s_full = _greedy_min_as(a, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    drop = -(a @ s_full)
    if c0 <= 0.0:
        return np.zeros_like(a)
    if drop <= c0:
        return s_full
    return s_full * (c0 / drop)


def step_bounds(x, xl, xu, delta):
    return np.maximum(-delta, xl - x), np.minimum(delta, xu - x)


def solve_step(g, a, c0, x, xl, xu, delta, shrink=0.8):
    """LP step with fallback to feasibility restoration."""
    lo, hi = step_bounds(x, xl, xu, delta)
    s, lam = lp_subproblem(g, a, c0, lo, hi)
    if s is not None:
        return LPResult(s, lam, True)
    lo_r, hi_r = np.maximum(-shrink * delta, xl - x), np.minimum(shrink * delta, xu - x)
    s = feasibility_restoration(a, c0, lo_r, hi_r)
    if not np.all(np.isfinite(s)):
        raise LPFailure("feasibility restoration produced a non-finite step")
    return LPResult(s, 0.0, False, True)


def infeasibility(c):
    """``phi = 0.5 max(0, c)^2`` for the single inequality."""
    return 0.5 * max(0.0, c) ** 2


def model_infeasibility(c0, a, s):
    return 0.5 * max(0.0, c0 + float(a @ s)) ** 2


def merit_reductions(f_old, f_new, c_old, c_new, g, a, s, theta):
    """Actual and predicted merit reductions ``(A_red, P_red)``."""
    a_red = theta * (f_old - f_new) + (1.0 - theta) * (infeasibility(c_old) - infeasibility(c_new))
    p_red = -theta * float(g @ s) + (1.0 - theta) * (
        model_infeasibility(c_old, a, np.zeros_like(s)) - model_infeasibility(c_old, a, s)
    )
    return a_red, p_red


def theta_sup(p_fsb, p_opt):
    if p_opt <= 0.5 * p_fsb:
        den = p_fsb - p_opt
        return 1.0 if den == 0.0 else 0.5 * p_fsb / den
    return 1.0


def theta_large(k, theta_min, N):
    return (1.0 + N / (k + 1) ** 1.1) * theta_min


def update_theta(k, theta_hist_min, theta_max, p_fsb, p_opt, N=1e6):
    """Penalty parameter for outer iteration ``k``.

    ``p_opt`` is the predicted decrease of the objective, ``-g^T s``.
    """
    return min(theta_large(k, theta_hist_min, N), theta_sup(p_fsb, p_opt), theta_max)


def trust_region_update(accepted, a_red, p_red, s_inf, delta, span, cfg=SlpConfig()):
    if not accepted:
        return min(cfg.shrink_step * s_inf, cfg.shrink_delta * delta)
    if a_red >= cfg.expand_ratio * p_red:
        delta = min(cfg.grow * delta, span)
    return max(delta, cfg.delta_min)


def projected_gradient(x, grad_l, xl, xu):
    """``P_X(x - grad_L) - x``."""
    return np.clip(x - grad_l, xl, xu) - x


@dataclass
class Evaluation:
    f: float
    c: float
    volume: float = float("nan")
    pcg_iters: int = 0


@dataclass
class SlpResult:
    x: np.ndarray
    f: float
    c: float
    lam: float
    n_outer: int
    n_rejected: int
    reason: str
    history: list = field(default_factory=list)
    gp_history: list = field(default_factory=list)
    theta: float = 1.0
    delta: float = 0.0


class SlpDriver:
    """Algorithm driver.

    ``problem`` must provide ``lower``/``upper`` bound arrays,
    ``evaluate(x) -> Evaluation`` (which caches what ``gradient`` needs) and
    ``gradient() -> (g, a)`` for the most recently evaluated point.
    ``on_accept(k, x)`` is an optional hook run after each accepted step; if
    it returns True the problem changed (bounds or discretization) and the
    current point is re-evaluated.
    """

    def __init__(self, problem, config=None, stage="slp", on_accept=None, timers=None):
        self.problem = problem
        self.cfg = config or SlpConfig()
        self.stage = stage
        self.on_accept = on_accept
        self.timers = timers

    def _lp_time(self, t0):
        if self.timers is not None:
            self.timers["lp"] = self.timers.get("lp", 0.0) + time.perf_counter() - t0

    def run(self, x0, delta0=None):
        cfg, prob = self.cfg, self.problem
        x = np.clip(np.asarray(x0, dtype=float), prob.lower, prob.upper)
        ev = prob.evaluate(x)
        g, a = prob.gradient()
        f_prev = None
        delta = cfg.delta0 if delta0 is None else delta0
        theta_max, theta_min_hist = 1.0, cfg.theta0
        theta = cfg.theta0
        k, n_rej, trials = 0, 0, 0
        hit_kkt = hit_step = 0
        history, gp_hist = [], []
        reason = "max_outer"
        lam = 0.0
        new_iterate = True
        while True:
            xl, xu = prob.lower, prob.upper
            span = float(np.max(xu - xl)) if xu.size else 0.0
            t0 = time.perf_counter()
            lp = solve_step(g, a, ev.c, x, xl, xu, delta, cfg.restoration_shrink)
            self._lp_time(t0)
            s = lp.s
            s_inf = float(np.max(np.abs(s))) if s.size else 0.0
            if new_iterate:
                lam = lp.lam
                gp = projected_gradient(x, g + lam * a, xl, xu)
                gp_inf = float(np.max(np.abs(gp))) if gp.size else 0.0
                gp_hist.append(gp_inf)
                df = abs(ev.f - f_prev) if f_prev is not None else np.inf
                hit_kkt = hit_kkt + 1 if (df < cfg.eps_f and gp_inf < cfg.eps_g and lp.feasible) else 0
                if hit_kkt >= cfg.consecutive:
                    reason = "kkt"
                    break
                if k >= cfg.max_outer:
                    reason = "max_outer"
                    break
                new_iterate = False
            hit_step = hit_step + 1 if s_inf < cfg.eps_s else 0
            if hit_step >= cfg.consecutive:
                reason = "step"
                break
            if trials >= cfg.max_trials:
                reason = "max_trials"
                break
            trials += 1

            p_fsb = model_infeasibility(ev.c, a, np.zeros_like(s)) - model_infeasibility(ev.c, a, s)
            p_opt = -float(g @ s)
            theta = update_theta(k + 1, theta_min_hist, theta_max, p_fsb, p_opt, cfg.N)
            theta_min_hist = min(theta_min_hist, theta)
            t_start = time.perf_counter()
            x_new = np.clip(x + s, xl, xu)
            ev_new = prob.evaluate(x_new)
            a_red, p_red = merit_reductions(ev.f, ev_new.f, ev.c, ev_new.c, g, a, s, theta)
            accepted = a_red >= cfg.accept_ratio * p_red
            delta_used = delta
            delta = trust_region_update(accepted, a_red, p_red, s_inf, delta, span, cfg)
            row = dict(stage=self.stage, iter=k + 1, accepted=int(accepted), F=ev_new.f,
                       volume=ev_new.volume, gP_inf=gp_hist[-1], delta=delta_used, theta=theta,
                       pcg_iters=ev_new.pcg_iters)
            if not accepted:
                n_rej += 1
                theta_max = theta
                row["time_ms"] = 1e3 * (time.perf_counter() - t_start)
                history.append(row)
                log.debug("%s it %d rejected: A_red=%.3e P_red=%.3e delta->%.3e", self.stage, k + 1, a_red, p_red, delta)
                continue
            f_prev = ev.f
            x, ev = x_new, ev_new
            g, a = prob.gradient()
            theta_max = 1.0
            k += 1
            if self.on_accept is not None and self.on_accept(k, x):
                x = np.clip(x, prob.lower, prob.upper)
                ev = prob.evaluate(x)
                g, a = prob.gradient()
            row["time_ms"] = 1e3 * (time.perf_counter() - t_start)
            history.append(row)
            new_iterate = True
            log.info("%s it %d F=%.6g vol=%.6g gP=%.3e delta=%.3e", self.stage, k, ev.f, ev.volume, gp_hist[-1], delta_used)
        return SlpResult(x, ev.f, ev.c, lam, k, n_rej, reason, history, gp_hist, theta, delta)
