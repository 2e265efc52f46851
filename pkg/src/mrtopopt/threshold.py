"""Density thresholding: rank and gradient strategies, Heaviside sharpening
and the quality loop that alternates projection with SLP re-solves."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .filter import threshold_radius

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdConfig:
    round_up: float = 0.95
    round_down: float = 0.05
    angle_max_deg: float = 89.9
    v_min_up: float = 0.3
    v_max_low: float = 0.7
    eps_n: float = 0.01
    eps_v: float = 0.005
    max_attempts: int = 10
    beta0: float = 1.0
    beta_factor: float = 2.0
    beta_max: float = 100.0

    def __post_init__(self):
        if not (0 < self.round_down < self.round_up < 1):
            raise ConfigurationError("rounding cutoffs must satisfy 0 < down < up < 1")
        if not (0 < self.v_min_up < self.v_max_low < 1):
            raise ConfigurationError("safeguards must satisfy 0 < v_min_up < v_max_low < 1")
        if not (0 < self.angle_max_deg < 90):
            raise ConfigurationError("angle_max_deg must lie in (0, 90)")
        if self.max_attempts < 1 or self.beta0 <= 0 or self.beta_factor < 1:
            raise ConfigurationError("invalid attempt/beta settings")


def pre_round(rho, cfg=ThresholdConfig()):
    out = np.array(rho, dtype=float)
    out[out >= cfg.round_up] = 1.0
    out[out <= cfg.round_down] = 0.0
    return out


def rank_threshold(rho, v_frac):
    """Set the ``floor(v_frac n)`` largest entries to 1 and the rest to 0 (ties by index)."""
    rho = np.asarray(rho, dtype=float)
    n_on = int(math.floor(v_frac * rho.size + 1e-9))
    order = np.argsort(-rho, kind="stable")
    out = np.zeros_like(rho)
    out[order[:n_on]] = 1.0
    return out


def angle_condition(grad_l, d, angle_max_deg=89.9):
    """True if ``d`` makes an angle below ``angle_max_deg`` with ``-grad_l``."""
    ng, nd = np.linalg.norm(grad_l), np.linalg.norm(d)
    if ng == 0.0 or nd == 0.0:
        log.debug("angle condition on a zero vector treated as satisfied")
        return True
    return -float(grad_l @ d) / (ng * nd) > math.cos(math.radians(angle_max_deg))


def gradient_threshold(rho, grad_l, cfg=ThresholdConfig()):
    """Project ``rho - alpha grad_l`` onto [0, 1] for the largest admissible breakpoint.

    Returns ``(rho_tilde, ok)``; ``ok`` is False when no breakpoint is
    admissible, in which case ``rho`` is returned unchanged.
    """
    rho = np.asarray(rho, dtype=float)
    g = np.asarray(grad_l, dtype=float)
    bp = np.full(rho.size, np.inf)
    down, up = g > 0, g < 0
    bp[down] = rho[down] / g[down]
    bp[up] = (1.0 - rho[up]) / (-g[up])
    # components that would be rounded across a safeguard
    bad = (up & (rho < cfg.v_min_up)) | (down & (rho > cfg.v_max_low))
    limit = bp[bad].min() if bad.any() else np.inf
    move = np.flatnonzero(np.isfinite(bp) & (bp > 0))
    if move.size == 0:
        return rho.copy(), False
    order = move[np.argsort(bp[move], kind="stable")]
    a_sorted = bp[order]
    g2 = g[order] ** 2
    # angle cosine at alpha = a_sorted[k]: reached components contribute alpha_i, others alpha
    num_done = np.cumsum(g2 * a_sorted)
    den_done = np.cumsum(g2 * a_sorted ** 2)
    g2_rest = g2.sum() - np.cumsum(g2)
    num = num_done + g2_rest * a_sorted
    den = np.sqrt(den_done + g2_rest * a_sorted ** 2)
    gnorm = np.linalg.norm(g)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = num / (gnorm * den)
    ok = (a_sorted < limit) & (cosine > math.cos(math.radians(cfg.angle_max_deg)))
    if not ok.any():
        return rho.copy(), False
    alpha = a_sorted[np.flatnonzero(ok)[-1]]
    out = np.clip(rho - alpha * g, 0.0, 1.0)
    # breakpoints reached land exactly on the bounds
    hit = bp <= alpha
    out[hit & down] = 0.0
    out[hit & up] = 1.0
    return out, True


def heaviside(rho, beta, eta):
    """Smoothed step ``(tanh(b e) + tanh(b (rho - e))) / (tanh(b e) + tanh(b (1 - e)))``."""
    rho = np.asarray(rho, dtype=float)
    t = np.tanh(beta * eta)
    out = (t + np.tanh(beta * (rho - eta))) / (t + np.tanh(beta * (1.0 - eta)))
    # endpoints are fixed points; keep them exact despite rounding
    out = np.where(rho <= 0.0, 0.0, np.where(rho >= 1.0, 1.0, out))
    return out


def _heaviside_deta(rho, beta, eta):
    t0 = math.tanh(beta * eta)
    t1 = math.tanh(beta * (1.0 - eta))
    num = t0 + np.tanh(beta * (rho - eta))
    den = t0 + t1
    dnum = beta * (1.0 - t0 ** 2) - beta * (1.0 - np.tanh(beta * (rho - eta)) ** 2)
    dden = beta * (1.0 - t0 ** 2) - beta * (1.0 - t1 ** 2)
    return (dnum * den - num * dden) / den ** 2


def solve_eta(rho, v, beta, tol=1e-10, maxit=200):
    """Threshold ``eta`` making the Heaviside projection volume preserving.

    Safeguarded Newton iteration from 0.5 on the bracket [0, 1]; returns
    0.5 when ``rho`` is all zeros or all ones.
    """
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.all(rho <= 0.0) or np.all(rho >= 1.0):
        return 0.5
    target = float(v @ rho)
    atol = tol * float(v.sum())

    def fval(eta):
        return float(v @ heaviside(rho, beta, eta)) - target

    lo, hi = 0.0, 1.0
    eta = 0.5
    for _ in range(maxit):
        fe = fval(eta)
        if abs(fe) < atol:
            return eta
        # f decreases in eta
        if fe > 0:
            lo = eta
        else:
            hi = eta
        d = float(v @ _heaviside_deta(rho, beta, eta))
        step = eta - fe / d if d < 0 else None
        eta = step if (step is not None and lo < step < hi) else 0.5 * (lo + hi)
        if hi - lo < 1e-15:
            break
    return eta


def heaviside_volume_preserving(rho, v, beta):
    eta = solve_eta(rho, v, beta)
    if np.all(rho <= 0.0) or np.all(rho >= 1.0):
        return np.array(rho, dtype=float), eta
    return heaviside(rho, beta, eta), eta


def threshold_once(rho, grad_l, v, v_frac, beta, cfg=ThresholdConfig()):
    """One projection attempt; returns ``(rho_tilde, strategy)``."""
    rho_h, _ = heaviside_volume_preserving(rho, v, beta)
    rho_b = pre_round(rho_h, cfg)
    cand = rank_threshold(rho_b, v_frac)
    strategy = "rank"
    if not angle_condition(grad_l, cand - rho_b, cfg.angle_max_deg):
        cand, ok = gradient_threshold(rho_b, grad_l, cfg)
        strategy = "gradient" if ok else "none"
    out, _ = heaviside_volume_preserving(cand, v, beta)
    return out, strategy


def census(rho, tol=0.0):
    """Counts of (zero, intermediate, one) densities."""
    rho = np.asarray(rho)
    zeros = int(np.sum(rho <= tol))
    ones = int(np.sum(rho >= 1.0 - tol))
    return zeros, rho.size - zeros - ones, ones


@dataclass
class Attempt:
    rho: np.ndarray
    volume: float
    strategy: str
    change: float
    slp: object = None
    compliance: float = float("nan")


@dataclass
class QualityResult:
    rho: np.ndarray
    attempts: list = field(default_factory=list)
    converged: bool = True
    history: list = field(default_factory=list)


def quality_loop(problem, x, lam, make_driver, cfg=ThresholdConfig(), evaluate_attempt=None):
    """Alternate thresholding with SLP re-solves until the projection settles.

    Parameters
    ----------
    problem : ComplianceProblem evaluated at ``x``.
    lam : float
        Volume multiplier at ``x``.
    make_driver : callable(stage) -> SlpDriver for the re-solves.
    evaluate_attempt : callable(rho) -> float, optional
        Score used to pick the best attempt if the loop does not settle.
    """
    v = problem.plan.volumes
    vf = problem.bc.volfrac
    V = float(v.sum())
    beta = cfg.beta0
    problem.evaluate(x)
    prev = problem.rho.copy()
    radius_shrunk = False
    out = QualityResult(prev)
    for attempt in range(1, cfg.max_attempts + 1):
        rho = problem.rho
        grad_l = problem.lagrangian_density_gradient(lam)
        rho_t, strategy = threshold_once(rho, grad_l, v, vf, beta, cfg)
        beta = min(cfg.beta_factor * beta, cfg.beta_max)
        change = float(np.abs(rho_t - prev).sum())
        vol = float(v @ rho_t)
        rec = Attempt(rho_t, vol, strategy, change)
        out.attempts.append(rec)
        log.info("threshold attempt %d (%s): change %.4g, volume %.6g", attempt, strategy, change, vol / V)
        if change < cfg.eps_n * float(np.abs(prev).sum()) and vol <= vf * V + cfg.eps_v * V:
            out.rho = rho_t
            return out
        if not radius_shrunk:
            problem.rebuild_filter(threshold_radius(problem.plan.r_min, problem.mesh.spec.n_mr))
            radius_shrunk = True
        driver = make_driver(f"threshold{attempt}")
        res = driver.run(problem.lift(rho_t))
        rec.slp = res
        out.history.extend(res.history)
        problem.evaluate(res.x)
        lam = res.lam
        prev = rho_t
    out.converged = False
    feasible = [a for a in out.attempts if a.volume <= vf * V + cfg.eps_v * V]
    pool = feasible or out.attempts
    if evaluate_attempt is not None:
        for a in pool:
            a.compliance = evaluate_attempt(a.rho)
        best = min(pool, key=lambda a: a.compliance)
    else:
        best = pool[-1]
    out.rho = best.rho
    log.warning("thresholding did not settle in %d attempts", cfg.max_attempts)
    return out
