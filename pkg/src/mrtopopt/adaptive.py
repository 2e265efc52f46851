"""Degree escalation with void/solid variable fixing and DOF suppression.

The optimization starts with linear elements. At each higher degree the
design is warm started, and displacement elements that are clearly void or
solid, and surrounded by elements of the same class, have their design
variables pinned. Nodes touched only by fixed void elements lose their DOFs.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .exceptions import ConfigurationError
from .elements import LAGRANGE, SERENDIPITY

log = logging.getLogger(__name__)

MIXED, VOID, SOLID = 0, 1, 2
STRATEGIES = ("E0", "E1", "E2", "E3", "E4")


@dataclass(frozen=True)
class FixConfig:
    rho_low: float = 1e-6
    rho_high: float = 0.9
    eps_grad: float = 1e-6
    strategy: str = "E4"
    refresh: int = 5
    max_degree: int = 2
    family: str = LAGRANGE
    Emin_ratio: float = 1e-9

    def __post_init__(self):
        s = str(self.strategy).upper()
        if s not in STRATEGIES:
            raise ConfigurationError(f"unknown fixing strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", s)
        if not (0 < self.rho_low < self.rho_high < 1):
            raise ConfigurationError("need 0 < rho_low < rho_high < 1")
        if self.eps_grad <= 0 or self.refresh < 1:
            raise ConfigurationError("eps_grad must be positive and refresh >= 1")
        if self.max_degree not in (2, 3):
            raise ConfigurationError("max_degree must be 2 or 3")
        if self.max_degree == 3 and self.family != SERENDIPITY:
            raise ConfigurationError("degree 3 requires the serendipity family")

    def degrees(self):
        return [(1, LAGRANGE)] + [(d, self.family) for d in range(2, self.max_degree + 1)]


@dataclass
class FixState:
    classes: np.ndarray
    fixed_elements: np.ndarray
    fixed_design: np.ndarray
    suppressed_dofs: np.ndarray

    @property
    def n_fixed(self):
        return int(self.fixed_design.sum())


def classify_elements(rho, grad_x, mesh, cfg=FixConfig()):
    """Label each displacement element void, solid or mixed."""
    r = np.asarray(rho)[mesh.elem_density]
    g = np.asarray(grad_x)[mesh.elem_design]
    void = np.all(r <= cfg.rho_low, axis=1) & np.all(g >= -cfg.eps_grad, axis=1)
    solid = np.all(r >= cfg.rho_high, axis=1) & np.all(g <= cfg.eps_grad, axis=1)
    out = np.full(mesh.n_elements, MIXED, dtype=np.int8)
    out[void] = VOID
    out[solid] = SOLID
    return out


def surrounded(classes, shape, label):
    """Elements of class ``label`` whose 26 neighbors share it (outside counts as matching)."""
    grid = (np.asarray(classes) == label).reshape(shape[2], shape[1], shape[0])
    return ndimage.binary_erosion(grid, structure=np.ones((3, 3, 3), dtype=bool), border_value=1).ravel()


def select_fixed(classes, mesh, bc):
    """Fixed design variables and suppressed DOFs for a classification."""
    shape = mesh.spec.shape
    fix_void = surrounded(classes, shape, VOID)
    fix_solid = surrounded(classes, shape, SOLID)
    fixed_el = fix_void | fix_solid
    fixed_x = np.zeros(mesh.spec.n_design, dtype=bool)
    fixed_x[mesh.elem_design[fixed_el].ravel()] = True
    conn = mesh.conn
    total = np.bincount(conn.ravel(), minlength=mesh.n_nodes)
    nvoid = np.bincount(conn[fix_void].ravel(), minlength=mesh.n_nodes)
    nodes = np.flatnonzero((total == nvoid) & (total > 0))
    dofs = mesh.node_dofs(nodes)
    protected = np.zeros(mesh.n_dofs, dtype=bool)
    protected[bc.fixed_dofs] = True
    loaded_nodes = np.flatnonzero(np.any(bc.f.reshape(-1, 3) != 0.0, axis=1))
    protected[mesh.node_dofs(loaded_nodes)] = True
    support_nodes = np.unique(bc.fixed_dofs // 3)
    protected[mesh.node_dofs(support_nodes)] = True
    dofs = dofs[~protected[dofs]]
    return FixState(classes, fixed_el, fixed_x, dofs)


def apply_fixing(problem, x, cfg=FixConfig()):
    """Classify at ``x`` (already evaluated) and update bounds and suppressed DOFs.

    Returns ``(state, changed)`` where ``changed`` tells whether the
    discretization changed and the point must be re-evaluated.
    """
    t0 = time.perf_counter()
    g, _ = problem.gradient()
    classes = classify_elements(problem.rho, g, problem.mesh, cfg)
    state = select_fixed(classes, problem.mesh, problem.bc)
    problem.set_fixed(state.fixed_design, x)
    changed = problem.solver.set_suppressed(state.suppressed_dofs)
    problem.timers.add("fixing", t0)
    log.info("fixing: %d design variables, %d suppressed DOFs", state.n_fixed, state.suppressed_dofs.size)
    return state, changed


def release_fixing(problem):
    problem.set_fixed(np.zeros(problem.n_design, dtype=bool), problem.initial_point())
    problem.solver.set_suppressed(np.zeros(0, dtype=np.int64))


@dataclass
class StageResult:
    degree: int
    family: str
    slp: object
    fix_events: list = field(default_factory=list)


class RefreshHook:
    """``on_accept`` hook implementing the refresh schedule of a strategy."""

    def __init__(self, problem, cfg):
        self.problem = problem
        self.cfg = cfg
        self.events = []

    def due(self, k):
        s, n = self.cfg.strategy, self.cfg.refresh
        if s == "E2":
            return True
        if s == "E3":
            return k % n == 0
        if s == "E4":
            return k == n
        return False

    def __call__(self, k, x):
        if not self.due(k):
            return False
        # the driver has just evaluated x and its gradient
        state, changed = apply_fixing(self.problem, x, self.cfg)
        self.events.append((k, state.n_fixed, int(state.suppressed_dofs.size)))
        return changed


def escalate(make_problem, x0, slp_config, cfg=FixConfig(), make_driver=None, start_degree=1):
    """Solve with increasing element degree, warm starting the design.

    Parameters
    ----------
    make_problem : callable(degree, family) -> ComplianceProblem
    x0 : initial design.
    slp_config : SlpConfig for the final degree; earlier degrees use ``10 eps_g``.
    make_driver : callable(problem, config, stage, on_accept) -> SlpDriver.

    Returns ``(problem, stages)`` with the problem of the final degree.
    """
    degrees = cfg.degrees()
    if start_degree != 1:
        raise ConfigurationError("escalation starts from linear elements")
    x = np.asarray(x0, dtype=float)
    stages = []
    problem = None
    for i, (deg, fam) in enumerate(degrees):
        final = i == len(degrees) - 1
        scfg = slp_config if final else replace(slp_config, eps_g=10.0 * slp_config.eps_g)
        problem = make_problem(deg, fam)
        hook = None
        events = []
        if deg > 1 and cfg.strategy != "E0":
            problem.evaluate(x)
            state, _ = apply_fixing(problem, x, cfg)
            events.append((0, state.n_fixed, int(state.suppressed_dofs.size)))
            if cfg.strategy in ("E2", "E3", "E4"):
                hook = RefreshHook(problem, cfg)
        driver = make_driver(problem, scfg, f"deg{deg}", hook)
        res = driver.run(x)
        if hook is not None:
            events.extend(hook.events)
        stages.append(StageResult(deg, fam, res, events))
        x = res.x
    return problem, stages
