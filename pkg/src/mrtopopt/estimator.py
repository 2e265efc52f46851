"""Estimator-style front end: configure with keyword parameters, run with ``fit``."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from threadpoolctl import threadpool_limits

from . import adaptive as adapt
from ._validation import check_choice, check_design, check_int, check_nel, check_real
from .elements import Material, normalize_family
from .exceptions import ConfigurationError
from .filter import build_plan
from .mesh import BENCHMARKS, MeshSpec, apply_problem, build_mesh, problem_name
from .problem import ComplianceProblem, Timers, corrected_compliance
from .slp import SlpConfig, SlpDriver
from .threshold import ThresholdConfig, census, quality_loop

log = logging.getLogger(__name__)

TIMING_KEYS = ("prefilter", "filter", "assembly", "precond_setup", "linear_systems", "gradients", "lp", "fixing", "other")
MODES = ("trad", "mr", "adaptive")

# exit status of a run
OK, CONFIG_ERROR, SOLVER_FAILURE, ITERATION_CAP, THRESHOLD_CAP = 0, 2, 3, 4, 5


@dataclass
class RunReport:
    name: str
    mode: str
    F: float
    F_int: float
    F_prj: float
    F_sol: float
    corrected: bool
    stages: list
    timings: dict
    total_time: float
    census: tuple
    threshold_attempts: int = 0
    threshold_converged: bool = True
    fix_events: list = field(default_factory=list)

    @property
    def status(self):
        if any(s["reason"] in ("max_outer", "max_trials") for s in self.stages):
            return ITERATION_CAP
        if not self.threshold_converged:
            return THRESHOLD_CAP
        return OK

    def format(self):
        mark = "" if self.corrected else " (uncorrected)"
        lines = [
            f"problem          {self.name}",
            f"mode             {self.mode}",
            f"F                {self.F:.10g}",
            f"F_int            {self.F_int:.10g}{mark}",
            f"F_prj            {self.F_prj:.10g}{mark}",
            f"F_sol            {self.F_sol:.10g}{mark}",
            "stages",
        ]
        for s in self.stages:
            lines.append(f"  {s['stage']:<14s} N_it={s['n_it']} N_rs={s['n_rs']} stop={s['reason']}")
        lines.append(f"threshold        attempts={self.threshold_attempts} converged={self.threshold_converged}")
        z, m, o = self.census
        lines.append(f"census           zero={z} intermediate={m} one={o}")
        for k, n_fix, n_sup in self.fix_events:
            lines.append(f"fixing           {k}: fixed_design={n_fix} suppressed_dofs={n_sup}")
        lines.append("timings (s)")
        for k in TIMING_KEYS:
            lines.append(f"  {k:<16s}{self.timings.get(k, 0.0):10.3f}")
        lines.append(f"  {'total':<16s}{self.total_time:10.3f}")
        lines.append("timing notes: 'filter' is the design-to-density projection; 'gradients' covers")
        lines.append("element energies and the chain rule back to the design variables.")
        lines.append(f"status           {self.status}")
        return "\n".join(lines) + "\n"


class DensityProjector(TransformerMixin, BaseEstimator):
    """Design-to-density projection as a transformer.

    ``fit`` builds the mesh and filter plan; ``transform`` maps design vectors
    (one per row) to density vectors.
    """

    def __init__(self, nel=(2, 1, 1), nmr=1, dmr=1, rmin=1.5):
        self.nel = nel
        self.nmr = nmr
        self.dmr = dmr
        self.rmin = rmin

    def fit(self, X=None, y=None):
        nel = check_nel(self.nel)
        spec = MeshSpec(*nel, check_int(self.nmr, "nmr", 1), check_int(self.dmr, "dmr", 1))
        self.mesh_ = build_mesh(spec)
        self.plan_ = build_plan(self.mesh_, check_real(self.rmin, "rmin", 0.0, open_low=True))
        self.n_features_in_ = spec.n_design
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        arr, single = check_design(X, self.n_features_in_)
        out = np.vstack([self.plan_.project(row) for row in arr])
        return out[0] if single else out


class TopologyOptimizer(BaseEstimator):
    """Compliance topology optimization of a benchmark problem.

    Parameters mirror the command-line flags. After ``fit``:

    design_ : final design variables.
    density_ : density field of the final SLP iterate (before thresholding).
    density_thresholded_ : binary density field (equal to ``density_`` if
        thresholding is disabled).
    history_ : one dict per SLP trial step.
    stage_results_ : :class:`~mrtopopt.slp.SlpResult` per SLP stage, including
        threshold re-solves.
    report_ : :class:`RunReport`.
    problem_ : the :class:`~mrtopopt.problem.ComplianceProblem` of the last stage.
    """

    def __init__(self, problem="cb", nel=(24, 8, 8), volfrac=None, rmin=1.5, nmr=1, dmr=1, degree=1,
                 family="lagrange", mode="trad", strategy="E4", max_degree=2, refresh=5, precond="gmg",
                 mg_levels=4, mg_cycle="w", E0=1.0, Emin=None, nu=0.3, penal=3.0, threshold=True,
                 eps_g=1e-3, eps_f=5e-2, eps_s=1e-4, max_outer=500, pcg_tol=1e-8, correct=True,
                 correct_max_elements=4_000_000, ls_cut=None, bd_inset=None, bd_deck=None, threads=None):
        self.problem = problem
        self.nel = nel
        self.volfrac = volfrac
        self.rmin = rmin
        self.nmr = nmr
        self.dmr = dmr
        self.degree = degree
        self.family = family
        self.mode = mode
        self.strategy = strategy
        self.max_degree = max_degree
        self.refresh = refresh
        self.precond = precond
        self.mg_levels = mg_levels
        self.mg_cycle = mg_cycle
        self.E0 = E0
        self.Emin = Emin
        self.nu = nu
        self.penal = penal
        self.threshold = threshold
        self.eps_g = eps_g
        self.eps_f = eps_f
        self.eps_s = eps_s
        self.max_outer = max_outer
        self.pcg_tol = pcg_tol
        self.correct = correct
        self.correct_max_elements = correct_max_elements
        self.ls_cut = ls_cut
        self.bd_inset = bd_inset
        self.bd_deck = bd_deck
        self.threads = threads

    # -- validation -------------------------------------------------------
    def _validate(self):
        p = {}
        p["problem"] = check_choice(self.problem, "problem", BENCHMARKS)
        p["nel"] = check_nel(self.nel)
        p["mode"] = check_choice(self.mode, "mode", MODES)
        p["nmr"] = check_int(self.nmr, "nmr", 1)
        p["dmr"] = check_int(self.dmr, "dmr", 1)
        p["degree"] = check_int(self.degree, "degree", 1)
        p["family"] = normalize_family(self.family)
        if p["mode"] == "trad" and (p["nmr"], p["dmr"]) != (1, 1):
            raise ConfigurationError("traditional mode requires nmr = dmr = 1")
        if p["mode"] == "adaptive" and p["degree"] != 1:
            raise ConfigurationError("adaptive mode starts from degree 1; use max_degree for the target")
        p["spec"] = MeshSpec(*p["nel"], p["nmr"], p["dmr"], p["degree"], "lagrange" if p["degree"] == 1 else p["family"])
        if self.volfrac is not None:
            check_real(self.volfrac, "volfrac", 0.0, 1.0, True, True)
        p["rmin"] = check_real(self.rmin, "rmin", 0.0, open_low=True)
        p["precond"] = check_choice(self.precond, "precond", ("gmg", "diag"))
        p["mg_cycle"] = check_choice(self.mg_cycle, "mg_cycle", ("v", "w"))
        p["mg_levels"] = check_int(self.mg_levels, "mg_levels", 1)
        adaptive = p["mode"] == "adaptive"
        emin = self.Emin if self.Emin is not None else (1e-9 if adaptive else 1e-6) * self.E0
        p["mat"] = Material(float(self.E0), float(emin), float(self.nu), float(self.penal))
        p["slp"] = SlpConfig(eps_g=self.eps_g, eps_f=self.eps_f, eps_s=self.eps_s,
                             max_outer=check_int(self.max_outer, "max_outer", 1))
        if adaptive:
            p["fix"] = adapt.FixConfig(strategy=self.strategy, refresh=check_int(self.refresh, "refresh", 1),
                                       max_degree=check_int(self.max_degree, "max_degree", 2), family=p["family"],
                                       Emin_ratio=emin / self.E0)
        p["bc_params"] = {k: getattr(self, k) for k in ("ls_cut", "bd_inset", "bd_deck") if getattr(self, k) is not None}
        if self.volfrac is not None:
            p["bc_params"]["volfrac"] = float(self.volfrac)
        p["solver"] = dict(precond=p["precond"], levels=p["mg_levels"], cycle=p["mg_cycle"], tol=float(self.pcg_tol))
        if self.threads is not None:
            check_int(self.threads, "threads", 1)
        return p

    def _make_driver(self, problem, cfg, stage, hook=None):
        return SlpDriver(problem, cfg, stage=stage, on_accept=hook, timers=self.timers_)

    # -- fitting ------------------------------------------------------------
    def fit(self, X=None, y=None):
        """Run the optimization. ``X`` optionally gives the initial design vector."""
        p = self._validate()
        limits = threadpool_limits(self.threads) if self.threads else None
        try:
            self._fit(p, X)
        finally:
            if limits is not None:
                limits.restore_original_limits()
        return self

    def _fit(self, p, X):
        t_start = time.perf_counter()
        self.timers_ = timers = Timers()
        spec = p["spec"]
        mat = p["mat"]
        stages, fix_events = [], []
        if p["mode"] == "adaptive":
            base = build_mesh(MeshSpec(*p["nel"], p["nmr"], p["dmr"], 1))
            t0 = time.perf_counter()
            plan = build_plan(base, p["rmin"])
            timers.add("prefilter", t0)

            cache = {}

            def make_problem(deg, fam):
                if (deg, fam) not in cache:
                    mesh = base if deg == 1 else build_mesh(spec.with_degree(deg, fam))
                    bc = apply_problem(p["problem"], mesh, **p["bc_params"])
                    cache[deg, fam] = ComplianceProblem(mesh, bc, mat, p["rmin"], p["solver"], timers, plan=plan)
                return cache[deg, fam]

            x0 = self._initial(X, make_problem(1, "lagrange"))
            problem, st = adapt.escalate(make_problem, x0, p["slp"], p["fix"], self._make_driver)
            for s in st:
                stages.append(s.slp)
                fix_events.extend((f"deg{s.degree} it{k}", nf, ns) for k, nf, ns in s.fix_events)
            names = [f"deg{s.degree}" for s in st]
        else:
            mesh = build_mesh(spec)
            bc = apply_problem(p["problem"], mesh, **p["bc_params"])
            problem = ComplianceProblem(mesh, bc, mat, p["rmin"], p["solver"], timers)
            x0 = self._initial(X, problem)
            stages.append(self._make_driver(problem, p["slp"], "slp").run(x0))
            names = ["slp"]
        res = stages[-1]
        problem.ensure_evaluated(res.x)
        self.mesh_ = problem.mesh
        self.bc_ = problem.bc
        self.design_ = res.x.copy()
        self.density_ = problem.rho.copy()
        self.lambda_ = res.lam
        self.projector_ = problem.plan
        F_raw = res.f
        history = [row for s in stages for row in s.history]

        self.problem_ = problem
        if p["mode"] == "adaptive" and self.threshold:
            # thresholding moves the design far from the fixed values
            adapt.release_fixing(problem)
        correct_ok = bool(self.correct) and spec.n_density <= self.correct_max_elements
        corr = lambda rho: corrected_compliance(rho, spec, p["problem"], mat, p["bc_params"], p["solver"])  # noqa: E731
        attempts, converged = 0, True
        if self.threshold:
            q = quality_loop(problem, res.x, res.lam,
                             lambda st: self._make_driver(problem, p["slp"], st),
                             ThresholdConfig(), evaluate_attempt=corr if correct_ok else None)
            self.density_thresholded_ = q.rho.copy()
            history.extend(q.history)
            attempts, converged = len(q.attempts), q.converged
            for i, a in enumerate(q.attempts, 1):
                if a.slp is not None:
                    stages.append(a.slp)
                    names.append(f"threshold{i}")
        else:
            self.density_thresholded_ = self.density_.copy()

        if correct_ok:
            F_int = corr(self.density_)
            F_prj = corr(self.density_thresholded_)
            F_sol = corrected_compliance(None, spec, p["problem"], mat, p["bc_params"], p["solver"], fully_solid=True)
        else:
            F_int = F_raw
            F_prj = float("nan")
            F_sol = float("nan")
        total = time.perf_counter() - t_start
        tim = {k: timers.get(k, 0.0) for k in TIMING_KEYS if k != "other"}
        tim["other"] = max(0.0, total - sum(tim.values()))
        self.history_ = history
        self.stage_results_ = stages
        self.n_iter_ = sum(s.n_outer for s in stages)
        self.report_ = RunReport(
            name=problem_name(p["problem"], spec), mode=p["mode"], F=F_raw, F_int=F_int, F_prj=F_prj, F_sol=F_sol,
            corrected=correct_ok,
            stages=[dict(stage=n, n_it=s.n_outer, n_rs=s.n_rejected, reason=s.reason) for n, s in zip(names, stages)],
            timings=tim, total_time=total, census=census(self.density_thresholded_),
            threshold_attempts=attempts, threshold_converged=converged, fix_events=fix_events)
        return self

    def _initial(self, X, problem):
        if X is None:
            return problem.initial_point()
        arr, single = check_design(X, problem.n_design)
        if not single:
            raise ConfigurationError("initial design must be a single vector")
        return np.clip(arr[0], problem.lower, problem.upper)

    def transform(self, X):
        """Project design vectors to densities with the fitted filter."""
        check_is_fitted(self, "projector_")
        arr, single = check_design(X, self.projector_.n_design)
        out = np.vstack([self.projector_.project(row) for row in arr])
        return out[0] if single else out
