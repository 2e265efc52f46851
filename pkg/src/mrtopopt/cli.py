"""Command-line entry point.

Exit codes: 0 converged, 2 configuration error, 3 solver failure,
4 SLP iteration cap reached, 5 thresholding attempts exhausted.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .estimator import CONFIG_ERROR, SOLVER_FAILURE, TopologyOptimizer
from .exceptions import ConfigurationError, DomainError, ResourceError, SolverError
from .io import load_config, write_density_bin, write_density_vtk, write_history_csv, write_summary
from .mesh import problem_name

log = logging.getLogger("mrtopopt")

# config key -> (estimator parameter, converter)
_KEYS = {
    "problem": ("problem", str),
    "nel": ("nel", lambda v: tuple(int(t) for t in str(v).replace(",", " ").split())),
    "volfrac": ("volfrac", float),
    "rmin": ("rmin", float),
    "nmr": ("nmr", int),
    "dmr": ("dmr", int),
    "degree": ("degree", int),
    "family": ("family", str),
    "mode": ("mode", str),
    "strategy": ("strategy", str),
    "max_degree": ("max_degree", int),
    "refresh": ("refresh", int),
    "precond": ("precond", lambda v: "diag" if str(v).lower() in ("diag", "diagonal") else str(v)),
    "mg_levels": ("mg_levels", int),
    "mg_cycle": ("mg_cycle", str),
    "threads": ("threads", int),
    "max_outer": ("max_outer", int),
    "eps_g": ("eps_g", float),
    "eps_f": ("eps_f", float),
    "eps_s": ("eps_s", float),
    "pcg_tol": ("pcg_tol", float),
    "emin": ("Emin", float),
    "threshold": ("threshold", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "correct": ("correct", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "ls_cut": ("ls_cut", lambda v: tuple(float(t) for t in str(v).replace(",", " ").split())),
    "bd_inset": ("bd_inset", float),
    "bd_deck": ("bd_deck", float),
    "out": ("out", str),
}


def build_parser():
    p = argparse.ArgumentParser(prog="mrtopopt", description="3D compliance topology optimization")
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("--problem", choices=["cb", "mbb", "ls", "bd"])
    p.add_argument("--nel", nargs=3, type=int, metavar=("X", "Y", "Z"))
    p.add_argument("--volfrac", type=float)
    p.add_argument("--rmin", type=float)
    p.add_argument("--nmr", type=int)
    p.add_argument("--dmr", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--family", choices=["lagrange", "serendipity"])
    p.add_argument("--mode", choices=["trad", "mr", "adaptive"])
    p.add_argument("--strategy", choices=["E0", "E1", "E2", "E3", "E4"])
    p.add_argument("--max-degree", dest="max_degree", type=int)
    p.add_argument("--refresh", type=int)
    p.add_argument("--precond", choices=["gmg", "diag"])
    p.add_argument("--mg-levels", dest="mg_levels", type=int)
    p.add_argument("--mg-cycle", dest="mg_cycle", choices=["v", "w"])
    p.add_argument("--threads", type=int)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--no-threshold", dest="threshold", action="store_const", const=False)
    p.add_argument("--out", help="output directory (default: the problem name)")
    return p


def resolve_config(args):
    """Merge config-file values with command-line flags into estimator parameters."""
    params = {}
    out = None
    if args.config:
        for key, raw in load_config(args.config).items():
            if key not in _KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            name, conv = _KEYS[key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
            if name == "out":
                out = value
            else:
                params[name] = value
    for key, value in vars(args).items():
        if key == "config" or value is None:
            continue
        if key == "out":
            out = value
        elif key == "nel":
            params["nel"] = tuple(value)
        else:
            params[key] = value
    if "mode" not in params and (params.get("nmr", 1) > 1 or params.get("dmr", 1) > 1):
        params["mode"] = "mr"
    return params, out


def write_outputs(est, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = est.mesh_.spec
    shape = est.mesh_.density_shape
    h = 1.0 / spec.n_mr
    write_density_vtk(est.density_, shape, out / "density.vtk", h)
    write_density_vtk(est.density_thresholded_, shape, out / "density_thresholded.vtk", h)
    write_density_bin(est.density_, shape, out / "density.bin")
    write_density_bin(est.density_thresholded_, shape, out / "density_thresholded.bin")
    write_history_csv(est.history_, out / "run.csv")
    write_summary(est.report_, out / "summary.txt")


def _setup_logging():
    level = os.environ.get("TOPOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        params, out = resolve_config(args)
        est = TopologyOptimizer(**params)
        est._validate()
    except (ConfigurationError, DomainError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    try:
        est.fit()
    except (SolverError, ResourceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return SOLVER_FAILURE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    out = out or problem_name(est.get_params()["problem"], est.mesh_.spec)
    write_outputs(est, out)
    sys.stdout.write(est.report_.format())
    return est.report_.status


if __name__ == "__main__":
    sys.exit(main())
