"""Weighted-average density filter and design-to-density projection.

The projection is a sparse row-stochastic matrix ``W`` (n_rho x n_x):
``rho = W @ x``. Distances are measured between cell centers in physical
units, where displacement elements have edge 1, density cells ``1/n_mr`` and
design cells ``1/d_mr``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, DomainError, InvalidStateError, ResourceError

# distances within this tolerance of r_min count as inside the neighborhood
_DIST_TOL = 1e-12
DEFAULT_MEMORY_CAP = 2 * 1024 ** 3


def filter_weight(dist, r_min):
    """Gaussian weight ``exp(-d^2 / (2 s^2)) / (2 pi s)`` with ``s = r_min / 3``; zero beyond ``r_min``."""
    d = np.asarray(dist, dtype=float)
    s = r_min / 3.0
    w = np.exp(-(d * d) / (2.0 * s * s)) / (2.0 * math.pi * s)
    return np.where(d <= r_min + _DIST_TOL, w, 0.0)


@dataclass(frozen=True, eq=False)
class FilterPlan:
    """Precomputed projection for one (mesh, r_min) pair.

    Attributes
    ----------
    W : csr_matrix (n_rho, n_x), normalized weights ``w_ij / w_i``.
    WT : csr_matrix, transpose of ``W`` (design-variable neighborhoods).
    normalizer : (n_rho,) row sums ``w_i`` of the raw weights.
    volumes : (n_rho,) density-cell volumes.
    volume_jacobian : (n_x,) ``W^T v``, the constant derivative of the volume.
    """

    r_min: float
    W: sp.csr_matrix = field(repr=False)
    WT: sp.csr_matrix = field(repr=False)
    normalizer: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)
    volume_jacobian: np.ndarray = field(repr=False)

    @property
    def n_density(self):
        return self.W.shape[0]

    @property
    def n_design(self):
        return self.W.shape[1]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_design,):
            raise DomainError(f"design vector has shape {x.shape}, expected ({self.n_design},)")
        # rows are convex combinations; clip only removes round-off
        return np.clip(self.W @ x, 0.0, 1.0)

    def backpropagate(self, g_rho):
        """Chain rule: density-space gradient to design space."""
        g_rho = np.asarray(g_rho, dtype=float)
        if g_rho.shape != (self.n_density,):
            raise DomainError("density gradient has the wrong length")
        return self.WT @ g_rho

    def volume_and_jacobian(self, rho, v_max):
        """Constraint value ``sum v rho - v_max`` and its (cached) design gradient."""
        return float(self.volumes @ rho) - v_max, self.volume_jacobian


def _estimate_nnz(mesh, r_min):
    h = 1.0 / mesh.spec.d_mr
    ball = 4.0 / 3.0 * math.pi * (r_min + h) ** 3 / h ** 3
    return mesh.spec.n_density * max(1.0, ball)


def build_plan(mesh, r_min, memory_cap=DEFAULT_MEMORY_CAP):
    """Neighborhoods and normalized weights between density and design cells.

    Candidate neighbors are enumerated by integer offsets on the design grid
    around the design cell containing each density center.
    """
    r_min = float(r_min)
    if not r_min > 0.0:
        raise ConfigurationError("r_min must be positive")
    # int32 indices + float64 values, for W and its transpose
    need = _estimate_nnz(mesh, r_min) * 24
    if need > memory_cap:
        raise ResourceError(f"filter neighborhoods need about {need / 2**20:.0f} MiB, above the cap")

    spec = mesh.spec
    h = 1.0 / spec.d_mr
    dshape = np.array(mesh.design_shape)
    dc = mesh.density_centers
    base = np.minimum(np.floor(dc / h).astype(np.int64), dshape - 1)
    R = int(math.ceil(r_min / h)) + 1
    rows, cols, vals = [], [], []
    rho_idx = np.arange(dc.shape[0])
    offs = np.arange(-R, R + 1)
    for oz in offs:
        for oy in offs:
            for ox in offs:
                # closest possible approach of this offset cell to any center in the base cell
                gap = np.maximum(np.abs(np.array([ox, oy, oz])) - 1, 0) * h
                if np.linalg.norm(gap) > r_min + _DIST_TOL:
                    continue
                cand = base + np.array([ox, oy, oz])
                ok = np.all((cand >= 0) & (cand < dshape), axis=1)
                if not ok.any():
                    continue
                c = cand[ok]
                centers = (c + 0.5) * h
                dist = np.linalg.norm(dc[ok] - centers, axis=1)
                inside = dist <= r_min + _DIST_TOL
                if not inside.any():
                    continue
                j = c[inside, 0] + dshape[0] * (c[inside, 1] + dshape[1] * c[inside, 2])
                rows.append(rho_idx[ok][inside])
                cols.append(j)
                vals.append(filter_weight(dist[inside], r_min))
    if not rows:
        raise ConfigurationError("r_min leaves every density cell without design neighbors")
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    raw = sp.csr_matrix((vals, (rows, cols)), shape=(spec.n_density, spec.n_design))
    raw.sum_duplicates()
    raw.sort_indices()
    norm = np.asarray(raw.sum(axis=1)).ravel()
    if np.any(norm <= 0.0):
        raise ConfigurationError("r_min leaves some density cells without design neighbors")
    W = sp.diags(1.0 / norm) @ raw
    W = sp.csr_matrix(W)
    W.sort_indices()
    WT = sp.csr_matrix(W.T)
    WT.sort_indices()
    v = mesh.density_volumes
    jac = WT @ v
    for a in (norm, v, jac, W.data, WT.data):
        a.setflags(write=False)
    return FilterPlan(r_min, W, WT, norm, v, jac)


def threshold_radius(r_min, n_mr):
    """Radius used after thresholding: at most 1.1 density-cell edges."""
    return min(float(r_min), 1.1 / n_mr)


def element_energies(u, mesh, ksub, chunk=4096):
    """``u_e^T K_sub[i] u_e`` for every displacement element and sub-cell, shape (n_el, n_sub)."""
    n_sub, m, _ = ksub.shape
    kflat = ksub.transpose(1, 0, 2).reshape(m, n_sub * m)
    out = np.empty((mesh.n_elements, n_sub))
    for s in range(0, mesh.n_elements, chunk):
        ue = u[mesh.edofs[s:s + chunk]]
        ku = (ue @ kflat).reshape(ue.shape[0], n_sub, m)
        out[s:s + chunk] = np.einsum("eim,em->ei", ku, ue)
    return out


def compliance_density_gradient(u, rho, mesh, ksub, mat):
    """``df/drho_i = -p rho_i^(p-1) (E0 - Emin) u_e^T K_sub[i] u_e``."""
    if u is None or not np.all(np.isfinite(u)):
        raise InvalidStateError("displacements are missing or not finite")
    en = element_energies(u, mesh, ksub)
    energy = np.empty(mesh.spec.n_density)
    energy[mesh.elem_density.ravel()] = en.ravel()
    return -mat.penal * rho ** (mat.penal - 1.0) * (mat.E0 - mat.Emin) * energy


def compliance_gradient(u, rho, plan, mesh, ksub, mat):
    """Design-space gradient ``df/dx`` and the density-space gradient it came from."""
    g_rho = compliance_density_gradient(u, rho, mesh, ksub, mat)
    return plan.backpropagate(g_rho), g_rho
