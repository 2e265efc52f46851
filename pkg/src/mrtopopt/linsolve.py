"""Stiffness assembly, geometric multigrid and preconditioned conjugate gradients.

Boundary conditions are imposed by eliminating fixed (and suppressed) DOFs,
so every matrix here acts on the reduced set of free DOFs. Coarse levels
halve the element counts per axis, keep the element type of the fine level
and are related to it by shape-function interpolation; coarse operators are
Galerkin products ``P^T A P``.
"""
from __future__ import annotations

import logging
import time

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import simp_scale
from .exceptions import ConfigurationError, InvalidStateError, SolverError
from .mesh import MeshSpec, build_mesh

log = logging.getLogger(__name__)

DENSE_COARSE_LIMIT = 3000


@numba.njit(cache=True)
def _gs_forward(indptr, indices, data, diag, r, z):
    n = r.shape[0]
    for i in range(n):
        s = r[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * z[indices[k]]
        z[i] += s / diag[i]


@numba.njit(cache=True)
def _gs_backward(indptr, indices, data, diag, r, z):
    n = r.shape[0]
    for i in range(n - 1, -1, -1):
        s = r[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * z[indices[k]]
        z[i] += s / diag[i]


class Assembler:
    """Maps SIMP-scaled sub-element matrices into a reduced global CSR matrix.

    Only the upper triangle of each element matrix is evaluated; both halves
    of the global matrix are filled from the same accumulated values, so the
    result is exactly symmetric.
    """

    def __init__(self, mesh, ksub, eliminated, chunk=2048):
        self.mesh = mesh
        self.chunk = chunk
        n_dofs = mesh.n_dofs
        elim = np.zeros(n_dofs, dtype=bool)
        elim[np.asarray(eliminated, dtype=np.int64)] = True
        self.free = np.flatnonzero(~elim)
        g2r = np.full(n_dofs, -1, dtype=np.int64)
        g2r[self.free] = np.arange(self.free.size)
        self.g2r = g2r
        n = self.free.size
        if n == 0:
            raise ConfigurationError("every DOF is constrained")
        m = ksub.shape[1]
        iu, ju = np.triu_indices(m)
        self.ksub_upper = np.ascontiguousarray(ksub[:, iu, ju])
        R = g2r[mesh.edofs[:, iu]]
        C = g2r[mesh.edofs[:, ju]]
        valid = (R >= 0) & (C >= 0)
        lo = np.minimum(R, C)[valid]
        hi = np.maximum(R, C)[valid]
        self.valid = valid
        key = lo * n + hi
        ukey, pos = np.unique(key, return_inverse=True)
        self.pos = pos.astype(np.int64)
        self.n_upper = ukey.size
        ulo, uhi = ukey // n, ukey % n
        off = ulo != uhi
        rows = np.concatenate([ulo, uhi[off]])
        cols = np.concatenate([uhi, ulo[off]])
        src = np.concatenate([np.arange(ukey.size), np.flatnonzero(off)])
        order = np.lexsort((cols, rows))
        self.full_to_upper = src[order]
        self.indices = cols[order].astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int32)
        # running offsets of valid entries per element chunk
        self._valid_counts = valid.sum(axis=1)
        self.n = n

    def element_scales(self, rho, mat):
        return simp_scale(rho, mat)[self.mesh.elem_density]

    def assemble(self, rho, mat):
        scale = self.element_scales(rho, mat)
        acc = np.zeros(self.n_upper)
        start = 0
        n_el = scale.shape[0]
        for s in range(0, n_el, self.chunk):
            vals = scale[s:s + self.chunk] @ self.ksub_upper
            v = vals[self.valid[s:s + self.chunk]]
            stop = start + v.size
            acc += np.bincount(self.pos[start:stop], weights=v, minlength=self.n_upper)
            start = stop
        data = acc[self.full_to_upper]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def reduce(self, vec):
        return np.asarray(vec)[self.free]

    def expand(self, vec_r):
        out = np.zeros(self.g2r.size)
        out[self.free] = vec_r
        return out


def node_prolongation(fine, coarse):
    """Sparse (n_fine_nodes, n_coarse_nodes) interpolation by coarse shape functions."""
    kit = coarse.kit
    x = fine.coords
    nel = np.array(coarse.spec.shape)
    ce = np.minimum(np.floor(x / 2.0).astype(np.int64), nel - 1)
    ref = x - 2.0 * ce - 1.0
    N, _ = kit.shape_functions(ref)
    N[np.abs(N) < 1e-13] = 0.0
    e = ce[:, 0] + nel[0] * (ce[:, 1] + nel[1] * ce[:, 2])
    cols = coarse.conn[e]
    rows = np.repeat(np.arange(x.shape[0]), N.shape[1])
    mask = N.ravel() != 0.0
    P = sp.csr_matrix((N.ravel()[mask], (rows[mask], cols.ravel()[mask])), shape=(fine.n_nodes, coarse.n_nodes))
    return P


def coincident_fine_nodes(fine, coarse):
    """Fine node index located at each coarse node."""
    lat = coarse.node_lattice * 2
    fx, fy = fine.lattice_shape[0], fine.lattice_shape[1]
    idx = fine.lattice_to_node[lat[:, 0] + fx * (lat[:, 1] + fy * lat[:, 2])]
    if np.any(idx < 0):
        raise AssertionError("coarse node without a coincident fine node")
    return idx


def feasible_levels(spec, requested):
    """Largest level count <= requested such that every axis halves evenly."""
    levels = 1
    while levels < requested:
        f = 2 ** levels
        if any(n % f for n in spec.shape):
            break
        levels += 1
    if levels < requested:
        log.warning("mesh %s not divisible for %d multigrid levels; using %d", spec.shape, requested, levels)
    return levels


class MultigridHierarchy:
    """Geometric multigrid preconditioner for the reduced stiffness matrix.

    The symbolic part (meshes, prolongations, eliminated DOFs) is built once;
    :meth:`update` refreshes level matrices, smoother data and the coarse
    factorization for a new fine matrix.
    """

    def __init__(self, mesh, free, levels=4, cycle="w", smoother=None, omega=0.5, sweeps=1):
        cycle = str(cycle).lower()
        if cycle not in ("v", "w"):
            raise ConfigurationError(f"multigrid cycle must be 'v' or 'w', got {cycle!r}")
        if levels < 1:
            raise ConfigurationError("need at least one multigrid level")
        if smoother is None:
            smoother = "jacobi" if mesh.spec.degree == 1 else "ssor"
        if smoother not in ("jacobi", "ssor"):
            raise ConfigurationError(f"unknown smoother {smoother!r}")
        self.cycle_type = cycle
        self.smoother = smoother
        self.omega = omega
        self.sweeps = sweeps
        self.n_levels = feasible_levels(mesh.spec, levels)
        self.P = []
        fine = mesh
        fine_free = np.asarray(free)
        for _ in range(1, self.n_levels):
            s = fine.spec
            coarse = build_mesh(MeshSpec(s.nelx // 2, s.nely // 2, s.nelz // 2, 1, 1, s.degree, s.family))
            Pn = node_prolongation(fine, coarse)
            Pd = sp.kron(Pn, sp.identity(3, format="csr"), format="csr")
            fine_is_free = np.zeros(fine.n_dofs, dtype=bool)
            fine_is_free[fine_free] = True
            co = coincident_fine_nodes(fine, coarse)
            coarse_dof_fine = (3 * co[:, None] + np.arange(3)).ravel()
            coarse_free = np.flatnonzero(fine_is_free[coarse_dof_fine])
            Pr = Pd[fine_free][:, coarse_free]
            Pr.eliminate_zeros()
            self.P.append(sp.csr_matrix(Pr))
            fine, fine_free = coarse, coarse_free
        self.PT = [sp.csr_matrix(P.T) for P in self.P]
        self.A = None

    def update(self, A):
        self.A = [sp.csr_matrix(A)]
        for P, PT in zip(self.P, self.PT):
            Ac = sp.csr_matrix(PT @ self.A[-1] @ P)
            # symmetrize away round-off of the triple product
            Ac = sp.csr_matrix(0.5 * (Ac + Ac.T))
            Ac.sort_indices()
            self.A.append(Ac)
        for Al in self.A:
            Al.sort_indices()
        self.diag = [Al.diagonal() for Al in self.A]
        if any(np.any(d <= 0.0) for d in self.diag):
            raise SolverError("non-positive diagonal in a multigrid level")
        Ac = self.A[-1]
        try:
            if Ac.shape[0] <= DENSE_COARSE_LIMIT:
                self._coarse = ("dense", sla.cho_factor(Ac.toarray(), lower=True))
            else:
                self._coarse = ("lu", spla.splu(sp.csc_matrix(Ac)))
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolverError(f"coarse-grid factorization failed: {exc}") from exc

    def level_sizes(self):
        return [p.shape[0] for p in self.P] + ([self.P[-1].shape[1]] if self.P else [])

    def _coarse_solve(self, r):
        kind, fac = self._coarse
        if kind == "dense":
            return sla.cho_solve(fac, r)
        return fac.solve(r)

    def _smooth(self, lvl, r, z, forward):
        A = self.A[lvl]
        if self.smoother == "jacobi":
            for _ in range(self.sweeps):
                z += self.omega * (r - A @ z) / self.diag[lvl]
            return z
        sweep = _gs_forward if forward else _gs_backward
        for _ in range(self.sweeps):
            sweep(A.indptr, A.indices, A.data, self.diag[lvl], r, z)
        return z

    def _cycle(self, lvl, r):
        if lvl == self.n_levels - 1:
            return self._coarse_solve(r)
        A = self.A[lvl]
        z = self._smooth(lvl, r, np.zeros_like(r), True)
        rc = self.PT[lvl] @ (r - A @ z)
        ec = self._cycle(lvl + 1, rc)
        if self.cycle_type == "w" and lvl + 1 < self.n_levels - 1:
            ec = ec + self._cycle(lvl + 1, rc - self.A[lvl + 1] @ ec)
        z += self.P[lvl] @ ec
        return self._smooth(lvl, r, z, False)

    def __call__(self, r):
        if self.A is None:
            raise InvalidStateError("multigrid hierarchy has no numeric setup")
        return self._cycle(0, np.asarray(r, dtype=float))


class DiagonalPreconditioner:
    def update(self, A):
        d = A.diagonal()
        if np.any(d <= 0.0):
            raise SolverError("non-positive diagonal")
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


def pcg(A, b, M=None, x0=None, tol=1e-8, maxit=2000):
    """Preconditioned conjugate gradients with relative-residual stopping.

    Returns ``(x, iterations, history)`` where ``history`` holds
    ``||b - A x|| / ||b||`` per iteration (the recursive residual).
    """
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b), 0, [0.0]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    hist = [np.linalg.norm(r) / nb]
    if hist[-1] <= tol:
        return x, 0, hist
    z = r.copy() if M is None else M(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            raise SolverError("PCG breakdown: matrix or preconditioner not positive definite", hist)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / nb)
        if hist[-1] <= tol:
            return x, it, hist
        z = r.copy() if M is None else M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not reach tol={tol:g} in {maxit} iterations", hist)


class EquilibriumSolver:
    """Reduced stiffness system, preconditioner and warm-started PCG for one mesh.

    Parameters
    ----------
    mesh : MeshTriple
    ksub : (n_sub, m, m) sub-element stiffness matrices for the mesh's element.
    bc : BoundaryConditions
    mat : Material
    precond : {"gmg", "diag"}
    """

    def __init__(self, mesh, ksub, bc, mat, precond="gmg", levels=4, cycle="w", smoother=None,
                 tol=1e-8, maxit=5000, timers=None):
        if precond not in ("gmg", "diag"):
            raise ConfigurationError(f"unknown preconditioner {precond!r}")
        self.mesh = mesh
        self.ksub = ksub
        self.bc = bc
        self.mat = mat
        self.precond_kind = precond
        self.mg_opts = dict(levels=levels, cycle=cycle, smoother=smoother)
        self.tol = tol
        self.maxit = maxit
        self.timers = timers
        self.suppressed = np.zeros(0, dtype=np.int64)
        self.u = None
        self.last_iterations = 0
        self.last_history = []
        self._build_structure()

    def _tick(self, key, t0):
        if self.timers is not None:
            self.timers[key] = self.timers.get(key, 0.0) + time.perf_counter() - t0

    def _build_structure(self):
        t0 = time.perf_counter()
        elim = np.union1d(self.bc.fixed_dofs, self.suppressed)
        self.assembler = Assembler(self.mesh, self.ksub, elim)
        if self.precond_kind == "gmg":
            self.M = MultigridHierarchy(self.mesh, self.assembler.free, **self.mg_opts)
        else:
            self.M = DiagonalPreconditioner()
        self.f_r = self.assembler.reduce(self.bc.f)
        self.u = None
        self._tick("precond_setup", t0)

    @property
    def n_free(self):
        return self.assembler.n

    def set_suppressed(self, dofs):
        """Eliminate extra DOFs (held at zero). Rebuilds structure only on change."""
        dofs = np.unique(np.asarray(dofs, dtype=np.int64))
        if np.intersect1d(dofs, self.bc.fixed_dofs).size or np.any(self.bc.f[dofs] != 0.0):
            raise ConfigurationError("suppressed DOFs must not be supports or loaded")
        if np.array_equal(dofs, self.suppressed):
            return False
        prev = self.u
        self.suppressed = dofs
        self._build_structure()
        if prev is not None:
            self.u = prev.copy()
            self.u[dofs] = 0.0
        return True

    def assemble(self, rho):
        t0 = time.perf_counter()
        K = self.assembler.assemble(rho, self.mat)
        self._tick("assembly", t0)
        return K

    def solve(self, rho, warm=True):
        """Displacements (full DOF vector) for densities ``rho``."""
        K = self.assemble(rho)
        t0 = time.perf_counter()
        self.M.update(K)
        self._tick("precond_setup", t0)
        t0 = time.perf_counter()
        x0 = self.assembler.reduce(self.u) if (warm and self.u is not None) else None
        try:
            ur, it, hist = pcg(K, self.f_r, self.M, x0, self.tol, self.maxit)
        finally:
            self._tick("linear_systems", t0)
        self.last_iterations, self.last_history = it, hist
        self.u = self.assembler.expand(ur)
        self.K = K
        return self.u

    def compliance(self, u=None):
        u = self.u if u is None else u
        if u is None:
            raise InvalidStateError("no displacement solution available")
        return float(self.bc.f @ u)
