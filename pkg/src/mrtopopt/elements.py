"""Hexahedral Lagrange and serendipity elements on the reference cube [-1, 1]^3.

Shape functions are built by inverting the Vandermonde matrix of a monomial
basis at the element nodes, which gives the unique nodal basis of the
polynomial space:

* Lagrange degree ``d``: tensor-product monomials with every exponent <= d.
* Serendipity degree ``r``: monomials of superlinear degree <= r (the total
  degree after discarding variables that appear linearly).

Physical elements are unit cubes, so the reference-to-physical map has the
constant Jacobian ``diag(1/2, 1/2, 1/2)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError, DomainError

LAGRANGE = "lagrange"
SERENDIPITY = "serendipity"

_SUPPORTED = {
    (1, LAGRANGE): 8,
    (2, LAGRANGE): 27,
    (2, SERENDIPITY): 20,
    (3, SERENDIPITY): 32,
}

# half edge length of the unit cube
_HALF = 0.5
_REF_TOL = 1e-12


def normalize_family(family):
    f = str(family).strip().lower()
    if f in ("l", "lag", "lagrange"):
        return LAGRANGE
    if f in ("s", "ser", "serendipity"):
        return SERENDIPITY
    raise ConfigurationError(f"unknown element family {family!r}")


def element_node_count(degree, family):
    """Number of nodes of a hexahedral element.

    >>> element_node_count(1, "lagrange"), element_node_count(3, "serendipity")
    (8, 32)
    """
    key = (int(degree), normalize_family(family))
    if key not in _SUPPORTED:
        raise ConfigurationError(
            f"unsupported element: degree {degree} with family {family!r}; "
            "Lagrange supports degrees 1-2, serendipity degrees 2-3"
        )
    return _SUPPORTED[key]


def _node_category(ijk, degree):
    """0 corner, 1 edge, 2 face, 3 interior (count of non-vertex coordinates)."""
    return sum(1 for c in ijk if 0 < c < degree)


def local_lattice_nodes(degree, family):
    """Local nodes as integer lattice offsets in ``0..degree`` per axis.

    Order: corners, then edge, face and interior nodes; lexicographic with x
    fastest inside each group.
    """
    family = normalize_family(family)
    element_node_count(degree, family)
    nodes = []
    for k, j, i in itertools.product(range(degree + 1), repeat=3):
        cat = _node_category((i, j, k), degree)
        if family == SERENDIPITY and cat > 1:
            continue
        nodes.append((cat, k, j, i))
    nodes.sort()
    return np.array([(i, j, k) for _, k, j, i in nodes], dtype=np.int64)


def _exponents(degree, family):
    if family == LAGRANGE:
        return [e for e in itertools.product(range(degree + 1), repeat=3)]
    out = []
    for e in itertools.product(range(degree + 1), repeat=3):
        superlinear = sum(a for a in e if a >= 2)
        if superlinear <= degree:
            out.append(e)
    return out


def elasticity_matrix(E, nu):
    """Isotropic 6x6 elasticity matrix in Voigt order (xx, yy, zz, yz, xz, xy).

    Shear strains are engineering strains, so the shear diagonal is ``G``.
    """
    if not (-1.0 < nu < 0.5):
        raise DomainError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    D = np.zeros((6, 6))
    D[:3, :3] = c * nu
    D[np.arange(3), np.arange(3)] = c * (1.0 - nu)
    D[np.arange(3, 6), np.arange(3, 6)] = c * (1.0 - 2.0 * nu) / 2.0
    return D


@dataclass(frozen=True)
class Material:
    """Solid/void moduli, Poisson ratio and SIMP exponent."""

    E0: float = 1.0
    Emin: float = 1e-6
    nu: float = 0.3
    penal: float = 3.0

    def __post_init__(self):
        if not (0.0 < self.Emin < self.E0):
            raise ConfigurationError("require 0 < Emin < E0")
        if not (0.0 < self.nu < 0.5):
            raise ConfigurationError("require 0 < nu < 0.5")
        if self.penal < 1.0:
            raise ConfigurationError("SIMP exponent must be >= 1")


def simp_scale(rho, mat):
    """Modulus factor ``Emin + rho**p (E0 - Emin)`` (scalar or array)."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0) or np.any(~np.isfinite(r)):
        raise DomainError("densities must lie in [0, 1]")
    out = mat.Emin + r ** mat.penal * (mat.E0 - mat.Emin)
    return float(out) if out.ndim == 0 else out


def simp_scale_derivative(rho, mat):
    r = np.asarray(rho, dtype=float)
    return mat.penal * r ** (mat.penal - 1.0) * (mat.E0 - mat.Emin)


@dataclass(frozen=True, eq=False)
class ElementKit:
    """Shape functions and stiffness integrals for one element type.

    Use :func:`element_kit` to obtain cached instances.
    """

    degree: int
    family: str
    lattice: np.ndarray = field(repr=False)
    exponents: np.ndarray = field(repr=False)
    coef: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return self.lattice.shape[0]

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    @property
    def ref_nodes(self):
        """Reference coordinates of the nodes, shape (n_nodes, 3)."""
        return -1.0 + 2.0 * self.lattice / self.degree

    def _monomials(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.degree
        # pw[a][:, axis] = x_axis ** a
        pw = np.ones((p + 1,) + pts.shape)
        for a in range(1, p + 1):
            pw[a] = pw[a - 1] * pts
        ex = self.exponents
        vals = pw[ex[:, 0], :, 0] * pw[ex[:, 1], :, 1] * pw[ex[:, 2], :, 2]
        grads = np.zeros((3,) + vals.shape)
        for axis in range(3):
            e = ex[:, axis]
            dpw = np.where(e[:, None] > 0, e[:, None] * pw[np.maximum(e - 1, 0), :, axis], 0.0)
            others = [a for a in range(3) if a != axis]
            grads[axis] = dpw * pw[ex[:, others[0]], :, others[0]] * pw[ex[:, others[1]], :, others[1]]
        # (n_pts, n_mon), (n_pts, 3, n_mon)
        return vals.T, np.transpose(grads, (2, 0, 1))

    def shape_functions(self, pts, check=True):
        """Values ``N`` (n_pts, n_nodes) and reference gradients ``dN`` (n_pts, 3, n_nodes)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if check and np.any(np.abs(pts) > 1.0 + _REF_TOL):
            raise DomainError("reference point outside [-1, 1]^3")
        m, dm = self._monomials(pts)
        return m @ self.coef, dm @ self.coef

    def strain_displacement(self, pts):
        """B matrices (n_pts, 6, 3 n_nodes) for a unit cube element."""
        _, dN = self.shape_functions(pts, check=False)
        dN = dN / _HALF
        n = self.n_nodes
        B = np.zeros((dN.shape[0], 6, 3 * n))
        dx, dy, dz = dN[:, 0], dN[:, 1], dN[:, 2]
        B[:, 0, 0::3] = dx
        B[:, 1, 1::3] = dy
        B[:, 2, 2::3] = dz
        B[:, 3, 1::3] = dz
        B[:, 3, 2::3] = dy
        B[:, 4, 0::3] = dz
        B[:, 4, 2::3] = dx
        B[:, 5, 0::3] = dy
        B[:, 5, 1::3] = dx
        return B

    def integrate_stiffness(self, D, lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0), npts=None):
        """Integral of B^T D B over the reference box ``[lo, hi]`` (unit-cube element)."""
        npts = self.degree + 1 if npts is None else npts
        g, w = np.polynomial.legendre.leggauss(npts)
        axes = []
        for a, b in zip(lo, hi):
            axes.append((0.5 * (b - a) * g + 0.5 * (a + b), 0.5 * (b - a) * w))
        (px, wx), (py, wy), (pz, wz) = axes
        Z, Y, X = np.meshgrid(pz, py, px, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        W = np.einsum("k,j,i->kji", wz, wy, wx).ravel() * _HALF ** 3
        B = self.strain_displacement(pts)
        DB = np.einsum("ab,gbj->gaj", D, B)
        K = np.einsum("g,gai,gaj->ij", W, B, DB)
        return 0.5 * (K + K.T)

    def stiffness(self, E=1.0, nu=0.3):
        return full_stiffness(self.degree, self.family, nu) * E

    def subelement_stiffness(self, n_mr, nu=0.3):
        return subelement_stiffness(self.degree, self.family, n_mr, nu)

    def prolongation_weights(self, pts):
        """Coarse-node interpolation weights of fine nodes at reference points ``pts``."""
        N, _ = self.shape_functions(pts)
        return N


@lru_cache(maxsize=None)
def element_kit(degree, family):
    family = normalize_family(family)
    n = element_node_count(degree, family)
    lattice = local_lattice_nodes(degree, family)
    exps = np.array(_exponents(degree, family), dtype=np.int64)
    if exps.shape[0] != n:
        raise AssertionError("polynomial space dimension does not match node count")
    kit = ElementKit(degree, family, lattice, exps, np.eye(n))
    V, _ = kit._monomials(kit.ref_nodes)
    coef = np.linalg.solve(V, np.eye(n))
    lattice.setflags(write=False)
    coef.setflags(write=False)
    return ElementKit(degree, family, lattice, exps, coef)


def shape_functions(degree, family, pts):
    """Shape function values and reference gradients at ``pts``."""
    return element_kit(degree, family).shape_functions(pts)


@lru_cache(maxsize=None)
def full_stiffness(degree, family, nu):
    """Unit-modulus stiffness matrix of one unit-cube element."""
    kit = element_kit(degree, family)
    K = kit.integrate_stiffness(elasticity_matrix(1.0, nu))
    K.setflags(write=False)
    return K


def subcell_bounds(n_mr):
    """Reference-coordinate boxes of the n_mr^3 sub-cells, x fastest."""
    edges = np.linspace(-1.0, 1.0, n_mr + 1)
    out = []
    for k, j, i in itertools.product(range(n_mr), repeat=3):
        out.append(((edges[i], edges[j], edges[k]), (edges[i + 1], edges[j + 1], edges[k + 1])))
    return out


@lru_cache(maxsize=None)
def subelement_stiffness(degree, family, n_mr, nu):
    """Unit-modulus stiffness integrals over each density sub-cell.

    Returns an array of shape (n_mr^3, 3 n_e, 3 n_e) ordered like
    :func:`subcell_bounds`. For ``n_mr == 1`` the single entry is the full
    element matrix.
    """
    if n_mr < 1:
        raise ConfigurationError("n_mr must be >= 1")
    kit = element_kit(degree, family)
    if n_mr == 1:
        out = np.array(full_stiffness(degree, family, nu))[None]
    else:
        D = elasticity_matrix(1.0, nu)
        out = np.stack([kit.integrate_stiffness(D, lo, hi) for lo, hi in subcell_bounds(n_mr)])
    out.setflags(write=False)
    return out


def prolongation_weights(kit, pts):
    return kit.prolongation_weights(pts)
