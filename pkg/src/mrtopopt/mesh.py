"""Structured hexahedral meshes: displacement, design and density grids.

All displacement elements are unit cubes and the domain is
``[0, nelx] x [0, nely] x [0, nelz]`` with ``y`` pointing up. Every grid is
numbered lexicographically with ``x`` fastest, then ``y``, then ``z``.
Nodes of a degree-``p`` mesh live on a lattice with spacing ``1/p``;
serendipity meshes keep only the lattice points that are element corners or
lie on element edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elements import LAGRANGE, SERENDIPITY, element_kit, element_node_count, normalize_family
from .exceptions import ConfigurationError

BENCHMARKS = ("cb", "mbb", "ls", "bd")
DEFAULT_VOLFRAC = {"cb": 0.2, "mbb": 0.2, "ls": 0.18, "bd": 0.15}


@dataclass(frozen=True)
class MeshSpec:
    nelx: int
    nely: int
    nelz: int
    n_mr: int = 1
    d_mr: int = 1
    degree: int = 1
    family: str = LAGRANGE

    def __post_init__(self):
        object.__setattr__(self, "family", normalize_family(self.family))
        for name in ("nelx", "nely", "nelz", "n_mr", "d_mr", "degree"):
            v = getattr(self, name)
            if int(v) != v:
                raise ConfigurationError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if min(self.nelx, self.nely, self.nelz) < 1:
            raise ConfigurationError("element counts must be >= 1")
        if self.n_mr < 1 or self.d_mr < 1:
            raise ConfigurationError("n_mr and d_mr must be >= 1")
        if self.d_mr > self.n_mr:
            raise ConfigurationError(f"d_mr={self.d_mr} exceeds n_mr={self.n_mr}")
        if self.d_mr == 1 and self.n_mr != 1:
            raise ConfigurationError("d_mr = 1 is only allowed together with n_mr = 1")
        element_node_count(self.degree, self.family)

    @property
    def n_elements(self):
        return self.nelx * self.nely * self.nelz

    @property
    def n_density(self):
        return self.n_mr ** 3 * self.n_elements

    @property
    def n_design(self):
        return self.d_mr ** 3 * self.n_elements

    @property
    def shape(self):
        return (self.nelx, self.nely, self.nelz)

    def with_degree(self, degree, family=None):
        fam = self.family if family is None else family
        return MeshSpec(self.nelx, self.nely, self.nelz, self.n_mr, self.d_mr, degree, fam)


def problem_name(problem, spec):
    """Benchmark naming convention, e.g. ``cb60x20x20``."""
    return f"{problem}{spec.nelx}x{spec.nely}x{spec.nelz}"


def _lex_index(ix, iy, iz, nx, ny):
    return ix + nx * (iy + ny * iz)


def _grid_centers(nx, ny, nz, h):
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return np.column_stack([i.ravel(), j.ravel(), k.ravel()]).astype(float) * h + 0.5 * h


def _containment(spec, m):
    """(n_el, m^3) indices of the fine cells of an m-fold subdivided grid."""
    nx, ny = m * spec.nelx, m * spec.nely
    ez, ey, ex = np.meshgrid(np.arange(spec.nelz), np.arange(spec.nely), np.arange(spec.nelx), indexing="ij")
    ex, ey, ez = ex.ravel(), ey.ravel(), ez.ravel()
    lk, lj, li = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    li, lj, lk = li.ravel(), lj.ravel(), lk.ravel()
    gx = m * ex[:, None] + li[None, :]
    gy = m * ey[:, None] + lj[None, :]
    gz = m * ez[:, None] + lk[None, :]
    return _lex_index(gx, gy, gz, nx, ny)


@dataclass(frozen=True, eq=False)
class MeshTriple:
    """Displacement mesh plus the design and density grids it contains.

    Attributes
    ----------
    coords : (n_nodes, 3) node coordinates.
    conn : (n_el, n_e) element-to-node connectivity (local order of the element kit).
    edofs : (n_el, 3 n_e) element DOF indices, node-major.
    elem_density, elem_design : (n_el, n_mr^3) / (n_el, d_mr^3) containment maps;
        column ``i`` matches sub-cell ``i`` of :func:`mrtopopt.elements.subcell_bounds`.
    density_centers, design_centers : cell-center coordinates.
    """

    spec: MeshSpec
    lattice_shape: tuple
    lattice_to_node: np.ndarray = field(repr=False)
    node_lattice: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)
    conn: np.ndarray = field(repr=False)
    edofs: np.ndarray = field(repr=False)
    elem_density: np.ndarray = field(repr=False)
    elem_design: np.ndarray = field(repr=False)
    density_centers: np.ndarray = field(repr=False)
    design_centers: np.ndarray = field(repr=False)

    @property
    def kit(self):
        return element_kit(self.spec.degree, self.spec.family)

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    @property
    def n_elements(self):
        return self.conn.shape[0]

    @property
    def density_shape(self):
        s = self.spec
        return (s.n_mr * s.nelx, s.n_mr * s.nely, s.n_mr * s.nelz)

    @property
    def design_shape(self):
        s = self.spec
        return (s.d_mr * s.nelx, s.d_mr * s.nely, s.d_mr * s.nelz)

    @property
    def density_volumes(self):
        return np.full(self.spec.n_density, 1.0 / self.spec.n_mr ** 3)

    def element_ijk(self):
        s = self.spec
        e = np.arange(s.n_elements)
        return np.column_stack([e % s.nelx, (e // s.nelx) % s.nely, e // (s.nelx * s.nely)])

    def nearest_node(self, point):
        d = np.linalg.norm(self.coords - np.asarray(point, dtype=float), axis=1)
        # argmin returns the lowest index among ties
        return int(np.argmin(d))

    def nodes_where(self, predicate):
        x, y, z = self.coords.T
        return np.flatnonzero(predicate(x, y, z))

    def node_dofs(self, nodes, components=(0, 1, 2)):
        nodes = np.asarray(nodes, dtype=np.int64)
        return np.sort((3 * nodes[:, None] + np.asarray(components)[None, :]).ravel())


def build_mesh(spec):
    """Build connectivity and containment maps for ``spec``."""
    p = spec.degree
    kit = element_kit(p, spec.family)
    lshape = (p * spec.nelx + 1, p * spec.nely + 1, p * spec.nelz + 1)
    lz, ly, lx = np.meshgrid(np.arange(lshape[2]), np.arange(lshape[1]), np.arange(lshape[0]), indexing="ij")
    lat = np.column_stack([lx.ravel(), ly.ravel(), lz.ravel()])
    if spec.family == SERENDIPITY:
        interior_count = np.sum(lat % p != 0, axis=1)
        keep = interior_count <= 1
    else:
        keep = np.ones(lat.shape[0], dtype=bool)
    l2n = np.full(lat.shape[0], -1, dtype=np.int64)
    l2n[keep] = np.arange(int(keep.sum()))
    node_lattice = lat[keep]
    coords = node_lattice / float(p)

    ez, ey, ex = np.meshgrid(np.arange(spec.nelz), np.arange(spec.nely), np.arange(spec.nelx), indexing="ij")
    base = np.column_stack([ex.ravel(), ey.ravel(), ez.ravel()]) * p
    loc = kit.lattice
    gl = base[:, None, :] + loc[None, :, :]
    lin = _lex_index(gl[..., 0], gl[..., 1], gl[..., 2], lshape[0], lshape[1])
    conn = l2n[lin]
    if np.any(conn < 0):
        raise AssertionError("element references a node missing from the lattice")
    edofs = (3 * conn[:, :, None] + np.arange(3)[None, None, :]).reshape(conn.shape[0], -1)

    elem_density = _containment(spec, spec.n_mr)
    elem_design = _containment(spec, spec.d_mr)
    n, d = spec.n_mr, spec.d_mr
    dens_c = _grid_centers(n * spec.nelx, n * spec.nely, n * spec.nelz, 1.0 / n)
    des_c = _grid_centers(d * spec.nelx, d * spec.nely, d * spec.nelz, 1.0 / d)
    arrays = (l2n, node_lattice, coords, conn, edofs, elem_density, elem_design, dens_c, des_c)
    for a in arrays:
        a.setflags(write=False)
    return MeshTriple(spec, lshape, *arrays)


@dataclass(frozen=True, eq=False)
class BoundaryConditions:
    """Supports, nodal loads and passive density regions of a benchmark."""

    name: str
    fixed_dofs: np.ndarray
    f: np.ndarray
    passive_void: np.ndarray
    passive_solid: np.ndarray
    volfrac: float

    def validate(self, mesh):
        fd = self.fixed_dofs
        if fd.size and (fd.min() < 0 or fd.max() >= mesh.n_dofs):
            raise ConfigurationError("fixed DOF index out of range")
        if np.unique(fd).size != fd.size:
            raise ConfigurationError("duplicate fixed DOFs")
        if np.any(self.f[fd] != 0.0):
            raise ConfigurationError("load applied to a fixed DOF")
        if not (0.0 < self.volfrac < 1.0):
            raise ConfigurationError("volume fraction must lie in (0, 1)")
        if np.intersect1d(self.passive_void, self.passive_solid).size:
            raise ConfigurationError("passive solid and void regions overlap")
        return self


def face_load_vector(kit, face_axis, side, intensity=1.0):
    """Consistent nodal loads of a uniform traction on one face of a unit cube.

    Returns the per-node weights (n_e,) whose sum equals the face area (1)
    times ``intensity``.
    """
    g, w = np.polynomial.legendre.leggauss(kit.degree + 1)
    A, B = np.meshgrid(g, g, indexing="ij")
    WW = np.outer(w, w).ravel()
    pts = np.zeros((WW.size, 3))
    others = [a for a in range(3) if a != face_axis]
    pts[:, others[0]] = A.ravel()
    pts[:, others[1]] = B.ravel()
    pts[:, face_axis] = float(side)
    N, _ = kit.shape_functions(pts)
    # reference face area 4 maps to physical area 1
    w = 0.25 * (WW[:, None] * N).sum(axis=0)
    # shape functions of nodes off the face vanish there up to round-off
    w[np.abs(w) < 1e-12] = 0.0
    return intensity * w


def _as_int_param(value, name):
    if int(value) != value:
        raise ConfigurationError(f"{name}={value} is not aligned to element boundaries")
    return int(value)


def apply_problem(name, mesh, volfrac=None, scale=1, ls_cut=None, bd_inset=None, bd_deck=None):
    """Supports, loads and passive regions for one of the benchmark problems.

    Parameters
    ----------
    name : {"cb", "mbb", "ls", "bd"}
    mesh : MeshTriple
    volfrac : float, optional
        Overrides the benchmark default.
    scale : int
        Ratio between this mesh's element size and the unit the geometric
        parameters are expressed in. Geometry given for a coarse mesh is
        reused on a ``scale``-times refined mesh (corrected compliance).
    ls_cut : (int, int), optional
        Start ``(x, y)`` of the void prism of the L-shaped beam, in elements.
        Defaults to 40% of ``nelx`` and ``nely``, rounded.
    bd_inset : int, optional
        Distance of the bridge supports from the vertices along ``x``.
        Defaults to ``round(nelx / 10)``.
    bd_deck : int, optional
        Element layer (``y`` index) of the bridge deck. Defaults to ``nely // 2``.
    """
    name = str(name).lower()
    if name not in BENCHMARKS:
        raise ConfigurationError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    spec = mesh.spec
    s = int(scale)
    nx, ny, nz = spec.nelx, spec.nely, spec.nelz
    bx, by, bz = nx // s, ny // s, nz // s
    if (bx * s, by * s, bz * s) != (nx, ny, nz):
        raise ConfigurationError("mesh is not an integer refinement of the base geometry")
    f = np.zeros(mesh.n_dofs)
    eps = 1e-9
    void = np.zeros(0, dtype=np.int64)
    solid = np.zeros(0, dtype=np.int64)
    dc = mesh.density_centers

    if name == "cb":
        fixed_nodes = mesh.nodes_where(lambda x, y, z: x < eps)
        fixed = mesh.node_dofs(fixed_nodes)
        load = mesh.nearest_node((nx, 0.0, nz / 2.0))
        f[3 * load + 1] = -1.0
    elif name == "mbb":
        corner_elems = [(0, 0), (nx - s, 0), (0, nz - s), (nx - s, nz - s)]
        fixed_nodes = []
        for x0, z0 in corner_elems:
            fixed_nodes.append(
                mesh.nodes_where(
                    lambda x, y, z, x0=x0, z0=z0: (y < eps)
                    & (x > x0 - eps) & (x < x0 + s + eps)
                    & (z > z0 - eps) & (z < z0 + s + eps)
                )
            )
        fixed = mesh.node_dofs(np.unique(np.concatenate(fixed_nodes)))
        load = mesh.nearest_node((nx / 2.0, ny, nz / 2.0))
        f[3 * load + 1] = -1.0
    elif name == "ls":
        if ls_cut is None:
            cut = (round(0.4 * bx), round(0.4 * by))
        else:
            cut = (_as_int_param(ls_cut[0], "ls_cut[0]"), _as_int_param(ls_cut[1], "ls_cut[1]"))
        if not (0 < cut[0] < bx and 0 < cut[1] < by):
            raise ConfigurationError(f"L-beam cut {cut} outside the domain")
        cx, cy = cut[0] * s, cut[1] * s
        fixed_nodes = mesh.nodes_where(lambda x, y, z: (y > ny - eps) & (x < cx + eps))
        fixed = mesh.node_dofs(fixed_nodes)
        load = mesh.nearest_node((nx, cy / 2.0, nz / 2.0))
        f[3 * load + 1] = -1.0
        void = np.flatnonzero((dc[:, 0] > cx) & (dc[:, 1] > cy))
    else:
        L = round(bx / 10) if bd_inset is None else _as_int_param(bd_inset, "bd_inset")
        deck = by // 2 if bd_deck is None else _as_int_param(bd_deck, "bd_deck")
        if not (0 <= L and 2 * (L + 1) <= bx):
            raise ConfigurationError(f"bridge support inset {L} incompatible with nelx={bx}")
        if not (0 <= deck < by):
            raise ConfigurationError(f"bridge deck layer {deck} outside the domain")
        L, d0, d1 = L * s, deck * s, (deck + 1) * s
        patches = [(L, 0), (nx - L - s, 0), (L, nz - s), (nx - L - s, nz - s)]
        fixed_nodes = []
        for x0, z0 in patches:
            fixed_nodes.append(
                mesh.nodes_where(
                    lambda x, y, z, x0=x0, z0=z0: (y < eps)
                    & (x > x0 - eps) & (x < x0 + s + eps)
                    & (z > z0 - eps) & (z < z0 + s + eps)
                )
            )
        fixed = mesh.node_dofs(np.unique(np.concatenate(fixed_nodes)))
        solid = np.flatnonzero((dc[:, 1] > d0) & (dc[:, 1] < d1))
        top = mesh.element_ijk()[:, 1] == d1 - 1
        w = face_load_vector(mesh.kit, 1, 1.0)
        np.add.at(f, 3 * mesh.conn[top] + 1, -np.broadcast_to(w, (int(top.sum()), w.size)))
        f[fixed] = 0.0

    vf = DEFAULT_VOLFRAC[name] if volfrac is None else float(volfrac)
    bc = BoundaryConditions(name, np.asarray(fixed, dtype=np.int64), f, void, solid, vf)
    return bc.validate(mesh)
