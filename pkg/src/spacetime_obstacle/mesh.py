"""Space-time meshes of the cylinder Q = (0, T) x Omega.

Coordinates are ordered (t, x) for d = 1 and (t, x, y) for d = 2; time is
always the first coordinate.  Meshes are immutable: every refinement returns
a new mesh object that remembers, for one generation, which parent element
each child came from and which coarse edge each new vertex bisects.
"""

from dataclasses import dataclass, replace
from functools import cached_property
from itertools import permutations

import numpy as np

from .errors import ArgumentError, UnsupportedError

__all__ = [
    "SimplicialMesh",
    "TensorMesh",
    "make_square_mesh",
    "make_cube_mesh",
    "make_tensor_mesh",
    "nvb_refine",
    "uniform_refine",
    "check_conforming",
    "min_angle",
    "write_vtk",
]

GEOM_TOL = 1e-12

BOTTOM, TOP, LATERAL = "bottom", "top", "lateral"


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Conforming simplicial partition of Q.

    ``refinement_edge[k]`` is the local index of the vertex opposite the
    bisection edge of element ``k`` (only meaningful for d = 1).
    ``parent[k]`` is the index of the element of the previous mesh that
    contains element ``k``; ``vertex_parents[v]`` holds the endpoints of the
    coarse edge whose midpoint is vertex ``v`` (``-1`` for inherited vertices).
    """

    vertices: np.ndarray
    elements: np.ndarray
    T: float
    omega_lo: np.ndarray
    omega_hi: np.ndarray
    refinement_edge: np.ndarray | None = None
    parent: np.ndarray | None = None
    vertex_parents: np.ndarray | None = None

    def __post_init__(self):
        for name in ("vertices", "elements", "omega_lo", "omega_hi", "refinement_edge",
                     "parent", "vertex_parents"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, copy=True)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def d(self):
        return self.vertices.shape[1] - 1

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def family(self):
        return "simplicial"

    @property
    def volume(self):
        return self.T * float(np.prod(self.omega_hi - self.omega_lo))

    @property
    def omega_diameter(self):
        return float(np.linalg.norm(self.omega_hi - self.omega_lo))

    @cached_property
    def jacobians(self):
        """(ne, 1+d, 1+d) matrices with columns z_i - z_0."""
        z = self.vertices[self.elements]
        return np.transpose(z[:, 1:, :] - z[:, :1, :], (0, 2, 1))

    @cached_property
    def measures(self):
        n = self.d + 1
        fact = 2.0 if n == 2 else 6.0
        return np.abs(np.linalg.det(self.jacobians)) / fact

    @cached_property
    def diameters(self):
        z = self.vertices[self.elements]
        n = z.shape[1]
        best = np.zeros(len(z))
        for i in range(n):
            for j in range(i + 1, n):
                best = np.maximum(best, np.linalg.norm(z[:, i] - z[:, j], axis=1))
        return best

    @cached_property
    def facets(self):
        """All element facets: (sorted vertex tuples, owner element, local index).

        Facet ``j`` of an element omits its local vertex ``j``.
        """
        ne, nloc = self.elements.shape
        rows = []
        for j in range(nloc):
            keep = [i for i in range(nloc) if i != j]
            rows.append(self.elements[:, keep])
        allf = np.sort(np.concatenate(rows), axis=1)
        owner = np.tile(np.arange(ne), nloc)
        local = np.repeat(np.arange(nloc), ne)
        return allf, owner, local

    @cached_property
    def boundary_facets(self):
        """Boundary facets as a dict with keys vertices/owner/local/kind."""
        allf, owner, local = self.facets
        _, inv, counts = np.unique(allf, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        mask = counts[inv] == 1
        verts = allf[mask]
        kind = classify_facets(self, verts)
        return {"vertices": verts, "owner": owner[mask], "local": local[mask], "kind": kind}

    def facet_indices(self, kind):
        bf = self.boundary_facets
        return np.flatnonzero(bf["kind"] == kind)

    @cached_property
    def lateral_vertices(self):
        """Boolean mask of vertices on the lateral boundary [0,T] x dOmega."""
        x = self.vertices[:, 1:]
        on = np.isclose(x, self.omega_lo, atol=GEOM_TOL, rtol=0) | np.isclose(
            x, self.omega_hi, atol=GEOM_TOL, rtol=0
        )
        return on.any(axis=1)


@dataclass(frozen=True, eq=False)
class TensorMesh:
    """Tensor-product partition (t_i, t_{i+1}) x (x_j, x_{j+1}) for d = 1.

    Element ``(i, j)`` has flat index ``i * N + j`` with ``N`` spatial intervals.
    """

    time_grid: np.ndarray
    space_grid: np.ndarray
    parent: np.ndarray | None = None

    def __post_init__(self):
        t = np.array(self.time_grid, dtype=float)
        x = np.array(self.space_grid, dtype=float)
        if t.ndim != 1 or x.ndim != 1 or len(t) < 2 or len(x) < 2:
            raise ArgumentError("grids need at least two points")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(x) <= 0):
            raise ArgumentError("grids must be strictly increasing")
        if abs(t[0]) > GEOM_TOL:
            raise ArgumentError("time grid must start at t = 0")
        for name, arr in (("time_grid", t), ("space_grid", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    d = 1
    family = "tensor"

    @property
    def M(self):
        return len(self.time_grid) - 1

    @property
    def N(self):
        return len(self.space_grid) - 1

    @property
    def n_elements(self):
        return self.M * self.N

    @property
    def T(self):
        return float(self.time_grid[-1])

    @property
    def omega_lo(self):
        return np.array([self.space_grid[0]])

    @property
    def omega_hi(self):
        return np.array([self.space_grid[-1]])

    @property
    def volume(self):
        return self.T * float(self.space_grid[-1] - self.space_grid[0])

    @property
    def omega_diameter(self):
        return float(self.space_grid[-1] - self.space_grid[0])

    @property
    def h_t(self):
        return np.diff(self.time_grid)

    @property
    def h_x(self):
        return np.diff(self.space_grid)

    @cached_property
    def element_index(self):
        """(ne, 2) array of (time slab, space interval) per element."""
        i, j = np.divmod(np.arange(self.n_elements), self.N)
        return np.column_stack([i, j])

    @cached_property
    def measures(self):
        i, j = self.element_index.T
        return self.h_t[i] * self.h_x[j]

    @cached_property
    def diameters(self):
        i, j = self.element_index.T
        return np.hypot(self.h_t[i], self.h_x[j])

    @cached_property
    def vertices(self):
        tt, xx = np.meshgrid(self.time_grid, self.space_grid, indexing="ij")
        return np.column_stack([tt.ravel(), xx.ravel()])

    @cached_property
    def cells(self):
        """Rectangles as counter-clockwise vertex quadruples (for export)."""
        i, j = self.element_index.T
        n1 = self.N + 1
        v00 = i * n1 + j
        return np.column_stack([v00, v00 + n1, v00 + n1 + 1, v00 + 1])


# ---------------------------------------------------------------------------
# construction


def _orient(vertices, elements):
    """Swap the last two local vertices of negatively oriented simplices."""
    z = vertices[elements]
    jac = np.transpose(z[:, 1:, :] - z[:, :1, :], (0, 2, 1))
    neg = np.linalg.det(jac) < 0
    out = elements.copy()
    out[neg, -2], out[neg, -1] = elements[neg, -1], elements[neg, -2]
    return out


def _longest_edge(vertices, elements):
    """Local index of the vertex opposite the longest edge (ties: smallest
    opposite global vertex index)."""
    z = vertices[elements]
    lengths = np.empty((len(elements), 3))
    for i in range(3):
        a, b = (i + 1) % 3, (i + 2) % 3
        lengths[:, i] = np.linalg.norm(z[:, a] - z[:, b], axis=1)
    out = np.empty(len(elements), dtype=int)
    for k in range(len(elements)):
        lmax = lengths[k].max()
        cands = [i for i in range(3) if lengths[k, i] >= lmax * (1 - 1e-12)]
        out[k] = min(cands, key=lambda i: elements[k, i])
    return out


def make_square_mesh(nt, nx, T=1.0, L=0.0, R=1.0):
    """Structured triangulation of (0,T) x (L,R) with 2*nt*nx triangles.

    Every grid cell is split along its diagonal from (t_i, x_j) to
    (t_{i+1}, x_{j+1}); the bisection edge of each triangle is its longest edge.
    """
    if int(nt) != nt or int(nx) != nx or nt < 1 or nx < 1:
        raise ArgumentError(f"element counts must be positive integers, got {nt}, {nx}")
    if not T > 0:
        raise ArgumentError(f"final time must be positive, got {T}")
    if not L < R:
        raise ArgumentError(f"degenerate spatial interval ({L}, {R})")
    nt, nx = int(nt), int(nx)
    t = np.linspace(0.0, T, nt + 1)
    x = np.linspace(L, R, nx + 1)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    verts = np.column_stack([tt.ravel(), xx.ravel()])
    i, j = np.divmod(np.arange(nt * nx), nx)
    v00 = i * (nx + 1) + j
    v10 = v00 + nx + 1
    v01 = v00 + 1
    v11 = v10 + 1
    elems = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    elems = _orient(verts, elems)
    return SimplicialMesh(
        verts, elems, float(T), np.array([float(L)]), np.array([float(R)]),
        refinement_edge=_longest_edge(verts, elems),
    )


def make_cube_mesh(n, T=1.0, lo=(0.0, 0.0), hi=(1.0, 1.0)):
    """Kuhn (Freudenthal) triangulation of (0,T) x box with 6*n^3 tetrahedra.

    Local vertex order follows the monotone path through each cube, which is
    the ordering red refinement expects.
    """
    if int(n) != n or n < 1:
        raise ArgumentError(f"cells per axis must be a positive integer, got {n}")
    n = int(n)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(0.0, T, n + 1), np.linspace(lo[0], hi[0], n + 1),
            np.linspace(lo[1], hi[1], n + 1)]
    grid = np.meshgrid(*axes, indexing="ij")
    verts = np.column_stack([g.ravel() for g in grid])

    def vid(a, b, c):
        return (a * (n + 1) + b) * (n + 1) + c

    base = np.array([(a, b, c) for a in range(n) for b in range(n) for c in range(n)])
    elems = []
    for perm in permutations(range(3)):
        corner = base.copy()
        ids = [vid(*corner.T)]
        for axis in perm:
            corner = corner.copy()
            corner[:, axis] += 1
            ids.append(vid(*corner.T))
        elems.append(np.column_stack(ids))
    elems = np.vstack(elems)
    return SimplicialMesh(verts, elems, float(T), lo, hi)


def make_tensor_mesh(nt, nx, T=1.0, L=0.0, R=1.0):
    if int(nt) != nt or int(nx) != nx or nt < 1 or nx < 1:
        raise ArgumentError(f"element counts must be positive integers, got {nt}, {nx}")
    if not T > 0:
        raise ArgumentError(f"final time must be positive, got {T}")
    if not L < R:
        raise ArgumentError(f"degenerate spatial interval ({L}, {R})")
    return TensorMesh(np.linspace(0.0, T, int(nt) + 1), np.linspace(L, R, int(nx) + 1))


# ---------------------------------------------------------------------------
# facets


def classify_facets(mesh, facet_vertices):
    """Return 'bottom', 'top' or 'lateral' for each boundary facet."""
    t = mesh.vertices[facet_vertices, 0]
    kind = np.full(len(facet_vertices), LATERAL, dtype=object)
    kind[np.all(np.abs(t) <= GEOM_TOL, axis=1)] = BOTTOM
    kind[np.all(np.abs(t - mesh.T) <= GEOM_TOL * max(1.0, mesh.T), axis=1)] = TOP
    return kind.astype(str)


def _facet_on_lateral(mesh, facet_vertices):
    x = mesh.vertices[facet_vertices, 1:]  # (nf, nv, d)
    lo = np.all(np.abs(x - mesh.omega_lo) <= GEOM_TOL, axis=1)
    hi = np.all(np.abs(x - mesh.omega_hi) <= GEOM_TOL, axis=1)
    return (lo | hi).any(axis=1)


def check_conforming(mesh):
    """Raise AssertionError unless the simplicial mesh is a conforming tiling of Q.

    Checks: every facet is shared by at most two elements, facets seen once
    lie on dQ (no hanging nodes), boundary facet measure equals |dQ|, and
    element measures add up to |Q|.
    """
    allf, _, _ = mesh.facets
    _, counts = np.unique(allf, axis=0, return_counts=True)
    assert counts.max() <= 2, "facet shared by more than two elements"
    bf = mesh.boundary_facets
    lateral = bf["kind"] == LATERAL
    assert np.all(_facet_on_lateral(mesh, bf["vertices"][lateral])), "interior facet seen once"
    assert np.all(mesh.measures > 0), "degenerate element"
    vol = mesh.measures.sum()
    assert abs(vol - mesh.volume) <= 1e-12 * mesh.volume, "element measures do not tile Q"
    area = _facet_measures(mesh, bf["vertices"]).sum()
    widths = mesh.omega_hi - mesh.omega_lo
    if mesh.d == 1:
        surface = 2 * widths[0] + 2 * mesh.T
    else:
        surface = 2 * widths[0] * widths[1] + 2 * mesh.T * (widths[0] + widths[1])
    assert abs(area - surface) <= 1e-12 * surface, "boundary facets do not cover dQ"
    return True


def _facet_measures(mesh, facet_vertices):
    z = mesh.vertices[facet_vertices]
    if mesh.d == 1:
        return np.linalg.norm(z[:, 1] - z[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]), axis=1)


def facet_measures(mesh, facet_vertices):
    return _facet_measures(mesh, facet_vertices)


# ---------------------------------------------------------------------------
# refinement


def _edges(elements, pairs):
    """Unique undirected edges and the element->edge table for the given
    local vertex pairs."""
    ne = len(elements)
    e = np.concatenate([np.sort(elements[:, list(p)], axis=1) for p in pairs])
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    return uniq, inv.ravel().reshape(len(pairs), ne).T


def nvb_refine(mesh, marked):
    """Newest vertex bisection of the marked triangles plus conforming closure.

    Each marked element is bisected at least once; neighbours are bisected
    recursively until no hanging node remains.  Children have the new vertex
    as their newest vertex, so their bisection edges are the two halves of
    the parent's remaining edges.
    """
    if not isinstance(mesh, SimplicialMesh):
        raise UnsupportedError("newest vertex bisection needs a simplicial mesh")
    if mesh.d != 1:
        raise UnsupportedError("newest vertex bisection is implemented for d = 1 only; "
                               "use uniform_refine for tetrahedral meshes")
    marked = np.unique(np.asarray(list(marked), dtype=int))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise ArgumentError("marked element index out of range")

    ne = mesh.n_elements
    # canonical form: bisection edge opposite local vertex 0
    r = mesh.refinement_edge
    idx = (r[:, None] + np.arange(3)[None, :]) % 3
    el = np.take_along_axis(mesh.elements, idx, axis=1)

    # edge table columns: 0 -> (p1,p2) bisection edge, 1 -> (p2,p0), 2 -> (p0,p1)
    edges, e2e = _edges(el, [(1, 2), (2, 0), (0, 1)])
    flag = np.zeros(len(edges), dtype=bool)
    flag[e2e[marked, 0]] = True
    while True:
        touched = flag[e2e].any(axis=1)
        new = flag.copy()
        new[e2e[touched, 0]] = True
        if np.array_equal(new, flag):
            break
        flag = new

    nv = mesh.n_vertices
    mid = np.full(len(edges), -1)
    split = np.flatnonzero(flag)
    mid[split] = nv + np.arange(len(split))
    verts = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[split, 0]]
                                             + mesh.vertices[edges[split, 1]])])
    vparents = np.vstack([np.full((nv, 2), -1), edges[split]])

    keep = ~flag[e2e[:, 0]]
    out = [mesh.elements[keep]]
    parent = [np.flatnonzero(keep)]

    bis = np.flatnonzero(~keep)
    p0, p1, p2 = el[bis].T
    m = mid[e2e[bis, 0]]
    # child (m, p0, p1) has bisection edge p0-p1; child (m, p2, p0) has p2-p0
    m_a = mid[e2e[bis, 2]]
    m_b = mid[e2e[bis, 1]]
    a_split = m_a >= 0
    b_split = m_b >= 0

    out.append(np.column_stack([m, p0, p1])[~a_split])
    parent.append(bis[~a_split])
    out.append(np.column_stack([m_a, m, p0])[a_split])
    out.append(np.column_stack([m_a, p1, m])[a_split])
    parent += [bis[a_split], bis[a_split]]

    out.append(np.column_stack([m, p2, p0])[~b_split])
    parent.append(bis[~b_split])
    out.append(np.column_stack([m_b, m, p2])[b_split])
    out.append(np.column_stack([m_b, p0, m])[b_split])
    parent += [bis[b_split], bis[b_split]]

    elems = np.vstack(out)
    parent = np.concatenate(parent)
    ref = np.zeros(len(elems), dtype=int)
    ref[:len(out[0])] = r[keep]
    order = np.argsort(parent, kind="stable")
    return SimplicialMesh(
        verts, elems[order], mesh.T, mesh.omega_lo, mesh.omega_hi,
        refinement_edge=ref[order],
        parent=parent[order], vertex_parents=vparents,
    )


# children of a tetrahedron (x0..x3) in terms of vertices 0..3 and edge
# midpoints (i, j); fixed interior diagonal x02--x13
_RED_CHILDREN = [
    [0, (0, 1), (0, 2), (0, 3)],
    [(0, 1), 1, (1, 2), (1, 3)],
    [(0, 2), (1, 2), 2, (2, 3)],
    [(0, 3), (1, 3), (2, 3), 3],
    [(0, 1), (0, 2), (0, 3), (1, 3)],
    [(0, 1), (0, 2), (1, 2), (1, 3)],
    [(0, 2), (0, 3), (1, 3), (2, 3)],
    [(0, 2), (1, 2), (1, 3), (2, 3)],
]
_TET_PAIRS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _red_refine(mesh):
    el = mesh.elements
    edges, e2e = _edges(el, _TET_PAIRS)
    nv = mesh.n_vertices
    mid = nv + e2e  # (ne, 6)
    verts = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]]
                                             + mesh.vertices[edges[:, 1]])])
    vparents = np.vstack([np.full((nv, 2), -1), edges])

    def col(item):
        if isinstance(item, tuple):
            return mid[:, _TET_PAIRS.index(item)]
        return el[:, item]

    children = np.stack([np.column_stack([col(v) for v in ch]) for ch in _RED_CHILDREN], axis=1)
    ne = len(el)
    return SimplicialMesh(
        verts, children.reshape(ne * 8, 4), mesh.T, mesh.omega_lo, mesh.omega_hi,
        parent=np.repeat(np.arange(ne), 8), vertex_parents=vparents,
    )


def uniform_refine(mesh):
    """Refine every element: 4 triangles, 8 tetrahedra or 4 rectangles per element."""
    if isinstance(mesh, TensorMesh):
        t = mesh.time_grid
        x = mesh.space_grid
        tf = np.sort(np.concatenate([t, 0.5 * (t[1:] + t[:-1])]))
        xf = np.sort(np.concatenate([x, 0.5 * (x[1:] + x[:-1])]))
        i, j = np.divmod(np.arange(4 * mesh.n_elements), 2 * mesh.N)
        return TensorMesh(tf, xf, parent=(i // 2) * mesh.N + j // 2)
    if mesh.d == 2:
        return _red_refine(mesh)
    once = nvb_refine(mesh, range(mesh.n_elements))
    twice = nvb_refine(once, range(once.n_elements))
    # second-sweep midpoints are not midpoints of coarse edges
    return replace(twice, parent=once.parent[twice.parent], vertex_parents=None)


def min_angle(mesh):
    """Smallest interior angle (radians) over all triangles."""
    z = mesh.vertices[mesh.elements]
    best = np.inf
    for i in range(3):
        a = z[:, (i + 1) % 3] - z[:, i]
        b = z[:, (i + 2) % 3] - z[:, i]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        best = min(best, float(np.arccos(np.clip(cos, -1, 1)).min()))
    return best


# ---------------------------------------------------------------------------
# export


def write_vtk(path, mesh, point_data=None, cell_data=None, title="space-time mesh"):
    """Write a legacy-format ASCII VTK unstructured grid.

    Time is written as the first point coordinate; 2D meshes are padded with
    a zero third coordinate.
    """
    if isinstance(mesh, TensorMesh):
        pts = mesh.vertices
        cells = mesh.cells
        ctype = 9  # VTK_QUAD
    else:
        pts = mesh.vertices
        cells = mesh.elements
        ctype = 5 if mesh.d == 1 else 10  # VTK_TRIANGLE / VTK_TETRA
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    nloc = cells.shape[1]
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    lines.append(f"CELLS {len(cells)} {len(cells) * (nloc + 1)}")
    lines += [f"{nloc} " + " ".join(str(int(v)) for v in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(ctype)] * len(cells)
    for header, data, count in (("POINT_DATA", point_data, len(pts)),
                                ("CELL_DATA", cell_data, len(cells))):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (count,):
                raise ArgumentError(f"{header.lower()} field {name!r} has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
