"""Discrete trial spaces for the triplet (u, sigma, lambda).

Simplicial family: u continuous piecewise affine vanishing on the lateral
boundary, sigma continuous piecewise affine (d components), lambda piecewise
constant.  Tensor family (d = 1): u continuous bilinear, sigma per time slab a
continuous piecewise quadratic in x (nodal hats plus interval bubbles),
lambda per rectangle constant in t and affine in x.

Global coefficient vectors are laid out in blocks ``[u | sigma | lambda]``.
All integrals are driven by :func:`tabulate`, which returns every local basis
function's value, time derivative, spatial gradient, flux value, flux
divergence and multiplier value at the quadrature points of a batch of elements.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ArgumentError, DataError, DomainError, UnsupportedError
from .mesh import BOTTOM, TOP, SimplicialMesh, TensorMesh, facet_measures
from .quadrature import quad_rule

__all__ = [
    "DofMap",
    "Spaces",
    "Tabulation",
    "DiscreteSolution",
    "build_spaces",
    "tabulate",
    "tabulate_facets",
    "evaluate",
    "interpolate_vertexwise",
    "prolong",
    "locate",
]

FEASIBILITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DofMap:
    """Degrees of freedom of one field.

    ``cell_dofs`` maps (element, local basis index) to a block-local dof or
    ``-1`` for a clamped (lateral boundary) u-value.  ``constrained`` and
    ``bounds`` list the block-local dofs carrying a lower bound.
    """

    field: str
    n: int
    cell_dofs: np.ndarray
    fixed: np.ndarray
    constrained: np.ndarray
    bounds: np.ndarray


@dataclass(frozen=True, eq=False)
class Spaces:
    mesh: object
    family: str
    u: DofMap
    sigma: DofMap
    lam: DofMap

    @property
    def d(self):
        return self.mesh.d

    @property
    def offsets(self):
        nu, ns = self.u.n, self.sigma.n
        return (0, nu, nu + ns, nu + ns + self.lam.n)

    @property
    def n_dofs(self):
        return self.offsets[-1]

    @property
    def n_local(self):
        return self.cell_dofs.shape[1]

    @cached_property
    def cell_dofs(self):
        """(ne, nloc) global dof indices, -1 where a clamped u-value sits."""
        o = self.offsets
        parts = []
        for dm, off in ((self.u, o[0]), (self.sigma, o[1]), (self.lam, o[2])):
            parts.append(np.where(dm.cell_dofs >= 0, dm.cell_dofs + off, -1))
        return np.hstack(parts)

    @cached_property
    def local_fields(self):
        """Field tag ('u', 'sigma', 'lambda') of each local basis function."""
        return np.array(["u"] * self.u.cell_dofs.shape[1]
                        + ["sigma"] * self.sigma.cell_dofs.shape[1]
                        + ["lambda"] * self.lam.cell_dofs.shape[1])

    @cached_property
    def constrained(self):
        o = self.offsets
        return np.concatenate([self.u.constrained + o[0], self.lam.constrained + o[2]])

    @cached_property
    def bounds(self):
        return np.concatenate([self.u.bounds, self.lam.bounds])


def _lateral_nodes(mesh):
    if isinstance(mesh, TensorMesh):
        j = np.arange(len(mesh.vertices)) % (mesh.N + 1)
        return (j == 0) | (j == mesh.N)
    return mesh.lateral_vertices


def interpolate_vertexwise(gfun, mesh):
    """Nodal values of ``gfun`` at every mesh vertex (grid node for tensor meshes)."""
    return np.asarray(gfun(mesh.vertices), dtype=float)


def build_spaces(mesh, family=None, g=None):
    """Build the three dof maps on ``mesh``.

    With an obstacle callable ``g`` the free u-dofs get the lower bound
    ``g(z)`` (nodal interpolation); every lambda-dof gets the bound 0.  The
    obstacle must not be positive at clamped lateral vertices.
    """
    natural = "tensor" if isinstance(mesh, TensorMesh) else "simplicial"
    family = family or natural
    if family == "tensor" and getattr(mesh, "d", 1) != 1:
        raise UnsupportedError("tensor-product spaces are implemented for d = 1 only")
    if family not in ("simplicial", "tensor"):
        raise ArgumentError(f"unknown discretisation family {family!r}")
    if family != natural:
        raise ArgumentError(f"{family} spaces need a {family} mesh, got {natural}")

    lateral = _lateral_nodes(mesh)
    nv = len(mesh.vertices)
    vmap = np.full(nv, -1)
    free = np.flatnonzero(~lateral)
    vmap[free] = np.arange(len(free))
    if g is not None:
        gz = interpolate_vertexwise(g, mesh)
        if np.any(gz[lateral] > FEASIBILITY_TOL):
            raise DataError("obstacle is positive at a lateral boundary vertex")
        u_bounds = gz[free]
    else:
        u_bounds = np.full(len(free), -np.inf)

    if family == "simplicial":
        d = mesh.d
        ne = mesh.n_elements
        u_cells = vmap[mesh.elements]
        s_cells = (mesh.elements[:, :, None] * d + np.arange(d)[None, None, :]).reshape(ne, -1)
        s_n = nv * d
        l_cells = np.arange(ne)[:, None]
        l_n = ne
    else:
        M, N = mesh.M, mesh.N
        i, j = mesh.element_index.T
        u_cells = vmap[mesh.cells]
        base = i * (2 * N + 1)
        s_cells = np.column_stack([base + j, base + j + 1, base + N + 1 + j])
        s_n = M * (2 * N + 1)
        l_cells = np.column_stack([2 * np.arange(M * N), 2 * np.arange(M * N) + 1])
        l_n = 2 * M * N

    empty = np.zeros(0, dtype=int)
    u = DofMap("u", len(free), u_cells, np.flatnonzero(lateral), np.arange(len(free)), u_bounds)
    sigma = DofMap("sigma", s_n, s_cells, empty, empty, np.zeros(0))
    lam = DofMap("lambda", l_n, l_cells, empty, np.arange(l_n), np.zeros(l_n))
    return Spaces(mesh, family, u, sigma, lam)


# ---------------------------------------------------------------------------
# tabulation


@dataclass
class Tabulation:
    """Basis data at quadrature points of a batch of elements.

    Arrays are indexed (element, point, local basis[, component]).
    """

    elements: np.ndarray
    dofs: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    u: np.ndarray
    u_t: np.ndarray
    u_x: np.ndarray
    s: np.ndarray
    s_div: np.ndarray
    m: np.ndarray

    def field_values(self, x):
        """Discrete fields at the points for coefficient vector ``x``."""
        c = np.where(self.dofs >= 0, np.asarray(x)[np.maximum(self.dofs, 0)], 0.0)
        return {
            "u": np.einsum("eqi,ei->eq", self.u, c),
            "u_t": np.einsum("eqi,ei->eq", self.u_t, c),
            "u_x": np.einsum("eqik,ei->eqk", self.u_x, c),
            "sigma": np.einsum("eqik,ei->eqk", self.s, c),
            "div_sigma": np.einsum("eqi,ei->eq", self.s_div, c),
            "lambda": np.einsum("eqi,ei->eq", self.m, c),
        }


def _empty_tab(spaces, elems, nq):
    ne = len(elems)
    nloc = spaces.n_local
    d = spaces.d
    z = np.zeros
    return dict(u=z((ne, nq, nloc)), u_t=z((ne, nq, nloc)), u_x=z((ne, nq, nloc, d)),
                s=z((ne, nq, nloc, d)), s_div=z((ne, nq, nloc)), m=z((ne, nq, nloc)))


def _bary(X):
    """Barycentric coordinates from reference coordinates (..., D)."""
    return np.concatenate([1.0 - X.sum(axis=-1, keepdims=True), X], axis=-1)


def _simplex_geometry(mesh, elems):
    jac = mesh.jacobians[elems]
    inv = np.linalg.inv(jac)
    D = jac.shape[1]
    gref = np.vstack([-np.ones(D), np.eye(D)])  # (D+1, D)
    grads = np.einsum("aj,ejk->eak", gref, inv)  # rows of physical gradients
    return jac, grads


def _tab_simplicial(spaces, elems, X):
    mesh = spaces.mesh
    d = mesh.d
    D = d + 1
    nv = D + 1
    X = np.broadcast_to(X, (len(elems),) + X.shape[-2:]) if X.ndim == 2 else X
    nq = X.shape[1]
    jac, grads = _simplex_geometry(mesh, elems)
    z0 = mesh.vertices[mesh.elements[elems, 0]]
    pts = z0[:, None, :] + np.einsum("ejk,eqk->eqj", jac, X)
    phi = _bary(X)  # (ne, nq, nv)
    out = _empty_tab(spaces, elems, nq)
    out["u"][:, :, :nv] = phi
    out["u_t"][:, :, :nv] = grads[:, None, :, 0]
    out["u_x"][:, :, :nv, :] = grads[:, None, :, 1:]
    for a in range(nv):
        for k in range(d):
            i = nv + a * d + k
            out["s"][:, :, i, k] = phi[:, :, a]
            out["s_div"][:, :, i] = grads[:, None, a, 1 + k]
    out["m"][:, :, -1] = 1.0
    return pts, out


def _tab_tensor(spaces, elems, X):
    mesh = spaces.mesh
    X = np.broadcast_to(X, (len(elems),) + X.shape[-2:]) if X.ndim == 2 else X
    nq = X.shape[1]
    i, j = mesh.element_index[elems].T
    ht = mesh.h_t[i][:, None]
    hx = mesh.h_x[j][:, None]
    s, r = X[..., 0], X[..., 1]
    pts = np.stack([mesh.time_grid[i][:, None] + s * ht, mesh.space_grid[j][:, None] + r * hx],
                   axis=-1)
    out = _empty_tab(spaces, elems, nq)
    # corners (s, r) = (0,0), (1,0), (1,1), (0,1)
    S = [1 - s, s, s, 1 - s]
    dS = [-1.0, 1.0, 1.0, -1.0]
    Rr = [1 - r, 1 - r, r, r]
    dR = [-1.0, -1.0, 1.0, 1.0]
    for a in range(4):
        out["u"][:, :, a] = S[a] * Rr[a]
        out["u_t"][:, :, a] = dS[a] * Rr[a] / ht
        out["u_x"][:, :, a, 0] = S[a] * dR[a] / hx
    out["s"][:, :, 4, 0] = 1 - r
    out["s"][:, :, 5, 0] = r
    out["s"][:, :, 6, 0] = 4 * r * (1 - r)
    out["s_div"][:, :, 4] = -1.0 / hx
    out["s_div"][:, :, 5] = 1.0 / hx
    out["s_div"][:, :, 6] = 4 * (1 - 2 * r) / hx
    out["m"][:, :, 7] = 1 - r
    out["m"][:, :, 8] = r
    return pts, out


def _volume_rule(spaces, degree):
    if spaces.family == "tensor":
        return quad_rule("rectangle", degree)
    return quad_rule("triangle" if spaces.d == 1 else "tet", degree)


def tabulate(spaces, degree=4, elements=None):
    """Tabulate all local basis functions at the volume quadrature points."""
    mesh = spaces.mesh
    elems = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    rule = _volume_rule(spaces, degree)
    if spaces.family == "tensor":
        pts, vals = _tab_tensor(spaces, elems, rule.points)
        scale = mesh.measures[elems]
    else:
        pts, vals = _tab_simplicial(spaces, elems, rule.points)
        scale = mesh.measures[elems] * (2.0 if spaces.d == 1 else 6.0)
    weights = scale[:, None] * rule.weights[None, :]
    return Tabulation(elems, spaces.cell_dofs[elems], pts, weights, **vals)


def tabulate_facets(spaces, kind, degree=4):
    """Tabulate basis functions on the bottom (t = 0) or top (t = T) facets.

    ``Tabulation.elements`` holds the owning element of each facet.
    """
    if kind not in (BOTTOM, TOP):
        raise ArgumentError(f"facet kind must be {BOTTOM!r} or {TOP!r}")
    mesh = spaces.mesh
    if spaces.family == "tensor":
        rule = quad_rule("interval", degree)
        slab = 0 if kind == BOTTOM else mesh.M - 1
        elems = slab * mesh.N + np.arange(mesh.N)
        s = 0.0 if kind == BOTTOM else 1.0
        X = np.column_stack([np.full(rule.size, s), rule.points[:, 0]])
        pts, vals = _tab_tensor(spaces, elems, X)
        weights = mesh.h_x[:, None] * rule.weights[None, :]
        return Tabulation(elems, spaces.cell_dofs[elems], pts, weights, **vals)

    bf = mesh.boundary_facets
    sel = np.flatnonzero(bf["kind"] == kind)
    elems = bf["owner"][sel]
    omit = bf["local"][sel]
    d = mesh.d
    rule = quad_rule("interval" if d == 1 else "triangle", degree)
    mu = _bary(rule.points)  # (nqf, d+1) facet barycentrics
    nv = d + 2
    phi = np.zeros((len(sel), rule.size, nv))
    for f, j in enumerate(omit):
        keep = [a for a in range(nv) if a != j]
        phi[f][:, keep] = mu
    X = phi[:, :, 1:]
    pts, vals = _tab_simplicial(spaces, elems, X)
    area = facet_measures(mesh, bf["vertices"][sel])
    ref = 1.0 if d == 1 else 2.0
    weights = (area * ref)[:, None] * rule.weights[None, :]
    return Tabulation(elems, spaces.cell_dofs[elems], pts, weights, **vals)


# ---------------------------------------------------------------------------
# point location and evaluation


def reference_coords(mesh, elems, points):
    """Reference coordinates of ``points[k]`` with respect to ``elems[k]``."""
    elems = np.asarray(elems)
    points = np.asarray(points, dtype=float)
    if isinstance(mesh, TensorMesh):
        i, j = mesh.element_index[elems].T
        s = (points[:, 0] - mesh.time_grid[i]) / mesh.h_t[i]
        r = (points[:, 1] - mesh.space_grid[j]) / mesh.h_x[j]
        return np.column_stack([s, r])
    inv = np.linalg.inv(mesh.jacobians[elems])
    z0 = mesh.vertices[mesh.elements[elems, 0]]
    return np.einsum("ejk,ek->ej", inv, points - z0)


def locate(mesh, point, tol=1e-12):
    """Index of an element whose closure contains ``point``."""
    p = np.asarray(point, dtype=float).ravel()
    if len(p) != mesh.d + 1:
        raise ArgumentError(f"expected a point with {mesh.d + 1} coordinates")
    lo = np.concatenate([[0.0], mesh.omega_lo])
    hi = np.concatenate([[mesh.T], mesh.omega_hi])
    if np.any(p < lo - tol) or np.any(p > hi + tol):
        raise DomainError(f"point {p} lies outside the space-time cylinder")
    if isinstance(mesh, TensorMesh):
        i = min(max(np.searchsorted(mesh.time_grid, p[0], side="right") - 1, 0), mesh.M - 1)
        j = min(max(np.searchsorted(mesh.space_grid, p[1], side="right") - 1, 0), mesh.N - 1)
        return int(i * mesh.N + j)
    allel = np.arange(mesh.n_elements)
    X = reference_coords(mesh, allel, np.broadcast_to(p, (mesh.n_elements, len(p))))
    lam = _bary(X)
    inside = np.flatnonzero(np.all(lam >= -1e-10, axis=1))
    if not inside.size:
        raise DomainError(f"no element contains {p}")
    return int(inside[0])


def _tab_points(spaces, elems, points):
    X = reference_coords(spaces.mesh, elems, points)[:, None, :]
    if spaces.family == "tensor":
        _, vals = _tab_tensor(spaces, elems, X)
    else:
        _, vals = _tab_simplicial(spaces, elems, X)
    ones = np.ones((len(elems), 1))
    return Tabulation(np.asarray(elems), spaces.cell_dofs[elems], points[:, None, :], ones, **vals)


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    spaces: Spaces
    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.shape != (self.spaces.n_dofs,):
            raise ArgumentError(f"coefficient vector has shape {x.shape}, "
                                f"expected ({self.spaces.n_dofs},)")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def mesh(self):
        return self.spaces.mesh

    @property
    def family(self):
        return self.spaces.family

    @property
    def x_u(self):
        o = self.spaces.offsets
        return self.x[o[0]:o[1]]

    @property
    def x_sigma(self):
        o = self.spaces.offsets
        return self.x[o[1]:o[2]]

    @property
    def x_lam(self):
        o = self.spaces.offsets
        return self.x[o[2]:o[3]]

    def evaluate(self, field, point):
        return evaluate(self, field, point)


def evaluate(sol, field, point):
    """Value of ``field`` ('u', 'sigma' or 'lambda') at a point of the closed cylinder."""
    if field not in ("u", "sigma", "lambda"):
        raise ArgumentError(f"unknown field {field!r}")
    p = np.asarray(point, dtype=float).ravel()
    e = locate(sol.mesh, p)
    tab = _tab_points(sol.spaces, np.array([e]), p[None, :])
    val = tab.field_values(sol.x)[field][0, 0]
    return float(val) if np.ndim(val) == 0 else np.asarray(val)


def _fields_at(spaces, x, elems, points):
    return _tab_points(spaces, elems, points).field_values(x)


def prolong(sol, fine_spaces):
    """Coefficients on ``fine_spaces`` reproducing the coarse fields.

    The fine mesh must carry a ``parent`` map into ``sol.mesh``.  Nodal values
    are evaluated in the parent element, the tensor flux bubble is fitted to
    the coarse quadratic at interval midpoints, and multipliers are evaluated
    at their fine nodes, so nested spaces are reproduced exactly.
    """
    fine = fine_spaces.mesh
    if fine.parent is None or len(fine.parent) != fine.n_elements:
        raise ArgumentError("fine mesh carries no parent map")
    coarse_spaces = sol.spaces
    xs = sol.x
    out = np.zeros(fine_spaces.n_dofs)
    o = fine_spaces.offsets
    par = fine.parent

    if fine_spaces.family == "simplicial":
        d = fine.d
        nv = d + 2
        elems = np.repeat(par, nv)
        pts = fine.vertices[fine.elements].reshape(-1, d + 1)
        vals = _fields_at(coarse_spaces, xs, elems, pts)
        vid = fine.elements.ravel()
        umap = fine_spaces.u.cell_dofs.ravel()
        ok = umap >= 0
        out[o[0] + umap[ok]] = vals["u"][ok, 0]
        sig = np.zeros((fine.n_vertices, d))
        sig[vid] = vals["sigma"][:, 0, :]
        out[o[1]:o[2]] = sig.ravel()
        out[o[2]:o[3]] = sol.x_lam[par]
        return out

    # tensor: every fine dof is a point evaluation inside the parent element
    M, N = fine.M, fine.N
    i, j = fine.element_index.T
    t0, t1 = fine.time_grid[i], fine.time_grid[i + 1]
    x0, x1 = fine.space_grid[j], fine.space_grid[j + 1]
    tm = 0.5 * (t0 + t1)
    xm = 0.5 * (x0 + x1)

    corners = [(t0, x0), (t1, x0), (t1, x1), (t0, x1)]
    ucells = fine_spaces.u.cell_dofs
    for a, (tt, xx) in enumerate(corners):
        vals = _fields_at(coarse_spaces, xs, par, np.column_stack([tt, xx]))
        ok = ucells[:, a] >= 0
        out[o[0] + ucells[ok, a]] = vals["u"][ok, 0]

    scells = fine_spaces.sigma.cell_dofs
    left = _fields_at(coarse_spaces, xs, par, np.column_stack([tm, x0]))["sigma"][:, 0, 0]
    right = _fields_at(coarse_spaces, xs, par, np.column_stack([tm, x1]))["sigma"][:, 0, 0]
    mid = _fields_at(coarse_spaces, xs, par, np.column_stack([tm, xm]))["sigma"][:, 0, 0]
    out[o[1] + scells[:, 0]] = left
    out[o[1] + scells[:, 1]] = right
    out[o[1] + scells[:, 2]] = mid - 0.5 * (left + right)

    lcells = fine_spaces.lam.cell_dofs
    lval_l = _fields_at(coarse_spaces, xs, par, np.column_stack([tm, x0]))["lambda"][:, 0]
    lval_r = _fields_at(coarse_spaces, xs, par, np.column_stack([tm, x1]))["lambda"][:, 0]
    out[o[2] + lcells[:, 0]] = lval_l
    out[o[2] + lcells[:, 1]] = lval_r
    del M, N
    return out
