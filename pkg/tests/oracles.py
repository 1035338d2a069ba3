"""Independent reference implementations used by the test suite.

The dense assembler below shares nothing with the library except the
reference quadrature rules: basis functions are rebuilt from vertex
coordinates and every matrix entry is accumulated by an explicit loop over
pairs of basis functions.
"""

import numpy as np

from spacetime_obstacle.problems import eval_A, eval_b, eval_c
from spacetime_obstacle.quadrature import quad_rule as _quad_rule


def quad_rule(cell, degree):
    rule = _quad_rule(cell, degree)
    return rule.points, rule.weights


def _msqrt(A):
    w, V = np.linalg.eigh(A)
    return V @ np.diag(np.sqrt(w)) @ V.T, V @ np.diag(1 / np.sqrt(w)) @ V.T


class _Local:
    """Fields of one global basis function restricted to one element, at points."""

    def __init__(self, nq, d):
        self.u = np.zeros(nq)
        self.ut = np.zeros(nq)
        self.ux = np.zeros((nq, d))
        self.s = np.zeros((nq, d))
        self.div = np.zeros(nq)
        self.m = np.zeros(nq)


def _simplex_points(P, cell, degree):
    X, w = quad_rule(cell, degree)
    J = (P[1:] - P[0]).T
    pts = P[0] + X @ J.T
    return pts, w * abs(np.linalg.det(J))


def _barycentric(P):
    """Affine coefficients: lambda_k(p) = c[k] + g[k] . p."""
    n = len(P)
    M = np.hstack([np.ones((n, 1)), P])
    inv = np.linalg.inv(M)  # columns give the barycentric functions
    return inv[0], inv[1:].T


def _simplicial_locals(mesh, spaces, e, pts):
    d = mesh.d
    verts = mesh.elements[e]
    P = mesh.vertices[verts]
    c0, g = _barycentric(P)
    lam = c0[None, :] + pts @ g.T  # (nq, d+2)
    o = spaces.offsets
    lateral = mesh.lateral_vertices
    free_index = np.cumsum(~lateral) - 1
    out = {}
    for k, v in enumerate(verts):
        if not lateral[v]:
            f = _Local(len(pts), d)
            f.u = lam[:, k]
            f.ut[:] = g[k, 0]
            f.ux[:] = g[k, 1:]
            out[o[0] + free_index[v]] = f
        for comp in range(d):
            f = _Local(len(pts), d)
            f.s[:, comp] = lam[:, k]
            f.div[:] = g[k, 1 + comp]
            out[o[1] + v * d + comp] = f
    f = _Local(len(pts), d)
    f.m[:] = 1.0
    out[o[2] + e] = f
    return out


def _tensor_locals(mesh, spaces, e, pts):
    i, j = mesh.element_index[e]
    N = mesh.N
    t0, t1 = mesh.time_grid[i], mesh.time_grid[i + 1]
    x0, x1 = mesh.space_grid[j], mesh.space_grid[j + 1]
    ht, hx = t1 - t0, x1 - x0
    tau = (pts[:, 0] - t0) / ht
    s = (pts[:, 1] - x0) / hx
    o = spaces.offsets
    out = {}
    free = np.ones(len(mesh.vertices), dtype=bool)
    jj = np.arange(len(mesh.vertices)) % (N + 1)
    free[(jj == 0) | (jj == N)] = False
    free_index = np.cumsum(free) - 1
    for a, b in ((0, 0), (1, 0), (1, 1), (0, 1)):
        node = (i + a) * (N + 1) + j + b
        if not free[node]:
            continue
        ft = tau if a else 1 - tau
        fx = s if b else 1 - s
        f = _Local(len(pts), 1)
        f.u = ft * fx
        f.ut = (1 if a else -1) / ht * fx
        f.ux[:, 0] = ft * (1 if b else -1) / hx
        out[o[0] + free_index[node]] = f
    base = i * (2 * N + 1)
    for dof, val, der in ((base + j, 1 - s, -1 / hx + 0 * s), (base + j + 1, s, 1 / hx + 0 * s),
                          (base + N + 1 + j, 4 * s * (1 - s), (4 - 8 * s) / hx)):
        f = _Local(len(pts), 1)
        f.s[:, 0] = val
        f.div = der
        out[o[1] + dof] = f
    for k, val in enumerate((1 - s, s)):
        f = _Local(len(pts), 1)
        f.m = val
        out[o[2] + 2 * e + k] = f
    return out


def _element_rule(mesh, e, degree):
    if mesh.family == "tensor":
        i, j = mesh.element_index[e]
        t0, t1 = mesh.time_grid[i], mesh.time_grid[i + 1]
        x0, x1 = mesh.space_grid[j], mesh.space_grid[j + 1]
        X, w = quad_rule("rectangle", degree)
        pts = np.column_stack([t0 + (t1 - t0) * X[:, 0], x0 + (x1 - x0) * X[:, 1]])
        return pts, w * (t1 - t0) * (x1 - x0)
    P = mesh.vertices[mesh.elements[e]]
    return _simplex_points(P, "triangle" if mesh.d == 1 else "tet", degree)


def _bottom_rules(mesh, degree, top=False):
    """(element, points, weights) for every facet on t = 0 (or t = T)."""
    rules = []
    if mesh.family == "tensor":
        X, w = quad_rule("interval", degree)
        slab = mesh.M - 1 if top else 0
        tval = mesh.T if top else 0.0
        for e, (i, j) in enumerate(mesh.element_index):
            if i == slab:
                x0, x1 = mesh.space_grid[j], mesh.space_grid[j + 1]
                pts = np.column_stack([np.full(len(X), tval), x0 + (x1 - x0) * X[:, 0]])
                rules.append((e, pts, w * (x1 - x0)))
        return rules
    cell = "interval" if mesh.d == 1 else "triangle"
    X, w = quad_rule(cell, degree)
    tval = mesh.T if top else 0.0
    for e, verts in enumerate(mesh.elements):
        P = mesh.vertices[verts]
        on = np.abs(P[:, 0] - tval) <= 1e-12
        if on.sum() == mesh.d + 1:
            Q = P[on][:, 1:]
            J = (Q[1:] - Q[0]).T
            x = Q[0] + X @ J.T
            meas = abs(np.linalg.det(J)) if mesh.d == 2 else abs(J[0, 0])
            rules.append((e, np.column_stack([np.full(len(x), tval), x]), w * meas))
    return rules


def dense_assembly(spec, mesh, spaces, degree=4, lam_weight=None):
    """Dense ``S`` and ``F`` by explicit loops over elements and basis pairs."""
    n = spaces.n_dofs
    S = np.zeros((n, n))
    F = np.zeros(n)
    Lam = spec.Lambda if lam_weight is None else lam_weight
    wr = Lam / spec.alpha
    local = _tensor_locals if mesh.family == "tensor" else _simplicial_locals
    for e in range(mesh.n_elements):
        pts, w = _element_rule(mesh, e, degree)
        fields = local(mesh, spaces, e, pts)
        A = eval_A(spec, pts)
        b = eval_b(spec, pts)
        c = eval_c(spec, pts)
        f = np.asarray(spec.f(pts), dtype=float)
        g = np.asarray(spec.g(pts), dtype=float)
        R, G = {}, {}
        for k, fl in fields.items():
            R[k] = fl.ut + fl.div + np.einsum("qk,qk->q", b, fl.ux) + c * fl.u - fl.m
            G[k] = np.array([_msqrt(A[q])[1] @ fl.s[q] + _msqrt(A[q])[0] @ fl.ux[q]
                             for q in range(len(pts))])
        for i, fi in fields.items():
            F[i] += wr * np.sum(w * f * R[i]) + 0.5 * np.sum(w * g * fi.m)
            for j, fj in fields.items():
                S[i, j] += (wr * np.sum(w * R[i] * R[j]) + np.sum(w[:, None] * G[i] * G[j])
                            + 0.5 * np.sum(w * fj.m * fi.u) + 0.5 * np.sum(w * fi.m * fj.u))
    for e, pts, w in _bottom_rules(mesh, degree):
        fields = local(mesh, spaces, e, pts)
        u0 = np.asarray(spec.u0(pts), dtype=float)
        for i, fi in fields.items():
            F[i] += np.sum(w * u0 * fi.u)
            for j, fj in fields.items():
                S[i, j] += np.sum(w * fi.u * fj.u)
    return S, F


def _combine(fields, x):
    """Discrete fields at the points from per-basis-function data."""
    first = next(iter(fields.values()))
    out = {k: np.zeros_like(getattr(first, k)) for k in ("u", "ut", "ux", "s", "div", "m")}
    for i, f in fields.items():
        for k in out:
            out[k] = out[k] + x[i] * getattr(f, k)
    return out


def estimator_parts(spec, mesh, spaces, x, variant, degree=4):
    """Per-element squared estimator parts recomputed from scratch."""
    local = _tensor_locals if mesh.family == "tensor" else _simplicial_locals
    Lam, alpha = spec.Lambda, spec.alpha
    kappa = alpha / Lam + (spec.b_sup ** 2 + spec.c_sup ** 2 * Lam) / alpha
    parts = {k: np.zeros(mesh.n_elements) for k in ("div", "grad", "u0", "p", "c")}
    for e in range(mesh.n_elements):
        pts, w = _element_rule(mesh, e, degree)
        v = _combine(local(mesh, spaces, e, pts), x)
        A, b, c = eval_A(spec, pts), eval_b(spec, pts), eval_c(spec, pts)
        f, g = spec.f(pts), spec.g(pts)
        res = f - v["ut"] - v["div"] - np.einsum("qk,qk->q", b, v["ux"]) - c * v["u"] + v["m"]
        flux = np.array([_msqrt(A[q])[1] @ v["s"][q] + _msqrt(A[q])[0] @ v["ux"][q]
                         for q in range(len(pts))])
        on = g > v["u"]
        dg = np.where(on[:, None], spec.g_grad(pts) - v["ux"], 0.0)
        adg = np.array([_msqrt(A[q])[0] @ dg[q] for q in range(len(pts))])
        dt = np.where(on, spec.g_dt(pts) - v["ut"], 0.0)
        pen = np.maximum(g - v["u"], 0.0)
        if variant == "tilde":
            time_term = Lam / alpha * np.sum(w * dt ** 2)
        else:
            z = mesh.vertices[mesh.elements[e]] if mesh.family != "tensor" else None
            if z is None:
                i, j = mesh.element_index[e]
                h = np.hypot(mesh.h_t[i], mesh.h_x[j])
            else:
                h = max(np.linalg.norm(a - bb) for a in z for bb in z)
            time_term = h ** 2 / alpha * np.sum(w * dt ** 2)
        parts["div"][e] = Lam / alpha * np.sum(w * res ** 2)
        parts["grad"][e] = np.sum(w[:, None] * flux ** 2)
        parts["c"][e] = max(np.sum(w * v["m"] * np.maximum(v["u"] - g, 0.0)), 0.0)
        parts["p"][e] = np.sum(w[:, None] * adg ** 2) + kappa * np.sum(w * pen ** 2) + time_term
    for top in (False, True):
        for e, pts, w in _bottom_rules(mesh, degree, top):
            v = _combine(local(mesh, spaces, e, pts), x)
            parts["p"][e] += np.sum(w * np.maximum(spec.g(pts) - v["u"], 0.0) ** 2)
            if not top:
                parts["u0"][e] += np.sum(w * (spec.u0(pts) - v["u"]) ** 2)
    return parts


def brute_force_qp(S, F, C, l):
    """KKT point of ``min 1/2 x'Sx - F'x, x_C >= l`` by active set enumeration."""
    from itertools import product

    S = np.asarray(S, dtype=float)
    n = len(F)
    for mask in product((False, True), repeat=len(C)):
        mask = np.array(mask, dtype=bool)
        A = np.asarray(C)[mask]
        x = np.zeros(n)
        x[A] = np.asarray(l)[mask]
        I = np.setdiff1d(np.arange(n), A)
        if len(I):
            x[I] = np.linalg.solve(S[np.ix_(I, I)], F[I] - S[np.ix_(I, A)] @ x[A])
        m = S @ x - F
        if np.all(x[C] >= np.asarray(l) - 1e-11) and np.all(m[A] >= -1e-11):
            return x
    raise AssertionError("no KKT point")
