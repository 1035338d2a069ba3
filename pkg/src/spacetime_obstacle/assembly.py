"""Galerkin matrix and load vector of the augmented least-squares form.

For trial/test triplets ``(u, sigma, lambda)`` and ``(v, tau, mu)`` the form is

    a = (Lambda/alpha) (R(u,sigma,lambda), R(v,tau,mu))
        + (A^{-1/2} sigma + A^{1/2} grad u, A^{-1/2} tau + A^{1/2} grad v)
        + (u(0), v(0))_Omega + 1/2 (lambda, v) + 1/2 (mu, u)

with ``R(v,tau,mu) = v_t + div tau + b.grad v + c v - mu``, and the load is
``(Lambda/alpha)(f, R(v,tau,mu)) + (u0, v(0))_Omega + 1/2 (g, mu)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ArgumentError, DataError
from .fespace import tabulate, tabulate_facets
from .mesh import BOTTOM
from .problems import eval_A, eval_b, eval_c

__all__ = [
    "QpSystem",
    "PARTS",
    "assemble_system",
    "functional_value",
    "coefficients_at",
    "residual_and_flux",
    "write_matrix_market",
]

PARTS = ("residual", "flux", "trace", "duality")
CHUNK = 8192


@dataclass(frozen=True, eq=False)
class QpSystem:
    """Bound-constrained quadratic program ``min 1/2 x'Sx - F'x, x_C >= l``.

    ``S`` is a symmetric CSR matrix; ``offsets`` records the block layout
    ``[u | sigma | lambda]``.
    """

    S: sp.csr_matrix
    F: np.ndarray
    constrained: np.ndarray
    bounds: np.ndarray
    offsets: tuple

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def lower_bounds(self):
        return list(zip(self.constrained.tolist(), self.bounds.tolist()))


def _checked(values, name, elems, nq):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        flat = np.flatnonzero(bad.reshape(len(values), -1).any(axis=1))[0]
        raise DataError(f"{name} is not finite at a quadrature point of element "
                        f"{elems[flat // nq]}")
    return values


def _call(fn, name, pts, elems, nq):
    try:
        out = fn(pts)
    except Exception as exc:  # user callables may raise anything
        for k in range(len(elems)):
            try:
                fn(pts[k * nq:(k + 1) * nq])
            except Exception:
                raise DataError(f"evaluating {name} failed on element {elems[k]}: {exc}") from exc
        raise DataError(f"evaluating {name} failed: {exc}") from exc
    return _checked(out, name, elems, nq)


def _sqrt_pair(A):
    """Batched A^{1/2} and A^{-1/2} of symmetric positive definite matrices."""
    w, V = np.linalg.eigh(A)
    if np.any(w <= 0):
        raise DataError("diffusion coefficient is not positive definite")
    half = np.einsum("nij,nj,nkj->nik", V, np.sqrt(w), V)
    mhalf = np.einsum("nij,nj,nkj->nik", V, 1.0 / np.sqrt(w), V)
    return half, mhalf


def coefficients_at(spec, pts, elems=None, nq=1):
    """A^{1/2}, A^{-1/2}, b and c at flattened points ``pts`` of shape (n, 1+d)."""
    elems = np.arange(len(pts)) if elems is None else elems
    if callable(spec.A):
        A = _call(lambda p: eval_A(spec, p), "A", pts, elems, nq)
        half, mhalf = _sqrt_pair(A)
    else:
        half, mhalf = _sqrt_pair(eval_A(spec, pts[:1]))
        half = np.broadcast_to(half[0], (len(pts),) + half.shape[1:])
        mhalf = np.broadcast_to(mhalf[0], (len(pts),) + mhalf.shape[1:])
    b = _call(lambda p: eval_b(spec, p), "b", pts, elems, nq)
    c = _call(lambda p: eval_c(spec, p), "c", pts, elems, nq)
    return half, mhalf, b, c


def residual_and_flux(spec, tab):
    """Residual R and flux G of every local basis function at the points.

    Returns ``R`` of shape (ne, nq, nloc) and ``G`` of shape (ne, nq, nloc, d).
    """
    ne, nq = tab.weights.shape
    pts = tab.points.reshape(ne * nq, -1)
    half, mhalf, b, c = coefficients_at(spec, pts, tab.elements, nq)
    shp = (ne, nq)
    b = b.reshape(shp + b.shape[1:])
    c = c.reshape(shp)
    R = tab.u_t + tab.s_div + np.einsum("eqk,eqik->eqi", b, tab.u_x) + c[..., None] * tab.u - tab.m
    if half.strides[0] == 0:
        G = tab.s @ mhalf[0].T + tab.u_x @ half[0].T
    else:
        half = half.reshape(shp + half.shape[1:])
        mhalf = mhalf.reshape(shp + mhalf.shape[1:])
        G = np.einsum("eqkl,eqil->eqik", mhalf, tab.s) + np.einsum("eqkl,eqil->eqik", half, tab.u_x)
    return R, G


def _scatter(dofs, K, n):
    """Sum local matrices ``K`` (ne, nloc, nloc) into an n-by-n CSR matrix."""
    ne, nloc = dofs.shape
    rows = np.broadcast_to(dofs[:, :, None], K.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], K.shape).ravel()
    keep = (rows >= 0) & (cols >= 0)
    M = sp.coo_matrix((K.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n))
    return M.tocsr()


def _scatter_vec(dofs, v, n):
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=v[keep], minlength=n)


def assemble_system(spec, mesh, spaces, degree=4, lam_weight=None, parts=PARTS):
    """Assemble the quadratic program for ``spec`` on ``spaces``.

    ``parts`` selects which contributions of the bilinear form enter ``S``
    (the load always matches the selected parts).
    """
    if spaces.mesh is not mesh:
        raise ArgumentError("spaces were built on a different mesh")
    if spec.d != mesh.d:
        raise ArgumentError(f"problem has d={spec.d} but the mesh has d={mesh.d}")
    unknown = set(parts) - set(PARTS)
    if unknown:
        raise ArgumentError(f"unknown form parts {sorted(unknown)}")
    Lam = spec.Lambda if lam_weight is None else float(lam_weight)
    if not Lam > 0:
        raise ArgumentError("residual weight must be positive")
    w_res = Lam / spec.alpha
    n = spaces.n_dofs
    S = sp.csr_matrix((n, n))
    F = np.zeros(n)

    for start in range(0, mesh.n_elements, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_elements))
        tab = tabulate(spaces, degree, elems)
        ne, nq = tab.weights.shape
        W = tab.weights
        R, G = residual_and_flux(spec, tab)
        K = np.zeros((ne, spaces.n_local, spaces.n_local))
        Fe = np.zeros((ne, spaces.n_local))
        if "residual" in parts:
            K += w_res * np.einsum("eq,eqi,eqj->eij", W, R, R)
            f = _call(spec.f, "f", tab.points.reshape(ne * nq, -1), elems, nq).reshape(ne, nq)
            Fe += w_res * np.einsum("eq,eq,eqi->ei", W, f, R)
        if "flux" in parts:
            K += np.einsum("eq,eqik,eqjk->eij", W, G, G)
        if "duality" in parts:
            D = 0.5 * np.einsum("eq,eqi,eqj->eij", W, tab.u, tab.m)
            K += D + D.transpose(0, 2, 1)
            g = _call(spec.g, "g", tab.points.reshape(ne * nq, -1), elems, nq).reshape(ne, nq)
            Fe += 0.5 * np.einsum("eq,eq,eqi->ei", W, g, tab.m)
        S = S + _scatter(tab.dofs, K, n)
        F += _scatter_vec(tab.dofs, Fe, n)

    if "trace" in parts:
        tab = tabulate_facets(spaces, BOTTOM, degree)
        ne, nq = tab.weights.shape
        W = tab.weights
        K = np.einsum("eq,eqi,eqj->eij", W, tab.u, tab.u)
        u0 = _call(spec.u0, "u0", tab.points.reshape(ne * nq, -1), tab.elements, nq).reshape(ne, nq)
        S = S + _scatter(tab.dofs, K, n)
        F += _scatter_vec(tab.dofs, np.einsum("eq,eq,eqi->ei", W, u0, tab.u), n)

    S = ((S + S.T) * 0.5).tocsr()
    S.eliminate_zeros()
    S.sort_indices()
    return QpSystem(S, F, spaces.constrained.copy(), spaces.bounds.copy(), spaces.offsets)


def functional_value(spec, mesh, spaces, x, system=None):
    """Augmented least-squares functional ``1/2 x'Sx - F'x`` (data constants dropped)."""
    qp = system if system is not None else assemble_system(spec, mesh, spaces)
    x = np.asarray(x, dtype=float)
    if x.shape != (qp.n,):
        raise ArgumentError(f"vector has shape {x.shape}, expected ({qp.n},)")
    return float(0.5 * x @ (qp.S @ x) - qp.F @ x)


def write_matrix_market(path, qp):
    """Export ``S`` in Matrix Market coordinate format (symmetric storage)."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(qp.S), symmetry="symmetric", precision=17)
