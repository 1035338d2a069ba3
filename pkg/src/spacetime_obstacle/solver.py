"""Primal-dual active set solver for ``min 1/2 x'Sx - F'x`` subject to ``x_C >= l``.

The multiplier block of the least-squares system is block diagonal (1x1 or
2x2 blocks), so inactive multiplier unknowns are eliminated exactly before
each reduced solve and recovered afterwards.  The remaining vertex system is
solved directly or by Jacobi-preconditioned conjugate gradients.

When plain active set steps stall (the least-squares matrix is not an
M-matrix, so they may cycle), a predictor-corrector interior point iteration
takes over and its active set guess is polished by one exact face solve.
"""

import logging
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ArgumentError, InternalError, LinearAlgebraError, NonConvergenceError

__all__ = [
    "PdasResult",
    "SolverOptions",
    "pdas_solve",
    "sparse_spd_solve",
    "oracle_qp_solve",
    "kkt_report",
    "kkt_ok",
]

log = logging.getLogger(__name__)

KKT_STAT_TOL = 1e-9
KKT_FEAS_TOL = 1e-10
KKT_COMPL_TOL = 1e-9
SAFEGUARD_STEPS = 3


@dataclass(frozen=True)
class SolverOptions:
    direct_nnz_threshold: int = 200_000
    cg_rtol: float = 1e-11
    cg_maxiter: int | None = None
    c_a: float = 1.0
    max_iter: int = 50


@dataclass(frozen=True, eq=False)
class PdasResult:
    x: np.ndarray
    m: np.ndarray
    iterations: int
    active: np.ndarray
    converged: bool

    @property
    def active_size(self):
        return len(self.active)


def sparse_spd_solve(S, rhs, threshold=200_000, rtol=1e-11, x0=None, maxiter=None):
    """Solve ``S x = rhs`` for sparse symmetric positive definite ``S``.

    Matrices with at most ``threshold`` stored nonzeros are factorized
    (symmetric-mode LU without pivoting, which for SPD input is a Cholesky
    factorization up to diagonal scaling); larger ones use conjugate gradients
    with a diagonal preconditioner to relative residual ``rtol``.
    """
    S = sp.csr_matrix(S)
    rhs = np.asarray(rhs, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or rhs.shape != (n,):
        raise ArgumentError(f"shape mismatch: matrix {S.shape}, right-hand side {rhs.shape}")
    return _spd_operator(S, threshold, rtol, maxiter)(rhs, x0)


def _spd_operator(S, threshold, rtol, maxiter):
    """Factorize (or prepare CG for) ``S``; returns ``solve(rhs, x0)``."""
    n = S.shape[0]
    if n == 0:
        return lambda rhs, x0=None: np.zeros(0)
    diag = S.diagonal()
    if np.any(diag <= 0):
        raise LinearAlgebraError("matrix has a non-positive diagonal entry")

    if S.nnz <= threshold:
        try:
            lu = spla.splu(sp.csc_matrix(S), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise LinearAlgebraError(f"sparse factorization failed: {exc}") from exc
        if np.any(lu.U.diagonal() <= 0):
            raise LinearAlgebraError("non-positive pivot in sparse factorization")
        return lambda rhs, x0=None: lu.solve(rhs) if np.any(rhs) else np.zeros(n)

    precond = sp.diags(1.0 / diag)

    def cg(rhs, x0=None):
        if not np.any(rhs):
            return np.zeros(n)
        it = 0

        def count(_):
            nonlocal it
            it += 1

        x, info = spla.cg(S, rhs, x0=x0, rtol=rtol, atol=0.0, M=precond,
                          maxiter=maxiter or 20 * n, callback=count)
        if info != 0:
            raise LinearAlgebraError(f"conjugate gradients stagnated after {it} iterations")
        log.debug("pcg converged in %d iterations (n=%d)", it, n)
        return x

    return cg


class _Blocks:
    """Block-diagonal structure (blocks of size 1 or 2) of a symmetric matrix."""

    def __init__(self, D):
        n = D.shape[0]
        ncomp, labels = connected_components(D, directed=False)
        counts = np.bincount(labels, minlength=ncomp)
        if n and counts.max() > 2:
            raise ValueError("blocks larger than 2x2")
        Dd = D.diagonal()
        self.single = np.flatnonzero(counts[labels] == 1)
        order = np.flatnonzero(counts[labels] == 2)
        order = order[np.argsort(labels[order], kind="stable")]
        self.i, self.j = order[0::2], order[1::2]
        self.d1 = Dd[self.single]
        self.a, self.c = Dd[self.i], Dd[self.j]
        self.b = np.asarray(D[self.i, self.j]).ravel() if len(self.i) else np.zeros(0)
        self.det = self.a * self.c - self.b ** 2
        if np.any(self.d1 <= 0) or np.any(self.a <= 0) or np.any(self.det <= 0):
            raise LinearAlgebraError("multiplier block is not positive definite")


class _ReducedSolver:
    """Solves ``S_II y = r`` for varying inactive sets ``I``.

    Inactive dofs of the block-diagonal tail are eliminated exactly; the
    remaining system goes to :func:`sparse_spd_solve`.
    """

    def __init__(self, S, elim_start, opts):
        self.S = S.tocsr()
        self.n = S.shape[0]
        self.opts = opts
        self.elim = np.zeros(self.n, dtype=bool)
        if elim_start is not None:
            self.elim[elim_start:] = True
        self.guess = np.zeros(self.n)
        self._key = self._op = None

    def solve(self, inactive, rhs):
        key = inactive.tobytes()
        if self._key != key:
            self._key, self._op = key, self._prepare(inactive)
        I, V, E, SVE, Dinv, op = self._op
        out = np.zeros(self.n)
        if len(E) == 0:
            out[V] = self._run(op, rhs[V], V)
            return out[I]
        rV, rE = rhs[V], rhs[E]
        yV = self._run(op, rV - SVE @ (Dinv @ rE), V)
        out[V] = yV
        out[E] = Dinv @ (rE - SVE.T @ yV)
        return out[I]

    def _prepare(self, inactive):
        I = np.flatnonzero(inactive)
        V = I[~self.elim[I]]
        E = I[self.elim[I]]
        S = self.S
        SVV = S[V][:, V]
        SVE = Dinv = None
        if len(E):
            SVE = S[V][:, E]
            Dinv = _block_inverse(S[E][:, E])
            SVV = (SVV - SVE @ Dinv @ SVE.T).tocsr()
            SVV = ((SVV + SVV.T) * 0.5).tocsr()
        o = self.opts
        return I, V, E, SVE, Dinv, _spd_operator(SVV, o.direct_nnz_threshold, o.cg_rtol, o.cg_maxiter)

    def _run(self, op, r, V):
        y = op(r, self.guess[V])
        self.guess[V] = y
        return y


def _block_inverse(D):
    """Inverse of a symmetric positive definite block-diagonal matrix (blocks <= 2)."""
    n = D.shape[0]
    if n == 0:
        return sp.csr_matrix((0, 0))
    blk = _Blocks(D)
    k, i, j = blk.single, blk.i, blk.j
    det = blk.det
    rows = np.concatenate([k, i, j, i, j])
    cols = np.concatenate([k, i, j, j, i])
    vals = np.concatenate([1.0 / blk.d1, blk.c / det, blk.a / det, -blk.b / det, -blk.b / det])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def kkt_report(S, F, constrained, bounds, x, m):
    """Stationarity (relative to ``1 + |F|_inf``), feasibility and complementarity of ``(x, m)``."""
    S = sp.csr_matrix(S)
    F = np.asarray(F, dtype=float)
    r = S @ x - F - m
    gap = x[constrained] - np.asarray(bounds, dtype=float)
    mc = m[constrained]
    off = np.ones(len(x), dtype=bool)
    off[constrained] = False
    return {
        "stationarity": float(np.max(np.abs(r), initial=0.0)) / (1.0 + np.max(np.abs(F), initial=0.0)),
        "primal": float(max(0.0, -np.min(gap, initial=0.0))),
        "dual": float(max(0.0, -np.min(mc, initial=0.0))),
        "complementarity": float(np.max(np.abs(mc * gap), initial=0.0)),
        "multiplier_support": float(np.max(np.abs(m[off]), initial=0.0)),
    }


def kkt_ok(report):
    return (report["stationarity"] <= KKT_STAT_TOL
            and report["primal"] <= KKT_FEAS_TOL
            and report["dual"] <= KKT_FEAS_TOL
            and report["complementarity"] <= KKT_COMPL_TOL
            and report["multiplier_support"] == 0.0)


def _unpack(qp):
    S = sp.csr_matrix(qp.S)
    F = np.asarray(qp.F, dtype=float)
    C = np.asarray(qp.constrained, dtype=int)
    l = np.asarray(qp.bounds, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or F.shape != (n,) or C.shape != l.shape:
        raise ArgumentError("inconsistent quadratic program dimensions")
    if len(np.unique(C)) != len(C) or (len(C) and (C.min() < 0 or C.max() >= n)):
        raise ArgumentError("constrained index set is invalid")
    if not np.all(np.isfinite(l)):
        raise ArgumentError("lower bounds must be finite")
    return S, F, C, l, n


def pdas_solve(qp, x0=None, c_a=1.0, max_iter=50, options=None):
    """Primal-dual active set (semismooth Newton) solver.

    The active set is ``{i in C : m_i + c_a (l_i - x_i) > 0}``, evaluated
    with a tolerance of half the KKT feasibility bound so that round-off
    cannot flip degenerate constraints back and forth.  Without a start vector the first
    step is the unconstrained solve.  With a vector ``x0`` the first active
    set holds the constrained dofs where ``x0`` sits on its bound.  ``x0`` may
    also be an earlier :class:`PdasResult` for the same system: its active set
    is reused, and if that set is not reproduced exactly but the earlier
    result still meets the KKT tolerances, it is returned after one step.
    The iteration stops when the active set repeats.

    Active set iterations need not converge when ``S`` is not an M-matrix.
    If the number of changes fails to drop for ``SAFEGUARD_STEPS``
    consecutive steps, a predictor-corrector interior point phase computes
    an accurate active set guess from which the active set steps restart.
    ``iterations`` counts linear solves.
    """
    opts = options or SolverOptions(c_a=c_a, max_iter=max_iter)
    c_a = float(c_a if options is None else opts.c_a)
    max_iter = int(max_iter if options is None else opts.max_iter)
    if not c_a > 0:
        raise ArgumentError("c_a must be positive")
    if max_iter < 1:
        raise ArgumentError("max_iter must be at least 1")
    S, F, C, l, n = _unpack(qp)
    tail = _tail_start(S, getattr(qp, "offsets", None))
    solver = _ReducedSolver(S, tail, opts)
    tol = 0.5 * KKT_FEAS_TOL

    active = np.zeros(len(C), dtype=bool)
    start = x0 if isinstance(x0, PdasResult) else None
    if x0 is not None:
        x0 = np.array(x0.x if start is not None else x0, dtype=float)
        if x0.shape != (n,) or (start is not None and start.m.shape != (n,)):
            raise ArgumentError(f"start vector has shape {x0.shape}, expected ({n},)")
        solver.guess[:] = x0
        active = np.isin(C, start.active) if start is not None else x0[C] <= l + tol

    it = 0
    best, stalled = np.inf, 0
    while True:
        if it >= max_iter:
            raise NonConvergenceError(f"active set did not settle within {max_iter} iterations",
                                      last_iterate=x, iterations=max_iter)
        it += 1
        x, m = _face_solve(solver, S, F, C, l, active)
        crit = m[C] + c_a * (l - x[C])
        new = np.where(active, crit > -tol, crit > c_a * tol)
        changes = int(np.count_nonzero(new != active))
        log.debug("pdas step %d: |A| = %d, %d changes", it, active.sum(), changes)
        if changes == 0:
            return PdasResult(x, m, it, C[active], True)
        if start is not None and it == 1 and kkt_ok(kkt_report(S, F, C, l, start.x, start.m)):
            return PdasResult(start.x, start.m, 1, start.active, True)
        active = new
        if changes < best:
            best, stalled = changes, 0
            continue
        stalled += 1
        if stalled >= SAFEGUARD_STEPS:
            log.debug("active set stalls after %d steps; switching to interior point", it)
            return _finish(solver, S, F, C, l, _interior_point(S, F, C, l, x, tail, opts, it, max_iter))


def _finish(solver, S, F, C, l, ipm):
    """Exact face solve on the interior point's active set guess, if it is consistent."""
    x, m, guess, it = ipm
    xf, mf = _face_solve(solver, S, F, C, l, guess)
    it += 1
    crit = mf[C] + (l - xf[C])
    tol = 0.5 * KKT_FEAS_TOL
    if np.array_equal(np.where(guess, crit > -tol, crit > tol), guess):
        return PdasResult(xf, mf, it, C[guess], True)
    log.debug("interior point active set guess is inconsistent; keeping the interior point")
    return PdasResult(x, m, it, C[x[C] - l <= tol], True)


def _scales(F, l):
    return 1.0 + np.max(np.abs(l), initial=0.0), 1.0 + np.max(np.abs(F), initial=0.0)


def _tail_start(S, offsets):
    """Start of the trailing multiplier block if it is block diagonal, else ``None``."""
    if not offsets or offsets[2] >= S.shape[0]:
        return None
    try:
        _Blocks(S[offsets[2]:, offsets[2]:])
    except ValueError:
        return None
    return offsets[2]


def _face_solve(solver, S, F, C, l, fixed):
    """Minimizer of the objective with ``x_i = l_i`` on ``C[fixed]``, plus multipliers."""
    n = S.shape[0]
    A = C[fixed]
    x = np.zeros(n)
    x[A] = l[fixed]
    inactive = np.ones(n, dtype=bool)
    inactive[A] = False
    x[inactive] = solver.solve(inactive, F - S @ x)
    m = np.zeros(n)
    m[A] = (S @ x - F)[A]
    return x, m


def _interior_point(S, F, C, l, x, tail, opts, it, max_iter):
    """Mehrotra predictor-corrector interior point iteration.

    Runs until ``(x, m)`` with ``m = z`` on the constrained dofs meets the
    KKT tolerances.  Returns ``x``, ``m``, the active set guess
    ``z_i > S_ii s_i`` (multiplier against slack in gradient units) and the
    updated solve count.
    """
    n = S.shape[0]
    nc = len(C)
    scale_x, scale_f = _scales(F, l)
    x = x.copy()
    g = S @ x - F
    s = np.maximum(x[C] - l, 1e-2 * scale_x)
    z = np.maximum(g[C], 1e-2 * scale_f)

    def max_step(v, dv):
        neg = dv < 0
        return float(np.min(-v[neg] / dv[neg], initial=np.inf))

    while True:
        m = np.zeros(n)
        m[C] = z
        if kkt_ok(kkt_report(S, F, C, l, x, m)):
            return x, m, z > S.diagonal()[C] * s, it
        if it + 2 > max_iter:
            raise NonConvergenceError(f"active set did not settle within {max_iter} iterations",
                                      last_iterate=x, iterations=max_iter)
        it += 2
        mu = s @ z / nc
        rd = S @ x - F
        rd[C] -= z
        rp = x[C] - l - s
        M = (S + sp.csr_matrix((z / s, (C, C)), shape=(n, n))).tocsr()
        solver = _ReducedSolver(M, tail, opts)
        everything = np.ones(n, dtype=bool)

        def newton(rc):
            rhs = -rd
            rhs[C] -= (rc + z * rp) / s
            dx = solver.solve(everything, rhs)
            ds = dx[C] + rp
            return dx, ds, -(rc + z * ds) / s

        dx, ds, dz = newton(s * z)
        a_aff = min(1.0, max_step(s, ds), max_step(z, dz))
        mu_aff = (s + a_aff * ds) @ (z + a_aff * dz) / nc
        sigma = (mu_aff / mu) ** 3
        dx, ds, dz = newton(s * z + ds * dz - sigma * mu)
        step = min(1.0, 0.99 * min(max_step(s, ds), max_step(z, dz)))
        x, s, z = x + step * dx, s + step * ds, z + step * dz
        log.debug("interior point step %d: mu = %.3e, step = %.3f, |rd| = %.2e, |rp| = %.2e",
                  it, mu, step, np.abs(rd).max(), np.abs(rp).max())


def oracle_qp_solve(qp, max_n=20, max_constrained=12, tol=1e-10):
    """Exact solution by enumerating every active set (small problems only)."""
    S, F, C, l, n = _unpack(qp)
    if n > max_n or len(C) > max_constrained:
        raise ArgumentError(f"oracle limited to n <= {max_n} and |C| <= {max_constrained}")
    S = S.toarray()
    scale = 1.0 + np.max(np.abs(F), initial=0.0) + np.max(np.abs(l), initial=0.0)
    for mask in product((False, True), repeat=len(C)):
        mask = np.array(mask, dtype=bool)
        A = C[mask]
        x = np.zeros(n)
        x[A] = l[mask]
        I = np.setdiff1d(np.arange(n), A)
        if len(I):
            x[I] = np.linalg.solve(S[np.ix_(I, I)], F[I] - S[np.ix_(I, A)] @ l[mask])
        m = S @ x - F
        if np.all(x[C] >= l - tol * scale) and np.all(m[A] >= -tol * scale):
            return x
    raise InternalError("no KKT point found; the matrix is probably not positive definite")
