"""Elementwise a posteriori indicators, bulk marking and exact error norms."""

from dataclasses import dataclass, field

import numpy as np

from .assembly import CHUNK, coefficients_at
from .errors import ArgumentError, UnsupportedError
from .fespace import DiscreteSolution, tabulate, tabulate_facets
from .mesh import BOTTOM, TOP

__all__ = [
    "EstimatorReport",
    "ErrorReport",
    "compute_estimator",
    "compute_error",
    "dorfler_mark",
    "VARIANTS",
]

VARIANTS = ("tilde", "hat")


@dataclass(frozen=True, eq=False)
class EstimatorReport:
    """Per-element squared indicator contributions and their totals.

    ``parts`` holds the per-element squared pieces ``div`` (weighted
    first-order residual), ``grad`` (flux mismatch), ``u0`` (initial trace),
    ``p`` (penetration) and ``c`` (complementarity).
    """

    variant: str
    parts: dict = field(repr=False)

    @property
    def eta_r2(self):
        return self.parts["div"] + self.parts["grad"] + self.parts["u0"]

    @property
    def eta_p2(self):
        return self.parts["p"]

    @property
    def eta_c2(self):
        return self.parts["c"]

    @property
    def indicators(self):
        """Squared local indicator used for marking."""
        return self.eta_r2 + self.eta_p2 + self.eta_c2

    def total(self, name):
        return float(np.sum(self.parts[name]))

    @property
    def rho_r2(self):
        return float(np.sum(self.eta_r2))

    @property
    def rho_p2(self):
        return float(np.sum(self.eta_p2))

    @property
    def rho_c2(self):
        return float(np.sum(self.eta_c2))

    @property
    def rho2(self):
        return self.rho_r2 + self.rho_p2 + self.rho_c2


@dataclass(frozen=True)
class ErrorReport:
    """Squared parts of the error in the natural norm."""

    grad: float
    u0: float
    uT: float
    sigma: float
    div: float

    @property
    def total2(self):
        return self.grad + self.u0 + self.uT + self.sigma + self.div

    @property
    def total(self):
        return float(np.sqrt(self.total2))


def _check_solution(mesh, sol):
    if not isinstance(sol, DiscreteSolution):
        raise ArgumentError("expected a DiscreteSolution")
    if sol.mesh is not mesh:
        raise ArgumentError("solution lives on a different mesh")


def _sups(spec, tab_chunks):
    b_sup, c_sup = spec.b_sup, spec.c_sup
    if b_sup is None or c_sup is None:
        bs, cs = 0.0, 0.0
        for pts in tab_chunks:
            _, _, b, c = coefficients_at(spec, pts)
            bs = max(bs, float(np.max(np.linalg.norm(b, axis=1), initial=0.0)))
            cs = max(cs, float(np.max(np.abs(c), initial=0.0)))
        b_sup = bs if b_sup is None else b_sup
        c_sup = cs if c_sup is None else c_sup
    return float(b_sup), float(c_sup)


def compute_estimator(spec, mesh, sol, variant=None, degree=4, lam_weight=None):
    """Evaluate the localized estimator for ``sol``.

    Positive parts and the indicator of ``g > u`` are taken pointwise at
    quadrature nodes.  Initial and final trace terms are credited to the
    element owning the facet.
    """
    _check_solution(mesh, sol)
    variant = variant or spec.estimator
    if variant not in VARIANTS:
        raise ArgumentError(f"unknown estimator variant {variant!r}")
    Lam = spec.Lambda if lam_weight is None else float(lam_weight)
    alpha = spec.alpha
    spaces = sol.spaces
    ne = mesh.n_elements
    parts = {k: np.zeros(ne) for k in ("div", "grad", "u0", "p", "c")}

    chunks = [np.arange(s, min(s + CHUNK, ne)) for s in range(0, ne, CHUNK)]
    b_sup, c_sup = None, None
    if spec.b_sup is None or spec.c_sup is None:
        b_sup, c_sup = _sups(spec, (tabulate(spaces, degree, e).points.reshape(-1, mesh.d + 1)
                                    for e in chunks))
    b_sup = spec.b_sup if b_sup is None else b_sup
    c_sup = spec.c_sup if c_sup is None else c_sup
    kappa = alpha / Lam + (b_sup ** 2 + c_sup ** 2 * Lam) / alpha

    for elems in chunks:
        tab = tabulate(spaces, degree, elems)
        n_e, nq = tab.weights.shape
        W = tab.weights
        pts = tab.points.reshape(n_e * nq, -1)
        half, mhalf, b, c = coefficients_at(spec, pts, elems, nq)
        v = tab.field_values(sol.x)
        u = v["u"].ravel()
        ux = v["u_x"].reshape(-1, mesh.d)
        ut = v["u_t"].ravel()
        sig = v["sigma"].reshape(-1, mesh.d)
        f = np.asarray(spec.f(pts), dtype=float)
        g = np.asarray(spec.g(pts), dtype=float)

        res = f - (ut + v["div_sigma"].ravel()) - np.einsum("nk,nk->n", b, ux) - c * u \
            + v["lambda"].ravel()
        flux = np.einsum("nkl,nl->nk", mhalf, sig) + np.einsum("nkl,nl->nk", half, ux)
        contact = g > u
        pen = np.where(contact, g - u, 0.0)
        dgrad = np.where(contact[:, None], np.asarray(spec.g_grad(pts), dtype=float) - ux, 0.0)
        dt = np.where(contact, np.asarray(spec.g_dt(pts), dtype=float) - ut, 0.0)
        agrad = np.einsum("nkl,nl->nk", half, dgrad)

        def integrate(q):
            return np.sum(W * q.reshape(n_e, nq), axis=1)

        parts["div"][elems] = (Lam / alpha) * integrate(res ** 2)
        parts["grad"][elems] = integrate(np.sum(flux ** 2, axis=1))
        parts["c"][elems] = integrate(v["lambda"].ravel() * np.maximum(u - g, 0.0))
        time_sq = integrate(dt ** 2)
        if variant == "tilde":
            time_term = (Lam / alpha) * time_sq
        else:
            time_term = mesh.diameters[elems] ** 2 * time_sq / alpha
        parts["p"][elems] = (integrate(np.sum(agrad ** 2, axis=1))
                             + kappa * integrate(pen ** 2) + time_term)

    for kind in (BOTTOM, TOP):
        tab = tabulate_facets(spaces, kind, degree)
        n_f, nq = tab.weights.shape
        pts = tab.points.reshape(n_f * nq, -1)
        u = tab.field_values(sol.x)["u"].ravel()
        g = np.asarray(spec.g(pts), dtype=float)
        pen2 = np.sum(tab.weights * (np.maximum(g - u, 0.0) ** 2).reshape(n_f, nq), axis=1)
        np.add.at(parts["p"], tab.elements, pen2)
        if kind == BOTTOM:
            u0 = np.asarray(spec.u0(pts), dtype=float)
            tr = np.sum(tab.weights * ((u0 - u) ** 2).reshape(n_f, nq), axis=1)
            np.add.at(parts["u0"], tab.elements, tr)

    # c can pick up tiny negative round-off only when lambda < 0 within tolerance
    parts["c"] = np.maximum(parts["c"], 0.0)
    return EstimatorReport(variant, parts)


def compute_error(spec, mesh, sol, degree=4):
    """Squared parts of ``|(u, sigma, lambda) - (u_P, sigma_P, lambda_P)|_U``.

    The exact value of ``div(u, sigma) - lambda`` equals ``f - b.grad u - c u``.
    """
    _check_solution(mesh, sol)
    ex = spec.exact
    if ex is None:
        raise UnsupportedError(f"problem {spec.name!r} has no exact solution")
    spaces = sol.spaces
    ne = mesh.n_elements
    grad = sig = div = 0.0
    for s in range(0, ne, CHUNK):
        elems = np.arange(s, min(s + CHUNK, ne))
        tab = tabulate(spaces, degree, elems)
        n_e, nq = tab.weights.shape
        w = tab.weights.ravel()
        pts = tab.points.reshape(n_e * nq, -1)
        v = tab.field_values(sol.x)
        _, _, b, c = coefficients_at(spec, pts, elems, nq)
        gu = np.asarray(ex.grad_u(pts), dtype=float).reshape(-1, mesh.d)
        uu = np.asarray(ex.u(pts), dtype=float)
        es = np.asarray(ex.sigma(pts), dtype=float).reshape(-1, mesh.d) - v["sigma"].reshape(-1, mesh.d)
        eg = gu - v["u_x"].reshape(-1, mesh.d)
        exact_div = np.asarray(spec.f(pts), dtype=float) - np.einsum("nk,nk->n", b, gu) - c * uu
        disc_div = (v["u_t"] + v["div_sigma"] - v["lambda"]).ravel()
        grad += float(w @ np.sum(eg ** 2, axis=1))
        sig += float(w @ np.sum(es ** 2, axis=1))
        div += float(w @ (exact_div - disc_div) ** 2)
    traces = {}
    for kind in (BOTTOM, TOP):
        tab = tabulate_facets(spaces, kind, degree)
        pts = tab.points.reshape(-1, mesh.d + 1)
        e = np.asarray(ex.u(pts), dtype=float) - tab.field_values(sol.x)["u"].ravel()
        traces[kind] = float(tab.weights.ravel() @ e ** 2)
    return ErrorReport(grad, traces[BOTTOM], traces[TOP], sig, div)


def dorfler_mark(report, theta):
    """Smallest set of elements carrying a ``theta`` share of the squared estimator.

    Elements are taken in order of decreasing indicator, ties by index.
    Accepts an :class:`EstimatorReport` or an array of squared indicators.
    """
    if not 0.0 < theta <= 1.0:
        raise ArgumentError("bulk parameter must satisfy 0 < theta <= 1")
    eta = report.indicators if isinstance(report, EstimatorReport) else np.asarray(report, float)
    if eta.ndim != 1 or np.any(eta < 0):
        raise ArgumentError("indicators must be a nonnegative vector")
    order = np.argsort(-eta, kind="stable")
    csum = np.cumsum(eta[order])
    if not len(csum) or csum[-1] <= 0.0:
        return np.zeros(0, dtype=int)
    k = int(np.searchsorted(csum, theta * csum[-1], side="left")) + 1
    return np.sort(order[:k])
