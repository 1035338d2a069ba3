"""Quadrature rules on the reference interval, triangle, tetrahedron and square.

Reference cells are [0, 1], the unit simplex with vertices at the origin and
the unit vectors, and [0, 1]^2.  The symmetric simplex rules are the classical
Strang--Fix/Dunavant (triangle) and Keast (tetrahedron) schemes; their tabulated
values only carry ~15 digits, so the orbit parameters are polished against the
exact monomial moments once at import.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from math import factorial

import numpy as np
from scipy.optimize import least_squares

from .errors import ArgumentError

__all__ = ["QuadRule", "quad_rule", "monomial_integral"]

CELL_DIMS = {"interval": 1, "triangle": 2, "tet": 3, "rectangle": 2}


@dataclass(frozen=True)
class QuadRule:
    cell: str
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def size(self):
        return len(self.weights)


def monomial_integral(cell, exponents):
    """Exact integral of prod x_i**e_i over the reference cell."""
    e = tuple(int(k) for k in exponents)
    if cell in ("interval", "rectangle"):
        return float(np.prod([1.0 / (k + 1) for k in e]))
    # Dirichlet integral over the unit simplex
    num = np.prod([factorial(k) for k in e])
    return num / factorial(sum(e) + len(e))


def _monomials(dim, degree):
    if dim == 1:
        return [(i,) for i in range(degree + 1)]
    if dim == 2:
        return [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]
    return [
        (i, j, k)
        for i in range(degree + 1)
        for j in range(degree + 1 - i)
        for k in range(degree + 1 - i - j)
    ]


def _orbit(bary):
    """Distinct permutations of a barycentric tuple, returned as reference coords."""
    pts = sorted(set(permutations(bary)))
    return np.array([p[1:] for p in pts], dtype=float)


def _polish(cell, build, params, degree):
    dim = CELL_DIMS[cell]
    monos = _monomials(dim, degree)
    exact = np.array([monomial_integral(cell, m) for m in monos])

    def residual(p):
        x, w = build(p)
        vals = np.array([np.prod(x ** np.array(m), axis=1) @ w for m in monos])
        return vals - exact

    sol = least_squares(residual, params, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return build(sol.x)


def _tri4(p):
    a1, a2, w1, w2 = p
    x = np.vstack([_orbit((1 - 2 * a1, a1, a1)), _orbit((1 - 2 * a2, a2, a2))])
    return x, np.repeat([w1, w2], 3)


def _tet4(p):
    a, b, w1, w2, w3 = p
    x = np.vstack(
        [
            _orbit((0.5, 0.5, 0.0, 0.0)),
            _orbit((1 - 3 * a, a, a, a)),
            _orbit((1 - 3 * b, b, b, b)),
        ]
    )
    return x, np.concatenate([np.full(6, w1), np.full(4, w2), np.full(4, w3)])


def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quad_rule(cell, degree):
    """Return a positive-weight rule exact for polynomials of total degree
    ``degree`` (tensor degree on the rectangle)."""
    if cell not in CELL_DIMS:
        raise ArgumentError(f"unsupported cell kind {cell!r}")
    if degree not in (2, 4):
        raise ArgumentError(f"unsupported quadrature degree {degree} (use 2 or 4)")

    if cell == "interval":
        x, w = _gauss(degree // 2 + 1)
        pts, wts = x[:, None], w
    elif cell == "rectangle":
        x, w = _gauss(degree // 2 + 1)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        wts = np.outer(w, w).ravel()
    elif cell == "triangle" and degree == 2:
        pts = _orbit((2 / 3, 1 / 6, 1 / 6))
        wts = np.full(3, 1 / 6)
    elif cell == "triangle":
        pts, wts = _polish(
            "triangle",
            _tri4,
            [0.091576213509771, 0.445948490915965, 0.109951743655322 / 2, 0.223381589678011 / 2],
            4,
        )
    elif degree == 2:
        b = (5 - np.sqrt(5)) / 20
        pts = _orbit((1 - 3 * b, b, b, b))
        wts = np.full(4, 1 / 24)
    else:
        pts, wts = _polish(
            "tet",
            _tet4,
            [0.1005267652252045, 0.3143728734931922, 0.0190476190476190 / 6,
             0.0885898247429807 / 6, 0.1328387466855907 / 6],
            4,
        )
    pts = np.ascontiguousarray(pts, dtype=float)
    wts = np.ascontiguousarray(wts, dtype=float)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(cell, pts, wts, degree)
