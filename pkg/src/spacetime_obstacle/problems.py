"""Benchmark parabolic obstacle problems.

All data callables take an array of space-time points of shape (n, 1+d)
(first column = time) and return arrays of shape (n,), (n, d) or (n, d, d).
Coefficients A, b, c may instead be plain constants.
"""

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ArgumentError, DataError

__all__ = [
    "ExactSolution",
    "ProblemSpec",
    "stefan_problem",
    "pyramid_problem",
    "american_option_problem",
    "heat2d_problem",
    "get_problem",
    "PROBLEMS",
    "eval_A",
    "eval_b",
    "eval_c",
    "check_problem",
]


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad_u: Callable  # spatial gradient, (n, d)
    sigma: Callable
    lam: Callable


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    d: int
    T: float
    omega_lo: tuple
    omega_hi: tuple
    A: object
    alpha: float
    b: object
    c: object
    f: Callable
    g: Callable
    u0: Callable
    g_dt: Callable
    g_grad: Callable
    b_sup: float
    c_sup: float
    lam_weight: float | None = None
    exact: ExactSolution | None = None
    estimator: str = "tilde"
    params: dict = field(default_factory=dict)

    @property
    def omega_diameter(self):
        return float(np.linalg.norm(np.subtract(self.omega_hi, self.omega_lo)))

    @property
    def Lambda(self):
        """Residual weight; defaults to diam(Omega)^2, which dominates c_F^2."""
        if self.lam_weight is not None:
            return float(self.lam_weight)
        return self.omega_diameter ** 2

    def with_weight(self, lam_weight):
        if lam_weight is not None and not lam_weight > 0:
            raise ArgumentError("residual weight must be positive")
        return replace(self, lam_weight=lam_weight)


def eval_A(spec, p):
    if callable(spec.A):
        return np.asarray(spec.A(p), dtype=float)
    A = np.asarray(spec.A, dtype=float).reshape(spec.d, spec.d)
    return np.broadcast_to(A, (len(p), spec.d, spec.d))


def eval_b(spec, p):
    if callable(spec.b):
        return np.asarray(spec.b(p), dtype=float)
    b = np.asarray(spec.b, dtype=float).reshape(spec.d)
    return np.broadcast_to(b, (len(p), spec.d))


def eval_c(spec, p):
    if callable(spec.c):
        return np.asarray(spec.c(p), dtype=float)
    return np.full(len(p), float(spec.c))


# ---------------------------------------------------------------------------
# one-phase Stefan problem (Duvaut-transformed)


def _h(t):
    return np.exp(t) - t - 1.0


def _dh(t):
    return np.exp(t) - 1.0


def stefan_problem():
    def u(p):
        t, x = p[:, 0], p[:, 1]
        melt = t > x
        return -_h(t) * (1 - x) + np.where(melt, np.exp(t - x) + x - t - 1, 0.0)

    def grad_u(p):
        t, x = p[:, 0], p[:, 1]
        melt = t > x
        return (_h(t) + np.where(melt, 1 - np.exp(t - x), 0.0))[:, None]

    def lam(p):
        return (p[:, 0] <= p[:, 1]).astype(float)

    def f(p):
        t, x = p[:, 0], p[:, 1]
        return -1.0 - _dh(t) * (1 - x)

    def g(p):
        t, x = p[:, 0], p[:, 1]
        return -_h(t) * (1 - x)

    def g_dt(p):
        return -_dh(p[:, 0]) * (1 - p[:, 1])

    def g_grad(p):
        return _h(p[:, 0])[:, None]

    return ProblemSpec(
        name="stefan", d=1, T=1.0, omega_lo=(0.0,), omega_hi=(1.0,),
        A=1.0, alpha=1.0, b=0.0, c=0.0, f=f, g=g, u0=lambda p: np.zeros(len(p)),
        g_dt=g_dt, g_grad=g_grad, b_sup=0.0, c_sup=0.0,
        exact=ExactSolution(u=u, grad_u=grad_u, sigma=lambda p: -grad_u(p), lam=lam),
    )


# ---------------------------------------------------------------------------
# pyramid-like obstacle on the unit square


def _pyramid_dist(p):
    t, x = p[:, 0], p[:, 1]
    cands = np.column_stack([t, 1 - t, x, 1 - x])
    return cands.min(axis=1), cands.argmin(axis=1)


def pyramid_problem():
    # gradient (d/dt, d/dx) of each distance candidate
    slopes = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

    def g(p):
        dist, _ = _pyramid_dist(p)
        return np.maximum(dist - 0.25, 0.0)

    def _grad(p):
        dist, which = _pyramid_dist(p)
        return np.where((dist > 0.25)[:, None], slopes[which], 0.0)

    zero = lambda p: np.zeros(len(p))  # noqa: E731
    return ProblemSpec(
        name="pyramid", d=1, T=1.0, omega_lo=(0.0,), omega_hi=(1.0,),
        A=1.0, alpha=1.0, b=0.0, c=0.0, f=zero, g=g, u0=zero,
        g_dt=lambda p: _grad(p)[:, 0], g_grad=lambda p: _grad(p)[:, 1:],
        b_sup=0.0, c_sup=0.0,
    )


# ---------------------------------------------------------------------------
# American put in log-price variables


def american_option_problem(sigma_vol=0.4, r=0.06, K=100.0, L=-1.0, R=7.0, T=0.5):
    """American put with homogenised Dirichlet data on (L, R).

    The shift ``(K - e^L)^+ (R - x)/(R - L)`` removes the boundary values; it
    is time independent so it contributes no time derivative to the load.
    """
    if not sigma_vol > 0:
        raise DataError(f"volatility must be positive, got {sigma_vol}")
    if r < 0:
        raise DataError(f"interest rate must be non-negative, got {r}")
    if not L < R:
        raise ArgumentError(f"degenerate interval ({L}, {R})")
    if not T > 0:
        raise ArgumentError(f"final time must be positive, got {T}")
    alpha = sigma_vol ** 2 / 2
    drift = r - alpha
    left = max(K - np.exp(L), 0.0)
    shift_dx = -left / (R - L)

    def shift(x):
        return left * (R - x) / (R - L)

    def payoff(x):
        return np.maximum(K - np.exp(x), 0.0)

    def g(p):
        x = p[:, 1]
        return payoff(x) - shift(x)

    def f(p):
        return drift * shift_dx - r * shift(p[:, 1])

    def g_grad(p):
        x = p[:, 1]
        return (np.where(x < np.log(K), -np.exp(x), 0.0) - shift_dx)[:, None]

    return ProblemSpec(
        name="american_option", d=1, T=float(T), omega_lo=(float(L),), omega_hi=(float(R),),
        A=alpha, alpha=alpha, b=-drift, c=r, f=f, g=g, u0=g,
        g_dt=lambda p: np.zeros(len(p)), g_grad=g_grad,
        b_sup=abs(drift), c_sup=abs(r), estimator="hat",
        params={"sigma_vol": sigma_vol, "r": r, "K": K, "L": L, "R": R, "T": T},
    )


# ---------------------------------------------------------------------------
# heat equation obstacle problem, d = 2


def _hermite_cubic():
    """Coefficients (ascending) of the cubic with value 1/4 and slope 0 at
    x = 1/2 and value 0 and slope 0 at x = 3/4."""
    rows, rhs = [], []
    for x0, val, slope in ((0.5, 0.25, 0.0), (0.75, 0.0, 0.0)):
        rows.append([1.0, x0, x0 ** 2, x0 ** 3])
        rhs.append(val)
        rows.append([0.0, 1.0, 2 * x0, 3 * x0 ** 2])
        rhs.append(slope)
    return np.linalg.solve(np.array(rows), np.array(rhs))


def heat2d_problem():
    coef = _hermite_cubic()
    dcoef = coef[1:] * np.arange(1, 4)

    def gt(x):
        return np.polynomial.polynomial.polyval(x, coef)

    def dgt(x):
        return np.polynomial.polynomial.polyval(x, dcoef)

    def u(p):
        t, x, y = p.T
        return t * (1 - x) * x * (1 - y) * y

    def grad_u(p):
        t, x, y = p.T
        return np.column_stack([t * (1 - 2 * x) * (1 - y) * y, t * (1 - x) * x * (1 - 2 * y)])

    def _w(p):
        t, x, y = p.T
        return (1 - x) * x * (1 - y) * y + 2 * t * (x * (1 - x) + y * (1 - y))

    def f(p):
        x = p[:, 1]
        return np.where(x < 0.5, 2 * x, 1.0) * _w(p)

    def lam(p):
        x = p[:, 1]
        return np.where(x < 0.5, (1 - 2 * x) * _w(p), 0.0)

    def _profile(x):
        """x-profile of g / (t (1-y) y) and its derivative."""
        val = np.where(x < 0.5, (1 - x) * x, np.where(x <= 0.75, gt(x), 0.0))
        der = np.where(x < 0.5, 1 - 2 * x, np.where(x <= 0.75, dgt(x), 0.0))
        return val, der

    def g(p):
        t, x, y = p.T
        return t * _profile(x)[0] * (1 - y) * y

    def g_dt(p):
        _, x, y = p.T
        return _profile(x)[0] * (1 - y) * y

    def g_grad(p):
        t, x, y = p.T
        val, der = _profile(x)
        return np.column_stack([t * der * (1 - y) * y, t * val * (1 - 2 * y)])

    return ProblemSpec(
        name="heat2d", d=2, T=1.0, omega_lo=(0.0, 0.0), omega_hi=(1.0, 1.0),
        A=np.eye(2), alpha=1.0, b=np.zeros(2), c=0.0, f=f, g=g,
        u0=lambda p: np.zeros(len(p)), g_dt=g_dt, g_grad=g_grad, b_sup=0.0, c_sup=0.0,
        exact=ExactSolution(u=u, grad_u=grad_u, sigma=lambda p: -grad_u(p), lam=lam),
        params={"cubic": tuple(coef)},
    )


PROBLEMS = {
    "stefan": stefan_problem,
    "pyramid": pyramid_problem,
    "american_option": american_option_problem,
    "heat2d": heat2d_problem,
}


def get_problem(name, **kwargs):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ArgumentError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)


# ---------------------------------------------------------------------------
# assumption checks


def sample_points(spec, n=10_000, seed=0):
    """Scrambled Halton points in the closed cylinder (incl. its faces)."""
    dim = spec.d + 1
    pts = qmc.Halton(d=dim, seed=seed).random(n)
    lo = np.array([0.0, *spec.omega_lo])
    hi = np.array([spec.T, *spec.omega_hi])
    return lo + pts * (hi - lo)


def lateral_points(spec, n=2_000, seed=1):
    pts = sample_points(spec, n, seed)
    rng = np.random.default_rng(seed)
    axis = rng.integers(1, spec.d + 1, size=n)
    side = rng.integers(0, 2, size=n)
    bounds = np.array([[0.0, *spec.omega_lo], [spec.T, *spec.omega_hi]])
    pts[np.arange(n), axis] = bounds[side, axis]
    return pts


def check_problem(spec, n=10_000, tol=1e-12):
    """Sample the standing assumptions; raise DataError on violation."""
    if not spec.alpha > 0:
        raise DataError("ellipticity bound alpha must be positive")
    p = sample_points(spec, n)
    A = eval_A(spec, p)
    if not np.allclose(A, np.transpose(A, (0, 2, 1))):
        raise DataError("diffusion matrix is not symmetric")
    if np.linalg.eigvalsh(A).min() < spec.alpha * (1 - 1e-12):
        raise DataError("diffusion matrix violates the ellipticity bound alpha")
    if callable(spec.b):
        raise DataError("variable convection needs an explicit divergence check")
    if np.any(eval_c(spec, p) < -tol):
        raise DataError("-div(b)/2 + c must be non-negative")
    p0 = p.copy()
    p0[:, 0] = 0.0
    if np.any(spec.g(p0) > spec.u0(p0) + tol):
        raise DataError("obstacle exceeds the initial datum at t = 0")
    pl = lateral_points(spec, max(n // 5, 100))
    if np.any(spec.g(pl) > tol):
        raise DataError("obstacle must be non-positive on the lateral boundary")
    return True
