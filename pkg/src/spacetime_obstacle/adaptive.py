"""Solve, estimate, mark and refine."""

import logging
import time
from dataclasses import dataclass, fields

import numpy as np

from .assembly import assemble_system
from .errors import ArgumentError, NonConvergenceError
from .estimator import compute_error, compute_estimator, dorfler_mark
from .fespace import DiscreteSolution, build_spaces, prolong
from .mesh import make_cube_mesh, make_square_mesh, make_tensor_mesh, nvb_refine, uniform_refine
from .solver import SolverOptions, pdas_solve

__all__ = [
    "ConvergenceRecord",
    "Level",
    "RECORD_FIELDS",
    "FAMILIES",
    "REFINEMENTS",
    "seed_mesh",
    "default_solver_options",
    "solve_levels",
    "adaptive_loop",
]

log = logging.getLogger(__name__)

FAMILIES = ("simplicial", "tensor")
REFINEMENTS = ("uniform", "adaptive")


@dataclass(frozen=True)
class ConvergenceRecord:
    """One row of a convergence table.

    Error columns are ``None`` for problems without an exact solution.  The
    trailing ``rho_div``, ``rho_grad`` and ``rho_u0`` split ``rho_r`` into
    its residual, flux and initial-trace parts.
    """

    level: int
    n_elements: int
    n_dofs: int
    rho_r: float
    rho_p: float
    rho_c: float
    rho_total: float
    err_total: float | None
    err_grad: float | None
    err_u0: float | None
    err_uT: float | None
    err_sigma: float | None
    err_div: float | None
    newton_iterations: int
    wall_seconds: float
    rho_div: float
    rho_grad: float
    rho_u0: float

    def estimator_parts(self):
        """The five estimator contributions (square roots of squared totals)."""
        return {"div": self.rho_div, "grad": self.rho_grad, "u0": self.rho_u0,
                "p": self.rho_p, "c": self.rho_c}


RECORD_FIELDS = tuple(f.name for f in fields(ConvergenceRecord))


@dataclass(frozen=True, eq=False)
class Level:
    record: ConvergenceRecord
    mesh: object
    solution: DiscreteSolution
    estimator: object
    result: object = None  # PdasResult with the multiplier of the bound constraints


def seed_mesh(spec, family="simplicial", counts=None):
    """Initial mesh of the space-time cylinder.

    ``counts`` is ``(nt, nx)`` for one space dimension and ``n`` (cubes per
    direction) for two; the default is 2 in every direction.
    """
    if family not in FAMILIES:
        raise ArgumentError(f"unknown family {family!r}; choose from {FAMILIES}")
    if spec.d == 2:
        if family != "simplicial":
            raise ArgumentError("two space dimensions need the simplicial family")
        n = 2 if counts is None else counts
        n = int(n[0] if np.ndim(n) else n)
        return make_cube_mesh(n, T=spec.T, lo=spec.omega_lo, hi=spec.omega_hi)
    nt, nx = (2, 2) if counts is None else (counts, counts) if np.ndim(counts) == 0 else counts
    make = make_square_mesh if family == "simplicial" else make_tensor_mesh
    return make(int(nt), int(nx), T=spec.T, L=spec.omega_lo[0], R=spec.omega_hi[0])


def default_solver_options(d, max_iter=200):
    """Direct solves for all one-dimensional systems, CG for large 2+1 dimensional ones."""
    return SolverOptions(direct_nnz_threshold=5_000_000 if d == 1 else 200_000, max_iter=max_iter)


def _sqrt(v):
    return float(np.sqrt(max(v, 0.0)))


def solve_levels(spec, family="simplicial", refine="adaptive", theta=0.5, max_levels=None,
                 max_elements=None, variant=None, degree=4, lam_weight=None, seed=None,
                 solver_options=None, timed=True):
    """Yield a :class:`Level` per solved mesh until a stop criterion holds.

    Iteration stops after ``max_levels`` levels or once a level reaches
    ``max_elements`` elements, whichever comes first.  Tensor meshes and two
    space dimensions are always refined uniformly.
    """
    if max_levels is None and max_elements is None:
        raise ArgumentError("give max_levels, max_elements or both")
    if refine not in REFINEMENTS:
        raise ArgumentError(f"unknown refinement {refine!r}; choose from {REFINEMENTS}")
    if refine == "adaptive" and not 0.0 < theta <= 1.0:
        raise ArgumentError("bulk parameter must satisfy 0 < theta <= 1")
    if max_levels is not None and max_levels < 1:
        raise ArgumentError("max_levels must be at least 1")
    spec = spec.with_weight(lam_weight) if lam_weight is not None else spec
    options = solver_options or default_solver_options(spec.d)
    local = refine == "adaptive"
    if local and (family == "tensor" or spec.d == 2):
        log.warning("no local refinement for %s meshes in %d+1 dimensions; refining uniformly",
                    family, spec.d)
        local = False

    mesh = seed_mesh(spec, family, seed)
    previous = None
    level = 0
    while True:
        start = time.perf_counter()
        spaces = build_spaces(mesh, family, g=spec.g)
        qp = assemble_system(spec, mesh, spaces, degree=degree)
        x0 = prolong(previous, spaces) if previous is not None else None
        try:
            result = pdas_solve(qp, x0=x0, options=options)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"level {level}: {exc}", exc.last_iterate,
                                      exc.iterations) from exc
        sol = DiscreteSolution(spaces, result.x)
        est = compute_estimator(spec, mesh, sol, variant=variant, degree=degree)
        err = compute_error(spec, mesh, sol, degree=degree) if spec.exact is not None else None
        wall = time.perf_counter() - start if timed else 0.0

        errs = (None,) * 6 if err is None else (
            err.total, _sqrt(err.grad), _sqrt(err.u0), _sqrt(err.uT), _sqrt(err.sigma),
            _sqrt(err.div))
        record = ConvergenceRecord(
            level, mesh.n_elements, spaces.n_dofs,
            _sqrt(est.rho_r2), _sqrt(est.rho_p2), _sqrt(est.rho_c2), _sqrt(est.rho2),
            *errs, result.iterations, wall,
            _sqrt(est.total("div")), _sqrt(est.total("grad")), _sqrt(est.total("u0")))
        log.info("level %d: %d elements, %d dofs, rho = %.4e, %d solves", level,
                 record.n_elements, record.n_dofs, record.rho_total, result.iterations)
        yield Level(record, mesh, sol, est, result)

        level += 1
        if max_levels is not None and level >= max_levels:
            return
        if max_elements is not None and mesh.n_elements >= max_elements:
            return
        mesh = nvb_refine(mesh, dorfler_mark(est, theta)) if local else uniform_refine(mesh)
        previous = sol


def adaptive_loop(spec, family="simplicial", theta=0.5, max_levels=None, max_elements=None,
                  **kwargs):
    """Records of :func:`solve_levels` (adaptive refinement unless ``refine`` says otherwise)."""
    return [lv.record for lv in solve_levels(spec, family, theta=theta, max_levels=max_levels,
                                              max_elements=max_elements, **kwargs)]
