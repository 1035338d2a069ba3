"""Convergence studies: configuration, CSV tables, VTK export and rate fits."""

import csv
import json
import logging
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .adaptive import FAMILIES, REFINEMENTS, RECORD_FIELDS, ConvergenceRecord, solve_levels
from .errors import ArgumentError
from .estimator import VARIANTS
from .fespace import _lateral_nodes
from .mesh import write_vtk
from .problems import PROBLEMS, get_problem
from .solver import SolverOptions

__all__ = [
    "StudyConfig",
    "run_study",
    "fit_rate",
    "write_csv",
    "read_csv",
    "format_value",
]

log = logging.getLogger(__name__)

_INT_FIELDS = {"level", "n_elements", "n_dofs", "newton_iterations"}
_OPTIONAL_FIELDS = {"err_total", "err_grad", "err_u0", "err_uT", "err_sigma", "err_div"}


@dataclass(frozen=True)
class StudyConfig:
    """Everything one convergence study needs.

    ``seed_mesh`` is ``(nt, nx)`` in one space dimension and ``(n,)`` in two;
    ``None`` selects the default coarse grid.  Solver settings default to
    :func:`~spacetime_obstacle.adaptive.default_solver_options`.
    """

    problem: str = "stefan"
    family: str = "simplicial"
    refine: str = "uniform"
    theta: float = 0.5
    estimator: str | None = None
    seed_mesh: tuple | None = None
    levels: int | None = None
    max_elems: int | None = None
    out: str | None = None
    vtk: str | None = None
    quad_degree: int = 4
    lambda_weight: float | None = None
    single_thread: bool = False
    max_iter: int = 200
    cg_rtol: float = 1e-11
    direct_nnz_threshold: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ArgumentError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.family not in FAMILIES:
            raise ArgumentError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.refine not in REFINEMENTS:
            raise ArgumentError(f"unknown refinement {self.refine!r}; choose from {REFINEMENTS}")
        if self.estimator is not None and self.estimator not in VARIANTS:
            raise ArgumentError(f"unknown estimator {self.estimator!r}; choose from {VARIANTS}")
        if not 0.0 < self.theta <= 1.0:
            raise ArgumentError("theta must satisfy 0 < theta <= 1")
        if self.levels is None and self.max_elems is None:
            raise ArgumentError("a study needs a stop criterion (levels or max_elems)")
        if self.levels is not None and self.levels < 1:
            raise ArgumentError("levels must be at least 1")
        if self.max_elems is not None and self.max_elems < 1:
            raise ArgumentError("max_elems must be positive")
        if self.quad_degree < 1:
            raise ArgumentError("quad_degree must be positive")
        if self.lambda_weight is not None and not self.lambda_weight > 0:
            raise ArgumentError("lambda_weight must be positive")
        d = get_problem(self.problem).d
        if d == 2 and self.family == "tensor":
            raise ArgumentError("tensor-product spaces exist only in one space dimension")
        if self.refine == "adaptive" and self.family == "tensor":
            raise ArgumentError("adaptive refinement needs local refinement, which tensor "
                                "meshes do not support; use --refine uniform")
        if self.refine == "adaptive" and d == 2:
            raise ArgumentError("adaptive refinement is not available in two space dimensions; "
                                "use --refine uniform")
        if self.seed_mesh is not None and len(self.seed_mesh) != (1 if d == 2 else 2):
            raise ArgumentError("seed_mesh is 'nt,nx' in one space dimension and 'n' in two")

    @classmethod
    def from_mapping(cls, data, **overrides):
        """Build from a dict (e.g. parsed JSON) with ``overrides`` taking precedence.

        Keys of ``overrides`` whose value is ``None`` are ignored.
        """
        known = {f.name for f in fields(cls)}
        merged = {k.replace("-", "_"): v for k, v in dict(data).items()}
        unknown = set(merged) - known
        if unknown:
            raise ArgumentError(f"unknown configuration keys: {sorted(unknown)}")
        merged.update({k: v for k, v in overrides.items() if v is not None})
        if merged.get("seed_mesh") is not None:
            merged["seed_mesh"] = parse_seed(merged["seed_mesh"])
        return cls(**merged)

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ArgumentError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ArgumentError(f"{path}: expected a JSON object")
        return cls.from_mapping(data, **overrides)

    def to_dict(self):
        return asdict(self)

    def solver_options(self, d):
        threshold = self.direct_nnz_threshold
        if threshold is None:
            threshold = 5_000_000 if d == 1 else 200_000
        return SolverOptions(direct_nnz_threshold=threshold, cg_rtol=self.cg_rtol,
                             max_iter=self.max_iter)


def parse_seed(value):
    """``"4,8"`` or ``[4, 8]`` or ``3`` to a tuple of positive ints."""
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    elif np.ndim(value) == 0:
        parts = [value]
    else:
        parts = list(value)
    try:
        out = tuple(int(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f"invalid seed mesh {value!r}") from exc
    if not out or len(out) > 2 or min(out) < 1:
        raise ArgumentError(f"invalid seed mesh {value!r}")
    return out


def _thread_limit(single):
    if not single:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def run_study(config):
    """Run one study; write the CSV (and VTK) named in ``config``; return the records."""
    if not isinstance(config, StudyConfig):
        raise ArgumentError("run_study expects a StudyConfig")
    spec = get_problem(config.problem)
    seed = None
    if config.seed_mesh is not None:
        seed = config.seed_mesh[0] if spec.d == 2 else config.seed_mesh
    records = []
    last = None
    with _thread_limit(config.single_thread):
        for level in solve_levels(
                spec, config.family, refine=config.refine, theta=config.theta,
                max_levels=config.levels, max_elements=config.max_elems,
                variant=config.estimator, degree=config.quad_degree,
                lam_weight=config.lambda_weight, seed=seed,
                solver_options=config.solver_options(spec.d),
                timed=not config.single_thread):
            records.append(level.record)
            last = level
    if config.out:
        write_csv(config.out, records)
    if config.vtk and last is not None:
        export_vtk(config.vtk, last)
    return records


def export_vtk(path, level):
    """Final mesh with vertex values of ``u`` and elementwise indicators."""
    mesh = level.mesh
    sol = level.solution
    u = np.zeros(len(mesh.vertices))
    u[~_lateral_nodes(mesh)] = sol.x_u
    cell = {"indicator": level.estimator.indicators}
    write_vtk(path, mesh, point_data={"u": u}, cell_data=cell)


def format_value(value):
    """CSV text of one record entry: blank for ``None``, 16 significant digits for floats.

    A float that does not survive 16 digits is written with 17 so that reading
    the file back is exact.
    """
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    text = f"{value:.15e}"
    if float(text) != value:
        text = f"{value:.16e}"
    return text


def write_csv(path, records):
    path = Path(path)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow([format_value(getattr(rec, name)) for name in RECORD_FIELDS])


def _parse(name, text):
    if text == "":
        if name in _OPTIONAL_FIELDS:
            return None
        raise ArgumentError(f"missing value for column {name!r}")
    return int(text) if name in _INT_FIELDS else float(text)


def read_csv(path):
    """Records from a file written by :func:`write_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ArgumentError(f"{path}: empty file") from None
        if tuple(header) != RECORD_FIELDS:
            raise ArgumentError(f"{path}: unexpected header {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ArgumentError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                values = {name: _parse(name, text) for name, text in zip(header, row)}
            except ValueError as exc:
                raise ArgumentError(f"{path}:{lineno}: {exc}") from exc
            records.append(ConvergenceRecord(**values))
    return records


def fit_rate(records, column, window=None, span=None):
    """Least-squares slope of ``log(column)`` against ``log(n_elements)``.

    Only the last ``window`` records enter the fit (all of them if ``None``).
    ``span`` instead keeps the records with at least ``n_last / span``
    elements, which compares uniform and adaptive sequences over the same
    range of mesh sizes.
    """
    records = list(records)
    if window is not None and span is not None:
        raise ArgumentError("give window or span, not both")
    if window is not None:
        if window < 2:
            raise ArgumentError("window must be at least 2")
        records = records[-window:]
    if span is not None:
        if not span > 1:
            raise ArgumentError("span must exceed 1")
        if records:
            cut = records[-1].n_elements / span
            records = [r for r in records if r.n_elements >= cut]
    if len(records) < 2:
        raise ArgumentError("a rate needs at least two records")
    if column not in RECORD_FIELDS:
        raise ArgumentError(f"unknown column {column!r}")
    n = np.array([r.n_elements for r in records], dtype=float)
    y = np.array([getattr(r, column) for r in records], dtype=object)
    if any(v is None for v in y):
        raise ArgumentError(f"column {column!r} has blank entries")
    y = y.astype(float)
    if np.any(y <= 0) or np.any(n <= 0):
        raise ArgumentError("rates need positive values")
    ln = np.log(n)
    if np.ptp(ln) == 0:
        raise ArgumentError("all records have the same element count")
    ly = np.log(y)
    lc = ln - ln.mean()
    return float(lc @ (ly - ly.mean()) / (lc @ lc))


def with_overrides(config, **changes):
    """Copy of ``config`` with non-``None`` ``changes`` applied (and re-validated)."""
    return replace(config, **{k: v for k, v in changes.items() if v is not None})

