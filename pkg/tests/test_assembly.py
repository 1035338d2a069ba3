from dataclasses import replace

import numpy as np
import pytest
import scipy.io

from oracles import dense_assembly
from spacetime_obstacle.adaptive import seed_mesh
from spacetime_obstacle.assembly import assemble_system, functional_value, write_matrix_market
from spacetime_obstacle.errors import ArgumentError, DataError
from spacetime_obstacle.fespace import build_spaces
from spacetime_obstacle.mesh import SimplicialMesh, make_square_mesh, uniform_refine
from spacetime_obstacle.problems import PROBLEMS, get_problem


def zero(p):
    return np.zeros(len(p))


def plain_heat():
    return replace(get_problem("pyramid"), f=zero, g=zero, u0=zero)


CASES = [(n, f) for n in sorted(PROBLEMS) for f in ("simplicial", "tensor")
         if not (n == "heat2d" and f == "tensor")]


def _system(name, family, refine=1):
    spec = get_problem(name)
    mesh = seed_mesh(spec, family)
    for _ in range(refine if spec.d == 1 else 0):
        mesh = uniform_refine(mesh)
    spaces = build_spaces(mesh, family, g=spec.g)
    return spec, mesh, spaces, assemble_system(spec, mesh, spaces)


@pytest.mark.parametrize("name,family", CASES)
def test_matches_dense_oracle(name, family):
    spec, mesh, spaces, qp = _system(name, family)
    assert mesh.n_elements <= 50
    S, F = dense_assembly(spec, mesh, spaces)
    assert np.max(np.abs(qp.S.toarray() - S)) <= 1e-12 * np.max(np.abs(S))
    assert np.max(np.abs(qp.F - F)) <= 1e-12 * np.max(np.abs(F))


@pytest.mark.parametrize("name,family", CASES)
def test_symmetric_positive_definite(name, family):
    *_, qp = _system(name, family, refine=0)
    S = qp.S.toarray()
    assert qp.n <= 200
    assert np.max(np.abs(S - S.T)) <= 1e-10 * np.max(np.abs(S))
    assert np.linalg.eigvalsh(S).min() > 0


def test_lambda_block_diagonal():
    spec = plain_heat()
    mesh = make_square_mesh(1, 1)
    spaces = build_spaces(mesh, g=spec.g)
    qp = assemble_system(spec, mesh, spaces)
    o = spaces.offsets
    block = qp.S.toarray()[o[2]:, o[2]:]
    assert np.allclose(block, np.diag(spec.Lambda / spec.alpha * mesh.measures), atol=1e-15)


def test_single_triangle_flux_mass():
    mesh = SimplicialMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                          1.0, np.array([0.0]), np.array([1.0]))
    spaces = build_spaces(mesh)
    qp = assemble_system(plain_heat(), mesh, spaces, parts=("flux",))
    o = spaces.offsets
    M = qp.S.toarray()[o[1]:o[2], o[1]:o[2]]
    assert np.isclose(M[0, 1], 1 / 24, rtol=0, atol=1e-15)
    assert np.isclose(M[0, 0], 1 / 12, rtol=0, atol=1e-15)


def test_zero_vector_functional():
    spec, mesh, spaces, qp = _system("stefan", "simplicial")
    assert functional_value(spec, mesh, spaces, np.zeros(qp.n), system=qp) == 0.0


def test_quadratic_identity():
    spec, mesh, spaces, qp = _system("american_option", "tensor")
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, y = rng.standard_normal((2, qp.n))
        J = lambda v: functional_value(spec, mesh, spaces, v, system=qp)  # noqa: E731
        rhs = 0.5 * (x - y) @ (qp.S @ (x - y)) + (qp.S @ y - qp.F) @ (x - y)
        assert abs(J(x) - J(y) - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_residual_block_scales_with_weight():
    spec = get_problem("stefan")
    mesh = make_square_mesh(2, 2)
    spaces = build_spaces(mesh, g=spec.g)
    one = assemble_system(spec, mesh, spaces, lam_weight=1.0, parts=("residual",))
    two = assemble_system(spec, mesh, spaces, lam_weight=2.0, parts=("residual",))
    assert np.allclose((two.S - 2 * one.S).toarray(), 0, atol=1e-14)
    rest1 = assemble_system(spec, mesh, spaces, lam_weight=1.0, parts=("flux", "trace", "duality"))
    rest2 = assemble_system(spec, mesh, spaces, lam_weight=2.0, parts=("flux", "trace", "duality"))
    assert (rest1.S != rest2.S).nnz == 0


def test_bad_data_reports_element():
    spec = replace(plain_heat(), f=lambda p: np.where(p[:, 1] > 0.6, np.nan, 0.0))
    mesh = make_square_mesh(2, 2)
    with pytest.raises(DataError, match="element"):
        assemble_system(spec, mesh, build_spaces(mesh))


def test_mismatched_spaces():
    spec = get_problem("stefan")
    with pytest.raises(ArgumentError):
        assemble_system(spec, make_square_mesh(1, 1), build_spaces(make_square_mesh(1, 1)))


def test_matrix_market_export(tmp_path):
    *_, qp = _system("pyramid", "simplicial", refine=0)
    path = tmp_path / "S.mtx"
    write_matrix_market(path, qp)
    back = scipy.io.mmread(str(path)).toarray()
    assert np.array_equal(back, qp.S.toarray())
