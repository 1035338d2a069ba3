import logging

import numpy as np
import pytest

from spacetime_obstacle.adaptive import (RECORD_FIELDS, adaptive_loop, seed_mesh,
                                         solve_levels)
from spacetime_obstacle.errors import ArgumentError, NonConvergenceError
from spacetime_obstacle.mesh import check_conforming
from spacetime_obstacle.problems import get_problem
from spacetime_obstacle.solver import SolverOptions


def test_single_level():
    recs = adaptive_loop(get_problem("stefan"), max_levels=1)
    assert len(recs) == 1
    r = recs[0]
    assert (r.level, r.n_elements) == (0, 8)
    assert np.isclose(r.rho_total ** 2, r.rho_r ** 2 + r.rho_p ** 2 + r.rho_c ** 2)
    assert np.isclose(r.rho_r ** 2, r.rho_div ** 2 + r.rho_grad ** 2 + r.rho_u0 ** 2)


def test_stefan_uniform_nonincreasing():
    recs = adaptive_loop(get_problem("stefan"), refine="uniform", max_levels=5)
    assert [r.n_elements for r in recs] == [8 * 4 ** k for k in range(5)]
    for a, b in zip(recs, recs[1:]):
        assert b.rho_total <= 1.05 * a.rho_total
        assert b.err_total <= 1.05 * a.err_total


def test_pyramid_adaptive_growth():
    levels = list(solve_levels(get_problem("pyramid"), max_levels=8))
    for a, b in zip(levels, levels[1:]):
        assert a.mesh.n_elements < b.mesh.n_elements < 4 * a.mesh.n_elements
        check_conforming(b.mesh)
    assert all(lv.record.err_total is None for lv in levels)


def test_stops_at_element_budget():
    recs = adaptive_loop(get_problem("stefan"), refine="uniform", max_elements=100)
    assert [r.n_elements for r in recs] == [8, 32, 128]


def test_tensor_adaptive_falls_back(caplog):
    with caplog.at_level(logging.WARNING):
        recs = adaptive_loop(get_problem("stefan"), family="tensor", max_levels=2)
    assert [r.n_elements for r in recs] == [4, 16]
    assert "refining uniformly" in caplog.text


def test_record_fields_order():
    assert RECORD_FIELDS[:3] == ("level", "n_elements", "n_dofs")
    assert RECORD_FIELDS[-3:] == ("rho_div", "rho_grad", "rho_u0")


def test_nonconvergence_names_level():
    opts = SolverOptions(max_iter=1)
    with pytest.raises(NonConvergenceError, match="level 0"):
        adaptive_loop(get_problem("american_option"), refine="uniform", max_levels=1,
                      solver_options=opts)


@pytest.mark.parametrize("kw", [{}, {"max_levels": 0}, {"max_levels": 2, "refine": "local"},
                                {"max_levels": 2, "theta": 0.0}])
def test_bad_arguments(kw):
    with pytest.raises(ArgumentError):
        adaptive_loop(get_problem("stefan"), **kw)


def test_seed_mesh_shapes():
    assert seed_mesh(get_problem("stefan"), "tensor", (3, 5)).n_elements == 15
    assert seed_mesh(get_problem("heat2d")).n_elements == 48
    with pytest.raises(ArgumentError):
        seed_mesh(get_problem("heat2d"), "tensor")
    with pytest.raises(ArgumentError):
        seed_mesh(get_problem("stefan"), "prism")


def test_timed_flag():
    lv = next(solve_levels(get_problem("stefan"), max_levels=1, timed=False))
    assert lv.record.wall_seconds == 0.0
