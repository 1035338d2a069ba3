import numpy as np
import scipy.sparse as sp

from spacetime_obstacle.assembly import QpSystem


def make_qp(S, F, C=(), l=()):
    S = sp.csr_matrix(np.asarray(S, dtype=float))
    return QpSystem(S, np.asarray(F, dtype=float), np.asarray(C, dtype=int),
                    np.asarray(l, dtype=float), None)


def random_qp(rng, max_n=12, max_c=8):
    n = int(rng.integers(1, max_n + 1))
    nc = int(rng.integers(0, min(n, max_c) + 1))
    B = rng.standard_normal((n, n))
    S = B @ B.T + 0.1 * np.eye(n)
    F = rng.standard_normal(n) * rng.choice([1.0, 10.0])
    C = np.sort(rng.choice(n, nc, replace=False))
    return make_qp(S, F, C, rng.standard_normal(nc))


def assert_kkt(qp, res):
    S, F, C, l = qp.S, qp.F, qp.constrained, qp.bounds
    x, m = res.x, res.m
    assert np.max(np.abs(S @ x - F - m), initial=0) <= 1e-9 * (1 + np.max(np.abs(F), initial=0))
    assert np.all(m[C] >= -1e-10)
    assert np.all(x[C] >= l - 1e-10)
    assert np.all(np.abs(m[C] * (x[C] - l)) <= 1e-9)
    off = np.setdiff1d(np.arange(len(x)), C)
    assert np.all(m[off] == 0)
