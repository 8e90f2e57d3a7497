import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse
from scipy.linalg import eigh

from chlab.errors import PreconditionError
from chlab.linear import (
    DirichletProblem, _energy_pencil, apply_dissipation_operator, discrete_kink, dissipation_form_gap,
    energy_form_gap, fd_weights, hardy_family_check, kernel_check, kink_decay_ratio, lowest_eigenpair,
    orthogonal_gap, translation_mode_value,
)


def test_fd_weights_known_stencils():
    assert np.allclose(fd_weights(2, 1), [1, -2, 1])
    assert np.allclose(fd_weights(1, 1), [-0.5, 0, 0.5])
    assert np.allclose(fd_weights(3, 2), [-0.5, 1, 0, -1, 0.5])


def _pencil_with_spectrum(rng, lam):
    """Dense SPD pencil (A, B) whose eigenvalues are exactly ``lam``."""
    m = len(lam)
    N = rng.standard_normal((m, m))
    B = N @ N.T / m + np.eye(m)
    Lc = np.linalg.cholesky(B)
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    V = np.linalg.solve(Lc.T, Q)  # B-orthonormal columns
    A = B @ V @ np.diag(lam) @ V.T @ B
    return 0.5 * (A + A.T), B


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_inverse_iteration_matches_dense(seed):
    rng = np.random.default_rng(seed)
    m = 40
    lam_true = np.sort(rng.uniform(1.0, 10.0, m))
    lam_true[0] = 0.5
    A, B = _pencil_with_spectrum(rng, lam_true)
    lam, x = lowest_eigenpair(sparse.csc_matrix(A), sparse.csc_matrix(B), 0.0, start=rng.standard_normal(m))
    assert lam == pytest.approx(0.5, rel=1e-9)
    assert float(x @ B @ x) == pytest.approx(1.0)
    # constrained: compare with the pencil restricted to the complement of c
    c = rng.standard_normal(m)
    Q, _ = np.linalg.qr(np.column_stack([c, rng.standard_normal((m, m - 1))]))
    P = Q[:, 1:]
    lam_c_dense = eigh(P.T @ A @ P, P.T @ B @ P, eigvals_only=True)[0]
    lam_c, xc = lowest_eigenpair(sparse.csc_matrix(A), sparse.csc_matrix(B), 0.0, constraint=c,
                                 start=rng.standard_normal(m))
    assert lam_c == pytest.approx(lam_c_dense, rel=1e-6)
    assert abs(c @ xc) < 1e-10


def test_problem_validation(p):
    with pytest.raises(PreconditionError):
        DirichletProblem(10.0, 100, np.zeros(101), p)
    with pytest.raises(PreconditionError):
        DirichletProblem(10.0, 200, np.zeros(10), p)


def test_constant_background_pencil_dense(p):
    # background 1: quotient (k^2 + 2) / (k^2 + 1) over Dirichlet modes, infimum 1 at high frequency
    L, n = 20.0, 200
    prob = DirichletProblem(L, n, np.ones(n + 1), p)
    A, B = _energy_pencil(prob)
    lam = eigh(A.toarray(), B.toarray(), eigvals_only=True)
    h = L / n
    j = np.arange(1, n)
    kk = 4 / h ** 2 * np.sin(j * np.pi * h / (2 * L)) ** 2
    assert np.sort(lam) == pytest.approx(np.sort((kk + 2) / (kk + 1)), rel=1e-10)
    assert lam.min() > 1.0
    assert lam.max() == pytest.approx((math.pi ** 2 / L ** 2 + 2) / (math.pi ** 2 / L ** 2 + 1), rel=1e-3)


def test_energy_form_gap_layered(p):
    r20 = energy_form_gap(20.0, p)
    r40 = energy_form_gap(40.0, p)
    assert r20.minimum >= 0.05
    assert abs(r20.minimum - r40.minimum) <= 1e-2
    assert 1.7 <= r20.order_estimate <= 2.3
    assert r20.to_dict()["L"] == 20.0
    assert r20.minimizer[0] == 0.0 and r20.minimizer[-1] == 0.0


def test_energy_form_gap_needs_profile(p):
    with pytest.raises(PreconditionError):
        energy_form_gap(3.0, p)


def test_discrete_kink_is_odd_and_solves_fd_equation(p):
    v = discrete_kink(8.0, p, 320)
    assert np.allclose(v, -v[::-1], atol=1e-15)
    h = 16.0 / 320
    res = -(v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2 + p.g1(v[1:-1])
    assert np.max(np.abs(res)) < 1e-9
    with pytest.raises(PreconditionError):
        discrete_kink(8.0, p, 321)


def test_orthogonal_gap_windows(p):
    reps = {w: orthogonal_gap(w, p, richardson=False) for w in (2.0, 4.0, 8.0)}
    free = [reps[w].extras["unconstrained"] for w in (2.0, 4.0, 8.0)]
    assert free[0] > 2 * free[1] > 4 * free[2] > 0
    assert all(r.minimum >= 0.1 for r in reps.values())
    assert translation_mode_value(8.0, p) < 1e-3


def test_kernel_and_decay(p):
    res = kernel_check(p)
    assert res.passed and res.value <= 1e-6
    lo, hi = kink_decay_ratio(p)
    assert lo == pytest.approx(2 * math.sqrt(2), rel=1e-2)
    assert hi == pytest.approx(2 * math.sqrt(2), rel=1e-2)


def test_dissipation_operator_stencil_order():
    # (-f_xx + q f)_x for f = sin, q = 1: -cos + cos = 0 ... use q = 0: cos
    h = 0.01
    x = np.arange(0, 3, h)
    out = apply_dissipation_operator(np.sin(x), np.zeros_like(x), h)
    assert np.max(np.abs(out - np.cos(x[4:-4]))) < 1e-8


def test_hardy_family(p):
    res = hardy_family_check()
    assert res.passed and 0 < res.value <= 4


def test_dissipation_form_gap(p):
    r = dissipation_form_gap(20.0, p, n_fd=200)
    assert r.minimum > 0
    assert abs(r.extras["raw"]) < 1e-3
    assert r.extras["deflated"] > 0
    with pytest.raises(PreconditionError):
        dissipation_form_gap(5.0, p)
