import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from higsni.errors import AsymmetricInput, SingularMatrix
from higsni.numerics import (Tolerances, eig_general, is_neg_semidef,
                             is_pos_def, solve_linear, symmetrize)


def charpoly_roots(M, dps=40):
    """Eigenvalues from the Faddeev-LeVerrier polynomial in extended precision."""
    with mpmath.workdps(dps):
        A = mpmath.matrix(M.tolist())
        n = A.rows
        coeffs = [mpmath.mpf(1)]
        Mk = mpmath.zeros(n, n)
        for k in range(1, n + 1):
            Mk = A * Mk + coeffs[-1] * mpmath.eye(n)
            ck = -sum((A * Mk)[i, i] for i in range(n)) / k
            coeffs.append(ck)
        roots = mpmath.polyroots(coeffs, maxsteps=200, extraprec=200)
        return np.array([complex(r) for r in roots])


def test_solve_identity_and_diagonal():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(solve_linear(np.eye(3), b), b)
    X = solve_linear(np.diag([2.0, 4.0]), np.array([[2.0], [4.0]]))
    np.testing.assert_allclose(X, [[1.0], [1.0]])


def test_solve_mems_residual(mems_plant):
    A, B = mems_plant.A, mems_plant.B
    X = solve_linear(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-6


def test_solve_singular():
    with pytest.raises(SingularMatrix):
        solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 4), elements=st.floats(-10, 10)),
       arrays(float, 4, elements=st.floats(-10, 10)))
def test_solve_property(M, b):
    M = M + 50.0 * np.eye(4)
    x = solve_linear(M, b)
    assert np.allclose(M @ x, b, atol=1e-9 * (1 + np.abs(b).max()))


def test_eig_small_cases():
    lam = eig_general(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(sorted(lam.imag), [-1.0, 1.0])
    np.testing.assert_allclose(lam.real, 0.0, atol=1e-15)
    np.testing.assert_allclose(sorted(eig_general(np.diag([2.0, -3.0])).real),
                               [-3.0, 2.0])


def test_eig_mems_against_characteristic_polynomial(mems_plant):
    lam = eig_general(mems_plant.A)
    oracle = charpoly_roots(mems_plant.A)
    key = lambda z: (round(z.imag, 3), z.real)
    for a, b in zip(sorted(lam, key=key), sorted(oracle, key=key)):
        assert abs(a - b) <= 1e-8 * abs(b)
    im = np.sort(np.abs(lam.imag))
    assert np.all(im >= 2 * np.pi * 3500) and np.all(im <= 2 * np.pi * 4000)
    # two conjugate pairs
    assert np.allclose(np.sort(lam.imag[lam.imag > 0]),
                       np.sort(-lam.imag[lam.imag < 0]))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (5, 5), elements=st.floats(-5, 5)))
def test_eig_trace_and_determinant(M):
    lam = eig_general(M)
    assert abs(lam.sum() - np.trace(M)) <= 1e-8 * (1 + np.abs(M).sum())
    det = np.prod(lam)
    assert abs(det - np.linalg.det(M)) <= 1e-7 * (1 + np.abs(lam).max()) ** 5


def test_definiteness_predicates():
    assert is_pos_def(np.eye(2), tol=1e-12)
    assert not is_pos_def(np.diag([1.0, -1e-3]))
    assert not is_pos_def(np.diag([1.0, 0.0]), tol=1e-12)
    assert is_neg_semidef(np.zeros((3, 3)))
    assert is_neg_semidef(np.diag([0.0, -2.0]))
    assert not is_neg_semidef(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_symmetrize_tolerances():
    M = np.array([[1.0, 2.0], [2.0 + 1e-12, 1.0]])
    np.testing.assert_allclose(symmetrize(M), [[1.0, 2.0], [2.0, 1.0]])
    with pytest.warns(UserWarning):
        symmetrize(np.array([[1.0, 2.0], [2.0 + 1e-5, 1.0]]))
    with pytest.raises(AsymmetricInput):
        symmetrize(np.array([[1.0, 2.0], [3.0, 1.0]]))


def test_tolerances_are_configurable():
    tol = Tolerances(symmetry=1e-3, symmetry_hard=1e-1)
    with warnings.catch_warnings():
        warnings.simplefilter('error')
        symmetrize(np.array([[1.0, 2.0], [2.001, 1.0]]), tol=tol)
