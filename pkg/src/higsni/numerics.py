"""Small dense linear-algebra helpers.

Matrices are plain ``numpy.ndarray`` values. No function here modifies its
arguments. The systems handled by this package are small (at most a few dozen
states), so everything is dense and LAPACK-backed.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AsymmetricInput, ConvergenceFailure, SingularMatrix

__all__ = ['Tolerances', 'DEFAULT_TOL', 'as_matrix', 'solve_linear',
           'eig_general', 'is_pos_def', 'is_neg_semidef', 'symmetrize']


@dataclass(frozen=True)
class Tolerances:
    """Default tolerances used across the package.

    Every numeric predicate accepts an explicit tolerance; these are only
    the defaults.
    """
    pivot: float = 1e-12          # relative to ||M|| in solve_linear
    solve_residual: float = 1e-9  # relative residual after refinement
    symmetry: float = 1e-8        # relative asymmetry accepted silently
    symmetry_hard: float = 1e-3   # above this an input is rejected
    definite: float = 1e-12       # pivot floor in is_pos_def
    semidef: float = 0.0          # eigenvalue ceiling in is_neg_semidef
    eig_residual: float = 1e-6    # relative eigenpair residual
    ni_sweep: float = 1e-8        # relative to ||G(jw)||
    axis: float = 1e-7            # |Re(lambda)| <= axis * ||N0||
    cluster: float = 1e-6         # imaginary-part clustering, * ||N0||
    sector: float = 1e-9          # tol_sector = sector * (1 + |k e|)
    dissipation: float = 1e-6     # tol_diss = dissipation * (1 + max|V|)
    continuity: float = 1e-9      # |dx_h| <= continuity * (1 + |x_h|)


DEFAULT_TOL = Tolerances()


def as_matrix(M, name='matrix', dtype=float):
    """Return `M` as a finite 2-D array (a copy, never a view)."""
    arr = np.array(M, dtype=dtype, copy=True, ndmin=2)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def solve_linear(M, rhs, tol=DEFAULT_TOL):
    """Solve ``M X = rhs`` with one step of iterative refinement.

    Raises
    ------
    SingularMatrix
        If an LU pivot falls below ``tol.pivot * ||M||``.
    """
    M = as_matrix(M, 'M')
    rhs = np.asarray(rhs, dtype=float)
    vector = rhs.ndim == 1
    b = rhs.reshape(M.shape[0], -1)
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    scale = np.linalg.norm(M, 2)
    with warnings.catch_warnings():
        # the pivot test below reports singularity
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    if scale == 0.0 or np.min(np.abs(np.diag(lu))) <= tol.pivot * scale:
        raise SingularMatrix("matrix is singular to working precision")
    X = scipy.linalg.lu_solve((lu, piv), b)
    X = X + scipy.linalg.lu_solve((lu, piv), b - M @ X)
    bnorm = np.linalg.norm(b)
    if np.linalg.norm(M @ X - b) > tol.solve_residual * max(bnorm, 1e-300) \
            and bnorm > 0:
        # ill-conditioned but nonsingular: one more refinement pass
        X = X + scipy.linalg.lu_solve((lu, piv), b - M @ X)
    return X.ravel() if vector else X


def eig_general(M, tol=DEFAULT_TOL, return_vectors=False):
    """Eigenvalues of a real or complex square matrix.

    Each eigenpair is checked against ``||(M - lam I) v|| <= tol * ||M||``;
    a failing pair raises `ConvergenceFailure`.
    """
    M = as_matrix(M, 'M', dtype=complex if np.iscomplexobj(M) else float)
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if M.shape[0] > 64:
        raise ValueError("eig_general is meant for matrices up to 64 x 64")
    try:
        lam, V = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    resid = np.linalg.norm(M @ V - V * lam, axis=0)
    if np.any(resid > tol.eig_residual * scale):
        # balancing in geev can wreck badly scaled input; the complex
        # Schur form is backward stable without it
        lam, V = _eig_schur(M, tol, scale, return_vectors)
    return (lam, V) if return_vectors else lam


def _eig_schur(M, tol, scale, vectors):
    T, Z = scipy.linalg.schur(M.astype(complex), output='complex')
    if np.linalg.norm(M @ Z - Z @ T) > tol.eig_residual * scale:
        raise ConvergenceFailure("eigenpair residual check failed")
    lam = np.diag(T).copy()
    if not vectors:
        return lam, None
    n = M.shape[0]
    V = np.empty((n, n), dtype=complex)
    for i, l in enumerate(lam):
        V[:, i] = np.linalg.svd(M - l * np.eye(n))[2][-1].conj()
    if np.any(np.linalg.norm(M @ V - V * lam, axis=0)
              > tol.eig_residual * scale):
        raise ConvergenceFailure("eigenpair residual check failed")
    return lam, V


def symmetrize(M, tol=DEFAULT_TOL, name='matrix'):
    """Return ``(M + M^T) / 2``; warn or raise on large asymmetry."""
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = np.linalg.norm(M, 2)
    asym = np.linalg.norm(M - M.T, 2)
    if asym > tol.symmetry_hard * max(scale, 1e-300):
        raise AsymmetricInput(f"{name} is not symmetric "
                              f"(||M - M^T|| = {asym:.3g})")
    if asym > tol.symmetry * scale:
        warnings.warn(f"{name} is slightly asymmetric "
                      f"(||M - M^T|| = {asym:.3g}); symmetrizing",
                      stacklevel=3)
    return 0.5 * (M + M.T)


def is_pos_def(M, tol=None):
    """True iff a Cholesky factorization succeeds with pivots above `tol`.

    ``tol`` defaults to ``DEFAULT_TOL.definite``; pivots are compared on the
    diagonal of the Cholesky factor squared.
    """
    tol = DEFAULT_TOL.definite if tol is None else tol
    M = symmetrize(M, name='M')
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(L) ** 2 > tol))


def is_neg_semidef(M, tol=None):
    """True iff every eigenvalue of the symmetric matrix `M` is <= `tol`."""
    tol = DEFAULT_TOL.semidef if tol is None else tol
    M = symmetrize(M, name='M')
    return bool(np.max(np.linalg.eigvalsh(M)) <= tol)
