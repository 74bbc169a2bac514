"""Linear negative-imaginary plants and NI verification procedures.

Three independent routes decide whether a strictly proper square plant
``G(s) = C (sI - A)^{-1} B`` is negative imaginary:

* `ni_frequency_test` checks ``j (G(jw) - G(jw)^*) >= 0`` on a grid;
* `ni_hamiltonian_test` inspects the imaginary-axis eigenvalues of a
  Hamiltonian-type matrix built from ``(A, B, C)``;
* `find_ni_certificate` searches for ``Y = Y^T > 0`` with
  ``A Y + Y A^T <= 0`` and ``B + A Y C^T = 0``.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (DimensionMismatch, EmptyGrid, EqualityInfeasible,
                     PreconditionQ0, SearchInconclusive, SingularAtFrequency,
                     SingularMatrix, ValidationError)
from .numerics import (DEFAULT_TOL, as_matrix, eig_general, is_pos_def,
                       solve_linear)

__all__ = ['PlantModel', 'NiCertificate', 'NiVerdict', 'dc_gain',
           'freq_response', 'default_grid', 'ni_frequency_test',
           'hamiltonian_matrix', 'ni_hamiltonian_test', 'find_ni_certificate',
           'certify', 'second_order_plant']


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Strictly proper square plant ``x' = A x + B u``, ``y = C x``."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, 'A')
        B = as_matrix(self.B, 'B')
        C = as_matrix(self.C, 'C')
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise DimensionMismatch(f"C must have {n} columns, got {C.shape}")
        if C.shape[0] != B.shape[1]:
            raise DimensionMismatch(
                f"plant must be square: {C.shape[0]} outputs vs "
                f"{B.shape[1]} inputs")
        try:
            solve_linear(A, np.eye(n))
        except SingularMatrix as exc:
            raise SingularMatrix("A must be nonsingular") from exc
        for name, arr in (('A', A), ('B', B), ('C', C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def is_siso(self):
        return self.n_inputs == 1

    def poles(self):
        return eig_general(self.A)

    def to_dict(self):
        return {'A': self.A.tolist(), 'B': self.B.tolist(),
                'C': self.C.tolist()}

    @classmethod
    def from_dict(cls, d):
        missing = {'A', 'B', 'C'} - set(d)
        if missing:
            raise ValidationError(f"plant is missing keys {sorted(missing)}")
        return cls(d['A'], d['B'], d['C'])


def second_order_plant(omega_n, zeta):
    """``G(s) = 1 / (s^2 + 2 zeta omega_n s + omega_n^2)`` in companion form."""
    A = [[0.0, 1.0], [-omega_n ** 2, -2.0 * zeta * omega_n]]
    return PlantModel(A, [[0.0], [1.0]], [[1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class NiCertificate:
    """Solution ``Y`` of the NI Lemma conditions with its residuals."""
    Y: np.ndarray
    residual_eq: float
    residual_lyap: float

    def to_dict(self):
        return {'Y': self.Y.tolist(), 'residual_eq': self.residual_eq,
                'residual_lyap': self.residual_lyap}


@dataclass
class NiVerdict:
    """Outcome of one NI test.

    `is_ni` is ``None`` when the certificate search was inconclusive.
    """
    method: str
    is_ni: Optional[bool]
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {'method': self.method, 'is_ni': self.is_ni,
                'detail': _jsonable(self.detail)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {'re': obj.real, 'im': obj.imag}
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    return obj


def dc_gain(plant):
    """Return ``G(0) = -C A^{-1} B``."""
    return -plant.C @ solve_linear(plant.A, plant.B)


def freq_response(plant, omega, tol=DEFAULT_TOL):
    """Return ``G(jw) = C (jw I - A)^{-1} B`` as a complex p x m array."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if omega == 0:
        return dc_gain(plant).astype(complex)
    n = plant.n_states
    M = 1j * omega * np.eye(n) - plant.A
    with warnings.catch_warnings():
        # the pivot test below reports singularity
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    scale = np.linalg.norm(M, 2)
    if np.min(np.abs(np.diag(lu))) <= tol.pivot * scale:
        raise SingularAtFrequency(f"jwI - A is singular at w = {omega:g}")
    B = plant.B.astype(complex)
    X = scipy.linalg.lu_solve((lu, piv), B)
    X = X + scipy.linalg.lu_solve((lu, piv), B - M @ X)
    return plant.C @ X


def default_grid(plant, points=400):
    """Log grid over ``[0.01 min|lambda(A)|, 100 max|lambda(A)|]``."""
    mags = np.abs(plant.poles())
    lo = 0.01 * np.min(mags)
    hi = 100.0 * np.max(mags)
    return np.logspace(math.log10(lo), math.log10(hi), points)


def ni_frequency_test(plant, omega_grid=None, tol=DEFAULT_TOL):
    """Check ``j (G(jw) - G(jw)^*) >= 0`` at every grid frequency.

    The check at each frequency allows ``-tol.ni_sweep * ||G(jw)||``.
    """
    grid = default_grid(plant) if omega_grid is None else omega_grid
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise EmptyGrid("frequency grid is empty")
    if np.any(grid <= 0):
        raise ValueError("grid frequencies must be positive")
    worst_w, worst_ratio, worst_eig = None, math.inf, None
    ok = True
    for w in grid:
        G = freq_response(plant, w, tol)
        H = 1j * (G - G.conj().T)
        lam = np.linalg.eigvalsh(0.5 * (H + H.conj().T))[0]
        gnorm = np.linalg.norm(G, 2)
        if lam < -tol.ni_sweep * gnorm:
            ok = False
        ratio = lam / gnorm if gnorm > 0 else 0.0
        if ratio < worst_ratio:
            worst_w, worst_ratio, worst_eig = float(w), ratio, float(lam)
    detail = {'worst_omega': worst_w, 'min_eigenvalue': worst_eig,
              'min_relative_eigenvalue': float(worst_ratio),
              'grid_points': int(grid.size),
              'grid_range': [float(grid.min()), float(grid.max())]}
    return NiVerdict('sweep', ok, detail)


def hamiltonian_matrix(plant):
    """Return ``(N0, Q0)`` with ``Q0 = -(CB + B^T C^T)``.

    Raises `PreconditionQ0` unless ``CB + B^T C^T`` is positive definite.
    """
    A, B, C = plant.A, plant.B, plant.C
    S = C @ B
    S = S + S.T
    if not is_pos_def(S):
        lam = np.linalg.eigvalsh(S)
        raise PreconditionQ0(
            "CB + B^T C^T is not positive definite (eigenvalues "
            + ", ".join(f"{v:.6g}" for v in lam) + ")")
    Q0 = -S
    Qi = np.linalg.inv(Q0)
    CA = C @ A
    N0 = np.block([
        [A + B @ Qi @ CA, B @ Qi @ B.T],
        [-A.T @ C.T @ Qi @ CA, -A.T - A.T @ C.T @ Qi @ B.T],
    ])
    return N0, Q0


def _cluster_imaginary(values, tol):
    """Single-linkage clusters of sorted reals closer than `tol`."""
    clusters = []
    for v in sorted(values):
        if clusters and v - clusters[-1][-1] <= tol:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    return clusters


def ni_hamiltonian_test(plant, tol=DEFAULT_TOL):
    """Hamiltonian NI test: no imaginary-axis eigenvalue of odd multiplicity.

    Eigenvalues with ``|Re| <= tol.axis * ||N0||`` are treated as lying on
    the imaginary axis and grouped by imaginary part within
    ``tol.cluster * ||N0||``. The plant is declared NI iff every group has
    even size.
    """
    N0, Q0 = hamiltonian_matrix(plant)
    lam = eig_general(N0)
    scale = np.linalg.norm(N0, 2)
    on_axis = [z for z in lam if abs(z.real) <= tol.axis * scale]
    clusters = _cluster_imaginary([z.imag for z in on_axis],
                                  tol.cluster * scale)
    report = [{'imag': float(np.mean(c)), 'multiplicity': len(c)}
              for c in clusters]
    is_ni = all(len(c) % 2 == 0 for c in clusters)
    order = np.lexsort((lam.imag, lam.real))
    detail = {'eigenvalues': [complex(z) for z in lam[order]],
              'norm_N0': float(scale), 'axis_clusters': report,
              'Q0': Q0, 'N0': N0}
    return NiVerdict('hamiltonian', is_ni, detail)


def _sym_basis(n):
    """Orthonormal basis (Frobenius) of the n x n symmetric matrices."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(E)
    return basis


def _lyap_residual(A, Y):
    L = A @ Y
    return L + L.T


def _phi(A, Y, delta):
    """``max(lambda_max(AY + YA^T), delta - lambda_min(Y))`` and a subgradient."""
    L = _lyap_residual(A, Y)
    wl, vl = np.linalg.eigh(L)
    wy, vy = np.linalg.eigh(Y)
    f1 = wl[-1]
    f2 = delta - wy[0]
    if f1 >= f2:
        v = vl[:, -1]
        # d/dY of v^T (AY + YA^T) v = A^T v v^T + v v^T A, symmetrized
        G = np.outer(A.T @ v, v)
        return f1, f1, f2, G + G.T
    v = vy[:, 0]
    return f2, f1, f2, -np.outer(v, v)


def find_ni_certificate(plant, max_iter=5000, polish_iter=40, tol=DEFAULT_TOL):
    """Search for an NI Lemma certificate ``Y``.

    The equality ``B + A Y C^T = 0`` is solved over symmetric ``Y`` by least
    squares, giving a particular solution and an orthonormal basis of the
    affine solution family. The family is then searched by a subgradient
    method on ``phi(Y) = max(lambda_max(AY + YA^T), delta - lambda_min(Y))``
    with Polyak steps for the target value 0. The step length shrinks with
    ``phi`` itself, which gives fast convergence when the feasible set is a
    single point on the boundary (the common lossless case). Once an
    iterate meets the certificate tolerances the search runs up to
    `polish_iter` further steps and keeps the best iterate.

    Returns
    -------
    NiCertificate

    Raises
    ------
    EqualityInfeasible
        The equality has no symmetric solution; the plant is not NI.
    SearchInconclusive
        The search budget ran out with ``phi > 0``. The exception carries
        the best iterate in ``.best_Y`` and its value in ``.best_phi``.
    """
    A, B, C = plant.A, plant.B, plant.C
    n = plant.n_states
    basis = _sym_basis(n)
    # column k: vec(A E_k C^T)
    Lmat = np.column_stack([(A @ E @ C.T).ravel() for E in basis])
    rhs = -B.ravel()
    coef, *_ = np.linalg.lstsq(Lmat, rhs, rcond=None)
    Yp = sum(c * E for c, E in zip(coef, basis))
    eq_res = np.linalg.norm(B + A @ Yp @ C.T)
    eq_scale = np.linalg.norm(B) + np.linalg.norm(A, 2) * \
        np.linalg.norm(Yp, 2) * np.linalg.norm(C, 2)
    if eq_res > 1e-6 * eq_scale:
        raise EqualityInfeasible(
            f"B + A Y C^T = 0 has no symmetric solution "
            f"(least-squares residual {eq_res:.3g})")
    null = scipy.linalg.null_space(Lmat, rcond=1e-12)
    dirs = [sum(c * E for c, E in zip(col, basis)) for col in null.T]
    ynorm = np.linalg.norm(Yp, 2)
    delta = 1e-8 * ynorm if ynorm > 0 else 1e-12

    def accept(Y):
        L = _lyap_residual(A, Y)
        lmax = np.linalg.eigvalsh(L)[-1]
        lyap_ok = lmax <= 1e-8 * np.linalg.norm(L, 2) + 1e-10
        return lyap_ok and np.linalg.eigvalsh(Y)[0] > 0, lmax

    def certificate(Y):
        Y = 0.5 * (Y + Y.T)
        L = _lyap_residual(A, Y)
        return NiCertificate(Y, float(np.linalg.norm(B + A @ Y @ C.T)),
                             float(np.linalg.eigvalsh(L)[-1]))

    y = np.zeros(len(dirs))
    Y = Yp.copy()
    best_val, best_Y = math.inf, Y
    polish = None
    for it in range(max_iter):
        val, f1, f2, G = _phi(A, Y, delta)
        if val < best_val:
            best_val, best_Y = val, Y
        if val <= 0.0:
            return certificate(Y)
        if polish is None and accept(Y)[0] and f2 <= 0:
            polish = it + polish_iter
        if polish is not None and it >= polish:
            return certificate(best_Y)
        if not dirs:
            break
        g = np.array([np.sum(G * D) for D in dirs])
        gg = g @ g
        if gg == 0.0:
            break
        # Polyak step for target value 0; val > 0 here
        y = y - (val / gg) * g
        Y = Yp + sum(c * D for c, D in zip(y, dirs))
    ok, _ = accept(best_Y)
    if ok and np.linalg.eigvalsh(best_Y)[0] > 0:
        return certificate(best_Y)
    exc = SearchInconclusive(
        f"no certificate found in {max_iter} iterations "
        f"(best phi = {best_val:.3g})")
    exc.best_Y = best_Y
    exc.best_phi = float(best_val)
    raise exc


def certify(plant, method='auto', omega_grid=None, tol=DEFAULT_TOL):
    """Run one NI test and return an `NiVerdict`.

    ``method='auto'`` tries the Hamiltonian test and falls back to the
    sweep when its precondition fails.
    """
    if method == 'sweep':
        return ni_frequency_test(plant, omega_grid, tol)
    if method == 'hamiltonian':
        return ni_hamiltonian_test(plant, tol)
    if method == 'certificate':
        try:
            cert = find_ni_certificate(plant, tol=tol)
        except EqualityInfeasible as exc:
            return NiVerdict('certificate', False, {'reason': str(exc)})
        except SearchInconclusive as exc:
            return NiVerdict('certificate', None,
                             {'reason': str(exc), 'best_phi': exc.best_phi})
        return NiVerdict('certificate', True, {'certificate': cert})
    if method == 'auto':
        try:
            return ni_hamiltonian_test(plant, tol)
        except PreconditionQ0 as exc:
            verdict = ni_frequency_test(plant, omega_grid, tol)
            verdict.detail['fallback_reason'] = str(exc)
            return verdict
    raise ValueError(f"unknown NI test method {method!r}")
