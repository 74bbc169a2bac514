"""Hybrid integrator-gain elements and their compositions.

A HIGS integrates its input, ``x_h' = omega_h e``, while the pair
``(e, x_h)`` stays inside the sector ``e x_h >= x_h^2 / k_h``. When the
output reaches the sector boundary ``x_h = k_h e`` and would leave it
(``omega_h e^2 > k_h e e'``) it switches to the gain mode ``x_h = k_h e``.
The output ``u = x_h`` is continuous across mode switches.
"""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import OutsideSector, ParameterViolation, ValidationError
from .numerics import DEFAULT_TOL

__all__ = ['HigsMode', 'HigsParams', 'HigsElement', 'MultiHigs',
           'CascadeHigs', 'classify_mode', 'higs_rate', 'storage_single',
           'storage_multi', 'storage_cascade', 'sector_residual',
           'sector_distance', 'sector_tol', 'dissipation_residual',
           'controller_from_dict', 'controller_to_dict', 'controller_kind']


class HigsMode(IntEnum):
    INTEGRATOR = 0
    GAIN = 1


@dataclass(frozen=True)
class HigsParams:
    """Gain-mode slope `k_h` (> 0) and integrator frequency `omega_h` (>= 0)."""
    k_h: float
    omega_h: float

    def __post_init__(self):
        if not (math.isfinite(self.k_h) and self.k_h > 0):
            raise ParameterViolation(f"k_h must be positive, got {self.k_h}")
        if not (math.isfinite(self.omega_h) and self.omega_h >= 0):
            raise ParameterViolation(
                f"omega_h must be nonnegative, got {self.omega_h}")


@dataclass
class HigsElement:
    params: HigsParams
    x_h: float = 0.0
    mode: HigsMode = HigsMode.INTEGRATOR

    @property
    def k_h(self):
        return self.params.k_h

    @property
    def omega_h(self):
        return self.params.omega_h


@dataclass
class MultiHigs:
    """N HIGS in parallel; channel i reads the i-th entry of the input."""
    elements: list

    def __post_init__(self):
        if not self.elements:
            raise ValidationError("a multi-HIGS needs at least one channel")

    @property
    def gains(self):
        return np.array([el.k_h for el in self.elements])

    @property
    def omegas(self):
        return np.array([el.omega_h for el in self.elements])

    @property
    def states(self):
        return np.array([el.x_h for el in self.elements])


@dataclass
class CascadeHigs:
    """Two HIGS in series: the output of `first` is the input of `second`.

    `a` only enters the storage function. It defaults to ``k2 / (4 k1)``.
    With ``strict=False`` the frequency condition ``k2 omega1 <= k1 omega2``
    is not enforced (the storage is then not guaranteed to dissipate).
    """
    first: HigsElement
    second: HigsElement
    a: float = None
    strict: bool = True

    def __post_init__(self):
        k1, k2 = self.first.k_h, self.second.k_h
        if self.a is None:
            self.a = k2 / (4.0 * k1)
        check_cascade(self.first.params, self.second.params, self.a,
                      frequencies=self.strict)


def check_cascade(p1, p2, a, frequencies=True, tol=1e-12):
    """Raise `ParameterViolation` unless the cascade parameters are valid."""
    k1, k2 = p1.k_h, p2.k_h
    if not 0.0 < a < k2 / (2.0 * k1):
        raise ParameterViolation(
            f"a = {a} must lie in (0, k2/(2 k1)) = (0, {k2 / (2 * k1)})")
    if frequencies and k2 * p1.omega_h > k1 * p2.omega_h * (1.0 + tol):
        raise ParameterViolation(
            "cascade requires k2 omega1 <= k1 omega2 "
            f"({k2 * p1.omega_h} > {k1 * p2.omega_h})")


def controller_kind(ctrl):
    if isinstance(ctrl, HigsElement):
        return 'single'
    if isinstance(ctrl, MultiHigs):
        return 'multi'
    if isinstance(ctrl, CascadeHigs):
        return 'cascade'
    raise TypeError(f"not a HIGS controller: {type(ctrl).__name__}")


def controller_elements(ctrl):
    """Elements in simulation order."""
    kind = controller_kind(ctrl)
    if kind == 'single':
        return [ctrl]
    if kind == 'multi':
        return list(ctrl.elements)
    return [ctrl.first, ctrl.second]


def sector_tol(p, e, scale=DEFAULT_TOL.sector):
    return scale * (1.0 + abs(p.k_h * e))


def sector_residual(p, e, x_h):
    """``e x_h - x_h^2 / k_h``; nonnegative inside the sector."""
    return e * x_h - x_h * x_h / p.k_h


def sector_distance(p, e, x_h):
    """Distance from `x_h` to the sector interval between 0 and ``k_h e``."""
    b = p.k_h * e
    lo, hi = (0.0, b) if b >= 0 else (b, 0.0)
    return max(0.0, x_h - hi, lo - x_h)


def classify_mode(p, e, x_h, e_dot, tol=None):
    """Mode of an element at ``(e, x_h)`` with input rate `e_dot`.

    Gain iff ``|x_h - k_h e| <= tol`` and ``omega_h e^2 > k_h e e_dot``.
    Raises `OutsideSector` when ``(e, x_h)`` lies outside the sector by more
    than `tol` (default ``1e-9 (1 + |k_h e|)``).
    """
    tol = sector_tol(p, e) if tol is None else tol
    if sector_distance(p, e, x_h) > tol:
        raise OutsideSector(
            f"(e, x_h) = ({e!r}, {x_h!r}) is outside the sector "
            f"of k_h = {p.k_h}")
    on_boundary = abs(x_h - p.k_h * e) <= tol
    if on_boundary and p.omega_h * e * e > p.k_h * e * e_dot:
        return HigsMode.GAIN
    return HigsMode.INTEGRATOR


def higs_rate(p, mode, e, e_dot):
    """``omega_h e`` in integrator mode, ``k_h e_dot`` in gain mode."""
    if mode == HigsMode.GAIN:
        return p.k_h * e_dot
    return p.omega_h * e


def storage_single(p, x_h):
    return x_h * x_h / (2.0 * p.k_h)


def storage_multi(m, states=None):
    """``sum_i x_i^2 / (2 k_i)``."""
    x = m.states if states is None else np.asarray(states, dtype=float)
    return float(np.sum(x * x / (2.0 * m.gains)))


def storage_cascade(c, x1=None, x2=None):
    """``a x1^2 + (k2 - 2 a k1) / (2 k1 k2^2) x2^2``."""
    p1, p2 = c.first.params, c.second.params
    check_cascade(p1, p2, c.a, frequencies=False)
    x1 = c.first.x_h if x1 is None else x1
    x2 = c.second.x_h if x2 is None else x2
    k1, k2 = p1.k_h, p2.k_h
    return c.a * x1 * x1 + (k2 - 2.0 * c.a * k1) / (2.0 * k1 * k2 * k2) * x2 * x2


def storage_of(ctrl, states):
    """Controller storage at the flattened element states."""
    kind = controller_kind(ctrl)
    if kind == 'single':
        return storage_single(ctrl.params, states[0])
    if kind == 'multi':
        return storage_multi(ctrl, states)
    return storage_cascade(ctrl, states[0], states[1])


def dissipation_residual(ctrl, state_before, state_after, e_samples,
                         u_samples):
    """``V(after) - V(before) - integral of e^T du`` over one step.

    The integral is the trapezoidal rule on the supplied samples: arrays of
    shape ``(K,)`` or ``(K, channels)``. For a cascade, `e_samples` holds
    ``e1`` and `u_samples` holds ``x2``. A nonpositive value (up to
    quadrature error) is the nonlinear negative-imaginary inequality.
    """
    e = np.asarray(e_samples, dtype=float)
    u = np.asarray(u_samples, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
        u = u[:, None]
    work = float(np.sum(0.5 * (e[1:] + e[:-1]) * np.diff(u, axis=0)))
    dV = storage_of(ctrl, np.atleast_1d(state_after)) - \
        storage_of(ctrl, np.atleast_1d(state_before))
    return dV - work


def _element_from(k, w, x=0.0):
    return HigsElement(HigsParams(float(k), float(w)), float(x))


def controller_from_dict(d, states=None):
    """Build a controller from its JSON fragment.

    ``{"type": "single"|"multi"|"cascade", "k_h": [...], "omega_h": [...],
    "a": optional}``. Scalars are accepted where one value is expected.
    """
    kind = d.get('type')
    k = np.atleast_1d(np.asarray(d.get('k_h'), dtype=float))
    w = np.atleast_1d(np.asarray(d.get('omega_h'), dtype=float))
    if k.shape != w.shape or k.ndim != 1:
        raise ValidationError("k_h and omega_h must have the same length")
    xs = np.zeros(k.size) if states is None else np.atleast_1d(states)
    if xs.size != k.size:
        raise ValidationError("initial HIGS state has the wrong length")
    if kind == 'single':
        if k.size != 1:
            raise ValidationError("single HIGS takes one k_h and omega_h")
        return _element_from(k[0], w[0], xs[0])
    if kind == 'multi':
        return MultiHigs([_element_from(*t) for t in zip(k, w, xs)])
    if kind == 'cascade':
        if k.size != 2:
            raise ValidationError("cascade takes two k_h and omega_h values")
        return CascadeHigs(_element_from(k[0], w[0], xs[0]),
                           _element_from(k[1], w[1], xs[1]), d.get('a'))
    raise ValidationError(f"unknown controller type {kind!r}")


def controller_to_dict(ctrl):
    kind = controller_kind(ctrl)
    els = controller_elements(ctrl)
    d = {'type': kind, 'k_h': [el.k_h for el in els],
         'omega_h': [el.omega_h for el in els]}
    if kind == 'cascade':
        d['a'] = ctrl.a
    return d
