"""Positive-feedback interconnection of a plant and a HIGS controller.

The hybrid closed loop is linear once the mode of every element is fixed,
so each mode combination is simulated with a precomputed fixed-step RK4
map. After every step the sector boundary and the gain-mode condition are
checked; a crossing is located inside the step by root finding and the
step is split there. Gain-mode channels are projected onto ``x_h = k_h e``
whenever a step is accepted.

State layout: ``z = [x; x_h]`` (plant state, then element states) and the
exogenous vector ``w = [r; r']``.
"""

import collections
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.interpolate
import scipy.optimize

from .errors import (ContinuityViolation, DimensionMismatch, NonFinite,
                     OutsideSector, PreconditionDefiniteness,
                     SearchInconclusive, EqualityInfeasible, ValidationError,
                     ZenoGuard)
from .higs import (HigsMode, classify_mode, controller_elements,
                   controller_kind, sector_tol)
from .numerics import DEFAULT_TOL, is_pos_def, solve_linear, symmetrize
from .plant import find_ni_certificate

__all__ = ['Wiring', 'InputSignal', 'SplineSignal', 'SimConfig',
           'ClosedLoop', 'Trajectory', 'SimReport', 'assemble', 'simulate',
           'lyapunov_matrix', 'lyapunov_value', 'monitor_report',
           'write_trajectory_csv', 'trajectory_csv_header']


class Wiring(str, Enum):
    """Where the external signal `r` enters the positive-feedback loop."""
    PLANT_INPUT = 'plant_input'            # u = r + u_ctrl, e = y
    CONTROLLER_INPUT = 'controller_input'  # u = u_ctrl, e = r + y


# ---------------------------------------------------------------- inputs

@dataclass
class InputSignal:
    """Piecewise-smooth external signal, broadcast over channels.

    Parameters
    ----------
    kind : {'zero', 'step', 'pulse_train', 'sine'}
    amplitude : float or sequence
        Per-channel amplitude; a scalar applies to every channel.
    frequency : float
        Hz, for the periodic kinds.
    duty : float
        High fraction of each pulse period.
    phase : float
        Sine phase in rad.
    stop_time : float, optional
        The signal is zero from this instant on.
    """
    kind: str = 'zero'
    amplitude: object = 0.0
    frequency: float = 0.0
    duty: float = 0.5
    phase: float = 0.0
    stop_time: Optional[float] = None

    KINDS = ('zero', 'step', 'pulse_train', 'sine')

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown input kind {self.kind!r}")
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        if amp.ndim != 1 or not np.all(np.isfinite(amp)):
            raise ValidationError("amplitude must be a finite scalar or list")
        if self.kind in ('pulse_train', 'sine') and not self.frequency > 0:
            raise ValidationError("periodic inputs need frequency > 0")
        if self.kind == 'pulse_train' and not 0.0 < self.duty < 1.0:
            raise ValidationError("duty must lie in (0, 1)")

    def amplitudes(self, channels):
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        if amp.size == 1:
            return np.full(channels, amp[0])
        if amp.size != channels:
            raise DimensionMismatch(
                f"input has {amp.size} channels, loop expects {channels}")
        return amp

    @property
    def is_zero(self):
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        return self.kind == 'zero' or not np.any(amp)

    def breakpoints(self, t0, t1):
        """Instants in ``[t0, t1)`` where `r` or `r'` may jump."""
        out = []
        if self.stop_time is not None and t0 <= self.stop_time < t1:
            out.append(self.stop_time)
        if self.stop_time is not None:
            t1 = min(t1, self.stop_time + 1.0 / max(self.frequency, 1.0))
        if self.kind == 'pulse_train' and math.isfinite(t1):
            f = self.frequency
            k = max(math.floor(t0 * f) - 1, 0)
            while k / f < t1:
                for edge in (k / f, (k + self.duty) / f):
                    if t0 <= edge < t1 and (self.stop_time is None
                                            or edge < self.stop_time):
                        out.append(edge)
                k += 1
        return sorted(set(out))

    def evaluate(self, times, a, b, channels):
        """``(r, r')`` at `times`, shape ``(len(times), channels)``.

        The smooth piece is the one containing ``(a + b) / 2``; `[a, b]`
        must not contain a breakpoint in its interior.
        """
        times = np.asarray(times, dtype=float)
        amp = self.amplitudes(channels)
        zeros = np.zeros((times.size, channels))
        mid = 0.5 * (a + b)
        if self.kind == 'zero' or (self.stop_time is not None
                                   and mid >= self.stop_time):
            return zeros, zeros.copy()
        if self.kind == 'step':
            return np.broadcast_to(amp, zeros.shape).copy(), zeros
        if self.kind == 'pulse_train':
            ph = mid * self.frequency
            high = ph - math.floor(ph) < self.duty
            r = np.broadcast_to(amp if high else 0.0 * amp, zeros.shape).copy()
            return r, zeros
        w = 2.0 * math.pi * self.frequency
        arg = (w * times + self.phase)[:, None]
        return amp * np.sin(arg), amp * w * np.cos(arg)

    def to_dict(self):
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        return {'kind': self.kind,
                'amplitude': amp[0].item() if amp.size == 1 else amp.tolist(),
                'frequency': self.frequency, 'duty': self.duty,
                'phase': self.phase, 'stop_time': self.stop_time}

    @classmethod
    def from_dict(cls, d):
        known = {'kind', 'amplitude', 'frequency', 'duty', 'phase',
                 'stop_time'}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown input fields {sorted(extra)}")
        return cls(**d)


def _ppoly_from_bspline(spl):
    # PPoly.from_spline rejects vector-valued splines; rebuild the local
    # Taylor coefficients from derivatives at the left breakpoints
    k = spl.k
    x = np.unique(spl.t[k:spl.t.size - k])
    c = np.stack([spl(x[:-1], nu=m) / math.factorial(m)
                  for m in range(k, -1, -1)])
    return scipy.interpolate.PPoly(c, x)


class SplineSignal:
    """Spline through ``(t_knots, values)``; held constant past the ends.

    With ``degree=1`` the derivative jumps at every knot, which makes a
    convenient continuous, piecewise-smooth test input.
    """

    def __init__(self, t_knots, values, degree=3):
        t = np.asarray(t_knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        spl = scipy.interpolate.make_interp_spline(t, v, k=degree)
        self._pp = _ppoly_from_bspline(spl)
        self._dpp = self._pp.derivative()
        self._t = t
        self.channels = v.shape[1]
        self.is_zero = not np.any(v)

    def breakpoints(self, t0, t1):
        return [float(k) for k in self._t if t0 <= k < t1]

    def evaluate(self, times, a, b, channels):
        if channels != self.channels:
            raise DimensionMismatch(
                f"input has {self.channels} channels, loop expects {channels}")
        times = np.asarray(times, dtype=float)
        mid = 0.5 * (a + b)
        if mid <= self._t[0] or mid >= self._t[-1]:
            end = self._t[0] if mid <= self._t[0] else self._t[-1]
            r = np.broadcast_to(self._pp(end), (times.size, channels)).copy()
            return r, np.zeros_like(r)
        i = min(max(int(np.searchsorted(self._pp.x, mid, side='right')) - 1,
                    0), self._pp.c.shape[1] - 1)
        s = (times - self._pp.x[i])[:, None]
        return self._horner(self._pp.c, i, s), self._horner(self._dpp.c, i, s)

    @staticmethod
    def _horner(c, i, s):
        out = c[0, i] + 0.0 * s
        for ck in c[1:, i]:
            out = out * s + ck
        return out


# ---------------------------------------------------------------- config

@dataclass
class SimConfig:
    """Fixed-step simulation settings.

    `t_end` is rounded to a whole number of steps. `record_every` thins the
    stored samples (monitors still run every step). `quad_points` is the
    number of sub-intervals per step in the dissipation quadrature.
    `monitor` selects W monitoring: with ``monitor_Y=None`` and
    ``monitor=True`` a certificate is searched for.
    """
    t_end: float
    dt: float
    eps_switch: float = 1e-9
    max_switch_rate: float = 1e6
    monitor_Y: Optional[np.ndarray] = None
    monitor: bool = True
    record_every: int = 1
    quad_points: int = 4
    converge_tol: float = 1e-3
    max_events_per_step: int = 64

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > self.dt):
            raise ValidationError("need 0 < dt < t_end")
        if not 0 < self.eps_switch < self.dt:
            raise ValidationError("need 0 < eps_switch < dt")
        if not self.max_switch_rate > 0:
            raise ValidationError("max_switch_rate must be positive")
        if self.record_every < 1 or self.quad_points < 1:
            raise ValidationError("record_every and quad_points must be >= 1")
        if self.monitor_Y is not None:
            self.monitor_Y = symmetrize(self.monitor_Y, name='monitor_Y')

    @property
    def n_steps(self):
        return max(int(round(self.t_end / self.dt)), 1)

    def to_dict(self):
        return {'t_end': self.t_end, 'dt': self.dt,
                'eps_switch': self.eps_switch,
                'max_switch_rate': self.max_switch_rate,
                'monitor_Y': None if self.monitor_Y is None
                else self.monitor_Y.tolist(),
                'monitor': self.monitor, 'record_every': self.record_every,
                'quad_points': self.quad_points,
                'converge_tol': self.converge_tol}

    @classmethod
    def from_dict(cls, d):
        known = {'t_end', 'dt', 'eps_switch', 'max_switch_rate', 'monitor_Y',
                 'monitor', 'record_every', 'quad_points', 'converge_tol',
                 'max_events_per_step'}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown sim fields {sorted(extra)}")
        if 't_end' not in d or 'dt' not in d:
            raise ValidationError("sim needs t_end and dt")
        return cls(**d)


# ---------------------------------------------------------------- loop

class ClosedLoop:
    """Assembled interconnection; see `assemble`."""

    def __init__(self, plant, controller, wiring):
        self.plant = plant
        self.controller = controller
        self.wiring = Wiring(wiring)
        self.kind = None if controller is None else controller_kind(controller)
        els = [] if controller is None else controller_elements(controller)
        self.params = [el.params for el in els]
        self.n = 0 if plant is None else plant.n_states
        self.N = len(els)
        self.nz = self.n + self.N
        if plant is not None:
            self.m_r = plant.n_inputs
        else:
            self.m_r = self.N if self.kind == 'multi' else 1
        self.nw = 2 * self.m_r
        self.nv = self.nz + self.nw
        self.x0 = np.zeros(self.n)
        self.xh0 = np.array([el.x_h for el in els], dtype=float)
        self._cache = {}
        self._cert = None
        self._build_static()

    # structural rows over v = [x; x_h; r; r']
    def _build_static(self):
        n, N, nz, mr, nv = self.n, self.N, self.nz, self.m_r, self.nv
        ri = slice(nz, nz + mr)
        rdi = slice(nz + mr, nz + 2 * mr)
        plant_in = self.wiring == Wiring.PLANT_INPUT or self.controller is None
        XD = np.zeros((n, nv))
        Y = np.zeros((mr, nv))
        U = np.zeros((mr, nv))
        if self.plant is not None:
            A, B, C = self.plant.A, self.plant.B, self.plant.C
            if N:
                S = np.eye(mr) if self.kind == 'multi' else np.zeros((1, N))
                if self.kind == 'single':
                    S[0, 0] = 1.0
                elif self.kind == 'cascade':
                    S[0, 1] = 1.0
                U[:, n:nz] = S
            if plant_in:
                U[:, ri] = np.eye(mr)
            XD[:, :n] = A
            XD += B @ U
            Y[:, :n] = C
            E = Y.copy()
            ED = C @ XD
            if not plant_in:
                E[:, ri] += np.eye(mr)
                ED[:, rdi] += np.eye(mr)
        else:
            E = np.zeros((mr, nv))
            ED = np.zeros((mr, nv))
            E[:, ri] = np.eye(mr)
            ED[:, rdi] = np.eye(mr)
        self._XD, self._Yrows, self._Urows = XD, Y, U
        self._Ectl, self._EDctl = E, ED
        # controller port for the dissipation quadrature
        if self.kind == 'cascade':
            self._port_e = E[:1]
            self._port_u = np.array([n + 1])
        else:
            self._port_e = E[:N]
            self._port_u = np.arange(n, nz)
        self._Vmat = np.zeros((N, N))
        if self.kind in ('single', 'multi'):
            self._Vmat = np.diag([1.0 / p.k_h for p in self.params])
        elif self.kind == 'cascade':
            k1, k2, a = self.params[0].k_h, self.params[1].k_h, \
                self.controller.a
            self._Vmat = np.diag([2.0 * a, (k2 - 2 * a * k1) / (k1 * k2 * k2)])

    def element_rows(self, modes):
        """Rows of ``e`` and ``e'`` (shape ``(N, nv)``) for a mode tuple."""
        E = np.zeros((self.N, self.nv))
        ED = np.zeros((self.N, self.nv))
        if self.kind == 'cascade':
            E[0], ED[0] = self._Ectl[0], self._EDctl[0]
            E[1, self.n] = 1.0
            p = self.params[0]
            ED[1] = p.k_h * ED[0] if modes[0] == HigsMode.GAIN \
                else p.omega_h * E[0]
        elif self.N:
            E[:], ED[:] = self._Ectl[:self.N], self._EDctl[:self.N]
        return E, ED

    def system(self, modes):
        """``(M, Nw, E, ED)`` with ``z' = M z + Nw w`` in the given modes."""
        key = tuple(int(m) for m in modes)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        E, ED = self.element_rows(key)
        F = np.zeros((self.nz, self.nv))
        F[:self.n] = self._XD
        for j, p in enumerate(self.params):
            F[self.n + j] = p.k_h * ED[j] if key[j] == HigsMode.GAIN \
                else p.omega_h * E[j]
        out = (F[:, :self.nz].copy(), F[:, self.nz:].copy(), E, ED)
        self._cache[key] = out
        return out

    def storage(self, xh):
        return 0.5 * float(xh @ (self._Vmat @ xh))

    def certificate(self):
        """NI certificate of the plant, searched once and memoized."""
        if self._cert is None:
            try:
                self._cert = find_ni_certificate(self.plant)
            except (SearchInconclusive, EqualityInfeasible) as exc:
                self._cert = exc
        return self._cert


def assemble(plant, ctrl, wiring=Wiring.PLANT_INPUT):
    """Interconnect `plant` and `ctrl` in positive feedback.

    Either may be ``None``: without a plant the controller reads ``e = r``;
    without a controller the plant is driven by ``u = r``.

    Raises
    ------
    DimensionMismatch
        Single and cascade controllers need a SISO plant; a multi-HIGS
        needs one channel per plant output.
    """
    if plant is None and ctrl is None:
        raise ValidationError("need a plant or a controller")
    if plant is not None and ctrl is not None:
        kind = controller_kind(ctrl)
        if kind in ('single', 'cascade') and not plant.is_siso:
            raise DimensionMismatch(
                f"{kind} HIGS needs a SISO plant, got {plant.n_inputs} "
                "channels")
        if kind == 'multi' and len(ctrl.elements) != plant.n_inputs:
            raise DimensionMismatch(
                f"multi-HIGS has {len(ctrl.elements)} channels, plant has "
                f"{plant.n_inputs}")
    return ClosedLoop(plant, ctrl, wiring)


# ---------------------------------------------------------------- RK4 maps

def _rk4_basis(M, Nw, h):
    """``(P, Q0, Qm, Q1)`` with ``z+ = P z + Q0 w(t) + Qm w(t+h/2) + Q1 w(t+h)``."""
    nz, nw = Nw.shape
    cols = nz + 3 * nw
    Z = np.zeros((nz, cols))
    Z[:, :nz] = np.eye(nz)
    W = [np.zeros((nw, cols)) for _ in range(3)]
    for i in range(3):
        W[i][:, nz + i * nw:nz + (i + 1) * nw] = np.eye(nw)
    k1 = M @ Z + Nw @ W[0]
    k2 = M @ (Z + 0.5 * h * k1) + Nw @ W[1]
    k3 = M @ (Z + 0.5 * h * k2) + Nw @ W[1]
    k4 = M @ (Z + h * k3) + Nw @ W[2]
    Zn = Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (Zn[:, :nz], Zn[:, nz:nz + nw], Zn[:, nz + nw:nz + 2 * nw],
            Zn[:, nz + 2 * nw:])


def _rk4_vec(M, Nw, z, w0, wm, w1, h):
    """One RK4 step of ``z' = M z + Nw w`` for a single vector."""
    k1 = M @ z + Nw @ w0
    k2 = M @ (z + 0.5 * h * k1) + Nw @ wm
    k3 = M @ (z + 0.5 * h * k2) + Nw @ wm
    k4 = M @ (z + h * k3) + Nw @ w1
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_poly(M, Nw):
    """Stacked ``R`` with ``z+ = z + sum_p h^p R_p [z; w0; wm; w1]``.

    Expands one RK4 step of ``z' = M z + Nw w`` in powers of the step
    length, so evaluating it for any `h` costs one matrix-vector product.
    """
    nz, nw = Nw.shape
    M2 = M @ M
    M3 = M2 @ M
    MN, M2N, M3N = M @ Nw, M2 @ Nw, M3 @ Nw
    R = np.zeros((4, nz, nz + 3 * nw))
    c0, cm, c1 = (slice(nz + i * nw, nz + (i + 1) * nw) for i in range(3))
    R[0, :, :nz] = M
    R[0, :, c0], R[0, :, cm], R[0, :, c1] = Nw / 6, 4 * Nw / 6, Nw / 6
    R[1, :, :nz] = M2 / 2
    R[1, :, c0], R[1, :, cm] = MN / 6, MN / 3
    R[2, :, :nz] = M3 / 6
    R[2, :, c0] = R[2, :, cm] = M2N / 12
    R[3, :, :nz] = M3 @ M / 24
    R[3, :, c0] = M3N / 24
    return R.reshape(4 * nz, -1)


def _sample_maps(M, Nw, h, K):
    """Stacked maps to the states at ``j h / K``, ``j = 1..K``.

    The input enters through its values on the grid ``i h / (2K)``,
    ``i = 0..2K``, flattened row-major.
    """
    nz, nw = Nw.shape
    P = np.zeros((K * nz, nz))
    Q = np.zeros((K * nz, (2 * K + 1) * nw))
    for j in range(1, K + 1):
        Pj, Q0, Qm, Q1 = _rk4_basis(M, Nw, j * h / K)
        rows = slice((j - 1) * nz, j * nz)
        P[rows] = Pj
        for idx, Qx in ((0, Q0), (j, Qm), (2 * j, Q1)):
            Q[rows, idx * nw:(idx + 1) * nw] += Qx
    return P, Q


# ---------------------------------------------------------------- results

@dataclass
class Trajectory:
    """Sampled hybrid run. Rows are aligned with `times`."""
    times: np.ndarray
    x: np.ndarray
    x_h: np.ndarray
    e: np.ndarray
    u: np.ndarray
    y: np.ndarray
    modes: np.ndarray
    V: np.ndarray
    W: Optional[np.ndarray]
    switches: list
    step_residuals: np.ndarray
    step_W_increase: Optional[np.ndarray] = None
    projections: list = field(default_factory=list)
    kind: Optional[str] = None
    input_kind: str = 'zero'
    monitor: str = 'none'
    notes: list = field(default_factory=list)

    @property
    def joint(self):
        return np.hstack([self.x, self.x_h])


@dataclass
class SimReport:
    converged: bool
    final_state_norm: float
    max_W_increase: Optional[float]
    switch_count: int
    dissipation_max_residual: float
    step_metrics: Optional[list] = None
    peak_state_norm: float = 0.0
    max_W: Optional[float] = None
    dissipation_tol: float = 0.0
    monitor: str = 'none'
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {'converged': self.converged,
                'final_state_norm': self.final_state_norm,
                'max_W_increase': self.max_W_increase,
                'switch_count': self.switch_count,
                'dissipation_max_residual': self.dissipation_max_residual,
                'step_metrics': self.step_metrics,
                'peak_state_norm': self.peak_state_norm,
                'max_W': self.max_W,
                'dissipation_tol': self.dissipation_tol,
                'monitor': self.monitor, 'notes': list(self.notes)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + '\n'


# ---------------------------------------------------------------- Lyapunov

def lyapunov_matrix(loop, Y, a=None):
    """Symmetric ``P`` with ``W = z^T P z / 2`` on ``z = [x; x_h]``.

    For a cascade, `a` overrides the storage parameter stored in the
    controller.

    Raises
    ------
    PreconditionDefiniteness
        If `Y` is not positive definite or the DC-gain condition of the
        controller kind fails.
    """
    if loop.plant is None or loop.controller is None:
        raise ValidationError("W needs both a plant and a controller")
    Y = symmetrize(Y, name='Y')
    if not is_pos_def(Y):
        raise PreconditionDefiniteness("Y is not positive definite")
    C = loop.plant.C
    n, nz = loop.n, loop.nz
    G0 = symmetrize(C @ Y @ C.T, name='C Y C^T')
    P = np.zeros((nz, nz))
    P[:n, :n] = solve_linear(Y, np.eye(n))
    P[:n, :n] = 0.5 * (P[:n, :n] + P[:n, :n].T)
    if loop.kind == 'cascade':
        k1, k2 = loop.params[0].k_h, loop.params[1].k_h
        a = loop.controller.a if a is None else a
        c = (k2 - 2.0 * a * k1) / (k1 * k2 * k2)
        if not c > G0[0, 0]:
            raise PreconditionDefiniteness(
                f"(k2 - 2 a k1) / (k1 k2^2) = {c:.6g} must exceed "
                f"C Y C^T = {G0[0, 0]:.6g}")
        P[n:, n:] = np.diag([2.0 * a, c])
        P[:n, n + 1] = -C[0]
        P[n + 1, :n] = -C[0]
    else:
        Kinv = np.diag([1.0 / p.k_h for p in loop.params])
        if not is_pos_def(Kinv - G0):
            raise PreconditionDefiniteness(
                "K_h^{-1} - C Y C^T is not positive definite")
        P[n:, n:] = Kinv
        P[:n, n:] = -C.T
        P[n:, :n] = -C
    return P


def lyapunov_value(loop, Y, state):
    """Composite Lyapunov function at a joint state.

    `state` is ``z = [x; x_h]`` or a pair ``(x, x_h)``. For single and
    multi controllers ``W = x^T Y^{-1} x / 2 + X_h^T K_h^{-1} X_h / 2 -
    X_h^T C x``; for a cascade the middle term is the cascade storage and
    the cross term is ``-(C x) x_2``.
    """
    if isinstance(state, tuple):
        state = np.concatenate([np.atleast_1d(s) for s in state])
    z = np.asarray(state, dtype=float)
    P = lyapunov_matrix(loop, Y)
    return 0.5 * float(z @ P @ z)


# ---------------------------------------------------------------- simulator

class _Run:
    """Mutable state of one simulation."""

    def __init__(self, loop, signal, cfg, x0, xh0):
        self.loop, self.sig, self.cfg = loop, signal, cfg
        self.K = cfg.quad_points
        self.zero_input = bool(getattr(signal, 'is_zero', False))
        self.z = np.concatenate([np.asarray(x0, float).ravel(),
                                 np.asarray(xh0, float).ravel()])
        if self.z.size != loop.nz:
            raise DimensionMismatch(
                f"initial state has {self.z.size} entries, loop has "
                f"{loop.nz}")
        self.modes = [HigsMode.INTEGRATOR] * loop.N
        self.switches = []
        self.projections = []
        self.window = collections.deque()
        self._maps = {}
        self._dt_cache = {}
        self._poly = {}

    # -- input
    def w_grid(self, t0, h, a, b):
        """Input on ``t0 + i h / (2K)``, ``i = 0..2K``, flattened."""
        K, mr = self.K, self.loop.m_r
        if self.zero_input:
            return np.zeros((2 * K + 1) * 2 * mr)
        ts = t0 + h * np.arange(2 * K + 1) / (2 * K)
        r, rd = self.sig.evaluate(ts, a, b, mr)
        return np.hstack([r, rd]).ravel()

    def w_at(self, t, a, b):
        mr = self.loop.m_r
        if self.zero_input:
            return np.zeros(2 * mr)
        r, rd = self.sig.evaluate(np.array([t]), a, b, mr)
        return np.concatenate([r[0], rd[0]])

    def maps(self, modes, h):
        if abs(h - self.cfg.dt) <= 1e-9 * self.cfg.dt:
            h = self.cfg.dt
        key = (tuple(int(m) for m in modes), h)
        hit = self._maps.get(key)
        if hit is None:
            M, Nw, _, _ = self.loop.system(modes)
            hit = _sample_maps(M, Nw, h, self.K)
            if abs(h - self.cfg.dt) <= 1e-9 * self.cfg.dt:
                self._maps[key] = hit
        return hit

    def w_many(self, ts, a, b):
        mr = self.loop.m_r
        if self.zero_input:
            return np.zeros((len(ts), 2 * mr))
        r, rd = self.sig.evaluate(np.asarray(ts, dtype=float), a, b, mr)
        return np.hstack([r, rd])

    def point(self, z, modes, tau, t0, a, b):
        """RK4 state after one step of length `tau` from ``(t0, z)``,
        and the input at its end."""
        W = self.w_many([t0, t0 + 0.5 * tau, t0 + tau], a, b)
        if tau == 0.0:
            return z, W[0]
        key = tuple(int(m) for m in modes)
        R = self._poly.get(key)
        if R is None:
            M, Nw, _, _ = self.loop.system(modes)
            R = self._poly[key] = _rk4_poly(M, Nw)
        d = (R @ np.concatenate([z, W.ravel()])).reshape(4, -1)
        return z + np.array([tau, tau ** 2, tau ** 3, tau ** 4]) @ d, W[2]

    def samples(self, z, h, t0, a, b):
        """States at ``t0 + j h / K``, ``j = 1..K``, and the input grid."""
        wg = self.w_grid(t0, h, a, b)
        if abs(h - self.cfg.dt) <= 1e-9 * self.cfg.dt:
            P, Q = self.maps(self.modes, h)
            return (P @ z + Q @ wg).reshape(self.K, self.loop.nz), wg
        M, Nw, _, _ = self.loop.system(self.modes)
        W = wg.reshape(2 * self.K + 1, self.loop.nw)
        Zs = np.array([_rk4_vec(M, Nw, z, W[0], W[j], W[2 * j],
                                j * h / self.K)
                       for j in range(1, self.K + 1)])
        return Zs, wg

    # -- element quantities
    def e_ed(self, z, w, modes):
        _, _, E, ED = self.loop.system(modes)
        v = np.concatenate([z, w])
        return E @ v, ED @ v

    def log_switch(self, t, j, old, new):
        self.switches.append((t, j, int(old), int(new)))
        self.window.append(t)
        while self.window and t - self.window[0] > 1.0:
            self.window.popleft()
        if len(self.window) > self.cfg.max_switch_rate:
            raise ZenoGuard(
                f"more than {self.cfg.max_switch_rate:g} switches within 1 s "
                f"(t = {t:.9g})")

    def check_continuity(self, t, j, before, after):
        if abs(after - before) > DEFAULT_TOL.continuity * (1.0 + abs(before)):
            raise ContinuityViolation(
                f"x_h[{j}] jumps by {after - before:.3g} at t = {t:.9g}")

    def project_gain(self, z, w, modes):
        """Put every gain-mode element on ``x_h = k_h e`` (in order)."""
        n = self.loop.n
        for j, p in enumerate(self.loop.params):
            if modes[j] == HigsMode.GAIN:
                e, _ = self.e_ed(z, w, modes)
                z[n + j] = p.k_h * e[j]
        return z

    def classify_all(self, t, z, w, reset):
        """Re-classify every element at an instant where `w` may have jumped.

        With ``reset=True`` states outside their sector are clipped back
        (only possible when the reference enters at the controller input).
        """
        n = self.loop.n
        for j, p in enumerate(self.loop.params):
            e, ed = self.e_ed(z, w, self.modes)
            x = z[n + j]
            b = p.k_h * e[j]
            lo, hi = (0.0, b) if b >= 0 else (b, 0.0)
            if reset and not lo <= x <= hi:
                clipped = min(max(x, lo), hi)
                if abs(clipped - x) > sector_tol(p, e[j]):
                    self.projections.append((t, j, float(clipped - x)))
                z[n + j] = x = clipped
            new = classify_mode(p, e[j], x, ed[j])
            if new != self.modes[j]:
                self.log_switch(t, j, self.modes[j], new)
                self.modes[j] = new
        return self.project_gain(z, w, self.modes)

    def event_fn(self, j, kind, shifted=True):
        """Scalar function of the state that turns positive at the event.

        Exits are shifted by the detection threshold so that a state
        resting on the sector edge is not an event.
        """
        p = self.loop.params[j]
        n = self.loop.n
        c = 0.5 if shifted else 0.0

        def f(z, w):
            e, ed = self.e_ed(z, w, self.modes)
            if kind == 'exit':
                return _sector_signed(z[n + j], p.k_h * e[j]) \
                    - c * sector_tol(p, e[j])
            return -(p.omega_h * e[j] * e[j] - p.k_h * e[j] * ed[j])
        return f

    def triggers(self, Zq, Wq):
        """Event flags on a state sequence with the current modes.

        Rows of `Zq` and `Wq` are consecutive instants, the first being the
        start. Returns a ``(rows - 1, N)`` boolean array. An integrator
        element is flagged outside its sector, and also where its input
        changes sign while its state is not zero: the sector then shrinks
        through the state even if the samples miss the excursion.
        """
        loop, n = self.loop, self.loop.n
        _, _, E, ED = loop.system(self.modes)
        V = np.hstack([Zq, Wq])
        e, ed = V @ E.T, V @ ED.T
        out = np.zeros((Zq.shape[0] - 1, loop.N), dtype=bool)
        for j, p in enumerate(loop.params):
            ej = e[:, j]
            if self.modes[j] == HigsMode.GAIN:
                out[:, j] = (p.omega_h * ej * ej
                             - p.k_h * ej * ed[:, j])[1:] <= 0.0
                continue
            x, b = Zq[:, n + j], p.k_h * ej
            thr = 0.5 * DEFAULT_TOL.sector * (1.0 + np.abs(b))
            sd = np.maximum(x - np.maximum(b, 0.0), np.minimum(b, 0.0) - x)
            flip = (ej[1:] * ej[:-1] < 0.0) & \
                (np.maximum(np.abs(x[1:]), np.abs(x[:-1])) > thr[1:])
            out[:, j] = (sd > thr)[1:] | flip
        return out

    def clip_zero_side(self, t, z, w):
        """Clip integrator states that drifted past ``x_h = 0``."""
        n = self.loop.n
        e, _ = self.e_ed(z, w, self.modes)
        for j, p in enumerate(self.loop.params):
            if self.modes[j] != HigsMode.INTEGRATOR:
                continue
            x, b = z[n + j], p.k_h * e[j]
            if x * b < 0.0:
                self.check_continuity(t, j, x, 0.0)
                z[n + j] = 0.0
            dist = max(0.0, x - max(b, 0.0), min(b, 0.0) - x)
            if dist > sector_tol(p, e[j]):
                raise OutsideSector(
                    f"element {j} left its sector by {dist:.3g} at "
                    f"t = {t:.9g}")
        return z

    # -- one segment without input breakpoints
    def advance(self, t0, t1, z, a, b):
        """Integrate from `t0` to `t1` inside the smooth piece ``[a, b]``.

        Returns the end state and the integral of ``e^T du`` at the port.
        """
        loop, cfg = self.loop, self.cfg
        work = 0.0
        events = 0
        while True:
            h = t1 - t0
            if h <= 0.0:
                return z, work
            Zs, wg = self.samples(z, h, t0, a, b)
            Wq = wg.reshape(2 * self.K + 1, loop.nw)[::2]
            w0 = Wq[0]
            due = self.start_events(z, w0)
            best = due[0] if due else None
            if best is None:
                flags = self.triggers(np.vstack([z[None, :], Zs]), Wq)
                for j in np.nonzero(flags.any(axis=0))[0]:
                    i = int(np.argmax(flags[:, j]))
                    kind = 'drop' if self.modes[j] == HigsMode.GAIN \
                        else 'exit'
                    tau = self.locate(j, kind, z, t0, h, a, b,
                                      i * h / self.K, (i + 1) * h / self.K)
                    if tau is not None and (best is None or tau < best[0]):
                        best = (tau, j, kind)
            if best is None:
                work += self.port_work(z, Zs, wg)
                return Zs[-1].copy(), work
            events += 1
            if events > cfg.max_events_per_step:
                raise ZenoGuard(f"event storm near t = {t0:.9g}")
            tau, j, kind = best
            if tau > 0.0:
                Zs, wg = self.samples(z, tau, t0, a, b)
                work += self.port_work(z, Zs, wg)
                z = Zs[-1].copy()
            t0 = t0 + tau
            w = self.w_at(t0, a, b)
            n = loop.n
            if kind == 'exit':
                p = loop.params[j]
                e, _ = self.e_ed(z, w, self.modes)
                x, bnd = z[n + j], p.k_h * e[j]
                if abs(x) < abs(x - bnd):
                    # zero side of the sector: numerical drift only
                    self.check_continuity(t0, j, x, 0.0)
                    z[n + j] = 0.0
                    continue
                self.check_continuity(t0, j, x, bnd)
                z[n + j] = bnd
                new = HigsMode.GAIN
                _, ed = self.e_ed(z, w, self.modes)
                if not p.omega_h * e[j] * e[j] > p.k_h * e[j] * ed[j]:
                    new = HigsMode.INTEGRATOR
            else:
                new = HigsMode.INTEGRATOR
            if new != self.modes[j]:
                self.log_switch(t0, j, self.modes[j], new)
                self.modes[j] = new
                z = self.project_gain(z, w, self.modes)

    def start_events(self, z, w):
        """Events already due at the start state, as ``[(0.0, j, kind)]``."""
        out = []
        for j in range(self.loop.N):
            kind = 'drop' if self.modes[j] == HigsMode.GAIN else 'exit'
            v = self.event_fn(j, kind)(z, w)
            if v > 0.0 or (kind == 'drop' and v == 0.0):
                out.append((0.0, j, kind))
        return out

    def locate(self, j, kind, z, t0, h, a, b, lo, hi):
        """Earliest time in ``[lo, hi]`` of event `kind` of element `j`.

        The event function is nonpositive at `lo`. When it is still
        nonpositive at `hi` the flag came from a sign change of the element
        input; the root is then searched before that zero crossing, and
        None means the state met the shrinking sector exactly at zero (no
        event). Exits are refined from the shifted to the exact boundary
        crossing when the bracket allows it.
        """
        def along(fn):
            return lambda tau: fn(*self.point(z, self.modes, tau, t0, a, b))

        g = along(self.event_fn(j, kind))

        def ej(tau):
            zt, wt = self.point(z, self.modes, tau, t0, a, b)
            return self.e_ed(zt, wt, self.modes)[0][j]
        xtol = min(self.cfg.eps_switch, h) * 1e-6
        if g(hi) <= 0.0:
            if not ej(lo) * ej(hi) < 0.0:
                return None
            hi = scipy.optimize.brentq(ej, lo, hi, xtol=xtol, rtol=1e-15)
            if g(hi) <= 0.0:
                return None
        if g(lo) > 0.0:
            return lo
        tau = scipy.optimize.brentq(g, lo, hi, xtol=xtol, rtol=1e-15)
        if kind == 'exit':
            raw = along(self.event_fn(j, kind, shifted=False))
            r0 = raw(lo)
            if r0 < 0.0 < raw(tau):
                tau = scipy.optimize.brentq(raw, lo, tau, xtol=xtol,
                                            rtol=1e-15)
            elif r0 >= 0.0:
                # already on an edge at `lo`; only the k_h e edge counts,
                # the state may rest on the zero edge indefinitely
                zl, wl = self.point(z, self.modes, lo, t0, a, b)
                x = zl[self.loop.n + j]
                bnd = self.loop.params[j].k_h * self.e_ed(zl, wl,
                                                          self.modes)[0][j]
                if abs(x - bnd) < abs(x):
                    # coinciding edges (x = k_h e = 0) are not an event yet
                    tau = lo
        return tau

    def port_work(self, z0, Zs, wg):
        """Trapezoid integral of ``e^T du`` over the samples of one sub-step."""
        loop = self.loop
        if loop.N == 0:
            return 0.0
        K, nw = self.K, loop.nw
        Zall = np.vstack([z0[None, :], Zs])
        W = wg.reshape(2 * K + 1, nw)[::2]
        Pe = loop._port_e
        e = Zall @ Pe[:, :loop.nz].T + W @ Pe[:, loop.nz:].T
        u = Zall[:, loop._port_u]
        return float(np.sum(0.5 * (e[1:] + e[:-1]) * np.diff(u, axis=0)))


    # -- batched stepping with frozen modes
    def dt_maps(self):
        """Full-step maps for the current modes (cached per mode tuple).

        ``z+ = Ad z + Bd [w(t); w(t+dt/2); w(t+dt)]`` includes the
        gain-mode projection at the step end.
        """
        key = tuple(int(m) for m in self.modes)
        hit = self._dt_cache.get(key)
        if hit is not None:
            return hit
        loop, dt = self.loop, self.cfg.dt
        nz, nw, n = loop.nz, loop.nw, loop.n
        M, Nw, E, _ = loop.system(key)
        P, Q0, Qm, Q1 = _rk4_basis(M, Nw, dt)
        # affine projection z -> Pi [z; w_end], gain channels in order
        Pi = np.hstack([np.eye(nz), np.zeros((nz, nw))])
        for j, p in enumerate(loop.params):
            if key[j] == HigsMode.GAIN:
                row = p.k_h * (E[j, :nz] @ Pi)
                row[nz:] += p.k_h * E[j, nz:]
                Pi[n + j] = row
        Ad = Pi[:, :nz] @ P
        Bd = np.hstack([Pi[:, :nz] @ Q0, Pi[:, :nz] @ Qm,
                        Pi[:, :nz] @ Q1 + Pi[:, nz:]])
        Psub, Qsub = _sample_maps(M, Nw, dt, self.K)
        hit = {'Ad': Ad, 'Bd': Bd, 'Psub': Psub, 'Qsub': Qsub,
               'E': E, 'ED': loop.system(key)[3], 'Phi': None, 'Gam': None}
        self._dt_cache[key] = hit
        return hit

    def batch_maps(self, mp, nb):
        """Stacked powers of ``Ad`` and the block-Toeplitz input map.

        Built lazily and grown by doubling, up to ``_BATCH_MAX`` steps.
        """
        have = 0 if mp['Phi'] is None else mp['Phi'].shape[0] // self.loop.nz
        if nb <= have:
            return mp['Phi'], mp['Gam']
        L = min(max(nb, 2 * have, 8), _BATCH_MAX)
        nz, nw = self.loop.nz, self.loop.nw
        Ad, Bd = mp['Ad'], mp['Bd']
        Phi = np.zeros((L * nz, nz))
        cur = np.eye(nz)
        for i in range(L):
            cur = Ad @ cur
            Phi[i * nz:(i + 1) * nz] = cur
        Gam = np.zeros((L * nz, (2 * L + 1) * nw))
        if not self.zero_input:
            G = np.zeros((nz, (2 * L + 1) * nw))
            for i in range(L):
                G = Ad @ G
                G[:, 2 * i * nw:(2 * i + 3) * nw] += Bd
                Gam[i * nz:(i + 1) * nz] = G
        mp['Phi'], mp['Gam'] = Phi, Gam
        return Phi, Gam

    def batch(self, t0, nb, z):
        """Try `nb` full steps from `(t0, z)` with the modes frozen.

        Returns ``(Z, Wend, work, m)``: end states, end inputs and port
        work of the first `m` steps, which are event free.
        """
        loop, K, dt = self.loop, self.K, self.cfg.dt
        nz, nw = loop.nz, loop.nw
        mp = self.dt_maps()
        Phi, Gam = self.batch_maps(mp, nb)
        Zend = (Phi[:nb * nz] @ z).reshape(nb, nz)
        if self.zero_input:
            Wf = np.zeros((2 * K * nb + 1, nw))
        else:
            ts = t0 + dt * np.arange(2 * K * nb + 1) / (2 * K)
            r, rd = self.sig.evaluate(ts, t0, t0 + nb * dt, loop.m_r)
            Wf = np.hstack([r, rd])
            Wh = Wf[::K]
            Zend += (Gam[:nb * nz, :(2 * nb + 1) * nw] @ Wh.ravel()) \
                .reshape(nb, nz)
        Wend = Wf[2 * K::2 * K]
        # events at the step ends
        flags = self.triggers(np.vstack([z[None, :], Zend]),
                              np.vstack([Wf[:1], Wend]))
        bad = flags.any(axis=1)
        m = int(np.argmax(bad)) if bad.any() else nb
        if not np.all(np.isfinite(Zend[:m])):
            raise NonFinite(f"state became non-finite after t = {t0:.9g}")
        if m == 0 or loop.N == 0:
            return Zend[:m], Wend[:m], np.zeros(m), m
        # port work by the trapezoid rule on K sub-intervals per step
        starts = np.vstack([z[None, :], Zend[:m - 1]])
        Zs = starts @ mp['Psub'].T
        if not self.zero_input:
            idx = 2 * K * np.arange(m)[:, None] + np.arange(2 * K + 1)
            Zs += Wf[idx].reshape(m, -1) @ mp['Qsub'].T
        Zall = np.concatenate([starts[:, None, :],
                               Zs.reshape(m, K, nz)], axis=1)
        idx = 2 * K * np.arange(m)[:, None] + 2 * np.arange(K + 1)
        Wall = Wf[idx]
        Pe = loop._port_e
        ep = Zall @ Pe[:, :nz].T + Wall @ Pe[:, nz:].T
        up = Zall[:, :, loop._port_u]
        work = np.sum(0.5 * (ep[:, 1:] + ep[:, :-1]) * np.diff(up, axis=1),
                      axis=(1, 2))
        return Zend[:m], Wend[:m], work, m


_BATCH_MAX = 128


def _sector_signed(x, b):
    """Positive outside the interval between 0 and `b`, else minus the
    distance to its nearer end."""
    return max(x - max(b, 0.0), min(b, 0.0) - x)


def _monitor_setup(loop, cfg, notes):
    """Lyapunov matrix for W monitoring, or None (with a note)."""
    if loop.plant is None or loop.controller is None:
        return None, 'none'
    Y = cfg.monitor_Y
    if Y is None:
        if not cfg.monitor:
            return None, 'V-only'
        cert = loop.certificate()
        if isinstance(cert, Exception):
            notes.append(f"no NI certificate, W not monitored: {cert}")
            return None, 'V-only'
        Y = cert.Y
    try:
        return lyapunov_matrix(loop, Y), 'W'
    except PreconditionDefiniteness as exc:
        a = _cascade_monitor_a(loop, Y)
        if a is None:
            notes.append(f"W not monitored: {exc}")
            return None, 'V-only'
        # the cascade storage dissipates for every a in (0, k2 / (2 k1));
        # a smaller one keeps W positive definite
        notes.append(f"W uses cascade a = {a:.6g}: {exc}")
        return lyapunov_matrix(loop, Y, a), 'W'


def _cascade_monitor_a(loop, Y):
    """Midpoint of the ``a`` interval that makes the cascade W definite."""
    if loop.kind != 'cascade':
        return None
    k1, k2 = loop.params[0].k_h, loop.params[1].k_h
    C = loop.plant.C
    g = float((C @ (0.5 * (Y + Y.T)) @ C.T)[0, 0])
    if not (k1 * k2 * g < 1.0 and is_pos_def(0.5 * (Y + Y.T))):
        return None
    return 0.5 * (1.0 - k1 * k2 * max(g, 0.0)) * k2 / (2.0 * k1)


def simulate(loop, signal=None, cfg=None, x0=None, xh0=None):
    """Simulate the hybrid closed loop.

    Parameters
    ----------
    loop : ClosedLoop
    signal : InputSignal or SplineSignal, optional
        External input `r`; zero when omitted.
    cfg : SimConfig
    x0, xh0 : array_like, optional
        Initial plant and element states (defaults: zero plant state and
        the element states stored in the controller).

    Returns
    -------
    (Trajectory, SimReport)

    Raises
    ------
    ZenoGuard, OutsideSector, ContinuityViolation, NonFinite
    """
    if cfg is None:
        raise ValidationError("simulate needs a SimConfig")
    signal = InputSignal() if signal is None else signal
    x0 = loop.x0 if x0 is None else x0
    xh0 = loop.xh0 if xh0 is None else xh0
    run = _Run(loop, signal, cfg, x0, xh0)
    notes = []
    Pw, monitor = _monitor_setup(loop, cfg, notes)
    dt, n_steps = cfg.dt, cfg.n_steps
    n, N, nz, mr = loop.n, loop.N, loop.nz, loop.m_r

    Zs = np.zeros((n_steps + 1, nz))
    Ws = np.zeros((n_steps + 1, loop.nw))
    Ms = np.zeros((n_steps + 1, N), dtype=np.int8)
    work = np.zeros(n_steps)

    z = run.z
    first = [] if run.zero_input else \
        [c for c in signal.breakpoints(0.0, dt) if c > 0.0]
    w = run.w_at(0.0, 0.0, first[0] if first else dt)
    z = run.classify_all(0.0, z, w, reset=False)
    Zs[0], Ws[0], Ms[0] = z, w, run.modes
    reset = loop.wiring == Wiring.CONTROLLER_INPUT and N > 0
    k, nb = 0, 8
    next_bp = -1
    while k < n_steps:
        if not run.zero_input and next_bp < k:
            bps = signal.breakpoints(k * dt, n_steps * dt + dt)
            next_bp = max(int(math.floor(bps[0] / dt)) - 1, k) if bps \
                else n_steps
        room = min(nb, n_steps - k, next_bp - k if not run.zero_input
                   else n_steps)
        if room > 0:
            Zb, Wb, wk, m = run.batch(k * dt, room, z)
            if m:
                Zs[k + 1:k + m + 1] = Zb
                Ws[k + 1:k + m + 1] = Wb
                Ms[k + 1:k + m + 1] = run.modes
                work[k:k + m] = wk
                z = Zb[-1].copy()
                k += m
            nb = min(2 * nb, _BATCH_MAX) if m == room else max(nb // 2, 4)
            if m == room or k >= n_steps:
                continue
        # single step with input breakpoints or events
        t0, t1 = k * dt, (k + 1) * dt
        bps = [] if run.zero_input else signal.breakpoints(t0, t1)
        edges = [t0] + [c for c in bps if c > t0] + [t1]
        jump0 = bool(bps) and bps[0] == t0
        total = 0.0
        for s in range(len(edges) - 1):
            a, b = edges[s], edges[s + 1]
            if s > 0 or jump0:
                z = run.classify_all(a, z, run.w_at(a, a, b), reset)
            z, wk = run.advance(a, b, z, a, b)
            total += wk
        w1 = run.w_at(t1, edges[-2], t1)
        z = run.project_gain(z, w1, run.modes)
        z = run.clip_zero_side(t1, z, w1)
        if not np.all(np.isfinite(z)):
            raise NonFinite(f"state became non-finite at t = {t1:.9g}")
        Zs[k + 1], Ws[k + 1], Ms[k + 1] = z, w1, run.modes
        work[k] = total
        k += 1

    # monitors over every step, then thin the samples
    V = 0.5 * np.einsum('ij,jk,ik->i', Zs[:, n:], loop._Vmat, Zs[:, n:])
    resid = np.diff(V) - work
    Wv = dW = None
    if Pw is not None:
        Wv = 0.5 * np.einsum('ij,jk,ik->i', Zs, Pw, Zs)
        dW = np.diff(Wv)
    rec = np.arange(0, n_steps + 1, cfg.record_every)
    if rec[-1] != n_steps:
        rec = np.append(rec, n_steps)
    Vall = np.hstack([Zs, Ws])[rec]
    Ee = Vall @ loop._Ectl[:N].T if loop.kind != 'cascade' else \
        np.column_stack([Vall @ loop._Ectl[0], Vall[:, n]])
    if loop.plant is not None:
        Uu, Yy = Vall @ loop._Urows.T, Vall @ loop._Yrows.T
    else:
        Uu, Yy = Vall[:, nz:nz + mr], np.zeros((rec.size, 0))
    traj = Trajectory(times=rec * dt, x=Zs[rec, :n], x_h=Zs[rec, n:], e=Ee,
                      u=Uu, y=Yy, modes=Ms[rec], V=V[rec],
                      W=None if Wv is None else Wv[rec],
                      switches=run.switches, step_residuals=resid,
                      step_W_increase=dW, projections=run.projections,
                      kind=loop.kind,
                      input_kind=getattr(signal, 'kind', 'custom'),
                      monitor=monitor, notes=notes)
    return traj, monitor_report(traj, cfg.converge_tol)


def monitor_report(traj, converge_tol=1e-3):
    """Aggregate the monitors of a trajectory into a `SimReport`.

    `converged` means the final joint state norm is at most
    `converge_tol` times the peak joint norm along the run.
    """
    from .analysis import step_metrics
    norms = np.linalg.norm(traj.joint, axis=1) if traj.joint.size \
        else np.zeros(traj.times.size)
    final, peak = float(norms[-1]), float(norms.max())
    converged = bool(final <= converge_tol * peak)
    if traj.W is not None:
        inc = traj.step_W_increase
        if inc is None or inc.size == 0:
            inc = np.diff(traj.W)
        max_inc = float(max(inc.max(), 0.0)) if inc.size else 0.0
        max_W = float(traj.W.max())
    else:
        max_inc, max_W = None, None
    res = traj.step_residuals
    diss = float(res.max()) if res.size else 0.0
    metrics = None
    if traj.input_kind == 'step' and traj.y.shape[1]:
        metrics = []
        for ch in range(traj.y.shape[1]):
            ov, ts, err = step_metrics(traj, ch, float(traj.y[-1, ch]))
            metrics.append({'channel': ch, 'overshoot': ov,
                            'settling_time': ts, 'steady_state_error': err})
    return SimReport(
        converged=converged, final_state_norm=final, max_W_increase=max_inc,
        switch_count=len(traj.switches), dissipation_max_residual=diss,
        step_metrics=metrics, peak_state_norm=peak, max_W=max_W,
        dissipation_tol=DEFAULT_TOL.dissipation *
        (1.0 + float(np.abs(traj.V).max())),
        monitor=traj.monitor, notes=list(traj.notes))


# ---------------------------------------------------------------- CSV

def trajectory_csv_header(traj):
    n, N, m = traj.x.shape[1], traj.x_h.shape[1], traj.u.shape[1]
    cols = ['t'] + [f'x{i + 1}' for i in range(n)] + \
        [f'xh{i + 1}' for i in range(N)] + [f'e{i + 1}' for i in range(N)] + \
        [f'u{i + 1}' for i in range(m)] + [f'mode{i + 1}' for i in range(N)] + \
        ['V']
    if traj.W is not None:
        cols.append('W')
    return cols


def write_trajectory_csv(traj, path):
    """Write the trajectory with 17 significant digits per value."""
    cols = [traj.times[:, None], traj.x, traj.x_h, traj.e, traj.u,
            traj.modes.astype(float), traj.V[:, None]]
    if traj.W is not None:
        cols.append(traj.W[:, None])
    data = np.hstack(cols)
    np.savetxt(path, data, fmt='%.17g', delimiter=',',
               header=','.join(trajectory_csv_header(traj)), comments='')
