"""HIGS gain synthesis from the DC-gain stability conditions.

The closed-loop conditions are ``k_h G(0) < 1`` (single),
``K_h^{-1} - G(0) > 0`` (multi) and ``k1 k2 G(0) < 1`` (cascade). The
integrator frequencies play no role in them and are only given heuristic
defaults here.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Infeasible, NotSiso, NotSquare
from .higs import CascadeHigs, HigsElement, HigsParams, MultiHigs, check_cascade
from .numerics import DEFAULT_TOL, Tolerances, is_pos_def, symmetrize
from .plant import dc_gain

__all__ = ['SynthesisRequest', 'SynthesisResult', 'default_omega_h',
           'synthesize_single', 'synthesize_multi', 'synthesize_cascade',
           'synthesize']


@dataclass
class SynthesisRequest:
    plant: object
    topology: str = 'multi'
    margin: float = 0.1
    omega_h_hint: Optional[object] = None
    gain_cap: float = 100.0

    def __post_init__(self):
        if self.topology not in ('single', 'multi', 'cascade'):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not 0.0 < self.margin < 1.0:
            raise ValueError("margin must lie strictly inside (0, 1)")
        if not (math.isfinite(self.gain_cap) and self.gain_cap > 0):
            raise ValueError("gain_cap must be positive and finite")


@dataclass
class SynthesisResult:
    controller: object
    G0: np.ndarray
    margin_achieved: float
    scale: Optional[float] = None
    notes: list = field(default_factory=list)


def default_omega_h(plant):
    """Heuristic integrator frequency: half the slowest pole magnitude."""
    return 0.5 * float(np.min(np.abs(np.linalg.eigvals(plant.A))))


def _omegas(req, count):
    if req.omega_h_hint is None:
        return np.full(count, default_omega_h(req.plant)), \
            ['omega_h is a heuristic default (0.5 min |eig(A)|)']
    w = np.atleast_1d(np.asarray(req.omega_h_hint, dtype=float))
    if w.size == 1:
        w = np.full(count, w[0])
    if w.size != count or np.any(w < 0):
        raise ValueError("omega_h_hint needs one nonnegative value per channel")
    notes = []
    if not np.any(w > 0):
        warnings.warn("all omega_h are zero: the HIGS never integrates",
                      stacklevel=3)
        notes.append('all omega_h are zero')
    return w, notes


def synthesize_single(req):
    """``k_h = min(cap, (1 - margin) / G(0))`` for ``G(0) > 0``, else cap."""
    if not req.plant.is_siso:
        raise NotSiso("single HIGS synthesis needs a SISO plant")
    g0 = float(dc_gain(req.plant)[0, 0])
    k = min(req.gain_cap, (1.0 - req.margin) / g0) if g0 > 0 else req.gain_cap
    assert k > 0 and k * g0 < 1.0
    w, notes = _omegas(req, 1)
    ctrl = HigsElement(HigsParams(k, float(w[0])))
    return SynthesisResult(ctrl, np.array([[g0]]), 1.0 - k * g0, notes=notes)


def _multi_margin(s, cap, G0):
    Kinv = np.eye(G0.shape[0]) / (s * cap)
    return np.linalg.eigvalsh(Kinv - G0)[0] / Kinv[0, 0]


def synthesize_multi(req, iters=60):
    """Diagonal ``K_h = s cap I`` with the largest feasible ``s`` in (0, 1].

    Feasible means ``lambda_min(K_h^{-1} - G(0)) >= margin / (s cap)``,
    which is monotone in ``s``; bisection finds its boundary.

    Raises
    ------
    NotSquare
    Infeasible
        Only for degenerate data; the condition always holds for small s.
    """
    plant = req.plant
    if plant.C.shape[0] != plant.B.shape[1]:
        raise NotSquare("multi-HIGS synthesis needs a square plant")
    G0raw = dc_gain(plant)
    tol = Tolerances(symmetry=1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        G0 = symmetrize(G0raw, tol=DEFAULT_TOL, name='G(0)')
    scale = max(np.linalg.norm(G0raw, 2), 1e-300)
    notes = []
    if np.linalg.norm(G0raw - G0raw.T, 2) > tol.symmetry * scale:
        warnings.warn("G(0) is asymmetric beyond 1e-6 relative; "
                      "using its symmetric part", stacklevel=2)
        notes.append('G(0) symmetrized')
    cap, margin = req.gain_cap, req.margin

    def ok(s):
        return _multi_margin(s, cap, G0) >= margin

    if ok(1.0):
        s = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if mid > 0 and ok(mid):
                lo = mid
            else:
                hi = mid
        s = lo
        if s <= 0.0 or not ok(s):
            lam = float(np.linalg.eigvalsh(G0)[-1])
            raise Infeasible(
                f"no scaling satisfies the condition (largest eigenvalue of "
                f"G(0) is {lam:.6g})")
    K = s * cap * np.ones(G0.shape[0])
    if not is_pos_def(np.diag(1.0 / K) - G0):
        raise Infeasible("post-check of K_h^{-1} - G(0) > 0 failed")
    w, wnotes = _omegas(req, G0.shape[0])
    ctrl = MultiHigs([HigsElement(HigsParams(float(k), float(wi)))
                      for k, wi in zip(K, w)])
    return SynthesisResult(ctrl, G0raw, float(_multi_margin(s, cap, G0)),
                           scale=s, notes=notes + wnotes)


def synthesize_cascade(req):
    """``k1 = k2 = min(sqrt(cap), sqrt((1 - margin) / G(0)))``.

    ``omega1 = omega2 k1 / k2`` meets the frequency condition with
    equality and ``a = k2 / (4 k1)``.
    """
    if not req.plant.is_siso:
        raise NotSiso("cascade HIGS synthesis needs a SISO plant")
    g0 = float(dc_gain(req.plant)[0, 0])
    k = math.sqrt(req.gain_cap)
    if g0 > 0:
        k = min(k, math.sqrt((1.0 - req.margin) / g0))
    w, notes = _omegas(req, 1)
    w2 = float(w[-1])
    w1 = w2 * k / k
    a = k / (4.0 * k)
    p1, p2 = HigsParams(k, w1), HigsParams(k, w2)
    check_cascade(p1, p2, a)
    assert k * k * g0 < 1.0
    ctrl = CascadeHigs(HigsElement(p1), HigsElement(p2), a)
    return SynthesisResult(ctrl, np.array([[g0]]), 1.0 - k * k * g0,
                           notes=notes)


def synthesize(req):
    return {'single': synthesize_single, 'multi': synthesize_multi,
            'cascade': synthesize_cascade}[req.topology](req)
