"""Describing functions of a HIGS and time-domain response metrics."""

import math
from dataclasses import dataclass

import numpy as np

from .closedloop import InputSignal, SimConfig, Wiring, assemble, simulate
from .higs import HigsElement, HigsMode

__all__ = ['DescribingPoint', 'describing_function', 'describing_sweep',
           'step_metrics', 'write_sweep_csv']


@dataclass(frozen=True)
class DescribingPoint:
    omega: float
    amplitude: float
    complex_gain: complex
    gain_mode_only: bool = False

    @property
    def magnitude_db(self):
        return 20.0 * math.log10(abs(self.complex_gain))

    @property
    def phase_deg(self):
        ph = math.degrees(math.atan2(self.complex_gain.imag,
                                     self.complex_gain.real))
        return 180.0 if ph == -180.0 else ph


def describing_function(p, amplitude, omega, settle_cycles=10,
                        measure_cycles=10, steps_per_cycle=2000):
    """First-harmonic gain of one HIGS under ``e = amplitude sin(omega t)``.

    The element is simulated open loop from ``x_h = 0``. The first
    `settle_cycles` periods are discarded and the Fourier coefficients of
    the output are taken over the next `measure_cycles` periods.

    Returns
    -------
    DescribingPoint
        ``complex_gain = (b1 + j a1) / amplitude`` where ``b1`` and ``a1``
        are the sine and cosine coefficients of ``u``.
    """
    if not (amplitude > 0 and omega > 0):
        raise ValueError("amplitude and omega must be positive")
    if settle_cycles < 1 or measure_cycles < 1 or steps_per_cycle < 2000:
        raise ValueError("need >= 1 cycle each and >= 2000 steps per cycle")
    period = 2.0 * math.pi / omega
    dt = period / steps_per_cycle
    n_cycles = settle_cycles + measure_cycles
    loop = assemble(None, HigsElement(p), Wiring.CONTROLLER_INPUT)
    sig = InputSignal('sine', amplitude, omega / (2.0 * math.pi))
    cfg = SimConfig(t_end=n_cycles * period, dt=dt,
                    eps_switch=min(1e-9, 1e-3 * dt), monitor=False,
                    quad_points=1)
    traj, _ = simulate(loop, sig, cfg)
    start = settle_cycles * steps_per_cycle
    stop = n_cycles * steps_per_cycle
    u = traj.x_h[start:stop, 0]
    t = traj.times[start:stop]
    # rectangle rule over whole periods is exact for trigonometric sums
    b1 = 2.0 * np.mean(u * np.sin(omega * t))
    a1 = 2.0 * np.mean(u * np.cos(omega * t))
    window = traj.modes[start:stop + 1, 0]
    pinned = bool(np.all(window == HigsMode.GAIN))
    return DescribingPoint(omega, amplitude, complex(b1, a1) / amplitude,
                           pinned)


def describing_sweep(p, amplitude, omegas, **kw):
    return [describing_function(p, amplitude, w, **kw) for w in omegas]


def write_sweep_csv(points, path):
    rows = [[pt.omega, pt.amplitude, pt.complex_gain.real,
             pt.complex_gain.imag, pt.magnitude_db, pt.phase_deg]
            for pt in points]
    np.savetxt(path, np.array(rows, dtype=float).reshape(-1, 6),
               fmt='%.17g', delimiter=',',
               header='omega_rad_s,amplitude,re,im,mag_db,phase_deg',
               comments='')


def step_metrics(traj, channel, reference_final, window=None, band=0.02):
    """Overshoot, settling time and steady-state error of one output.

    Parameters
    ----------
    traj : Trajectory
    channel : int
        Plant output index.
    reference_final : float
    window : (float, float), optional
        Time interval to evaluate; settling time is measured from its start.
    band : float
        Relative settling band. When `reference_final` is 0 the band is
        relative to the peak deviation inside the window.

    Returns
    -------
    overshoot : float
        Excursion beyond `reference_final` relative to ``|reference_final|``.
        For a zero reference, the largest excursion to the side opposite
        the initial deviation relative to the peak deviation.
    settling_time : float or None
        None when the output is still outside the band at the end.
    steady_state_error : float
    """
    t = traj.times
    y = traj.y[:, channel]
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    t0 = t[0]
    dev = y - reference_final
    peak = float(np.max(np.abs(dev)))
    if reference_final != 0.0:
        scale = abs(reference_final)
        over = max(0.0, float(np.max(math.copysign(1.0, reference_final)
                                     * dev))) / scale
    else:
        scale = peak
        if peak == 0.0:
            over = 0.0
        else:
            i0 = int(np.argmax(np.abs(dev)))
            side = math.copysign(1.0, dev[i0])
            over = max(0.0, float(np.max(-side * dev[i0:]))) / peak
    tol = band * scale
    outside = np.nonzero(np.abs(dev) > tol)[0]
    if outside.size == 0:
        settle = 0.0
    elif outside[-1] == y.size - 1:
        settle = None
    else:
        settle = float(t[outside[-1] + 1] - t0)
    return over, settle, float(abs(y[-1] - reference_final))
