import math
from types import SimpleNamespace

import numpy as np
import pytest

from higsni.analysis import (describing_function, describing_sweep,
                             step_metrics, write_sweep_csv)
from higsni.higs import HigsParams

UNIT = HigsParams(1.0, 1.0)


def test_gain_regime():
    pt = describing_function(HigsParams(2.0, 1000.0), 1.0, 1.0)
    assert abs(pt.complex_gain - 2.0) <= 0.01 * 2.0
    assert abs(pt.phase_deg) <= 0.5


def test_integrator_regime_phase():
    pt = describing_function(UNIT, 1.0, 100.0)
    assert -40.0 <= pt.phase_deg <= -36.0
    assert not pt.gain_mode_only


def test_integrator_regime_slope():
    lo, hi = describing_sweep(UNIT, 1.0, [100.0, 1000.0])
    slope = hi.magnitude_db - lo.magnitude_db
    assert slope == pytest.approx(-20.0, abs=1.0)


def test_amplitude_independence():
    # the element is positively homogeneous, so the gain ignores amplitude
    a = describing_function(UNIT, 1.0, 3.0)
    b = describing_function(UNIT, 7.5, 3.0)
    assert abs(a.complex_gain - b.complex_gain) <= 1e-6 * abs(a.complex_gain)


def test_scaling_invariance():
    # gain / k_h depends only on omega k_h / omega_h
    a = describing_function(HigsParams(1.0, 1.0), 1.0, 2.0)
    b = describing_function(HigsParams(3.0, 30.0), 1.0, 20.0)
    assert abs(a.complex_gain - b.complex_gain / 3.0) <= 1e-6


def test_validation():
    with pytest.raises(ValueError):
        describing_function(UNIT, 0.0, 1.0)
    with pytest.raises(ValueError):
        describing_function(UNIT, 1.0, 1.0, steps_per_cycle=100)


def test_sweep_csv(tmp_path):
    pts = describing_sweep(UNIT, 1.0, [1.0, 10.0], settle_cycles=2,
                           measure_cycles=2)
    path = tmp_path / 'df.csv'
    write_sweep_csv(pts, path)
    lines = path.read_text().splitlines()
    assert lines[0] == 'omega_rad_s,amplitude,re,im,mag_db,phase_deg'
    row = np.array(lines[2].split(','), dtype=float)
    assert row[0] == 10.0 and row[5] == pytest.approx(pts[1].phase_deg)


def fake(t, y):
    return SimpleNamespace(times=np.asarray(t), y=np.asarray(y)[:, None])


def test_step_metrics_decay():
    t = np.linspace(0, 5, 501)
    ov, ts, err = step_metrics(fake(t, np.exp(-t)), 0, 0.0)
    assert ov == 0.0
    assert ts == pytest.approx(math.log(50), abs=0.01)
    assert err == pytest.approx(math.exp(-5))


def test_step_metrics_at_reference():
    t = np.linspace(0, 1, 11)
    assert step_metrics(fake(t, np.full(11, 2.0)), 0, 2.0) == (0.0, 0.0, 0.0)


def test_step_metrics_overshoot_and_window():
    t = np.linspace(0, 10, 1001)
    y = 1 - np.exp(-t) * np.cos(3 * t)
    ov, ts, err = step_metrics(fake(t, y), 0, 1.0)
    assert ov == pytest.approx(np.max(y) - 1.0)
    assert 0 < ts < 10
    ov2, ts2, _ = step_metrics(fake(t, y), 0, 1.0, window=(2.0, 10.0))
    assert ts2 == pytest.approx(max(ts - 2.0, 0.0), abs=0.011)


def test_step_metrics_not_settled():
    t = np.linspace(0, 1, 11)
    _, ts, _ = step_metrics(fake(t, t), 0, 5.0)
    assert ts is None
