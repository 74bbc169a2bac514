import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from higsni.errors import OutsideSector, ParameterViolation, ValidationError
from higsni.higs import (CascadeHigs, HigsElement, HigsMode, HigsParams,
                         MultiHigs, classify_mode, controller_from_dict,
                         controller_to_dict, dissipation_residual, higs_rate,
                         sector_residual, storage_cascade, storage_multi,
                         storage_single)

UNIT = HigsParams(1.0, 1.0)
pos = st.floats(0.01, 100.0)


def test_params_validation():
    with pytest.raises(ParameterViolation):
        HigsParams(0.0, 1.0)
    with pytest.raises(ParameterViolation):
        HigsParams(1.0, -1.0)
    HigsParams(1.0, 0.0)


@pytest.mark.parametrize('x, ed, mode', [
    (0.5, 0.0, HigsMode.INTEGRATOR),
    (1.0, -1.0, HigsMode.GAIN),
    (1.0, 2.0, HigsMode.INTEGRATOR),
])
def test_classify_examples(x, ed, mode):
    assert classify_mode(UNIT, 1.0, x, ed) == mode


def test_classify_zero_input_is_integrator():
    assert classify_mode(UNIT, 0.0, 0.0, 1.0) == HigsMode.INTEGRATOR


def test_classify_outside_sector():
    with pytest.raises(OutsideSector):
        classify_mode(UNIT, 1.0, 1.5, 0.0)
    with pytest.raises(OutsideSector):
        classify_mode(UNIT, 1.0, -0.1, 0.0)


def test_rates():
    assert higs_rate(HigsParams(1.0, 2.0), HigsMode.INTEGRATOR, 3.0, 9.0) == 6.0
    assert higs_rate(HigsParams(0.5, 2.0), HigsMode.GAIN, 9.0, 4.0) == 2.0
    assert higs_rate(UNIT, HigsMode.INTEGRATOR, 0.0, 5.0) == 0.0


def test_storage_examples():
    assert storage_single(UNIT, 2.0) == 2.0
    assert storage_single(HigsParams(3.0, 1.0), 0.0) == 0.0
    assert storage_single(HigsParams(4.0, 1.0), 2.0) == 0.5
    m = MultiHigs([HigsElement(HigsParams(1.0, 1.0)),
                   HigsElement(HigsParams(2.0, 1.0))])
    assert storage_multi(m, [2.0, 2.0]) == 3.0
    assert storage_multi(m, [0.0, 0.0]) == 0.0


def test_cascade_storage_and_parameters():
    c = CascadeHigs(HigsElement(HigsParams(1.0, 1.0)),
                    HigsElement(HigsParams(2.0, 2.0)), a=0.5)
    assert storage_cascade(c, 1.0, 2.0) == pytest.approx(1.0)
    assert storage_cascade(c, 0.0, 0.0) == 0.0
    with pytest.raises(ParameterViolation):
        CascadeHigs(HigsElement(HigsParams(1.0, 1.0)),
                    HigsElement(HigsParams(2.0, 2.0)), a=1.0)
    # k2 w1 <= k1 w2 violated
    with pytest.raises(ParameterViolation):
        CascadeHigs(HigsElement(HigsParams(1.0, 3.0)),
                    HigsElement(HigsParams(2.0, 1.0)))
    loose = CascadeHigs(HigsElement(HigsParams(1.0, 3.0)),
                        HigsElement(HigsParams(2.0, 1.0)), strict=False)
    assert loose.a == pytest.approx(0.5)


@settings(max_examples=200)
@given(st.lists(st.tuples(pos, st.floats(-1e3, 1e3)), min_size=1, max_size=6))
def test_multi_storage_is_sum_of_singles(chans):
    m = MultiHigs([HigsElement(HigsParams(k, 1.0)) for k, _ in chans])
    xs = [x for _, x in chans]
    total = sum(storage_single(HigsParams(k, 1.0), x) for k, x in chans)
    assert storage_multi(m, xs) == total


@pytest.mark.parametrize('x, value', [(1.0, 0.0), (0.5, 0.25), (-0.1, -0.11)])
def test_sector_residual_examples(x, value):
    assert sector_residual(UNIT, 1.0, x) == pytest.approx(value)


def test_sector_inequality_random_points():
    rng = np.random.default_rng(0)
    n = 100_000
    k = rng.uniform(0.01, 100.0, n)
    e = rng.normal(0.0, 10.0, n)
    t = rng.uniform(0.0, 1.0, n)
    t[:1000] = 1.0                       # exact boundary points
    x = t * k * e
    resid = e * x - x * x / k
    assert np.all(resid >= -1e-12 * (1 + (k * e) ** 2))
    gap = k * e * e - e * x              # k e^2 - e x >= 0 inside the sector
    scale = 1e-12 * (1 + k * e * e)
    assert np.all(gap >= -scale)
    # equality only on the gain branch: the gap bounds the branch distance
    assert np.all(gap >= (x - k * e) ** 2 / k - scale)
    on = np.abs(gap) <= scale
    assert np.all(np.abs(x[on] - k[on] * e[on]) <= 1e-5 * (1 + np.abs(k[on] * e[on])))
    assert on[:1000].all()


def test_dissipation_zero():
    assert dissipation_residual(HigsElement(UNIT), 0.0, 0.0,
                                np.zeros(5), np.zeros(5)) == 0.0


def test_dissipation_integrator_closed_form():
    # constant e = 1 from x_h = 0: x_h = t, V = t^2 / 2, work = t
    t = np.linspace(0.0, 1.5, 31)
    r = dissipation_residual(HigsElement(UNIT), 0.0, t[-1], np.ones_like(t), t)
    assert r == pytest.approx(t[-1] ** 2 / 2 - t[-1], abs=1e-14)
    assert r < 0


@settings(max_examples=100)
@given(pos, st.floats(-5, 5), st.floats(-5, 5))
def test_dissipation_gain_mode_exact(k, e0, e1):
    # x_h = k e along a linear e: the trapezoid rule is exact here
    p = HigsParams(k, 1.0)
    e = np.linspace(e0, e1, 9)
    r = dissipation_residual(HigsElement(p), k * e0, k * e1, e, k * e)
    assert abs(r) <= 1e-12 * (1 + k * (e0 * e0 + e1 * e1))


@pytest.mark.parametrize('d', [
    {'type': 'single', 'k_h': [2.0], 'omega_h': [3.0]},
    {'type': 'multi', 'k_h': [0.5617, 0.6003], 'omega_h': [11516.0, 11560.0]},
    {'type': 'cascade', 'k_h': [1.0, 2.0], 'omega_h': [1.0, 2.0], 'a': 0.25},
])
def test_controller_dict_round_trip(d):
    assert controller_to_dict(controller_from_dict(d)) == d


def test_controller_dict_errors():
    with pytest.raises(ValidationError):
        controller_from_dict({'type': 'single', 'k_h': [1, 2],
                              'omega_h': [1, 2]})
    with pytest.raises(ValidationError):
        controller_from_dict({'type': 'ring', 'k_h': [1], 'omega_h': [1]})
