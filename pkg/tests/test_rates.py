import math

import numpy as np
import pytest
from scipy import integrate, special

from levy_ldp.dynamics import LinearField, SdePath, simulate_sde
from levy_ldp.noise import AlphaStableParams, NoiseScale, RngStream
from levy_ldp.rates import (
    ContinuousControl,
    Impulse,
    ImpulseSchedule,
    InitialRate,
    RateBreakdown,
    detect_jumps,
    energy_IW,
    jump_count_IL,
    total_rate,
)

OU = LinearField([[-1.0]])


def test_energy_zero():
    assert energy_IW(ContinuousControl.zeros(100, 2, 0.01)) == 0.0


def test_energy_constant():
    assert energy_IW(ContinuousControl(np.full(100, 2.0), 0.01)) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("N", [50, 200, 1000])
def test_energy_riemann_sum(N):
    h = 1.0 / N
    u = ContinuousControl(np.arange(N) * h, h)
    assert abs(energy_IW(u) - 1 / 6) <= h


def test_energy_quadratic_scaling():
    rng = np.random.default_rng(0)
    u = ContinuousControl(rng.normal(size=(40, 3)), 0.05)
    for c in (0.5, 3.0, -2.0):
        assert energy_IW(ContinuousControl(c * u.values, 0.05)) == pytest.approx(c * c * energy_IW(u), rel=1e-12)


def test_control_validation():
    with pytest.raises(ValueError):
        ContinuousControl([1.0, math.nan], 0.1)
    with pytest.raises(ValueError):
        ContinuousControl([1.0], 0.0)


def test_il_empty():
    assert jump_count_IL(ImpulseSchedule((), 1.0), 1.5) == 0.0


def test_il_three_jumps_one_coordinate():
    v = ImpulseSchedule(tuple(Impulse(t, 0, 0.1 * t) for t in (0.1, 0.5, 0.9)), 1.0)
    assert jump_count_IL(v, 1.5) == pytest.approx(4.5)


def test_il_simultaneous_jumps_inadmissible():
    v = ImpulseSchedule((Impulse(0.5, 0, 0.0), Impulse(0.5, 1, 0.0)), 1.0)
    assert not v.admissible
    assert jump_count_IL(v, 1.5) == math.inf
    assert jump_count_IL(v, 1.5, weights=(1.0, 2.0)) == math.inf
    assert total_rate([0, 0], ContinuousControl.zeros(10, 2, 0.1), v, 1.0, 1.5, InitialRate.point_mass()).total == math.inf


def test_il_invariant_to_sizes_and_times():
    a = ImpulseSchedule((Impulse(0.1, 0, 5.0), Impulse(0.2, 1, -3.0)), 1.0)
    b = ImpulseSchedule((Impulse(0.7, 0, 0.01), Impulse(0.9, 1, 100.0)), 1.0)
    assert jump_count_IL(a, 1.7) == jump_count_IL(b, 1.7)


def test_il_weighted():
    v = ImpulseSchedule((Impulse(0.1, 0, 0.0), Impulse(0.2, 1, 0.0), Impulse(0.3, 1, 0.0)), 1.0)
    assert jump_count_IL(v, 1.5, weights=(0.5, 2.0)) == pytest.approx(1.5 * (0.5 + 4.0))
    with pytest.raises(ValueError):
        ImpulseSchedule((Impulse(0.1, 2, 0.0),), 1.0, weights=(1.0, 1.0))


def test_schedule_validation():
    with pytest.raises(ValueError):
        ImpulseSchedule((Impulse(2.0, 0, 0.0),), 1.0)
    with pytest.raises(ValueError):
        ImpulseSchedule((Impulse(0.5, -1, 0.0),), 1.0)
    v = ImpulseSchedule((Impulse(0.9, 1, 0.0), Impulse(0.1, 0, 0.0)), 1.0)
    assert [m.time for m in v.impulses] == [0.1, 0.9]
    np.testing.assert_array_equal(v.counts(3), [1, 1, 0])


def test_total_all_zero():
    r = total_rate([0.0], ContinuousControl.zeros(10, 1, 0.1), ImpulseSchedule(), 5.0, 1.5, InitialRate.point_mass())
    assert r.total == 0.0


def test_total_pure_jump_plan():
    p, gamma, alpha = 3, 0.7, 1.4
    v = ImpulseSchedule(tuple(Impulse(0.1 * (i + 1), i, 0.0) for i in range(p)), 1.0)
    r = total_rate(np.zeros(p), ContinuousControl.zeros(10, p, 0.1), v, gamma, alpha, InitialRate.point_mass())
    assert r.total == pytest.approx(p * gamma * alpha)
    assert r.total == r.energy + r.impulse_cost + r.initial_cost


def test_total_quadratic_initial():
    r = total_rate([1.0, 0.0], ContinuousControl.zeros(10, 2, 0.1), ImpulseSchedule(), 1.0, 1.5,
                   InitialRate.quadratic(np.eye(2)))
    assert r.total == pytest.approx(1.0)


def test_point_mass_initial_infinite_off_origin():
    assert InitialRate.point_mass()([0.0, 0.0]) == 0.0
    assert InitialRate.point_mass()([0.0, 1e-3]) == math.inf
    with pytest.raises(ValueError):
        InitialRate.quadratic([[1.0, 0.0], [0.0, -1.0]])


def test_total_additive_across_coordinates():
    rng = np.random.default_rng(1)
    U = rng.normal(size=(20, 2))
    v = ImpulseSchedule((Impulse(0.3, 0, 1.0), Impulse(0.6, 1, 1.0)), 2.0)
    both = total_rate([0, 0], ContinuousControl(U, 0.1), v, 0.4, 1.5, InitialRate.point_mass())
    parts = [
        total_rate([0], ContinuousControl(U[:, [i]], 0.1), ImpulseSchedule((Impulse(0.3 * (i + 1), 0, 1.0),), 2.0),
                   0.4, 1.5, InitialRate.point_mass())
        for i in range(2)
    ]
    assert both.total == pytest.approx(sum(r.total for r in parts), rel=1e-12)


def test_breakdown_json_infinite():
    r = RateBreakdown(1.0, math.inf, 0.0)
    d = r.to_dict()
    assert d["total"] == "inf" and d["impulse_cost"] == "inf"
    assert '"inf"' in r.to_json()


def test_detect_zero_noise():
    path = simulate_sde(OU, [1.0], None, 1.5, 1.0, 0.01, RngStream(0))
    c = detect_jumps(path, threshold=0.1)
    assert c.up.tolist() == [0] and c.down.tolist() == [0]


def test_detect_injected_jump():
    n, p = 50, 3
    scale = NoiseScale(100, 0.5)
    dL = np.zeros((n, p))
    delta = 0.2
    dL[10, 0] = 2 * delta / scale.b_n
    path = SdePath(np.arange(n + 1) * 0.01, np.zeros((n + 1, p)), np.zeros((n, p)), dL, scale,
                   AlphaStableParams(1.5), 0.01)
    c = detect_jumps(path, delta)
    assert c.up.tolist() == [1, 0, 0]
    assert c.down.tolist() == [0, 0, 0]


def test_detect_requires_record():
    path = simulate_sde(OU, [1.0], None, 1.5, 0.1, 0.01, RngStream(0))
    path.stable_increments = None
    with pytest.raises(ValueError):
        detect_jumps(path, 0.1)


def _tail_mass(alpha: float, r: float) -> float:
    """Levy measure of {|z| > r} for the law with CF exp(-|theta|^alpha), by quadrature."""
    c = special.gamma(1 + alpha) * math.sin(math.pi * alpha / 2) / math.pi
    one_side, _ = integrate.quad(lambda z: c * z ** (-1 - alpha), r, math.inf)
    return 2 * one_side


def test_tail_constant_closed_form():
    # 2C/alpha r^-alpha with C as in _tail_mass
    a = 1.5
    assert _tail_mass(a, 1.0) == pytest.approx(2 * special.gamma(a) * math.sin(math.pi * a / 2) / math.pi, rel=1e-8)


def test_detect_count_matches_levy_tail():
    alpha, bn, delta, T, h, paths = 1.5, 0.1, 1.0, 1.0, 0.01, 10**4
    n = math.exp(-math.log(bn) / 0.5)  # gamma = 0.5 gives b_n = 0.1
    scale = NoiseScale(n, 0.5)
    assert scale.b_n == pytest.approx(bn)
    expected = paths * T * _tail_mass(alpha, delta / bn)
    rng = RngStream(2024)
    total = 0
    for i in range(paths):
        path = simulate_sde(OU, [0.0], scale, alpha, T, h, rng.substream(i))
        total += int(detect_jumps(path, delta).total.sum())
    assert abs(total - expected) <= 0.15 * expected
