import math

import numpy as np
import pytest

from tclfleet.model import NOMINAL, DeviceState, derive_quantities, hysteresis_step, integrate_device
from tclfleet.signals import HOUR, canonical_test_signal, constant_signal
from tclfleet.simulator import (
    DoorSchedule,
    FleetConfig,
    ModelErrorMode,
    SimConfig,
    build_fleet,
    door_opening_schedule,
    run_simulation,
)


def test_fleet_is_deterministic_and_valid():
    a = build_fleet(FleetConfig(n_devices=500, master_seed=4))
    b = build_fleet(FleetConfig(n_devices=500, master_seed=4))
    assert np.array_equal(a.physical, b.physical) and np.array_equal(a.temp0, b.temp0)
    t_off, t_on, t_min, t_max = (a.physical[:, j] for j in (2, 3, 4, 5))
    assert np.all((t_on < t_min) & (t_min < t_max) & (t_max < t_off))
    assert np.all((a.temp0 >= t_min) & (a.temp0 <= t_max))
    ratio = a.physical[:, 0] / NOMINAL.alpha
    assert ratio.min() >= 0.8 and ratio.max() <= 1.2


def test_homogeneous_fleet_is_nominal():
    f = build_fleet(FleetConfig(n_devices=10, hetero_range=(1.0, 1.0)))
    assert all(f.physical_model(i) == NOMINAL for i in range(10))
    assert f.sum_p0 == pytest.approx(10 * derive_quantities(NOMINAL).p_0)


def test_model_error_modes():
    known = build_fleet(FleetConfig(n_devices=50, master_seed=1))
    assert np.array_equal(known.control[:, 0], known.physical[:, 0])
    common = build_fleet(FleetConfig(n_devices=50, master_seed=1, model_error_mode="common_nominal"))
    assert np.all(common.control[:, 0] == NOMINAL.alpha)
    assert np.array_equal(common.control[:, 3], common.physical[:, 4])  # t_min
    rand = build_fleet(FleetConfig(n_devices=50, master_seed=1, model_error_mode=ModelErrorMode.RANDOMIZED))
    assert not np.array_equal(rand.control[:, 0], rand.physical[:, 0])
    assert np.array_equal(rand.control[:, 4], rand.physical[:, 5])  # t_max
    assert np.array_equal(rand.physical, known.physical)


def test_config_validation():
    with pytest.raises(ValueError):
        FleetConfig(n_devices=0)
    with pytest.raises(ValueError):
        SimConfig(step_s=0)
    with pytest.raises(ValueError):
        SimConfig(skip_probability=1.0)
    with pytest.raises(ValueError):
        SimConfig(horizon_s=15, step_s=10).n_ticks
    f = build_fleet(FleetConfig(n_devices=3))
    with pytest.raises(ValueError):
        run_simulation(f, constant_signal(1.0, 100), SimConfig(horizon_s=200))


def test_uncontrolled_kernel_matches_scalar_hysteresis():
    f = build_fleet(FleetConfig(n_devices=4, master_seed=5))
    sim = SimConfig(horizon_s=3 * HOUR, controlled=False, record_per_device=True)
    tr = run_simulation(f, constant_signal(1.0, 3 * HOUR), sim)
    for d in range(4):
        m = f.physical_model(d)
        s = DeviceState(float(f.temp0[d]), int(f.comp0[d]))
        for i in range(1, sim.n_ticks + 1):
            s = hysteresis_step(s, m, sim.step_s)
            assert s.temperature == tr.temperatures[i, d]
            assert s.compressor == tr.compressors[i, d]
    assert np.array_equal(tr.n_on, tr.compressors.sum(axis=1))


def test_door_substeps_in_kernel():
    f = build_fleet(FleetConfig(n_devices=1, hetero_range=(1.0, 1.0)))
    doors = DoorSchedule(np.array([0, 1]), np.array([12.0]), np.array([32.0]))
    sim = SimConfig(horizon_s=60, controlled=False, record_per_device=True)
    tr = run_simulation(f, constant_signal(1.0, 60), sim, doors=doors)
    m = f.physical_model(0)
    T, c = float(f.temp0[0]), int(f.comp0[0])
    for i in range(1, 7):
        target = m.t_on if c else m.t_off
        t0 = (i - 1) * 10.0
        if t0 < 32.0 and t0 + 10 > 12.0:
            for k in range(25):
                tm = t0 + (k + 0.5) * 0.4
                if 12.0 <= tm < 32.0:
                    T += m.alpha * 0.4 * (25 * (m.t_off - T) - c * (m.t_off - m.t_on))
                else:
                    T += m.alpha * 0.4 * (target - T)
        else:
            T += m.alpha * 10.0 * (target - T)
        c = 1 if T >= m.t_max else 0 if T <= m.t_min else c
        assert tr.temperatures[i, 0] == pytest.approx(T, rel=1e-14)
        assert tr.compressors[i, 0] == c


def test_door_counts_are_poisson():
    n, horizon = 2000, 24 * HOUR
    sched, raw = door_opening_schedule([20 / 24] * 24, 20.0, horizon, n, seed=3, raw_counts=True)
    expected = n * 20
    assert abs(raw - expected) < 5 * math.sqrt(expected)
    assert sched.n_events <= raw
    for d in range(0, n, 97):
        ev = sched.events(d)
        for (s0, e0), (s1, _) in zip(ev, ev[1:]):
            assert e0 < s1
        assert all(e - s >= 20.0 for s, e in ev)


def test_door_profile_respects_zero_hours():
    profile = [0.0, 10.0, 0.0, 5.0]
    sched = door_opening_schedule(profile, 1.0, 8 * HOUR, 500, seed=1)
    hours = (sched.starts // HOUR).astype(int) % 4
    assert set(np.unique(hours)) <= {1, 3}
    n1, n3 = np.sum(hours == 1), np.sum(hours == 3)
    assert n1 > n3


def test_door_schedule_validation():
    with pytest.raises(ValueError):
        door_opening_schedule([], 20, 100, 5, 0)
    with pytest.raises(ValueError):
        door_opening_schedule([1.0, -1.0], 20, 100, 5, 0)


def test_trace_bookkeeping():
    f = build_fleet(FleetConfig(n_devices=300, master_seed=2))
    tr = run_simulation(f, canonical_test_signal(), SimConfig(horizon_s=HOUR))
    assert tr.times[-1] == HOUR and tr.times.size == 361
    assert np.array_equal(tr.target_power, tr.reference * f.sum_p0)
    assert tr.reference[0] == 1.0 and tr.reference[200] == 0.7
    assert np.allclose(tr.aggregate_power, tr.n_on * NOMINAL.p_on)
    assert tr.mean_z[0] == 0.0 and tr.mean_z[-1] < 0


def test_serial_and_parallel_identical():
    f = build_fleet(FleetConfig(n_devices=5000, master_seed=8))
    sim = SimConfig(horizon_s=HOUR, skip_probability=0.3, door_profile=(2.0,))
    a = run_simulation(f, canonical_test_signal(), sim)
    from dataclasses import replace

    b = run_simulation(f, canonical_test_signal(), replace(sim, parallel=True))
    assert np.array_equal(a.aggregate_power, b.aggregate_power)
    assert np.array_equal(a.mean_z, b.mean_z)
    assert a.counts == b.counts


def test_skipping_changes_trajectory():
    f = build_fleet(FleetConfig(n_devices=500, master_seed=8))
    base = run_simulation(f, canonical_test_signal(), SimConfig(horizon_s=HOUR))
    skip = run_simulation(f, canonical_test_signal(), SimConfig(horizon_s=HOUR, skip_probability=0.5))
    again = run_simulation(f, canonical_test_signal(), SimConfig(horizon_s=HOUR, skip_probability=0.5))
    assert not np.array_equal(base.aggregate_power, skip.aggregate_power)
    assert np.array_equal(skip.aggregate_power, again.aggregate_power)


def test_doors_raise_uncontrolled_power():
    f = build_fleet(FleetConfig(n_devices=2000, master_seed=3))
    sig = constant_signal(1.0, 6 * HOUR)
    plain = run_simulation(f, sig, SimConfig(horizon_s=6 * HOUR, controlled=False))
    doors = run_simulation(f, sig, SimConfig(horizon_s=6 * HOUR, controlled=False, door_profile=(2.0,)))
    assert doors.aggregate_power.mean() > plain.aggregate_power.mean()
