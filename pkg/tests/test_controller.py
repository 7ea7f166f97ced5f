import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tclfleet import _core, _rng
from tclfleet.controller import (
    DegenerateStateError,
    clip_energy,
    clip_power,
    continuous_switch_prob,
    initial_controller_state,
    instantaneous_switch_prob,
    power_limits,
    scale_and_beta,
    select_mode,
    step_quantities,
    switching_rates,
    temperature_bounds,
    update_compressor_state,
    update_z,
)
from tclfleet.model import (
    NOMINAL, ApplianceModel, DerivedQuantities, DeviceState, derive_quantities, integrate_device,
)
from tclfleet.simulator import FleetConfig, SimConfig, build_fleet, run_simulation
from tclfleet.signals import canonical_test_signal

DQ = derive_quantities(NOMINAL)

models = st.builds(
    lambda a, toff, ton, tmin, width: ApplianceModel(a, 70.0, toff, ton, tmin, tmin + width),
    st.floats(1 / 14400, 1 / 3600),
    st.floats(15.0, 30.0),
    st.floats(-60.0, -30.0),
    st.floats(0.0, 4.0),
    st.floats(2.0, 8.0),
)


class FixedRng:
    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def test_update_z_matches_exact_solution():
    z = update_z(0.05, 1.3, NOMINAL.alpha, 10.0)
    exact = 0.3 + (0.05 - 0.3) * math.exp(-NOMINAL.alpha * 10.0)
    assert z == pytest.approx(exact, rel=1e-14)
    with pytest.raises(ValueError):
        update_z(0.0, 1.0, NOMINAL.alpha, -1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0.2, 3.0), st.floats(0.5, 60.0)), min_size=1, max_size=40),
    st.floats(-0.2, 0.2),
)
def test_z_recursion_equals_convolution_sum(segments, z0):
    alpha = NOMINAL.alpha
    z = z0
    times = [0.0]
    for pi, dt in segments:
        z = update_z(z, pi, alpha, dt)
        times.append(times[-1] + dt)
    tn = times[-1]
    total = z0 * math.exp(-alpha * tn)
    for j, (pi, _) in enumerate(segments, start=1):
        total += (pi - 1) * (math.exp(-alpha * (tn - times[j])) - math.exp(-alpha * (tn - times[j - 1])))
    assert z == pytest.approx(total, abs=1e-12)


def test_select_mode():
    assert select_mode(0.0, NOMINAL) == NOMINAL.t_max
    assert select_mode(-0.1, NOMINAL) == NOMINAL.t_max
    assert select_mode(1e-9, NOMINAL) == NOMINAL.t_min


def test_energy_clip():
    floor = 1 + 0.9 * DQ.zeta_at_tmax
    ceil = 1 + 0.9 * DQ.zeta_at_tmin
    assert clip_energy(0.5, 0.0, 0.9, DQ) == 0.5
    assert clip_energy(0.5, 0.9 * DQ.zeta_at_tmax, 0.9, DQ) == floor
    assert clip_energy(1.5, 0.9 * DQ.zeta_at_tmax, 0.9, DQ) == 1.5
    assert clip_energy(1.5, 0.9 * DQ.zeta_at_tmin, 0.9, DQ) == ceil
    assert floor == pytest.approx(0.85937, abs=1e-5)


def test_power_limits_frozen():
    lo, hi = power_limits(DQ.zeta_at_tmax, NOMINAL.t_max, NOMINAL)
    assert lo == pytest.approx(0.437466, abs=1e-6)
    assert hi == pytest.approx(2.437587, abs=1e-6)
    assert lo == pytest.approx(0.438, abs=0.002)
    assert hi == pytest.approx(2.436, abs=0.002)
    assert clip_power(3.0, DQ.zeta_at_tmax, NOMINAL.t_max, NOMINAL) == hi
    assert clip_power(0.2, DQ.zeta_at_tmax, NOMINAL.t_max, NOMINAL) == lo
    assert clip_power(1.1, DQ.zeta_at_tmax, NOMINAL.t_max, NOMINAL) == 1.1


def test_beta_and_scale_at_steady_state():
    zetas, scales, betas = scale_and_beta(0.0, 1.0, 1.0, NOMINAL.t_max, NOMINAL.t_max, DQ, NOMINAL)
    assert scales == (1.0, 1.0)
    assert betas == (0.0, 0.0)
    assert zetas[1] == pytest.approx(DQ.zeta_at_tmax)


def test_beta_values():
    # request above steady state at z = 0 with pivot t_max
    _, _, betas = scale_and_beta(0.0, 1.0, 1.5, NOMINAL.t_max, NOMINAL.t_max, DQ, NOMINAL)
    assert betas[1] == pytest.approx(0.5 / -DQ.zeta_at_tmax)
    with pytest.raises(DegenerateStateError):
        _core.control_beta(1.0, DQ.zeta_at_tmax, DQ.zeta_at_tmax)


def test_temperature_bounds():
    assert temperature_bounds(NOMINAL.t_max, 1.0, NOMINAL) == (NOMINAL.t_min, NOMINAL.t_max)
    lo, hi = temperature_bounds(NOMINAL.t_max, 0.5, NOMINAL)
    assert (lo, hi) == (4.5, 7.0)


@settings(max_examples=300, deadline=None)
@given(
    models,
    st.floats(0, 1),
    st.sampled_from(["max", "min"]),
    st.floats(0.3, 1.0),
    st.floats(-0.5, 0.5),
)
def test_rates_non_negative(m, frac, pivot, s, beta):
    r = m.t_max if pivot == "max" else m.t_min
    lo, hi = r - (r - m.t_min) * s, r - (r - m.t_max) * s
    T = lo + frac * (hi - lo)
    r10, r01 = switching_rates(T, r, s, beta, m)
    assert r10 >= 0 and r01 >= 0


def test_steady_state_rates_vanish():
    for T in np.linspace(NOMINAL.t_min, NOMINAL.t_max, 11):
        assert switching_rates(T, NOMINAL.t_max, 1.0, 0.0, NOMINAL) == (0.0, 0.0)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.1, 100))
def test_continuous_prob_in_unit_interval(a, b, dt):
    p = continuous_switch_prob(a, b, dt)
    assert 0 <= p <= 1


def test_instantaneous_prob():
    assert instantaneous_switch_prob(-3.0, -3.0, 5.0, 5.0, 1) == 0.0
    assert instantaneous_switch_prob(-4.0, -3.0, 5.0, 5.0, 1) == pytest.approx(0.25)
    assert instantaneous_switch_prob(-4.0, -3.0, 5.0, 2.0, 0) == pytest.approx(0.6)
    assert instantaneous_switch_prob(-4.0, -5.0, 5.0, 6.0, 0) == 0.0


@settings(max_examples=500, deadline=None)
@given(models, st.floats(-0.5, 1.5), st.integers(0, 1), st.floats(1.0, 60.0), st.floats(1e-9, 1.0))
def test_steady_state_is_bitwise_noop(m, frac, c, dt, u):
    """At z = 0 with Pi = 1 no device switches stochastically and z stays 0."""
    dq = derive_quantities(m)
    T = m.t_min + frac * (m.t_max - m.t_min)
    out = _core.controller_step(
        1.0, T, dt, c, 0.0, 1.0, 0.0, 0.0, 0.0,
        m.alpha, m.t_on, m.t_off, m.t_min, m.t_max, dq.t_bar_0, dq.zeta_at_tmax, dq.zeta_at_tmin,
        0.9, u,
    )
    c_next, z, pi, _, _, prob, forced, e_clip, p_clip = out
    assert z == 0.0 and pi == 1.0 and not e_clip and not p_clip
    if m.t_min < T < m.t_max:
        assert prob == 0.0 and not forced and c_next == c


def test_forced_switching_regardless_of_state():
    st0 = initial_controller_state(NOMINAL, 0)
    c, _ = update_compressor_state(1.0, NOMINAL.t_max + 0.01, 10.0, st0, FixedRng([0.0]))
    assert c == 1
    st1 = initial_controller_state(NOMINAL, 1)
    c, _ = update_compressor_state(1.0, NOMINAL.t_min - 0.01, 10.0, st1, FixedRng([0.0]))
    assert c == 0
    # below the band while off: stays off even if the draw would switch it
    c, _ = update_compressor_state(3.0, NOMINAL.t_min - 0.01, 10.0, st0, FixedRng([0.999999]))
    assert c == 0


def test_time_must_advance():
    st0 = initial_controller_state(NOMINAL, 0, t_start=5.0)
    with pytest.raises(ValueError):
        update_compressor_state(1.0, 4.0, 5.0, st0, FixedRng([0.5]))
    with pytest.raises(ValueError):
        initial_controller_state(NOMINAL, 0, w=1.5)


def test_power_jump_switches_expected_fraction():
    """Raising Pi at z = 0 switches off->on devices so that expected power follows."""
    rng = np.random.default_rng(4)
    from tclfleet.model import sample_initial_state

    n = 40000
    target = 1.3
    power = 0.0
    for _ in range(n):
        s = sample_initial_state(NOMINAL, DQ, rng)
        st0 = initial_controller_state(NOMINAL, s.compressor)
        c, _ = update_compressor_state(target, s.temperature, 1e-6, st0, rng)
        power += c * NOMINAL.p_on
    p = target * DQ.p_0 / NOMINAL.p_on
    assert abs(power / n / NOMINAL.p_on - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_step_quantities_consistent():
    st0 = initial_controller_state(NOMINAL, 1)
    q = step_quantities(1.2, 5.0, 10.0, st0)
    assert q.r_plus == NOMINAL.t_max
    assert q.s_plus == pytest.approx(1.0 - q.z / DQ.zeta_at_tmax)
    assert q.t_low <= 5.0 <= q.t_high
    assert q.pi_next == 1.2


def test_scalar_controller_matches_fleet_kernel():
    fleet = build_fleet(FleetConfig(n_devices=6, master_seed=9))
    sim = SimConfig(horizon_s=2 * 3600, record_per_device=True)
    trace = run_simulation(fleet, canonical_test_signal(), sim)
    pi_next = trace.reference
    for d in range(fleet.n_devices):
        phys, ctrl = fleet.physical_model(d), fleet.control_model(d)
        c = int(fleet.comp0[d])
        state = initial_controller_state(ctrl, c)
        # use the exact constants the kernel was given
        row = fleet.control[d]
        dq = DerivedQuantities(0.0, float(row[5]), 0.0, float(row[6]), float(row[7]))
        state = replace(state, dq=dq)
        T = float(fleet.temp0[d])
        for i in range(1, sim.n_ticks + 1):
            T = integrate_device(DeviceState(T, c), phys, sim.step_s).temperature
            u = _rng.uniform(fleet.keys[d], _rng.SWITCH, i)
            c, state = update_compressor_state(pi_next[i], T, i * sim.step_s, state, FixedRng([1.0 - u]))
            assert T == trace.temperatures[i, d]
            assert c == trace.compressors[i, d], (d, i)
