"""Per-device discrete-time controller.

The controller sees only its own control model, the measured temperature,
the broadcast reference and the invocation time. All state it needs between
invocations lives in :class:`ControllerState`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import _core
from ._core import DegenerateStateError
from .model import ApplianceModel, DerivedQuantities, derive_quantities

__all__ = [
    "ControllerState",
    "DegenerateStateError",
    "StepQuantities",
    "clip_energy",
    "clip_power",
    "continuous_switch_prob",
    "initial_controller_state",
    "instantaneous_switch_prob",
    "power_limits",
    "scale_and_beta",
    "select_mode",
    "step_quantities",
    "switching_rates",
    "temperature_bounds",
    "update_compressor_state",
    "update_z",
]


@dataclass(frozen=True)
class ControllerState:
    z: float
    pi_prev: float
    t_prev: float
    r10_prev_plus: float
    r01_prev_plus: float
    compressor: int
    control_model: ApplianceModel
    dq: DerivedQuantities
    w: float = 0.9
    # combined stochastic probability used at the last invocation
    last_prob: float = 0.0


def initial_controller_state(
    control_model: ApplianceModel, compressor: int, t_start: float = 0.0, w: float = 0.9
) -> ControllerState:
    """Controller memory for a device that starts in the uncontrolled steady state."""
    if not 0 < w <= 1:
        raise ValueError("operating range w must lie in (0, 1]")
    return ControllerState(
        z=0.0, pi_prev=1.0, t_prev=t_start, r10_prev_plus=0.0, r01_prev_plus=0.0,
        compressor=int(compressor), control_model=control_model,
        dq=derive_quantities(control_model), w=w,
    )


def update_z(z_prev: float, pi: float, alpha: float, dt: float) -> float:
    """Advance the population energy coordinate over an interval of constant ``pi``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return _core.update_z(z_prev, pi, alpha, dt)


def select_mode(z: float, model: ApplianceModel) -> float:
    """Pivot temperature for the next interval: t_max when z <= 0, else t_min."""
    return _core.select_mode(z, model.t_min, model.t_max)


def clip_energy(pi_next: float, z: float, w: float, dq: DerivedQuantities) -> float:
    return _core.clip_energy(pi_next, z, w, dq.zeta_at_tmax, dq.zeta_at_tmin)


def power_limits(zeta_plus: float, r_plus: float, model: ApplianceModel) -> tuple[float, float]:
    return _core.power_limits(zeta_plus, r_plus, model.t_min, model.t_max, model.t_on, model.t_off)


def clip_power(pi_next: float, zeta_plus: float, r_plus: float, model: ApplianceModel) -> float:
    """Clamp the reference so the requested heating-rate field is physically attainable."""
    return _core.clip_power(
        pi_next, zeta_plus, r_plus, model.t_min, model.t_max, model.t_on, model.t_off
    )


def scale_and_beta(
    z, pi_eff_minus, pi_eff_plus, r_minus, r_plus, dq: DerivedQuantities, model: ApplianceModel
):
    """Energy levels, scale factors and control parameters on both sides of t_i.

    Returns ``((zeta_minus, zeta_plus), (s_minus, s_plus), (beta_minus, beta_plus))``.
    """
    t_off = model.t_off
    zetas = (_core.zeta_of(r_minus, dq.t_bar_0, t_off), _core.zeta_of(r_plus, dq.t_bar_0, t_off))
    scales = tuple(1.0 - z / zt for zt in zetas)
    betas = (
        _core.control_beta(pi_eff_minus, z, zetas[0]),
        _core.control_beta(pi_eff_plus, z, zetas[1]),
    )
    return zetas, scales, betas


def switching_rates(T: float, r: float, s: float, beta: float, model: ApplianceModel):
    """Continuous-time (on->off, off->on) rates at temperature ``T`` for one side of t_i."""
    return _core.switching_rates(T, r, s, beta, model.alpha, model.t_on, model.t_off)


def continuous_switch_prob(r_prev_plus: float, r_now_minus: float, dt: float) -> float:
    return _core.continuous_switch_prob(r_prev_plus, r_now_minus, dt)


def instantaneous_switch_prob(x_minus, x_plus, y_minus, y_plus, compressor: int) -> float:
    """Probability of switching at t_i caused by a jump in the heating-rate field."""
    if compressor:
        return _core.ratio_switch_prob(x_plus, x_minus)
    return _core.ratio_switch_prob(y_plus, y_minus)


def temperature_bounds(r_plus: float, s_plus: float, model: ApplianceModel) -> tuple[float, float]:
    return _core.temperature_bounds(r_plus, s_plus, model.t_min, model.t_max)


@dataclass(frozen=True)
class StepQuantities:
    """Intermediates of one invocation, for inspection and plotting."""

    z: float
    pi_next: float
    r_minus: float
    r_plus: float
    zeta_minus: float
    zeta_plus: float
    s_minus: float
    s_plus: float
    beta_minus: float
    beta_plus: float
    p_pm: tuple[float, float]
    q_pm: tuple[float, float]
    x_pm: tuple[float, float]
    y_pm: tuple[float, float]
    xi_pm: tuple[float, float]
    t_low: float
    t_high: float


def step_quantities(pi_next: float, T: float, t: float, st: ControllerState) -> StepQuantities:
    """Recompute the distribution quantities that an invocation at ``t`` would use."""
    m, dq = st.control_model, st.dq
    z = _core.update_z(st.z, st.pi_prev, m.alpha, t - st.t_prev)
    r_minus = _core.select_mode(st.z, m.t_min, m.t_max)
    r_plus = _core.select_mode(z, m.t_min, m.t_max)
    zeta_plus = _core.zeta_of(r_plus, dq.t_bar_0, m.t_off)
    pi_next = _core.clip_energy(pi_next, z, st.w, dq.zeta_at_tmax, dq.zeta_at_tmin)
    pi_next = _core.clip_power(pi_next, zeta_plus, r_plus, m.t_min, m.t_max, m.t_on, m.t_off)
    zetas, scales, betas = scale_and_beta(z, st.pi_prev, pi_next, r_minus, r_plus, dq, m)
    sides = []
    for r, s, b in zip((r_minus, r_plus), scales, betas):
        p, q, x, y = _core.geometry(T, r, s, b, m.t_on, m.t_off)
        xi = m.alpha**2 * _core.xi_over_alpha_sq(p, q, x, y, b)
        sides.append((p, q, x, y, xi))
    t_low, t_high = _core.temperature_bounds(r_plus, scales[1], m.t_min, m.t_max)
    return StepQuantities(
        z, pi_next, r_minus, r_plus, *zetas, *scales, *betas,
        *(tuple(side[j] for side in sides) for j in range(5)), t_low, t_high,
    )


def update_compressor_state(pi_next: float, T: float, t: float, st: ControllerState, rng):
    """Run one controller invocation and return ``(c_next, new_state)``.

    ``rng`` needs a ``random()`` method returning values in [0, 1); it is
    consumed exactly once per call.
    """
    if not t > st.t_prev:
        raise ValueError(f"invocation time {t} does not follow previous time {st.t_prev}")
    m, dq = st.control_model, st.dq
    u = 1.0 - rng.random()
    c_next, z, pi_applied, r10, r01, prob, _, _, _ = _core.controller_step(
        pi_next, T, t, st.compressor, st.z, st.pi_prev, st.t_prev,
        st.r10_prev_plus, st.r01_prev_plus,
        m.alpha, m.t_on, m.t_off, m.t_min, m.t_max,
        dq.t_bar_0, dq.zeta_at_tmax, dq.zeta_at_tmin, st.w, u,
    )
    new = replace(
        st, z=z, pi_prev=pi_applied, t_prev=t, r10_prev_plus=r10, r01_prev_plus=r01,
        compressor=c_next, last_prob=prob,
    )
    return c_next, new
