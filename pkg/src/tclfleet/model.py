"""First-order refrigerator model, its steady state, and fleet sampling helpers.

Temperatures are in degrees Celsius, times in seconds, powers in watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

PERTURBED_FIELDS = ("alpha", "t_max", "t_min", "t_on", "t_off")
MAX_PERTURB_ATTEMPTS = 64


@dataclass(frozen=True)
class ApplianceModel:
    """Thermal parameters of one appliance.

    ``t_on`` and ``t_off`` are the asymptotic temperatures with the
    compressor on and off; ``t_min``/``t_max`` bound the hysteresis band.
    """

    alpha: float
    p_on: float
    t_off: float
    t_on: float
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.p_on > 0):
            raise ValueError(f"alpha and p_on must be positive: {self}")
        if not (self.t_on < self.t_min < self.t_max < self.t_off):
            raise ValueError(f"require t_on < t_min < t_max < t_off: {self}")


NOMINAL = ApplianceModel(alpha=1 / 7200, p_on=70.0, t_off=20.0, t_on=-44.0, t_min=2.0, t_max=7.0)


@dataclass(frozen=True)
class DerivedQuantities:
    k: float
    t_bar_0: float
    p_0: float
    zeta_at_tmax: float
    zeta_at_tmin: float


@dataclass
class DeviceState:
    temperature: float
    compressor: int = 0
    door_open: bool = False


def _log_positive(x, what):
    if np.any(np.asarray(x) <= 0):
        raise ValueError(f"non-positive log argument in {what}; check model ordering")
    return np.log(x)


def steady_state_arrays(alpha, p_on, t_off, t_on, t_min, t_max):
    """Steady-state constants for scalars or arrays of parameters.

    Returns ``(k, t_bar_0, p_0, zeta_at_tmax, zeta_at_tmin)``.
    """
    band_log = _log_positive(
        (t_max - t_on) * (t_min - t_off) / ((t_min - t_on) * (t_max - t_off)), "k"
    )
    on_log = _log_positive((t_max - t_on) / (t_min - t_on), "p_0")
    k = (t_off - t_on) / band_log
    t_bar_0 = t_off - k * on_log
    p_0 = on_log / band_log * p_on
    span = t_off - t_bar_0
    return k, t_bar_0, p_0, (t_bar_0 - t_max) / span, (t_bar_0 - t_min) / span


def derive_quantities(model: ApplianceModel) -> DerivedQuantities:
    values = steady_state_arrays(
        model.alpha, model.p_on, model.t_off, model.t_on, model.t_min, model.t_max
    )
    return DerivedQuantities(*(float(v) for v in values))


def zeta(r, t_bar_0, t_off):
    """Dimensionless energy coordinate of a pivot temperature ``r``."""
    return (t_bar_0 - r) / (t_off - t_bar_0)


def integrate_device(
    state: DeviceState, model: ApplianceModel, dt: float, door_alpha_factor: float = 1.0
) -> DeviceState:
    """Advance the temperature by one explicit Euler step.

    An open door divides the thermal resistance by ``door_alpha_factor``:
    the leak towards ambient speeds up by that factor while the compressor's
    cooling rate is unchanged. The step is then split into
    ``ceil(door_alpha_factor)`` substeps. The factor is ignored while the door
    is closed.
    """
    temperature = state.temperature
    if state.door_open and door_alpha_factor > 1:
        n_sub = int(math.ceil(door_alpha_factor))
        h = dt / n_sub
        cooling = state.compressor * (model.t_off - model.t_on)
        for _ in range(n_sub):
            temperature += model.alpha * h * (door_alpha_factor * (model.t_off - temperature) - cooling)
    else:
        target = model.t_on if state.compressor else model.t_off
        temperature += model.alpha * dt * (target - temperature)
    return DeviceState(temperature, state.compressor, state.door_open)


def hysteresis_step(state: DeviceState, model: ApplianceModel, dt: float) -> DeviceState:
    """Uncontrolled thermostat: integrate, then switch at the band edges."""
    nxt = integrate_device(state, model, dt)
    if nxt.temperature >= model.t_max:
        nxt.compressor = 1
    elif nxt.temperature <= model.t_min:
        nxt.compressor = 0
    return nxt


def ordering_ok(t_on, t_min, t_max, t_off):
    return (t_on < t_min) & (t_min < t_max) & (t_max < t_off)


def perturb_model(
    nominal: ApplianceModel, rng: np.random.Generator, lo: float = 0.8, hi: float = 1.2
) -> ApplianceModel:
    """Multiply alpha and the four temperatures by independent U[lo, hi] factors.

    ``p_on`` is kept at its nominal value. Draws violating the temperature
    ordering are redrawn, up to ``MAX_PERTURB_ATTEMPTS`` times.
    """
    if lo > hi:
        raise ValueError("perturbation range must satisfy lo <= hi")
    for _ in range(MAX_PERTURB_ATTEMPTS):
        factors = lo + (hi - lo) * rng.random(len(PERTURBED_FIELDS))
        values = {f: getattr(nominal, f) * m for f, m in zip(PERTURBED_FIELDS, factors)}
        if ordering_ok(values["t_on"], values["t_min"], values["t_max"], values["t_off"]):
            return replace(nominal, **values)
    raise ValueError(f"no valid model within {MAX_PERTURB_ATTEMPTS} draws; range [{lo}, {hi}] too wide")


def on_temperature_from_uniform(u, t_on, t_min, t_max):
    """Inverse CDF of the density proportional to 1/(T - t_on) on [t_min, t_max]."""
    return t_on + (t_min - t_on) * ((t_max - t_on) / (t_min - t_on)) ** u


def off_temperature_from_uniform(u, t_off, t_min, t_max):
    """Inverse CDF of the density proportional to 1/(t_off - T) on [t_min, t_max]."""
    return t_off - (t_off - t_min) * ((t_off - t_max) / (t_off - t_min)) ** u


def sample_initial_state(
    model: ApplianceModel, dq: DerivedQuantities, rng: np.random.Generator
) -> DeviceState:
    """Draw a state from the uncontrolled steady-state distribution."""
    on = rng.random() < dq.p_0 / model.p_on
    u = rng.random()
    if on:
        temperature = on_temperature_from_uniform(u, model.t_on, model.t_min, model.t_max)
    else:
        temperature = off_temperature_from_uniform(u, model.t_off, model.t_min, model.t_max)
    return DeviceState(float(temperature), int(on), False)


def hysteresis_period(model: ApplianceModel) -> float:
    """Length of one on/off cycle of the continuous-time thermostat."""
    t_cool = math.log((model.t_max - model.t_on) / (model.t_min - model.t_on))
    t_heat = math.log((model.t_off - model.t_min) / (model.t_off - model.t_max))
    return (t_cool + t_heat) / model.alpha
