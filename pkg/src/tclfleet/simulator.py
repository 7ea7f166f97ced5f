"""Fleet construction and the coupled physics/controller time loop."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _kernel, _rng
from .model import NOMINAL, ApplianceModel, DerivedQuantities, steady_state_arrays
from .model import off_temperature_from_uniform, on_temperature_from_uniform, ordering_ok
from .model import MAX_PERTURB_ATTEMPTS, PERTURBED_FIELDS
from .signals import ReferenceSignal

log = logging.getLogger(__name__)


class ModelErrorMode(str, enum.Enum):
    KNOWN = "known"
    COMMON_NOMINAL = "common_nominal"
    RANDOMIZED = "randomized"


@dataclass(frozen=True)
class FleetConfig:
    n_devices: int
    nominal: ApplianceModel = NOMINAL
    hetero_range: tuple[float, float] = (0.8, 1.2)
    w: float = 0.9
    model_error_mode: ModelErrorMode = ModelErrorMode.KNOWN
    master_seed: int = 0

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be at least 1")
        lo, hi = self.hetero_range
        if not 0 < lo <= hi:
            raise ValueError("hetero_range must satisfy 0 < lo <= hi")
        if not 0 < self.w <= 1:
            raise ValueError("w must lie in (0, 1]")
        object.__setattr__(self, "model_error_mode", ModelErrorMode(self.model_error_mode))


@dataclass(frozen=True)
class SimConfig:
    step_s: float = 10.0
    horizon_s: float = 5 * 3600.0
    skip_probability: float = 0.0
    # openings per hour for consecutive hours, repeated cyclically
    door_profile: tuple[float, ...] | None = None
    door_duration_s: float = 20.0
    door_alpha_factor: float = 25.0
    record_per_device: bool = False
    controlled: bool = True
    parallel: bool = False

    def __post_init__(self):
        if not self.step_s > 0:
            raise ValueError("step_s must be positive")
        if not 0 <= self.skip_probability < 1:
            raise ValueError("skip_probability must lie in [0, 1)")
        if self.door_profile is not None and min(self.door_profile) < 0:
            raise ValueError("door opening rates must be non-negative")
        if not self.door_alpha_factor >= 1:
            raise ValueError("door_alpha_factor must be >= 1")

    @property
    def n_ticks(self) -> int:
        n = int(round(self.horizon_s / self.step_s))
        if not np.isclose(n * self.step_s, self.horizon_s):
            raise ValueError("horizon_s must be a multiple of step_s")
        return n


def _model_matrix(models: dict[str, np.ndarray], p_on) -> np.ndarray:
    cols = {**models, "p_on": p_on}
    return np.column_stack([np.broadcast_to(cols[c], p_on.shape) for c in _kernel.PHYS_COLS])


@dataclass
class Fleet:
    """Parameter matrices and initial states for ``n`` devices (row = device)."""

    config: FleetConfig
    physical: np.ndarray  # columns: _kernel.PHYS_COLS
    control: np.ndarray  # columns: _kernel.CTRL_COLS
    temp0: np.ndarray
    comp0: np.ndarray
    keys: np.ndarray
    p_0: np.ndarray  # steady-state power of the physical model

    @property
    def n_devices(self) -> int:
        return self.physical.shape[0]

    @property
    def sum_p0(self) -> float:
        return float(np.sum(self.p_0))

    def physical_model(self, i: int) -> ApplianceModel:
        return ApplianceModel(**dict(zip(_kernel.PHYS_COLS, map(float, self.physical[i]))))

    def control_model(self, i: int) -> ApplianceModel:
        vals = dict(zip(_kernel.CTRL_COLS, map(float, self.control[i])))
        return ApplianceModel(
            vals["alpha"], float(self.physical[i, 1]), vals["t_off"], vals["t_on"],
            vals["t_min"], vals["t_max"],
        )

    def control_dq(self, i: int) -> DerivedQuantities:
        return DerivedQuantities(*steady_state_arrays(*_params(self.control_model(i))))


def _params(m: ApplianceModel):
    return m.alpha, m.p_on, m.t_off, m.t_on, m.t_min, m.t_max


def _perturbed_params(nominal, keys, stream, lo, hi, t_min=None, t_max=None):
    """Vectorised perturbation with per-device rejection resampling.

    When ``t_min``/``t_max`` are given they replace the drawn set points
    before the ordering check (control models take them from the physical
    model).
    """
    n = keys.shape[0]
    out = {f: np.empty(n) for f in PERTURBED_FIELDS}
    pending = np.arange(n)
    for attempt in range(MAX_PERTURB_ATTEMPTS):
        sub = keys[pending]
        for j, f in enumerate(PERTURBED_FIELDS):
            u = _rng.uniforms(sub, stream, attempt * len(PERTURBED_FIELDS) + j)
            # u lies in (0, 1]; the factor covers (lo, hi]
            out[f][pending] = getattr(nominal, f) * (lo + (hi - lo) * u)
        if t_min is not None:
            out["t_min"][pending] = t_min[pending]
            out["t_max"][pending] = t_max[pending]
        ok = ordering_ok(out["t_on"][pending], out["t_min"][pending],
                         out["t_max"][pending], out["t_off"][pending])
        pending = pending[~ok]
        if pending.size == 0:
            return out
    raise ValueError(
        f"{pending.size} devices without a valid model after {MAX_PERTURB_ATTEMPTS} draws"
    )


def build_fleet(cfg: FleetConfig) -> Fleet:
    n = cfg.n_devices
    keys = _rng.device_keys(cfg.master_seed, n)
    lo, hi = cfg.hetero_range
    nom = cfg.nominal
    phys = _perturbed_params(nom, keys, _rng.PERTURB_PHYSICAL, lo, hi)
    p_on = np.full(n, nom.p_on)

    mode = cfg.model_error_mode
    if mode is ModelErrorMode.KNOWN:
        ctrl = {f: v.copy() for f, v in phys.items()}
    elif mode is ModelErrorMode.COMMON_NOMINAL:
        ctrl = {f: np.full(n, getattr(nom, f)) for f in PERTURBED_FIELDS}
        ctrl["t_min"] = phys["t_min"].copy()
        ctrl["t_max"] = phys["t_max"].copy()
        bad = ~ordering_ok(ctrl["t_on"], ctrl["t_min"], ctrl["t_max"], ctrl["t_off"])
        if bad.any():
            raise ValueError("nominal control model incompatible with physical set points")
    else:
        ctrl = _perturbed_params(nom, keys, _rng.PERTURB_CONTROL, lo, hi,
                                 t_min=phys["t_min"], t_max=phys["t_max"])

    _, _, p_0, _, _ = steady_state_arrays(
        phys["alpha"], p_on, phys["t_off"], phys["t_on"], phys["t_min"], phys["t_max"]
    )
    _, c_tbar, _, c_zmax, c_zmin = steady_state_arrays(
        ctrl["alpha"], p_on, ctrl["t_off"], ctrl["t_on"], ctrl["t_min"], ctrl["t_max"]
    )

    u_on = _rng.uniforms(keys, _rng.INIT_STATE, 0)
    u_temp = _rng.uniforms(keys, _rng.INIT_STATE, 1)
    comp0 = (u_on <= p_0 / p_on).astype(np.int8)
    temp0 = np.where(
        comp0 == 1,
        on_temperature_from_uniform(u_temp, phys["t_on"], phys["t_min"], phys["t_max"]),
        off_temperature_from_uniform(u_temp, phys["t_off"], phys["t_min"], phys["t_max"]),
    )
    ctrl_cols = {**ctrl, "t_bar_0": c_tbar, "zeta_at_tmax": c_zmax, "zeta_at_tmin": c_zmin}
    return Fleet(
        config=cfg,
        physical=np.ascontiguousarray(_model_matrix(phys, p_on)),
        control=np.ascontiguousarray(np.column_stack([ctrl_cols[c] for c in _kernel.CTRL_COLS])),
        temp0=temp0,
        comp0=comp0,
        keys=keys,
        p_0=p_0,
    )


@dataclass(frozen=True)
class DoorSchedule:
    offsets: np.ndarray
    starts: np.ndarray
    ends: np.ndarray

    @classmethod
    def empty(cls, n_devices: int) -> "DoorSchedule":
        return cls(np.zeros(n_devices + 1, dtype=np.int64), np.empty(0), np.empty(0))

    @property
    def n_events(self) -> int:
        return int(self.starts.size)

    def events(self, device: int) -> list[tuple[float, float]]:
        a, b = self.offsets[device], self.offsets[device + 1]
        return list(zip(self.starts[a:b].tolist(), self.ends[a:b].tolist()))

    def open_time(self, horizon_s: float) -> float:
        return float(np.sum(np.minimum(self.ends, horizon_s) - self.starts))


def door_opening_schedule(
    profile_per_hour, duration_s: float, horizon_s: float, n_devices: int, seed: int,
    raw_counts: bool = False,
):
    """Independent door openings per device with an hourly piecewise-constant rate.

    Overlapping openings of one device are merged. With ``raw_counts`` the
    number of arrivals before merging is returned alongside the schedule.
    """
    rates = np.asarray(profile_per_hour, dtype=float) / 3600.0
    if rates.size == 0 or (rates < 0).any():
        raise ValueError("door profile needs non-negative hourly rates")
    keys = _rng.device_keys(seed, n_devices)
    if raw_counts:
        # zero duration keeps every arrival distinct (exact ties have probability 0)
        off0, _, _ = _kernel.door_events(keys, rates, 3600.0, 0.0, float(horizon_s))
    offsets, starts, ends = _kernel.door_events(keys, rates, 3600.0, float(duration_s), float(horizon_s))
    sched = DoorSchedule(offsets, starts, ends)
    if raw_counts:
        return sched, int(off0[-1])
    return sched


@dataclass
class TraceSet:
    times: np.ndarray
    aggregate_power: np.ndarray
    target_power: np.ndarray
    mean_z: np.ndarray
    n_on: np.ndarray
    reference: np.ndarray
    max_switch_prob: np.ndarray
    n_devices: int
    sum_p0: float
    counts: dict = field(default_factory=dict)
    upper_excursion: np.ndarray | None = None
    lower_excursion: np.ndarray | None = None
    temperatures: np.ndarray | None = None
    compressors: np.ndarray | None = None
    runtime_s: float = 0.0


def run_simulation(
    fleet: Fleet, signal: ReferenceSignal, sim: SimConfig, doors: DoorSchedule | None = None
) -> TraceSet:
    """Simulate the fleet on the global tick grid ``t_i = i * step_s``.

    At every tick each device integrates its physics over the last step,
    then (unless it skips this tick) runs the controller with the reference
    that applies just after ``t_i``. Records are taken after the controller.
    """
    n_ticks = sim.n_ticks
    if signal.horizon < sim.horizon_s:
        raise ValueError(f"signal horizon {signal.horizon} shorter than simulation {sim.horizon_s}")
    times = np.arange(n_ticks + 1) * sim.step_s
    pi_next = signal.values_after(times)
    if doors is None:
        if sim.door_profile is not None:
            doors = door_opening_schedule(
                sim.door_profile, sim.door_duration_s, sim.horizon_s,
                fleet.n_devices, fleet.config.master_seed,
            )
        else:
            doors = DoorSchedule.empty(fleet.n_devices)

    runner = _kernel.run_parallel if sim.parallel else _kernel.run_serial
    start = time.perf_counter()
    power, n_on, z_sum, max_prob, counts, up, down, rec_t, rec_c = runner(
        fleet.physical, fleet.control, float(fleet.config.w), fleet.temp0, fleet.comp0,
        fleet.keys, pi_next, float(sim.step_s), n_ticks, float(sim.skip_probability),
        bool(sim.controlled), doors.offsets, doors.starts, doors.ends,
        float(sim.door_alpha_factor), bool(sim.record_per_device), _kernel.CHUNK,
    )
    runtime = time.perf_counter() - start
    log.debug("simulated %d devices x %d ticks in %.2fs", fleet.n_devices, n_ticks, runtime)
    n = fleet.n_devices
    return TraceSet(
        times=times,
        aggregate_power=power,
        target_power=pi_next * fleet.sum_p0,
        mean_z=z_sum / n,
        n_on=n_on,
        reference=pi_next,
        max_switch_prob=max_prob,
        n_devices=n,
        sum_p0=fleet.sum_p0,
        counts=dict(zip(("energy_clips", "power_clips", "forced_switches", "stochastic_switches"),
                        map(int, counts))),
        upper_excursion=up,
        lower_excursion=down,
        temperatures=rec_t if sim.record_per_device else None,
        compressors=rec_c if sim.record_per_device else None,
        runtime_s=runtime,
    )


def set_threads(n: int) -> None:
    numba.set_num_threads(n)
