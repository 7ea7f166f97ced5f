"""Tracking-error statistics, autocorrelation and population-size scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONFIDENCE_Z = 1.959963984540054  # two-sided 95 %


@dataclass(frozen=True)
class ErrorSeries:
    times: np.ndarray
    error_w_per_device: np.ndarray
    std_w_per_device: float


def tracking_error(trace, n_devices: int | None = None, target=None) -> ErrorSeries:
    """Per-device deviation of realised from target power.

    ``target`` overrides ``trace.target_power`` (e.g. a door-adjusted target).
    """
    n = trace.n_devices if n_devices is None else n_devices
    target = trace.target_power if target is None else np.asarray(target)
    err = (np.asarray(trace.aggregate_power) - target) / n
    return ErrorSeries(np.asarray(trace.times), err, float(np.std(err)))


@dataclass(frozen=True)
class Autocorrelation:
    lags: np.ndarray
    acf: np.ndarray
    band: float

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.acf) > self.band


def autocorrelation(series, max_lag: int) -> Autocorrelation:
    """Sample ACF (mean removed, normalised by the lag-0 sum) with a 95 % white-noise band."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise ValueError(f"series length {n} must exceed max_lag {max_lag}")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise ValueError("series has zero variance")
    nfft = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), nfft)[: max_lag + 1]
    acf = acov / denom
    acf[0] = 1.0
    return Autocorrelation(np.arange(max_lag + 1), acf, CONFIDENCE_Z / np.sqrt(n))


def door_target_power(baseline_power, reference, sum_p0: float) -> np.ndarray:
    """Target aggregate power when the uncontrolled baseline is time-varying."""
    baseline = np.asarray(baseline_power, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if baseline.shape != reference.shape:
        raise ValueError(f"length mismatch: baseline {baseline.shape} vs reference {reference.shape}")
    return baseline + (reference - 1.0) * sum_p0


@dataclass(frozen=True)
class ConvergenceTable:
    n_devices: np.ndarray
    std_w_per_device: np.ndarray
    std_spread: np.ndarray
    slope: float | None

    def rows(self):
        return list(zip(self.n_devices.tolist(), self.std_w_per_device.tolist(),
                        self.std_spread.tolist()))


def loglog_slope(n_list, stds) -> float | None:
    if len(n_list) < 2:
        return None
    slope, _ = np.polyfit(np.log(n_list), np.log(stds), 1)
    return float(slope)


def convergence_scan(n_list, repetitions: int, fleet_config, signal, sim_config) -> ConvergenceTable:
    """Per-device tracking std for each population size, with a log-log slope.

    Repetition ``r`` uses master seed ``fleet_config.master_seed + r``.
    """
    from dataclasses import replace

    from .simulator import build_fleet, run_simulation

    if not len(n_list):
        raise ValueError("n_list must not be empty")
    means, spreads = [], []
    for n in n_list:
        stds = []
        for r in range(repetitions):
            cfg = replace(fleet_config, n_devices=int(n), master_seed=fleet_config.master_seed + r)
            trace = run_simulation(build_fleet(cfg), signal, sim_config)
            stds.append(tracking_error(trace).std_w_per_device)
        means.append(np.mean(stds))
        spreads.append(np.std(stds))
    n_arr = np.asarray(n_list, dtype=int)
    return ConvergenceTable(n_arr, np.asarray(means), np.asarray(spreads), loglog_slope(n_arr, means))


def discontinuity_ticks(reference, threshold: float = 0.1) -> np.ndarray:
    """Indices of records at which the applied reference jumps by more than ``threshold``."""
    ref = np.asarray(reference)
    return np.flatnonzero(np.abs(np.diff(ref)) > threshold) + 1


def quiet_mask(times, event_times, window_s: float) -> np.ndarray:
    """True for records farther than ``window_s`` after every event time."""
    times = np.asarray(times)
    mask = np.ones(times.shape, dtype=bool)
    for te in event_times:
        mask &= ~((times >= te) & (times < te + window_s))
    return mask
