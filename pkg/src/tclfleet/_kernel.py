"""Compiled fleet time loop.

Devices are processed in fixed-size chunks. Each chunk owns one row of the
per-tick accumulators, and rows are summed in chunk order afterwards, so
the result does not depend on how chunks are distributed over threads.
"""

import math

import numpy as np
from numba import njit, prange

from . import _rng
from ._core import controller_step

# columns of the parameter matrices
PHYS_COLS = ("alpha", "p_on", "t_off", "t_on", "t_min", "t_max")
CTRL_COLS = ("alpha", "t_off", "t_on", "t_min", "t_max", "t_bar_0", "zeta_at_tmax", "zeta_at_tmin")

CHUNK = 2048


@njit(cache=True)
def _door_open_at(tm, j, end, door_start, door_end):
    while j < end and door_start[j] <= tm:
        if tm < door_end[j]:
            return True
        j += 1
    return False


@njit(cache=True)
def _simulate_chunk(
    lo, hi, row, phys, ctrl, w, temp0, comp0, keys, pi_next, step, n_ticks, skip_prob,
    controlled, door_offsets, door_start, door_end, door_factor,
    power, n_on, z_sum, max_prob, counts, upper_exc, lower_exc,
    rec_temp, rec_comp, record,
):
    n_sub = int(math.ceil(door_factor))
    for d in range(lo, hi):
        alpha, p_on, t_off, t_on, t_min, t_max = (
            phys[d, 0], phys[d, 1], phys[d, 2], phys[d, 3], phys[d, 4], phys[d, 5]
        )
        c_alpha, c_toff, c_ton, c_tmin, c_tmax = ctrl[d, 0], ctrl[d, 1], ctrl[d, 2], ctrl[d, 3], ctrl[d, 4]
        c_tbar, c_zmax, c_zmin = ctrl[d, 5], ctrl[d, 6], ctrl[d, 7]
        key = keys[d]
        T = temp0[d]
        c = np.int64(comp0[d])
        z, pi_prev, t_prev, r10, r01 = 0.0, 1.0, 0.0, 0.0, 0.0
        didx = door_offsets[d]
        dend = door_offsets[d + 1]
        up, down = -math.inf, -math.inf

        power[row, 0] += p_on * c
        n_on[row, 0] += c
        if record:
            rec_temp[0, d] = T
            rec_comp[0, d] = c
        for i in range(1, n_ticks + 1):
            t0 = (i - 1) * step
            t1 = i * step
            target = t_on if c == 1 else t_off
            while didx < dend and door_end[didx] <= t0:
                didx += 1
            if didx < dend and door_start[didx] < t1:
                h = step / n_sub
                for k in range(n_sub):
                    tm = t0 + (k + 0.5) * h
                    if _door_open_at(tm, didx, dend, door_start, door_end):
                        # leak to ambient scaled, compressor cooling unchanged
                        T += alpha * h * (door_factor * (t_off - T) - c * (t_off - t_on))
                    else:
                        T += alpha * h * (target - T)
            else:
                T += alpha * step * (target - T)
            if T - t_max > up:
                up = T - t_max
            if t_min - T > down:
                down = t_min - T

            if not controlled:
                if T >= t_max:
                    c = 1
                elif T <= t_min:
                    c = 0
            elif skip_prob > 0.0 and _rng.uniform(key, _rng.SKIP, i) < skip_prob:
                pass
            else:
                u = _rng.uniform(key, _rng.SWITCH, i)
                c_next, z, pi_prev, r10, r01, prob, forced, e_clip, p_clip = controller_step(
                    pi_next[i], T, t1, c, z, pi_prev, t_prev, r10, r01,
                    c_alpha, c_ton, c_toff, c_tmin, c_tmax, c_tbar, c_zmax, c_zmin, w, u,
                )
                t_prev = t1
                if not forced and prob > max_prob[row, i]:
                    max_prob[row, i] = prob
                counts[row, 0] += e_clip
                counts[row, 1] += p_clip
                counts[row, 2] += forced and (c_next != c)
                counts[row, 3] += (c_next != c) and not forced
                c = c_next
            power[row, i] += p_on * c
            n_on[row, i] += c
            z_sum[row, i] += z
            if record:
                rec_temp[i, d] = T
                rec_comp[i, d] = c
        upper_exc[d] = up
        lower_exc[d] = down


def _make_driver(parallel):
    loop = prange if parallel else range

    def driver(
        phys, ctrl, w, temp0, comp0, keys, pi_next, step, n_ticks, skip_prob, controlled,
        door_offsets, door_start, door_end, door_factor, record, chunk,
    ):
        n = phys.shape[0]
        n_chunks = (n + chunk - 1) // chunk
        power = np.zeros((n_chunks, n_ticks + 1))
        n_on = np.zeros((n_chunks, n_ticks + 1), dtype=np.int64)
        z_sum = np.zeros((n_chunks, n_ticks + 1))
        max_prob = np.zeros((n_chunks, n_ticks + 1))
        counts = np.zeros((n_chunks, 4), dtype=np.int64)
        upper_exc = np.empty(n)
        lower_exc = np.empty(n)
        if record:
            rec_temp = np.empty((n_ticks + 1, n))
            rec_comp = np.empty((n_ticks + 1, n), dtype=np.int8)
        else:
            rec_temp = np.empty((0, 0))
            rec_comp = np.empty((0, 0), dtype=np.int8)
        for ch in loop(n_chunks):
            lo = ch * chunk
            hi = min(lo + chunk, n)
            _simulate_chunk(
                lo, hi, ch, phys, ctrl, w, temp0, comp0, keys, pi_next, step, n_ticks,
                skip_prob, controlled, door_offsets, door_start, door_end, door_factor,
                power, n_on, z_sum, max_prob, counts, upper_exc, lower_exc,
                rec_temp, rec_comp, record,
            )
        # fixed-order reduction over chunks
        tot_power = np.zeros(n_ticks + 1)
        tot_on = np.zeros(n_ticks + 1, dtype=np.int64)
        tot_z = np.zeros(n_ticks + 1)
        tot_prob = np.zeros(n_ticks + 1)
        tot_counts = np.zeros(4, dtype=np.int64)
        for ch in range(n_chunks):
            for i in range(n_ticks + 1):
                tot_power[i] += power[ch, i]
                tot_on[i] += n_on[ch, i]
                tot_z[i] += z_sum[ch, i]
                if max_prob[ch, i] > tot_prob[i]:
                    tot_prob[i] = max_prob[ch, i]
            for k in range(4):
                tot_counts[k] += counts[ch, k]
        return tot_power, tot_on, tot_z, tot_prob, tot_counts, upper_exc, lower_exc, rec_temp, rec_comp

    return njit(cache=True, parallel=parallel)(driver)


run_serial = _make_driver(False)
run_parallel = _make_driver(True)


@njit(cache=True)
def door_events(keys, rates_per_s, bin_s, duration, horizon):
    """Per-device inhomogeneous Poisson door openings, merged where they overlap.

    ``rates_per_s`` is a piecewise-constant rate over consecutive bins of
    ``bin_s`` seconds, repeated cyclically. Arrivals are generated by mapping
    unit-rate exponential gaps through the inverse cumulative intensity.
    Returns CSR arrays ``(offsets, starts, ends)``.
    """
    n = keys.shape[0]
    n_bins = rates_per_s.shape[0]
    cycle = 0.0
    for b in range(n_bins):
        cycle += rates_per_s[b] * bin_s
    offsets = np.zeros(n + 1, dtype=np.int64)
    cap = 16
    starts = np.empty(cap)
    ends = np.empty(cap)
    m = 0
    for d in range(n):
        if cycle > 0.0:
            s = 0.0
            k = 0
            # position in the intensity integral
            acc, b, t_bin = 0.0, 0, 0.0
            while True:
                s += -math.log(_rng.uniform(keys[d], _rng.DOOR, k))
                k += 1
                # advance bins until the cumulative intensity reaches s
                while acc + rates_per_s[b % n_bins] * bin_s < s:
                    acc += rates_per_s[b % n_bins] * bin_s
                    b += 1
                    t_bin += bin_s
                    if t_bin > horizon:
                        break
                if t_bin > horizon:
                    break
                t = t_bin + (s - acc) / rates_per_s[b % n_bins]
                if t > horizon:
                    break
                if m > offsets[d] and t <= ends[m - 1]:
                    ends[m - 1] = t + duration
                    continue
                if m == cap:
                    cap *= 2
                    starts2 = np.empty(cap)
                    ends2 = np.empty(cap)
                    starts2[:m] = starts[:m]
                    ends2[:m] = ends[:m]
                    starts, ends = starts2, ends2
                starts[m] = t
                ends[m] = t + duration
                m += 1
        offsets[d + 1] = m
    return offsets, starts[:m].copy(), ends[:m].copy()
