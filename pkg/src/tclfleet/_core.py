"""Scalar controller arithmetic, compiled with numba.

These functions take plain floats so the same code runs inside the fleet
kernel and behind the public wrappers in :mod:`tclfleet.controller`.
"""

import math

from numba import njit

# temperature-unit tolerance for vanishing denominators
GEOMETRY_TOL = 1e-9
# |z - zeta| below this means the population would be fully contracted
CONTRACTION_TOL = 1e-12


class DegenerateStateError(ArithmeticError):
    pass


@njit(cache=True)
def update_z(z_prev, pi, alpha, dt):
    growth = -math.expm1(-alpha * dt)
    return z_prev * (1.0 - growth) + (pi - 1.0) * growth


@njit(cache=True)
def select_mode(z, t_min, t_max):
    if z <= 0.0:
        return t_max
    return t_min


@njit(cache=True)
def zeta_of(r, t_bar_0, t_off):
    return (t_bar_0 - r) / (t_off - t_bar_0)


@njit(cache=True)
def clip_energy(pi_next, z, w, zeta_at_tmax, zeta_at_tmin):
    if z <= w * zeta_at_tmax:
        pi_next = max(pi_next, 1.0 + w * zeta_at_tmax)
    if z >= w * zeta_at_tmin:
        pi_next = min(pi_next, 1.0 + w * zeta_at_tmin)
    return pi_next


@njit(cache=True)
def power_limits(zeta_plus, r_plus, t_min, t_max, t_on, t_off):
    denom = t_min + t_max - 2.0 * r_plus
    lo = 1.0 + zeta_plus * (t_min + t_max - t_off - r_plus) / denom
    hi = 1.0 + zeta_plus * (t_min + t_max - t_on - r_plus) / denom
    return lo, hi


@njit(cache=True)
def clip_power(pi_next, zeta_plus, r_plus, t_min, t_max, t_on, t_off):
    lo, hi = power_limits(zeta_plus, r_plus, t_min, t_max, t_on, t_off)
    return min(max(pi_next, lo), hi)


@njit(cache=True)
def control_beta(pi, z, zeta):
    gap = z - zeta
    if abs(gap) < CONTRACTION_TOL:
        raise DegenerateStateError("z coincides with a pivot energy level")
    return ((pi - 1.0) - z) / gap


@njit(cache=True)
def temperature_bounds(r_plus, s_plus, t_min, t_max):
    return r_plus - (r_plus - t_min) * s_plus, r_plus - (r_plus - t_max) * s_plus


@njit(cache=True)
def geometry(T, r, s, beta, t_on, t_off):
    """P, Q, X, Y intermediates at temperature ``T`` for one side of t_i.

    P and Q are written as (T - T_asym) + (R - T_asym)(s - 1) so that they
    coincide bitwise with X and Y at steady state (s == 1, beta == 0).
    """
    p = (T - t_off) + (r - t_off) * (s - 1.0)
    q = (T - t_on) + (r - t_on) * (s - 1.0)
    x = (T - t_off) + (T - r) * beta
    y = (T - t_on) + (T - r) * beta
    return p, q, x, y


@njit(cache=True)
def xi_over_alpha_sq(p, q, x, y, beta):
    # distribution edge: forced switching governs, no stochastic flux
    if abs(p) < GEOMETRY_TOL or abs(q) < GEOMETRY_TOL:
        return 0.0
    return (p + q) * (x / p) * (y / q) - (1.0 + beta) * (x + y)


@njit(cache=True)
def _rate(xi_a2, alpha, denom):
    if abs(denom) < GEOMETRY_TOL:
        if abs(xi_a2) < GEOMETRY_TOL:
            return 0.0
        return math.inf
    return max(0.0, -alpha * xi_a2 / denom)


@njit(cache=True)
def switching_rates(T, r, s, beta, alpha, t_on, t_off):
    """Return (on->off, off->on) switching rates in 1/s."""
    p, q, x, y = geometry(T, r, s, beta, t_on, t_off)
    xi_a2 = xi_over_alpha_sq(p, q, x, y, beta)
    return _rate(xi_a2, alpha, x), _rate(xi_a2, alpha, y)


@njit(cache=True)
def continuous_switch_prob(r_prev_plus, r_now_minus, dt):
    prob = 0.5 * dt * (r_prev_plus + r_now_minus)
    return min(max(prob, 0.0), 1.0)


@njit(cache=True)
def ratio_switch_prob(after, before):
    if abs(before) < GEOMETRY_TOL:
        if abs(after) < GEOMETRY_TOL:
            return 0.0
        return 1.0
    return max(0.0, 1.0 - after / before)


@njit(cache=True)
def controller_step(
    pi_next, T, t, c, z_prev, pi_prev, t_prev, r10_prev, r01_prev,
    alpha, t_on, t_off, t_min, t_max, t_bar_0, zeta_at_tmax, zeta_at_tmin, w, u,
):
    """One invocation of the state update algorithm.

    Returns ``(c_next, z, pi_applied, r10_plus, r01_plus, prob, forced,
    energy_clipped, power_clipped)`` where ``prob`` is the combined stochastic
    switching probability for the current compressor state.
    """
    dt = t - t_prev
    if not dt > 0.0:
        raise ValueError("controller invocation times must strictly increase")

    # population parameters
    z = update_z(z_prev, pi_prev, alpha, dt)
    r_minus = select_mode(z_prev, t_min, t_max)
    r_plus = select_mode(z, t_min, t_max)
    zeta_minus = zeta_at_tmax if z_prev <= 0.0 else zeta_at_tmin
    zeta_plus = zeta_at_tmax if z <= 0.0 else zeta_at_tmin
    s_minus = 1.0 - z / zeta_minus
    s_plus = 1.0 - z / zeta_plus

    # energy, then power limits
    pi_req = pi_next
    pi_next = clip_energy(pi_next, z, w, zeta_at_tmax, zeta_at_tmin)
    energy_clipped = pi_next != pi_req
    pi_e = pi_next
    pi_next = clip_power(pi_next, zeta_plus, r_plus, t_min, t_max, t_on, t_off)
    power_clipped = pi_next != pi_e
    beta_minus = control_beta(pi_prev, z, zeta_minus)
    beta_plus = control_beta(pi_next, z, zeta_plus)

    # switching variables on both sides of t
    p_m, q_m, x_minus, y_minus = geometry(T, r_minus, s_minus, beta_minus, t_on, t_off)
    p_p, q_p, x_plus, y_plus = geometry(T, r_plus, s_plus, beta_plus, t_on, t_off)
    xi_minus = xi_over_alpha_sq(p_m, q_m, x_minus, y_minus, beta_minus)
    xi_plus = xi_over_alpha_sq(p_p, q_p, x_plus, y_plus, beta_plus)
    r10_plus = _rate(xi_plus, alpha, x_plus)
    r01_plus = _rate(xi_plus, alpha, y_plus)

    # outside [t_low, t_high] the state is fixed regardless of the current one
    t_low, t_high = temperature_bounds(r_plus, s_plus, t_min, t_max)
    forced = False
    if c == 1:
        prob = continuous_switch_prob(r10_prev, _rate(xi_minus, alpha, x_minus), dt)
        prob = min(prob + ratio_switch_prob(x_plus, x_minus), 1.0)
        if T <= t_low:
            c_next = 0
            forced = True
        elif T >= t_high:
            c_next = 1
            forced = True
        elif u <= prob:
            c_next = 0
        else:
            c_next = 1
    else:
        prob = continuous_switch_prob(r01_prev, _rate(xi_minus, alpha, y_minus), dt)
        prob = min(prob + ratio_switch_prob(y_plus, y_minus), 1.0)
        if T >= t_high:
            c_next = 1
            forced = True
        elif T <= t_low:
            c_next = 0
            forced = True
        elif u <= prob:
            c_next = 1
        else:
            c_next = 0
    return (
        c_next, z, pi_next, r10_plus, r01_plus, prob, forced, energy_clipped, power_clipped,
    )
