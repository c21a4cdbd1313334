"""Compiled inner loops: ray casting, restitution evaluation, collision update.

All kernels are plain float64 code without fastmath so results are bitwise
reproducible between the Python-facing wrappers and the trajectory loop.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes shared with the Python wrappers
OK = 0
GRAZING = 1
NO_HIT = 2
HORIZON = 3
ETA_RANGE = 4

GRAZING_TOL = 1e-9

KIND_CONSTANT = 0
KIND_POWER_LAW = 1
KIND_TABULATED = 2

PROFILE_ZERO = 0
PROFILE_LINEAR = 1
PROFILE_RATIONAL = 2
PROFILE_TANH = 3
PROFILE_EXP = 4


@njit(cache=True)
def locate(offsets, s):
    i = offsets.shape[0] - 1
    while i > 0 and s < offsets[i]:
        i -= 1
    return i


@njit(cache=True)
def flight(cx, cy, rad, offsets, cells, tau_max, s, phi):
    """Trace the outgoing ray at (s, phi) to the next scatterer.

    Returns (status, j, s1, phi_pre, tau).  ``phi_pre`` is the angle of the
    elastically reflected velocity from the normal at the hit point.
    """
    i = locate(offsets, s)
    r0 = rad[i]
    theta = (s - offsets[i]) / r0
    nx = math.cos(theta)
    ny = math.sin(theta)
    px = cx[i] + r0 * nx
    py = cy[i] + r0 * ny
    cp = math.cos(phi)
    sp = math.sin(phi)
    dx = nx * cp - ny * sp
    dy = nx * sp + ny * cp

    best = np.inf
    bj = -1
    bwx = 0.0
    bwy = 0.0
    m = cx.shape[0]
    for j in range(m):
        r = rad[j]
        wx0 = cx[j] - px
        wx0 -= math.floor(wx0 + 0.5)
        wy0 = cy[j] - py
        wy0 -= math.floor(wy0 + 0.5)
        for a in range(-cells, cells + 1):
            wx = wx0 + a
            for b in range(-cells, cells + 1):
                if j == i and a == 0 and b == 0:
                    continue
                wy = wy0 + b
                bb = wx * dx + wy * dy
                if bb <= 0.0 or bb - r >= best:
                    continue
                cc = wx * wx + wy * wy - r * r
                disc = bb * bb - cc
                if disc < 0.0:
                    continue
                # smaller root of t^2 - 2 bb t + cc = 0 in cancellation-free form
                t = cc / (bb + math.sqrt(disc))
                if t < best:
                    best = t
                    bj = j
                    bwx = wx
                    bwy = wy
    if bj < 0:
        return NO_HIT, -1, 0.0, 0.0, np.inf
    r = rad[bj]
    n1x = (best * dx - bwx) / r
    n1y = (best * dy - bwy) / r
    nn = math.sqrt(n1x * n1x + n1y * n1y)
    n1x /= nn
    n1y /= nn
    th1 = math.atan2(n1y, n1x)
    if th1 < 0.0:
        th1 += 2.0 * math.pi
    sl = r * th1
    if sl >= 2.0 * math.pi * r:
        sl = 0.0
    s1 = offsets[bj] + sl
    cos_pre = -(dx * n1x + dy * n1y)
    sin_pre = n1x * dy - n1y * dx
    phi_pre = math.atan2(sin_pre, cos_pre)
    if best > tau_max:
        return HORIZON, bj, s1, phi_pre, best
    if cos_pre < GRAZING_TOL:
        return GRAZING, bj, s1, phi_pre, best
    return OK, bj, s1, phi_pre, best


@njit(cache=True)
def profile_eval(prof, u):
    """q0(u), u q0'(u), u^2 q0''(u)."""
    if prof == PROFILE_ZERO:
        return 0.0, 0.0, 0.0
    if prof == PROFILE_LINEAR:
        return u, u, 0.0
    if prof == PROFILE_RATIONAL:
        d = 1.0 + u
        return u / d, u / (d * d), -2.0 * u * u / (d * d * d)
    if prof == PROFILE_TANH:
        th = math.tanh(u)
        sech2 = 1.0 - th * th
        return th, u * sech2, -2.0 * u * u * th * sech2
    if prof == PROFILE_EXP:
        e = math.exp(-u)
        return 1.0 - e, u * e, -u * u * e
    return np.nan, np.nan, np.nan


@njit(cache=True)
def tab_eval(knots, coef, w):
    """Piecewise cubic q(w), q'(w), q''(w); constant beyond the last knot."""
    n = knots.shape[0]
    if w >= knots[n - 1]:
        k = n - 2
        h = knots[n - 1] - knots[k]
        q = ((coef[0, k] * h + coef[1, k]) * h + coef[2, k]) * h + coef[3, k]
        return q, 0.0, 0.0
    k = 0
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if knots[mid] <= w:
            lo = mid
        else:
            hi = mid
    k = lo
    h = w - knots[k]
    c0 = coef[0, k]
    c1 = coef[1, k]
    c2 = coef[2, k]
    c3 = coef[3, k]
    q = ((c0 * h + c1) * h + c2) * h + c3
    dq = (3.0 * c0 * h + 2.0 * c1) * h + c2
    d2q = 6.0 * c0 * h + 2.0 * c1
    return q, dq, d2q


@njit(cache=True)
def eta_eval(kind, eps, p, prof, knots, coef, w):
    """eta(w), eta_1(w) = w eta'(w), eta_2(w) = w^2 eta''(w)."""
    if kind == KIND_CONSTANT:
        return eps, 0.0, 0.0
    if kind == KIND_POWER_LAW:
        if w <= 0.0:
            u = 0.0
        else:
            u = w**p
        q, uq1, u2q2 = profile_eval(prof, u)
        return eps * q, eps * p * uq1, eps * (p * p * u2q2 + p * (p - 1.0) * uq1)
    q, dq, d2q = tab_eval(knots, coef, w)
    return eps * q, eps * w * dq, eps * w * w * d2q


@njit(cache=True)
def speed_increment(phi_pre, c, eta):
    """c1 - c0, in the form free of cancellation; never positive."""
    cp = math.cos(phi_pre)
    sp = math.sin(phi_pre)
    a = 1.0 - eta
    root = math.sqrt(a * a * cp * cp + sp * sp)
    return -c * (2.0 - eta) * eta * cp * cp / (1.0 + root)


@njit(cache=True)
def collide(phi_pre, c0, eta):
    """Angle and speed after an inelastic collision with restitution loss eta."""
    if eta == 0.0:
        return phi_pre, c0
    phi1 = math.atan2(math.sin(phi_pre), (1.0 - eta) * math.cos(phi_pre))
    # adding the increment keeps c1 <= c0 exact in floating point
    c1 = c0 + speed_increment(phi_pre, c0, eta)
    return phi1, c1


@njit(cache=True)
def run(cx, cy, rad, offsets, cells, tau_max,
        kind, eps, p, prof, knots, coef,
        s0, phi0, c0, time_scale, n_steps):
    """Iterate the extended map n_steps times with the joint time update.

    Row k of the outputs holds the state after collision k+1.  Returns
    (status, completed, s, phi, c, tau, t, eta, phi_pre, idx).
    """
    s_out = np.empty(n_steps)
    phi_out = np.empty(n_steps)
    c_out = np.empty(n_steps)
    tau_out = np.empty(n_steps)
    t_out = np.empty(n_steps)
    eta_out = np.empty(n_steps)
    pre_out = np.empty(n_steps)
    idx_out = np.empty(n_steps, dtype=np.int64)

    s = s0
    phi = phi0
    c = c0
    t = 0.0
    comp = 0.0
    for k in range(n_steps):
        status, j, s1, phi_pre, tau = flight(cx, cy, rad, offsets, cells, tau_max, s, phi)
        if status != OK:
            return status, k, s_out, phi_out, c_out, tau_out, t_out, eta_out, pre_out, idx_out
        w = c * math.cos(phi_pre)
        eta, _e1, _e2 = eta_eval(kind, eps, p, prof, knots, coef, w)
        if not (eta >= 0.0 and eta < 1.0):
            return ETA_RANGE, k, s_out, phi_out, c_out, tau_out, t_out, eta_out, pre_out, idx_out
        phi1, c1 = collide(phi_pre, c, eta)
        # compensated summation of t_{n+1} = t_n + scale * tau / c_n
        y = time_scale * tau / c - comp
        tn = t + y
        comp = (tn - t) - y
        t = tn
        s = s1
        phi = phi1
        c = c1
        s_out[k] = s
        phi_out[k] = phi
        c_out[k] = c
        tau_out[k] = tau
        t_out[k] = t
        eta_out[k] = eta
        pre_out[k] = phi_pre
        idx_out[k] = j
    return OK, n_steps, s_out, phi_out, c_out, tau_out, t_out, eta_out, pre_out, idx_out


@njit(cache=True)
def flight_lengths(cx, cy, rad, offsets, cells, tau_max, s_arr, phi_arr):
    """Vectorized free-flight lengths; NaN where the flight is not regular."""
    n = s_arr.shape[0]
    out = np.empty(n)
    for k in range(n):
        status, j, s1, phi_pre, tau = flight(cx, cy, rad, offsets, cells, tau_max, s_arr[k], phi_arr[k])
        out[k] = tau if status == OK else np.nan
    return out
