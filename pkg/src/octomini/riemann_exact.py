"""Exact Riemann solver for the 1D Euler equations (ideal gas).

Verification oracle only: the finite-volume scheme never calls this. The
solver follows the classical two-shock/two-rarefaction pressure iteration
(Toro's formulation) with a bracketed root find for the star-region pressure,
then samples the self-similar solution at x/t.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq


def _pressure_fn(p, rho_k, p_k, c_k, gamma):
    """f_K(p): velocity change across the wave connecting state K to p."""
    if p > p_k:  # shock branch
        a = 2.0 / ((gamma + 1.0) * rho_k)
        b = (gamma - 1.0) / (gamma + 1.0) * p_k
        return (p - p_k) * math.sqrt(a / (p + b))
    # rarefaction branch
    return (2.0 * c_k / (gamma - 1.0)) * ((p / p_k) ** ((gamma - 1.0) / (2.0 * gamma)) - 1.0)


def solve_star(left, right, gamma):
    """Star-region (p*, u*) for primitive states (rho, u, p)."""
    rho_l, u_l, p_l = left
    rho_r, u_r, p_r = right
    c_l = math.sqrt(gamma * p_l / rho_l)
    c_r = math.sqrt(gamma * p_r / rho_r)
    if 2.0 * (c_l + c_r) / (gamma - 1.0) <= u_r - u_l:
        raise ValueError("vacuum-generating data; no star state exists")

    def f(p):
        return (_pressure_fn(p, rho_l, p_l, c_l, gamma)
                + _pressure_fn(p, rho_r, p_r, c_r, gamma) + (u_r - u_l))

    lo, hi = 1e-14 * min(p_l, p_r), max(p_l, p_r)
    while f(hi) < 0.0:
        hi *= 4.0
    p_star = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    u_star = 0.5 * (u_l + u_r) + 0.5 * (
        _pressure_fn(p_star, rho_r, p_r, c_r, gamma)
        - _pressure_fn(p_star, rho_l, p_l, c_l, gamma))
    return p_star, u_star


def sample(xi, left, right, gamma):
    """Solution (rho, u, p) at similarity coordinate xi = x/t."""
    rho_l, u_l, p_l = left
    rho_r, u_r, p_r = right
    c_l = math.sqrt(gamma * p_l / rho_l)
    c_r = math.sqrt(gamma * p_r / rho_r)
    p_s, u_s = solve_star(left, right, gamma)
    gm1, gp1 = gamma - 1.0, gamma + 1.0

    if xi <= u_s:  # left of the contact
        if p_s > p_l:  # left shock
            s_l = u_l - c_l * math.sqrt(gp1 / (2 * gamma) * (p_s / p_l) + gm1 / (2 * gamma))
            if xi <= s_l:
                return rho_l, u_l, p_l
            rho = rho_l * ((p_s / p_l + gm1 / gp1) / (gm1 / gp1 * (p_s / p_l) + 1.0))
            return rho, u_s, p_s
        # left rarefaction
        head = u_l - c_l
        c_sl = c_l * (p_s / p_l) ** (gm1 / (2 * gamma))
        tail = u_s - c_sl
        if xi <= head:
            return rho_l, u_l, p_l
        if xi >= tail:
            return rho_l * (p_s / p_l) ** (1.0 / gamma), u_s, p_s
        u = 2.0 / gp1 * (c_l + gm1 / 2.0 * u_l + xi)
        c = 2.0 / gp1 * (c_l + gm1 / 2.0 * (u_l - xi))
        rho = rho_l * (c / c_l) ** (2.0 / gm1)
        return rho, u, p_l * (c / c_l) ** (2.0 * gamma / gm1)

    # right of the contact
    if p_s > p_r:  # right shock
        s_r = u_r + c_r * math.sqrt(gp1 / (2 * gamma) * (p_s / p_r) + gm1 / (2 * gamma))
        if xi >= s_r:
            return rho_r, u_r, p_r
        rho = rho_r * ((p_s / p_r + gm1 / gp1) / (gm1 / gp1 * (p_s / p_r) + 1.0))
        return rho, u_s, p_s
    # right rarefaction
    head = u_r + c_r
    c_sr = c_r * (p_s / p_r) ** (gm1 / (2 * gamma))
    tail = u_s + c_sr
    if xi >= head:
        return rho_r, u_r, p_r
    if xi <= tail:
        return rho_r * (p_s / p_r) ** (1.0 / gamma), u_s, p_s
    u = 2.0 / gp1 * (-c_r + gm1 / 2.0 * u_r + xi)
    c = 2.0 / gp1 * (c_r - gm1 / 2.0 * (u_r - xi))
    rho = rho_r * (c / c_r) ** (2.0 / gm1)
    return rho, u, p_r * (c / c_r) ** (2.0 * gamma / gm1)


def profile(x, t, left, right, gamma, x0=0.5):
    """Vectorized (rho, u, p) arrays at positions x and time t > 0,
    for the discontinuity initially at x0."""
    x = np.asarray(x, dtype=float)
    out = np.empty((3, x.size))
    for i, xi in enumerate((x.ravel() - x0) / t):
        out[:, i] = sample(xi, left, right, gamma)
    return out[0].reshape(x.shape), out[1].reshape(x.shape), out[2].reshape(x.shape)
