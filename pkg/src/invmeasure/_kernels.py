"""Compiled inner loops for trajectory generation.

Vector fields arrive flattened as ``(comp, exps, coeffs)`` arrays (see
``polybasis.field_arrays``). Status codes: 0 ok, 1 non-finite state,
2 state beyond the abort radius, 3 crossing buffer full.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def eval_field(comp, exps, coeffs, x, out):
    n = x.shape[0]
    for i in range(n):
        out[i] = 0.0
    for t in range(coeffs.shape[0]):
        v = coeffs[t]
        for d in range(n):
            e = exps[t, d]
            for _ in range(e):
                v *= x[d]
        out[comp[t]] += v


@numba.njit(cache=True)
def rk4_step(comp, exps, coeffs, x, h, k1, out, k2, k3, k4, tmp):
    """One classical RK4 step; ``k1`` must already hold the field at ``x``."""
    n = x.shape[0]
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    eval_field(comp, exps, coeffs, tmp, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    eval_field(comp, exps, coeffs, tmp, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    eval_field(comp, exps, coeffs, tmp, k4)
    for i in range(n):
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@numba.njit(cache=True)
def hermite(x0, d0, x1, d1, h, s, out):
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    for i in range(x0.shape[0]):
        out[i] = h00 * x0[i] + h10 * h * d0[i] + h01 * x1[i] + h11 * h * d1[i]


@numba.njit(cache=True)
def locate_crossing(x0, d0, x1, d1, h, coord, level, tol, out):
    """Bisection on the cubic Hermite interpolant; returns the fraction of the step."""
    lo = 0.0
    hi = 1.0
    below = x0[coord] - level < 0.0
    s = 0.5
    for _ in range(200):
        s = 0.5 * (lo + hi)
        hermite(x0, d0, x1, d1, h, s, out)
        v = out[coord] - level
        if abs(v) < tol:
            break
        if (v < 0.0) == below:
            lo = s
        else:
            hi = s
    return s


@numba.njit(cache=True)
def _is_crossing(a, b, direction):
    if direction > 0:
        return a < 0.0 and b >= 0.0
    if direction < 0:
        return a > 0.0 and b <= 0.0
    return (a < 0.0 and b >= 0.0) or (a > 0.0 and b <= 0.0)


@numba.njit(cache=True)
def integrate(comp, exps, coeffs, x0, h, n_steps, sample_every, store, coord, level, direction,
              max_cross, tol, mom_exps):
    """Fixed-step RK4 with optional sampling, section crossings and running monomial sums.

    Returns ``(status, samples, crossings, crossing_times, n_cross, sums, final)``.
    ``samples`` holds every ``sample_every``-th state when ``store`` is set.
    ``sums`` accumulates ``x^alpha`` over the same sample instants (excluding the
    last one) for the rows ``alpha`` of ``mom_exps``.
    """
    n = x0.shape[0]
    n_samples = n_steps // sample_every + 1 if store else 1
    samples = np.empty((n_samples, n))
    cross = np.empty((max_cross, n))
    ctimes = np.empty(max_cross)
    sums = np.zeros(mom_exps.shape[0])
    x = x0.copy()
    xn = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    dn = np.empty(n)
    hx = np.empty(n)
    eval_field(comp, exps, coeffs, x, k1)
    if store:
        samples[0, :] = x
    nc = 0
    status = 0
    for step in range(n_steps):
        if step % sample_every == 0:
            for r in range(mom_exps.shape[0]):
                v = 1.0
                for d in range(n):
                    for _ in range(mom_exps[r, d]):
                        v *= x[d]
                sums[r] += v
        rk4_step(comp, exps, coeffs, x, h, k1, xn, k2, k3, k4, tmp)
        finite = True
        for i in range(n):
            if not np.isfinite(xn[i]):
                finite = False
        if not finite:
            status = 1
            break
        eval_field(comp, exps, coeffs, xn, dn)
        if coord >= 0 and _is_crossing(x[coord] - level, xn[coord] - level, direction):
            if nc < max_cross:
                s = locate_crossing(x, k1, xn, dn, h, coord, level, tol, hx)
                cross[nc, :] = hx
                ctimes[nc] = (step + s) * h
                nc += 1
            else:
                status = 3
        for i in range(n):
            x[i] = xn[i]
            k1[i] = dn[i]
        if store and (step + 1) % sample_every == 0:
            samples[(step + 1) // sample_every, :] = x
    return status, samples, cross[:nc], ctimes[:nc], nc, sums, x


@numba.njit(cache=True)
def flow(comp, exps, coeffs, x0, T, n_steps):
    """State after time ``T`` using ``n_steps`` equal RK4 steps."""
    n = x0.shape[0]
    h = T / n_steps
    x = x0.copy()
    xn = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(n_steps):
        eval_field(comp, exps, coeffs, x, k1)
        rk4_step(comp, exps, coeffs, x, h, k1, xn, k2, k3, k4, tmp)
        for i in range(n):
            x[i] = xn[i]
    return x


@numba.njit(cache=True)
def flow_samples(comp, exps, coeffs, x0, T, n_steps, every):
    n = x0.shape[0]
    h = T / n_steps
    out = np.empty((n_steps // every + 1, n))
    x = x0.copy()
    xn = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    out[0, :] = x
    for step in range(n_steps):
        eval_field(comp, exps, coeffs, x, k1)
        rk4_step(comp, exps, coeffs, x, h, k1, xn, k2, k3, k4, tmp)
        for i in range(n):
            x[i] = xn[i]
        if (step + 1) % every == 0:
            out[(step + 1) // every, :] = x
    return out


@numba.njit(cache=True)
def next_crossing(comp, exps, coeffs, x0, h, t_max, coord, level, direction, tol, skip):
    """First section crossing after ``skip`` steps; returns ``(found, time, state)``."""
    n = x0.shape[0]
    x = x0.copy()
    xn = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    dn = np.empty(n)
    hx = np.empty(n)
    eval_field(comp, exps, coeffs, x, k1)
    n_steps = int(t_max / h)
    for step in range(n_steps):
        rk4_step(comp, exps, coeffs, x, h, k1, xn, k2, k3, k4, tmp)
        eval_field(comp, exps, coeffs, xn, dn)
        if step >= skip and _is_crossing(x[coord] - level, xn[coord] - level, direction):
            s = locate_crossing(x, k1, xn, dn, h, coord, level, tol, hx)
            return True, (step + s) * h, hx
        for i in range(n):
            x[i] = xn[i]
            k1[i] = dn[i]
    return False, 0.0, x


@numba.njit(cache=True)
def euler_maruyama(comp, exps, coeffs, x0, tau, noise, sigma_sqrt_tau, abort):
    """Euler-Maruyama path driven by the standard normals in ``noise`` (steps, n)."""
    steps, n = noise.shape
    path = np.empty((steps + 1, n))
    path[0, :] = x0
    x = x0.copy()
    a = np.empty(n)
    for t in range(steps):
        eval_field(comp, exps, coeffs, x, a)
        big = False
        for i in range(n):
            x[i] = x[i] + a[i] * tau + sigma_sqrt_tau * noise[t, i]
            if not (abs(x[i]) <= abort):
                big = True
        path[t + 1, :] = x
        if big:
            return 2, path[: t + 2]
    return 0, path


@numba.njit(cache=True)
def iterate_map(comp, exps, coeffs, x0, m, lo, hi, slack):
    """Orbit ``x_0..x_m`` of a polynomial map; stops early when an iterate leaves the box."""
    n = x0.shape[0]
    orbit = np.empty((m + 1, n))
    orbit[0, :] = x0
    x = x0.copy()
    out = np.empty(n)
    for t in range(m):
        eval_field(comp, exps, coeffs, x, out)
        for i in range(n):
            x[i] = out[i]
        orbit[t + 1, :] = x
        for i in range(n):
            if not (lo[i] - slack <= x[i] <= hi[i] + slack):
                return t + 1, orbit[: t + 2]
    return -1, orbit
