"""Jitted inner loops.

Coefficients arrive packed as arrays (see :func:`pack_problem`) so that a
single compiled kernel serves every problem.  Nothing here validates input.
"""

import math

import numba as nb
import numpy as np

from .core import POLY, SIN, TANH

jit = nb.njit(cache=True, nogil=True)

INVERSE_TOL = 1e-12
INVERSE_MAXITER = 200

STATUS_OK = 0
STATUS_INVERSE_FAILED = 2
STATUS_UNDERFLOW = 3
STATUS_BUFFER = 4


@jit
def smooth(code, params, x, order):
    if code == POLY:
        r = 0.0
        n = params.shape[0]
        for i in range(n - 1, order - 1, -1):
            f = 1.0
            for j in range(order):
                f *= i - j
            r = r * x + params[i] * f
        return r
    c = params[0]
    a = params[1]
    k = params[2]
    if code == SIN:
        if order == 0:
            return c + a * math.sin(k * x)
        if order == 1:
            return a * k * math.cos(k * x)
        return -a * k * k * math.sin(k * x)
    t = math.tanh(k * x)
    if order == 0:
        return c + a * t
    if order == 1:
        return a * k * (1.0 - t * t)
    return -2.0 * a * k * k * t * (1.0 - t * t)


@jit
def piece_of(x, bps):
    # number of breakpoints <= x, i.e. right-sided piece index
    k = 0
    n = bps.shape[0]
    while k < n and bps[k] <= x:
        k += 1
    return k


@jit
def drift(x, bps, bvals, pcodes, pparams):
    k = piece_of(x, bps)
    if k > 0 and bps[k - 1] == x:
        return bvals[k - 1]
    return smooth(pcodes[k], pparams[k], x, 0)


@jit
def drift_right(x, bps, pcodes, pparams):
    k = piece_of(x, bps)
    return smooth(pcodes[k], pparams[k], x, 0)


# ---------------------------------------------------------------- transform

@jit
def bump(u, c, order):
    s = abs(u)
    if s >= c:
        return 0.0
    v = s / c
    w = 1.0 - v
    sg = 1.0 if u >= 0.0 else -1.0
    if order == 0:
        return sg * s * s * w * w * w
    if order == 1:
        return s * w * w * (2.0 - 5.0 * v)
    return sg * w * (2.0 - 16.0 * v + 20.0 * v * v)


@jit
def support_of(x, tb, tc):
    """Index of the support containing x, or -1."""
    for k in range(tb.shape[0]):
        if abs(x - tb[k]) < tc[k]:
            return k
    return -1


@jit
def g_value(x, tb, ta, tc):
    k = support_of(x, tb, tc)
    if k < 0:
        return x
    return x + ta[k] * bump(x - tb[k], tc[k], 0)


@jit
def g_deriv(x, tb, ta, tc, order):
    k = support_of(x, tb, tc)
    if k < 0:
        return 1.0 if order == 1 else 0.0
    d = ta[k] * bump(x - tb[k], tc[k], order)
    return 1.0 + d if order == 1 else d


@jit
def g_inverse(z, tb, ta, tc):
    """Bracketed safeguarded Newton; NaN when the iteration cap is hit."""
    k = support_of(z, tb, tc)
    if k < 0:
        return z
    zeta = tb[k]
    c = tc[k]
    a = ta[k]
    if z == zeta:
        return zeta
    lo = zeta - c
    hi = zeta + c
    tol = INVERSE_TOL * (1.0 + abs(z))
    x = z
    for _ in range(INVERSE_MAXITER):
        f = x + a * bump(x - zeta, c, 0) - z
        if abs(f) <= tol:
            return x
        if f > 0.0:
            hi = x
        else:
            lo = x
        d = 1.0 + a * bump(x - zeta, c, 1)
        xn = x - f / d
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if xn == x:
            return x
        x = xn
    return np.nan


# ------------------------------------------------------------------ steppers

@jit
def fixed_grid_path(x0, times, W, jumps, bps, bvals, pcodes, pparams,
                    scode, sparams, jcode, jparams, tb, ta, tc,
                    transform, milstein, out):
    """Euler-Maruyama / Milstein, optionally on the transformed equation.

    ``jumps[k]`` counts Poisson events at node k; each adds rho(X(t-)).
    Writes X values (original coordinates) into ``out``; returns a status.
    """
    n = times.shape[0] - 1
    x = x0
    y = g_value(x0, tb, ta, tc) if transform else x0
    out[0] = x0
    g1 = 1.0
    g2 = 0.0
    for k in range(n):
        dt = times[k + 1] - times[k]
        dw = W[k + 1] - W[k]
        s = smooth(scode, sparams, x, 0)
        if transform:
            g1 = g_deriv(x, tb, ta, tc, 1)
            g2 = g_deriv(x, tb, ta, tc, 2)
            mu = g1 * drift_right(x, bps, pcodes, pparams) + 0.5 * g2 * s * s
            sig = g1 * s
        else:
            mu = drift(x, bps, bvals, pcodes, pparams)
            sig = s
        y = y + mu * dt + sig * dw
        if milstein:
            ds = smooth(scode, sparams, x, 1)
            if transform:
                ss = s * (g2 * s + g1 * ds)
            else:
                ss = s * ds
            y = y + 0.5 * ss * (dw * dw - dt)
        if transform:
            x = g_inverse(y, tb, ta, tc)
            if math.isnan(x):
                return STATUS_INVERSE_FAILED
        else:
            x = y
        for _ in range(jumps[k + 1]):
            x = x + smooth(jcode, jparams, x, 0)
            if transform:
                y = g_value(x, tb, ta, tc)
            else:
                y = x
        out[k + 1] = x
    return STATUS_OK


@jit
def step_size(x, delta, bps, eps0):
    dist = np.inf
    for b in bps:
        d = abs(x - b)
        if d < dist:
            dist = d
    r = dist / eps0
    h = r * r
    if h > delta:
        h = delta
    floor = delta * delta
    if h < floor:
        h = floor
    return h


@jit
def adaptive_path(x0, T, delta, eps0, bps, bvals, pcodes, pparams,
                  scode, sparams, ref_t, ref_W, normals, record_t, record_x):
    """Adaptive Euler-Maruyama driven by a path known on ``ref_t``.

    Off-node Brownian values are drawn from the bridge between the current
    point and the next reference node, consuming ``normals`` in order.
    Returns (terminal value, steps, normals used, status).  When
    ``record_t`` is non-empty the trajectory is written into it.
    """
    snap = 1e-12 * max(1.0, T)
    record = record_t.shape[0] > 0
    tau = 0.0
    w = ref_W[0]
    x = x0
    steps = 0
    used = 0
    if record:
        record_t[0] = 0.0
        record_x[0] = x0
    while tau < T:
        h = step_size(x, delta, bps, eps0)
        if h < 1e-14:
            return x, steps, used, STATUS_UNDERFLOW
        t_new = tau + h
        if t_new >= T - snap:
            t_new = T
        j = np.searchsorted(ref_t, t_new)
        if j < ref_t.shape[0] and abs(ref_t[j] - t_new) <= snap:
            t_new = ref_t[j]
            w_new = ref_W[j]
        elif j > 0 and abs(ref_t[j - 1] - t_new) <= snap and ref_t[j - 1] > tau:
            t_new = ref_t[j - 1]
            w_new = ref_W[j - 1]
        else:
            if used >= normals.shape[0]:
                return x, steps, used, STATUS_BUFFER
            left_t = ref_t[j - 1]
            left_w = ref_W[j - 1]
            if tau >= left_t:
                left_t = tau
                left_w = w
            right_t = ref_t[j]
            span = right_t - left_t
            frac = (t_new - left_t) / span
            mean = left_w + frac * (ref_W[j] - left_w)
            var = (t_new - left_t) * (right_t - t_new) / span
            w_new = mean + math.sqrt(var) * normals[used]
            used += 1
        dt = t_new - tau
        dw = w_new - w
        x = x + drift(x, bps, bvals, pcodes, pparams) * dt \
            + smooth(scode, sparams, x, 0) * dw
        tau = t_new
        w = w_new
        steps += 1
        if record:
            if steps >= record_t.shape[0]:
                return x, steps, used, STATUS_BUFFER
            record_t[steps] = tau
            record_x[steps] = x
    return x, steps, used, STATUS_OK


# ----------------------------------------------------------------- packing

_EMPTY_F = np.zeros(0)


def pack_smooth(coef):
    if coef is None:
        return POLY, np.zeros(1)
    return coef.code, np.asarray(coef.params, dtype=float)


def pack_drift(drift_fn):
    width = max(3, max(len(p.params) for p in drift_fn.pieces))
    pparams = np.zeros((len(drift_fn.pieces), width))
    pcodes = np.empty(len(drift_fn.pieces), dtype=np.int64)
    for k, p in enumerate(drift_fn.pieces):
        pcodes[k] = p.code
        pparams[k, :len(p.params)] = p.params
    return (np.asarray(drift_fn.breakpoints, dtype=float),
            np.asarray(drift_fn.breakpoint_values, dtype=float), pcodes, pparams)


def pack_problem(problem):
    bps, bvals, pcodes, pparams = pack_drift(problem.drift)
    scode, sparams = pack_smooth(problem.diffusion)
    jcode, jparams = pack_smooth(problem.jump)
    return (bps, bvals, pcodes, pparams, scode, sparams, jcode, jparams)


def pack_transform(G):
    if G is None:
        return _EMPTY_F, _EMPTY_F, _EMPTY_F
    return (np.asarray(G.breakpoints, dtype=float), np.asarray(G.alphas, dtype=float),
            np.asarray(G.supports, dtype=float))
